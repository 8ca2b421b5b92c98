#include "hpim/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

#include <json.hpp>

#include "hpim/error.hpp"
#include "hpim/io.hpp"

namespace hpim::sampler {

using nlohmann::json;

KernelizedSimilarity kernelize(const moments::CmdMatrix& cmds, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ValidationError("kernel bandwidth sigma must be > 0 (got " + io::format_double(sigma) +
                          ")");
  }
  const std::size_t n = cmds.size();
  KernelizedSimilarity sim{sigma, cmds.values, Matrix(n, n)};
  const double inv_s2 = 1.0 / (sigma * sigma);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t j = 0; j < n; ++j) {
      const double c = a == j ? 0.0 : cmds.values(a, j);
      sim.h(a, j) = std::exp(-c * c * inv_s2);
    }
  }
  return sim;
}

double median_bandwidth(const moments::CmdMatrix& cmds) {
  const std::size_t n = cmds.size();
  if (n < 2) throw ValidationError("bandwidth needs at least 2 identities");
  std::vector<double> off;
  off.reserve(n * (n - 1) / 2);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) off.push_back(cmds.values(a, b));
  }
  std::sort(off.begin(), off.end());
  const std::size_t m = off.size();
  const double median = m % 2 ? off[m / 2] : 0.5 * (off[m / 2 - 1] + off[m / 2]);
  if (median > 0.0) return median;
  const auto positive = std::upper_bound(off.begin(), off.end(), 0.0);
  return positive == off.end() ? 1.0 : *positive;
}

std::vector<std::size_t> nearest_neighbours(const KernelizedSimilarity& sim, std::size_t anchor,
                                            std::size_t k) {
  const std::size_t n = sim.size();
  std::vector<std::size_t> order;
  order.reserve(n - 1);
  for (std::size_t j = 0; j < n; ++j) {
    if (j != anchor) order.push_back(j);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return sim.cmd(anchor, x) < sim.cmd(anchor, y);
  });
  order.resize(k);
  return order;
}

PolicyDistribution policy(std::size_t anchor, const KernelizedSimilarity& sim, std::size_t k) {
  const std::size_t n = sim.size();
  if (n < 2) throw ValidationError("policy needs at least 2 identities");
  if (anchor >= n) throw ValidationError("anchor index out of range");
  if (k > n - 1) {
    throw ValidationError("K=" + std::to_string(k) + " out of range [0, " +
                          std::to_string(n - 1) + "]");
  }
  PolicyDistribution dist;
  dist.anchor = anchor;
  dist.knn = nearest_neighbours(sim, anchor, k);
  dist.probs.assign(n, 0.0);

  // Only ratios of kernel values enter the policy, so evaluate them relative
  // to the closest partner; this keeps the shares exact when every raw kernel
  // value underflows.
  double closest = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    if (j != anchor) closest = std::min(closest, sim.cmd(anchor, j));
  }
  const double inv_s2 = 1.0 / (sim.sigma * sim.sigma);
  std::vector<double> rel(n, 0.0);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == anchor) continue;
    const double c = sim.cmd(anchor, j);
    rel[j] = std::exp(-(c - closest) * (c + closest) * inv_s2);
    total += rel[j];
  }

  std::vector<bool> in_knn(n, false);
  for (std::size_t j : dist.knn) {
    in_knn[j] = true;
    dist.probs[j] = rel[j] / total;
  }
  // Leftover mass summed directly rather than as 1 - knn share, so it is
  // exactly zero when the outsiders' kernel values vanish.
  const std::size_t outside = n - 1 - k;
  if (outside > 0) {
    double out_rel = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != anchor && !in_knn[j]) out_rel += rel[j];
    }
    const double each = out_rel / total / static_cast<double>(outside);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != anchor && !in_knn[j]) dist.probs[j] = each;
    }
  }
  return dist;
}

std::vector<std::size_t> sample_identities(const PolicyDistribution& dist, std::size_t p,
                                           std::mt19937_64& rng) {
  const std::size_t n = dist.probs.size();
  if (p < 2 || p > n) {
    throw ValidationError("P=" + std::to_string(p) + " out of range [2, N=" + std::to_string(n) +
                          "]");
  }
  std::vector<std::size_t> out{dist.anchor};
  std::vector<bool> taken(n, false);
  taken[dist.anchor] = true;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (out.size() < p) {
    double mass = 0.0;
    std::size_t remaining = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!taken[j]) {
        mass += dist.probs[j];
        ++remaining;
      }
    }
    const double u = unit(rng);
    std::size_t pick = n;
    if (mass > 0.0) {
      const double target = u * mass;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (taken[j] || dist.probs[j] <= 0.0) continue;
        acc += dist.probs[j];
        pick = j;
        if (target < acc) break;
      }
    } else {
      // Remaining candidates all have zero probability: draw uniformly.
      auto r = static_cast<std::size_t>(u * static_cast<double>(remaining));
      r = std::min(r, remaining - 1);
      for (std::size_t j = 0; j < n; ++j) {
        if (taken[j]) continue;
        if (r-- == 0) {
          pick = j;
          break;
        }
      }
    }
    taken[pick] = true;
    out.push_back(pick);
  }
  return out;
}

std::uint64_t batch_seed(std::uint64_t seed, std::size_t batch_index) {
  // splitmix64 finaliser over the combined value.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(batch_index) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

BatchPlanner::BatchPlanner(std::vector<IdentityImages> identities,
                           const moments::CmdMatrix& cmds, PlanConfig config)
    : config_(std::move(config)) {
  const std::size_t n = cmds.size();
  if (identities.size() != n) {
    throw ValidationError("identity list has " + std::to_string(identities.size()) +
                          " entries, CMD matrix has " + std::to_string(n));
  }
  if (config_.p > n) {
    throw ValidationError("P=" + std::to_string(config_.p) + " exceeds the number of identities N=" +
                          std::to_string(n));
  }
  if (config_.p < 2) throw ValidationError("P must be >= 2 (got " + std::to_string(config_.p) + ")");
  if (config_.s < 1) throw ValidationError("S must be >= 1");

  std::unordered_map<std::string, std::size_t> row;
  for (std::size_t i = 0; i < n; ++i) row.emplace(cmds.ids[i], i);
  identities_.resize(n);
  std::vector<bool> seen(n, false);
  for (auto& ident : identities) {
    auto it = row.find(ident.identity_id);
    if (it == row.end()) {
      throw ValidationError("identity " + ident.identity_id + " is missing from the CMD matrix");
    }
    if (seen[it->second]) throw ValidationError("identity " + ident.identity_id + " listed twice");
    if (ident.image_ids.empty()) {
      throw ValidationError("identity " + ident.identity_id + " has no images");
    }
    seen[it->second] = true;
    identities_[it->second] = std::move(ident);
  }

  k_ = config_.k.value_or(std::min<std::size_t>(10, n - 1));
  if (k_ > n - 1) {
    throw ValidationError("K=" + std::to_string(k_) + " exceeds N-1=" + std::to_string(n - 1));
  }
  if (!config_.sigma && !(config_.sigma_scale > 0.0)) {
    throw ValidationError("sigma scale must be > 0");
  }
  sim_ = kernelize(cmds, config_.sigma.value_or(config_.sigma_scale * median_bandwidth(cmds)));
}

BatchPlan BatchPlanner::plan(std::size_t batch_index) const {
  const std::size_t n = identities_.size();
  BatchPlan out;
  out.batch_index = batch_index;
  out.seed = batch_seed(config_.seed, batch_index);
  std::mt19937_64 rng(out.seed);

  std::size_t anchor = batch_index % n;
  if (config_.anchor_mode == AnchorMode::kUniform) {
    anchor = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  }
  PolicyDistribution dist;
  if (config_.policy_mode == PolicyMode::kHpim) {
    dist = policy(anchor, sim_, k_);
  } else {
    dist.anchor = anchor;
    dist.probs.assign(n, 1.0 / static_cast<double>(n - 1));
    dist.probs[anchor] = 0.0;
  }
  const auto chosen = sample_identities(dist, config_.p, rng);

  out.anchor = identities_[anchor].identity_id;
  for (std::size_t idx : chosen) {
    const auto& ident = identities_[idx];
    out.identities.push_back(ident.identity_id);
    const auto& pool = ident.image_ids;
    std::vector<std::string> picks;
    if (pool.size() < config_.s) {
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      for (std::size_t s = 0; s < config_.s; ++s) picks.push_back(pool[pick(rng)]);
    } else {
      std::vector<std::size_t> order(pool.size());
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t s = 0; s < config_.s; ++s) {
        std::uniform_int_distribution<std::size_t> pick(s, order.size() - 1);
        std::swap(order[s], order[pick(rng)]);
        picks.push_back(pool[order[s]]);
      }
    }
    out.images.emplace(ident.identity_id, std::move(picks));
  }
  return out;
}

std::vector<BatchPlan> BatchPlanner::plan_many(std::size_t count) const {
  std::vector<BatchPlan> plans;
  plans.reserve(count);
  for (std::size_t b = 0; b < count; ++b) plans.push_back(plan(b));
  return plans;
}

BatchPlan plan_batch(std::span<const IdentityImages> identities, const moments::CmdMatrix& cmds,
                     const PlanConfig& config, std::size_t batch_index) {
  return BatchPlanner({identities.begin(), identities.end()}, cmds, config).plan(batch_index);
}

std::string plans_to_jsonl(std::span<const BatchPlan> plans) {
  std::string out;
  for (const auto& p : plans) {
    json images = json::object();
    for (const auto& [id, imgs] : p.images) images[id] = imgs;
    out += json{{"batch_index", p.batch_index},
                {"anchor", p.anchor},
                {"identities", p.identities},
                {"images", images},
                {"seed", p.seed}}
               .dump();
    out += '\n';
  }
  return out;
}

std::vector<BatchPlan> load_plans(const std::filesystem::path& path) {
  std::vector<BatchPlan> plans;
  io::for_each_json_line(path, [&](const json& j, std::size_t) {
    BatchPlan p;
    p.batch_index = j.at("batch_index").get<std::size_t>();
    p.anchor = j.at("anchor").get<std::string>();
    p.identities = j.at("identities").get<std::vector<std::string>>();
    for (const auto& [id, imgs] : j.at("images").items()) {
      p.images.emplace(id, imgs.get<std::vector<std::string>>());
    }
    p.seed = j.at("seed").get<std::uint64_t>();
    plans.push_back(std::move(p));
  });
  return plans;
}

}  // namespace hpim::sampler
