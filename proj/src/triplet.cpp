#include "hpim/triplet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "hpim/error.hpp"
#include "hpim/io.hpp"

namespace hpim::triplet {

Matrix pairwise_distances(const Matrix& embeddings) {
  const std::size_t n = embeddings.rows();
  Matrix d(n, n, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    const auto ra = embeddings.row(a);
    for (std::size_t b = a + 1; b < n; ++b) {
      const auto rb = embeddings.row(b);
      double s = 0.0;
      for (std::size_t k = 0; k < ra.size(); ++k) {
        const double diff = ra[k] - rb[k];
        s += diff * diff;
      }
      d(a, b) = d(b, a) = std::sqrt(s);
    }
  }
  return d;
}

const char* to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kBatchAllHinge: return "batch-all";
    case LossKind::kBatchAllLifted: return "lifted";
    case LossKind::kBatchHardHinge: return "batch-hard";
    case LossKind::kBatchHardSoftplus: return "batch-hard-softplus";
    case LossKind::kCentroidHinge: return "centroid-hinge";
    case LossKind::kCentroidSoftplus: return "centroid-softplus";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& name) {
  for (auto k : {LossKind::kBatchAllHinge, LossKind::kBatchAllLifted, LossKind::kBatchHardHinge,
                 LossKind::kBatchHardSoftplus, LossKind::kCentroidHinge,
                 LossKind::kCentroidSoftplus}) {
    if (name == to_string(k)) return k;
  }
  throw ValidationError("unknown loss mode '" + name + "'");
}

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_batch(const EmbeddingBatch& batch) {
  const auto& e = batch.embeddings;
  if (batch.labels.size() != e.rows()) {
    throw ValidationError("batch has " + std::to_string(e.rows()) + " rows but " +
                          std::to_string(batch.labels.size()) + " labels");
  }
  for (double x : e.data()) {
    if (!std::isfinite(x)) throw ValidationError("batch contains a non-finite embedding entry");
  }
  std::map<std::size_t, std::size_t> counts;
  for (auto l : batch.labels) ++counts[l];
  if (counts.size() < 2) throw ValidationError("batch needs at least 2 identities");
  for (const auto& [label, n] : counts) {
    if (n < 2) {
      throw ValidationError("identity " + std::to_string(label) +
                            " has a single image in the batch (no positives)");
    }
  }
}

/// Hardest positive and negative per anchor; ties resolve to the lowest index.
struct HardPair {
  std::size_t pos;
  std::size_t neg;
  double dpos;
  double dneg;
};

std::vector<HardPair> mine_hard(const EmbeddingBatch& batch, const Matrix& d) {
  const std::size_t n = batch.labels.size();
  std::vector<HardPair> out(n);
  for (std::size_t a = 0; a < n; ++a) {
    HardPair hp{n, n, -1.0, std::numeric_limits<double>::infinity()};
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      if (batch.labels[j] == batch.labels[a]) {
        if (d(a, j) > hp.dpos) {
          hp.dpos = d(a, j);
          hp.pos = j;
        }
      } else if (d(a, j) < hp.dneg) {
        hp.dneg = d(a, j);
        hp.neg = j;
      }
    }
    out[a] = hp;
  }
  return out;
}

std::vector<std::vector<double>> centroids(const EmbeddingBatch& batch,
                                           std::map<std::size_t, std::size_t>& sizes) {
  const auto& e = batch.embeddings;
  std::map<std::size_t, std::vector<double>> sums;
  for (std::size_t r = 0; r < e.rows(); ++r) {
    auto& s = sums[batch.labels[r]];
    s.resize(e.cols(), 0.0);
    for (std::size_t k = 0; k < e.cols(); ++k) s[k] += e(r, k);
    ++sizes[batch.labels[r]];
  }
  std::vector<std::vector<double>> per_row(e.rows());
  for (auto& [label, s] : sums) {
    for (double& x : s) x /= static_cast<double>(sizes[label]);
  }
  for (std::size_t r = 0; r < e.rows(); ++r) per_row[r] = sums[batch.labels[r]];
  return per_row;
}

double distance_to(std::span<const double> x, std::span<const double> c) {
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) s += (x[k] - c[k]) * (x[k] - c[k]);
  return std::sqrt(s);
}

/// Adds scale * d(x_a, x_b)/dx to rows a and b of grad.
void add_distance_grad(const Matrix& e, const Matrix& d, std::size_t a, std::size_t b,
                       double scale, Matrix& grad) {
  const double dist = d(a, b);
  if (dist <= 0.0 || scale == 0.0) return;
  const double f = scale / dist;
  for (std::size_t k = 0; k < e.cols(); ++k) {
    const double u = f * (e(a, k) - e(b, k));
    grad(a, k) += u;
    grad(b, k) -= u;
  }
}

double hard_active_fraction(const EmbeddingBatch& batch, const std::vector<HardPair>& hard) {
  std::size_t active = 0;
  for (const auto& hp : hard) active += batch.margin + hp.dpos - hp.dneg > 0.0 ? 1 : 0;
  return static_cast<double>(active) / static_cast<double>(hard.size());
}

}  // namespace

LossReport batch_all_loss(const EmbeddingBatch& batch, bool lifted) {
  check_batch(batch);
  const Matrix d = pairwise_distances(batch.embeddings);
  const std::size_t n = batch.labels.size();
  LossReport r;
  r.per_anchor.resize(n);
  std::size_t active = 0;
  for (std::size_t a = 0; a < n; ++a) {
    double pull = 0.0, push = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      if (batch.labels[j] == batch.labels[a]) {
        pull += lifted ? std::exp(d(a, j)) : d(a, j);
      } else {
        push += lifted ? std::exp(batch.margin - d(a, j)) : d(a, j);
      }
    }
    const double t = lifted ? batch.mu * pull + (1.0 - batch.mu) * push
                            : batch.margin + batch.mu * pull - (1.0 - batch.mu) * push;
    r.per_anchor[a] = std::max(0.0, t);
    r.value += r.per_anchor[a];
    if (!lifted) active += r.per_anchor[a] > 0.0 ? 1 : 0;
  }
  r.active_fraction = lifted ? hard_active_fraction(batch, mine_hard(batch, d))
                             : static_cast<double>(active) / static_cast<double>(n);
  return r;
}

LossReport batch_hard_loss(const EmbeddingBatch& batch, bool softplus_mode) {
  check_batch(batch);
  const Matrix d = pairwise_distances(batch.embeddings);
  const auto hard = mine_hard(batch, d);
  LossReport r;
  r.per_anchor.resize(hard.size());
  for (std::size_t a = 0; a < hard.size(); ++a) {
    const auto& hp = hard[a];
    r.per_anchor[a] = softplus_mode ? softplus(hp.dpos - hp.dneg)
                                    : std::max(0.0, batch.margin + hp.dpos - hp.dneg);
    r.value += r.per_anchor[a];
  }
  r.active_fraction = hard_active_fraction(batch, hard);
  return r;
}

LossReport centroid_regularized_loss(const EmbeddingBatch& batch, bool softplus_mode) {
  LossReport r = batch_hard_loss(batch, softplus_mode);
  std::map<std::size_t, std::size_t> sizes;
  const auto cent = centroids(batch, sizes);
  for (std::size_t a = 0; a < r.per_anchor.size(); ++a) {
    const double reg = batch.alpha * softplus(distance_to(batch.embeddings.row(a), cent[a]));
    r.per_anchor[a] += reg;
    r.value += reg;
  }
  return r;
}

LossReport compute_loss(const EmbeddingBatch& batch, LossKind kind) {
  switch (kind) {
    case LossKind::kBatchAllHinge: return batch_all_loss(batch, false);
    case LossKind::kBatchAllLifted: return batch_all_loss(batch, true);
    case LossKind::kBatchHardHinge: return batch_hard_loss(batch, false);
    case LossKind::kBatchHardSoftplus: return batch_hard_loss(batch, true);
    case LossKind::kCentroidHinge: return centroid_regularized_loss(batch, false);
    case LossKind::kCentroidSoftplus: return centroid_regularized_loss(batch, true);
  }
  throw ValidationError("unknown loss kind");
}

Matrix loss_gradient(const EmbeddingBatch& batch, LossKind kind) {
  check_batch(batch);
  const Matrix& e = batch.embeddings;
  const Matrix d = pairwise_distances(e);
  const std::size_t n = e.rows();
  Matrix grad(n, e.cols(), 0.0);

  if (kind == LossKind::kBatchAllHinge || kind == LossKind::kBatchAllLifted) {
    const bool lifted = kind == LossKind::kBatchAllLifted;
    const auto report = batch_all_loss(batch, lifted);
    for (std::size_t a = 0; a < n; ++a) {
      if (!(report.per_anchor[a] > 0.0)) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == a) continue;
        double scale;
        if (batch.labels[j] == batch.labels[a]) {
          scale = lifted ? batch.mu * std::exp(d(a, j)) : batch.mu;
        } else {
          scale = lifted ? -(1.0 - batch.mu) * std::exp(batch.margin - d(a, j))
                         : -(1.0 - batch.mu);
        }
        add_distance_grad(e, d, a, j, scale, grad);
      }
    }
    return grad;
  }

  const bool softplus_mode =
      kind == LossKind::kBatchHardSoftplus || kind == LossKind::kCentroidSoftplus;
  const auto hard = mine_hard(batch, d);
  for (std::size_t a = 0; a < n; ++a) {
    const auto& hp = hard[a];
    double scale;
    if (softplus_mode) {
      scale = logistic(hp.dpos - hp.dneg);
    } else {
      scale = batch.margin + hp.dpos - hp.dneg > 0.0 ? 1.0 : 0.0;
    }
    add_distance_grad(e, d, a, hp.pos, scale, grad);
    add_distance_grad(e, d, a, hp.neg, -scale, grad);
  }

  if (kind == LossKind::kCentroidHinge || kind == LossKind::kCentroidSoftplus) {
    std::map<std::size_t, std::size_t> sizes;
    const auto cent = centroids(batch, sizes);
    for (std::size_t a = 0; a < n; ++a) {
      const double dist = distance_to(e.row(a), cent[a]);
      if (dist <= 0.0) continue;
      const double f = batch.alpha * logistic(dist) / dist;
      const double share = 1.0 / static_cast<double>(sizes[batch.labels[a]]);
      for (std::size_t k = 0; k < e.cols(); ++k) {
        const double u = f * (e(a, k) - cent[a][k]);
        grad(a, k) += u;
        // The centroid depends on every member of the anchor's identity.
        for (std::size_t r = 0; r < n; ++r) {
          if (batch.labels[r] == batch.labels[a]) grad(r, k) -= u * share;
        }
      }
    }
  }
  return grad;
}

LinearEmbedder::LinearEmbedder(std::size_t input_dim, std::size_t output_dim,
                               std::uint64_t seed)
    : weights_(output_dim, input_dim) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(input_dim)));
  for (double& x : weights_.data()) x = normal(rng);
}

Matrix LinearEmbedder::embed(const Matrix& features) const {
  if (features.cols() != input_dim()) {
    throw ValidationError("embedder expects " + std::to_string(input_dim()) +
                          "-dimensional features, got " + std::to_string(features.cols()));
  }
  Matrix out(features.rows(), output_dim(), 0.0);
  for (std::size_t r = 0; r < features.rows(); ++r) {
    const auto x = features.row(r);
    for (std::size_t o = 0; o < output_dim(); ++o) {
      const auto w = weights_.row(o);
      out(r, o) = std::inner_product(w.begin(), w.end(), x.begin(), 0.0);
    }
  }
  return out;
}

void FeatureTable::add(const std::string& image_id, const std::string& identity_id,
                       std::span<const double> feature) {
  if (ids_.empty()) dim_ = feature.size();
  if (feature.size() != dim_) {
    throw ValidationError("image " + image_id + ": feature dimension " +
                          std::to_string(feature.size()) + " differs from " + std::to_string(dim_));
  }
  if (!index_.emplace(image_id, ids_.size()).second) {
    throw ValidationError("duplicate image id " + image_id);
  }
  ids_.push_back(image_id);
  identities_.push_back(identity_id);
  data_.insert(data_.end(), feature.begin(), feature.end());
}

std::span<const double> FeatureTable::feature(const std::string& image_id) const {
  auto it = index_.find(image_id);
  if (it == index_.end()) throw ValidationError("unknown image id " + image_id);
  return {data_.data() + it->second * dim_, dim_};
}

const std::string& FeatureTable::identity(const std::string& image_id) const {
  auto it = index_.find(image_id);
  if (it == index_.end()) throw ValidationError("unknown image id " + image_id);
  return identities_[it->second];
}

void gather_batch(const FeatureTable& table, const sampler::BatchPlan& plan, Matrix& features,
                  std::vector<std::size_t>& labels) {
  std::size_t rows = 0;
  for (const auto& id : plan.identities) rows += plan.images.at(id).size();
  features = Matrix(rows, table.dim());
  labels.clear();
  std::size_t r = 0;
  for (std::size_t i = 0; i < plan.identities.size(); ++i) {
    for (const auto& img : plan.images.at(plan.identities[i])) {
      const auto f = table.feature(img);
      std::copy(f.begin(), f.end(), features.row(r++).begin());
      labels.push_back(i);
    }
  }
}

namespace {

EmbeddingBatch make_batch(const LinearEmbedder& embedder, const Matrix& features,
                          std::vector<std::size_t> labels, const TrainConfig& config) {
  EmbeddingBatch b;
  b.embeddings = embedder.embed(features);
  b.labels = std::move(labels);
  b.margin = config.margin;
  b.mu = config.mu;
  b.alpha = config.alpha;
  return b;
}

}  // namespace

LossReport evaluate_batch(const LinearEmbedder& embedder, const FeatureTable& table,
                          const sampler::BatchPlan& plan, const TrainConfig& config) {
  Matrix features;
  std::vector<std::size_t> labels;
  gather_batch(table, plan, features, labels);
  return compute_loss(make_batch(embedder, features, std::move(labels), config), config.loss);
}

TrainResult train_demo(const FeatureTable& table, std::span<const sampler::BatchPlan> plans,
                       const TrainConfig& config) {
  return train_demo(LinearEmbedder(table.dim(), config.embed_dim, config.seed), table, plans,
                    config);
}

TrainResult train_demo(LinearEmbedder embedder, const FeatureTable& table,
                       std::span<const sampler::BatchPlan> plans, const TrainConfig& config) {
  if (!(config.learning_rate > 0.0)) throw ValidationError("learning rate must be > 0");
  TrainResult result;
  Matrix features;
  std::vector<std::size_t> labels;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& plan : plans) {
      gather_batch(table, plan, features, labels);
      const auto batch = make_batch(embedder, features, labels, config);
      const auto report = compute_loss(batch, config.loss);
      if (!std::isfinite(report.value)) {
        throw NumericError("non-finite loss at batch " + std::to_string(step));
      }
      result.log.push_back({step, report.value, report.active_fraction});
      // dL/dW = sum_r g_r x_r^T
      const Matrix g = loss_gradient(batch, config.loss);
      auto& w = embedder.weights();
      for (std::size_t r = 0; r < features.rows(); ++r) {
        const auto x = features.row(r);
        for (std::size_t o = 0; o < w.rows(); ++o) {
          const double go = g(r, o) * config.learning_rate;
          if (go == 0.0) continue;
          auto wrow = w.row(o);
          for (std::size_t k = 0; k < x.size(); ++k) wrow[k] -= go * x[k];
        }
      }
      ++step;
    }
  }
  result.embedder = std::move(embedder);
  return result;
}

std::string metrics_to_csv(std::span<const BatchMetric> log) {
  std::string out = "batch_index,loss,active_fraction\n";
  for (const auto& m : log) {
    out += std::to_string(m.batch_index) + "," + io::format_double(m.loss) + "," +
           io::format_double(m.active_fraction) + "\n";
  }
  return out;
}

double RetrievalReport::rank(std::size_t k) const {
  if (k == 0 || cmc.empty()) return 0.0;
  return cmc[std::min(k, cmc.size()) - 1];
}

RetrievalReport evaluate_retrieval(const RetrievalSet& query, const RetrievalSet& gallery) {
  const std::size_t nq = query.embeddings.rows();
  const std::size_t ng = gallery.embeddings.rows();
  if (nq == 0) throw ValidationError("empty query set");
  if (query.embeddings.cols() != gallery.embeddings.cols()) {
    throw ValidationError("query and gallery embedding dimensions differ");
  }
  RetrievalReport report;
  report.cmc.assign(ng, 0.0);
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t q = 0; q < nq; ++q) {
    ranked.clear();
    const auto qe = query.embeddings.row(q);
    for (std::size_t g = 0; g < ng; ++g) {
      if (!query.images.empty() && !gallery.images.empty() &&
          query.images[q] == gallery.images[g]) {
        continue;
      }
      ranked.emplace_back(distance_to(qe, gallery.embeddings.row(g)), g);
    }
    std::sort(ranked.begin(), ranked.end());
    std::size_t hits = 0;
    std::size_t first_hit = ranked.size();
    double ap = 0.0;
    for (std::size_t pos = 0; pos < ranked.size(); ++pos) {
      if (gallery.identities[ranked[pos].second] != query.identities[q]) continue;
      if (hits == 0) first_hit = pos;
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(pos + 1);
    }
    if (hits == 0) {
      throw ValidationError("query identity " + query.identities[q] + " is absent from the gallery");
    }
    report.mean_ap += ap / static_cast<double>(hits);
    for (std::size_t k = first_hit; k < ng; ++k) report.cmc[k] += 1.0;
  }
  for (double& c : report.cmc) c /= static_cast<double>(nq);
  report.mean_ap /= static_cast<double>(nq);
  return report;
}

std::string report_to_json(const RetrievalReport& report) {
  nlohmann::json j{{"rank1", report.rank(1)},
                   {"rank5", report.rank(5)},
                   {"rank10", report.rank(10)},
                   {"mAP", report.mean_ap}};
  return j.dump(2) + "\n";
}

}  // namespace hpim::triplet
