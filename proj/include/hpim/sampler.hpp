#ifndef HPIM_SAMPLER_HPP_
#define HPIM_SAMPLER_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hpim/matrix.hpp"
#include "hpim/moments.hpp"

namespace hpim::sampler {

/// Gaussian kernel of the CMD matrix: h = exp(-cmd^2 / sigma^2).
struct KernelizedSimilarity {
  double sigma = 1.0;
  Matrix cmd;  ///< kept for neighbour ranking
  Matrix h;

  std::size_t size() const { return h.rows(); }
};

KernelizedSimilarity kernelize(const moments::CmdMatrix& cmds, double sigma);

/// Median of the off-diagonal CMD values; falls back to the smallest
/// positive value when the median is zero, and to 1 when all are zero.
double median_bandwidth(const moments::CmdMatrix& cmds);

/// Distribution over partner identities for one anchor.
struct PolicyDistribution {
  std::size_t anchor = 0;
  std::vector<double> probs;
  std::vector<std::size_t> knn;
};

/// The K identities with smallest CMD to the anchor, ties broken by index.
std::vector<std::size_t> nearest_neighbours(const KernelizedSimilarity& sim, std::size_t anchor,
                                            std::size_t k);

/// Neighbours j get h(a,j) / sum_{i != a} h(a,i); the remaining mass
/// 1 - sum_{knn} h / sum_{i != a} h is spread uniformly over the N-1-K
/// non-neighbours. When the kernel row underflows to zero everywhere the
/// policy falls back to uniform over all partners.
PolicyDistribution policy(std::size_t anchor, const KernelizedSimilarity& sim, std::size_t k);

/// Anchor first, then P-1 distinct draws without replacement, renormalising
/// the remaining mass after each draw.
std::vector<std::size_t> sample_identities(const PolicyDistribution& dist, std::size_t p,
                                           std::mt19937_64& rng);

struct BatchPlan {
  std::size_t batch_index = 0;
  std::string anchor;
  std::vector<std::string> identities;
  std::map<std::string, std::vector<std::string>> images;
  std::uint64_t seed = 0;

  friend bool operator==(const BatchPlan&, const BatchPlan&) = default;
};

enum class AnchorMode { kUniform, kRoundRobin };
enum class PolicyMode { kHpim, kRandom };

struct PlanConfig {
  std::optional<std::size_t> k;      ///< default min(10, N-1)
  std::size_t p = 4;
  std::size_t s = 4;
  std::optional<double> sigma;       ///< default sigma_scale * median_bandwidth
  double sigma_scale = 1.0;          ///< multiplier on the median heuristic
  std::uint64_t seed = 0;
  AnchorMode anchor_mode = AnchorMode::kUniform;
  PolicyMode policy_mode = PolicyMode::kHpim;
};

/// Identity id and the image ids available for it.
struct IdentityImages {
  std::string identity_id;
  std::vector<std::string> image_ids;
};

/// Plans `count` batches. Identities are matched to CMD rows by id. Each
/// batch draws from the stream seeded with (seed, batch index), so any
/// batch can be regenerated on its own.
class BatchPlanner {
 public:
  BatchPlanner(std::vector<IdentityImages> identities, const moments::CmdMatrix& cmds,
               PlanConfig config);

  BatchPlan plan(std::size_t batch_index) const;
  std::vector<BatchPlan> plan_many(std::size_t count) const;

  const KernelizedSimilarity& similarity() const { return sim_; }
  std::size_t k() const { return k_; }

 private:
  std::vector<IdentityImages> identities_;  // in CMD row order
  PlanConfig config_;
  KernelizedSimilarity sim_;
  std::size_t k_ = 0;
};

/// Single-batch convenience wrapper.
BatchPlan plan_batch(std::span<const IdentityImages> identities, const moments::CmdMatrix& cmds,
                     const PlanConfig& config, std::size_t batch_index = 0);

/// Per-batch RNG seed derived from the run seed.
std::uint64_t batch_seed(std::uint64_t seed, std::size_t batch_index);

/// One JSON object per line:
/// {batch_index, anchor, identities:[...], images:{id:[...]}, seed}.
std::string plans_to_jsonl(std::span<const BatchPlan> plans);
std::vector<BatchPlan> load_plans(const std::filesystem::path& path);

}  // namespace hpim::sampler

#endif  // HPIM_SAMPLER_HPP_
