#ifndef HPIM_TRIPLET_HPP_
#define HPIM_TRIPLET_HPP_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hpim/matrix.hpp"
#include "hpim/sampler.hpp"

namespace hpim::triplet {

/// Euclidean distance matrix between rows, zero diagonal.
Matrix pairwise_distances(const Matrix& embeddings);

/// A batch of embeddings with one identity label per row.
struct EmbeddingBatch {
  Matrix embeddings;
  std::vector<std::size_t> labels;
  double margin = 1.0;
  double mu = 0.5;      ///< pull/push balance of the batch-all losses
  double alpha = 0.55;  ///< centroid regulariser weight
};

struct LossReport {
  double value = 0.0;
  std::vector<double> per_anchor;
  /// Share of anchors whose hinge term is strictly positive. For losses
  /// without a hinge this uses the batch-hard hinge [m + d_pos - d_neg]_+.
  double active_fraction = 0.0;
};

enum class LossKind {
  kBatchAllHinge,      ///< all positives/negatives, hinge form
  kBatchAllLifted,     ///< all positives/negatives, exponential form
  kBatchHardHinge,     ///< [m + max d_pos - min d_neg]_+
  kBatchHardSoftplus,  ///< log(1 + exp(max d_pos - min d_neg))
  kCentroidHinge,      ///< batch-hard hinge + alpha * log(1 + exp(d(f_a, centroid)))
  kCentroidSoftplus,   ///< batch-hard softplus + the same regulariser
};

const char* to_string(LossKind kind);
/// Accepts the names produced by to_string; throws ValidationError otherwise.
LossKind parse_loss_kind(const std::string& name);

LossReport batch_all_loss(const EmbeddingBatch& batch, bool lifted = false);
LossReport batch_hard_loss(const EmbeddingBatch& batch, bool softplus = false);
LossReport centroid_regularized_loss(const EmbeddingBatch& batch, bool softplus = true);

LossReport compute_loss(const EmbeddingBatch& batch, LossKind kind);

/// Analytic gradient of compute_loss(batch, kind).value with respect to the
/// embeddings. Hinge kinks and zero distances take subgradient 0; max/min
/// ties resolve to the lowest row index.
Matrix loss_gradient(const EmbeddingBatch& batch, LossKind kind);

/// Linear map feature -> embedding.
class LinearEmbedder {
 public:
  LinearEmbedder() = default;
  /// Entries drawn from N(0, 1/input_dim).
  LinearEmbedder(std::size_t input_dim, std::size_t output_dim, std::uint64_t seed);

  std::size_t input_dim() const { return weights_.cols(); }
  std::size_t output_dim() const { return weights_.rows(); }
  const Matrix& weights() const { return weights_; }
  Matrix& weights() { return weights_; }

  /// Rows of `features` mapped to rows of the result.
  Matrix embed(const Matrix& features) const;

  friend bool operator==(const LinearEmbedder&, const LinearEmbedder&) = default;

 private:
  Matrix weights_;  // output_dim x input_dim
};

/// Features and identity labels addressable by image id.
class FeatureTable {
 public:
  void add(const std::string& image_id, const std::string& identity_id,
           std::span<const double> feature);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  std::span<const double> feature(const std::string& image_id) const;
  const std::string& identity(const std::string& image_id) const;

 private:
  std::size_t dim_ = 0;
  std::map<std::string, std::size_t> index_;
  std::vector<std::string> ids_;
  std::vector<std::string> identities_;
  std::vector<double> data_;
};

/// Gathers a plan's images into a feature matrix with per-row labels (the
/// position of the identity within the plan).
void gather_batch(const FeatureTable& table, const sampler::BatchPlan& plan, Matrix& features,
                  std::vector<std::size_t>& labels);

struct TrainConfig {
  std::size_t embed_dim = 16;
  double learning_rate = 1e-3;
  std::size_t epochs = 1;
  LossKind loss = LossKind::kCentroidSoftplus;
  double margin = 1.0;
  double mu = 0.5;
  double alpha = 0.55;
  std::uint64_t seed = 0;
};

struct BatchMetric {
  std::size_t batch_index;
  double loss;
  double active_fraction;
};

struct TrainResult {
  LinearEmbedder embedder;
  std::vector<BatchMetric> log;
};

/// Gradient descent over the planned batches, `epochs` passes in order.
/// Throws NumericError naming the batch on a non-finite loss.
TrainResult train_demo(const FeatureTable& table, std::span<const sampler::BatchPlan> plans,
                       const TrainConfig& config);
/// Same, continuing from an existing embedder.
TrainResult train_demo(LinearEmbedder embedder, const FeatureTable& table,
                       std::span<const sampler::BatchPlan> plans, const TrainConfig& config);

/// Loss report of a planned batch under a fixed embedder, without updating.
LossReport evaluate_batch(const LinearEmbedder& embedder, const FeatureTable& table,
                          const sampler::BatchPlan& plan, const TrainConfig& config);

std::string metrics_to_csv(std::span<const BatchMetric> log);

/// Embeddings with identity labels and image ids.
struct RetrievalSet {
  Matrix embeddings;
  std::vector<std::string> identities;
  std::vector<std::string> images;
};

struct RetrievalReport {
  std::vector<double> cmc;  ///< cmc[k-1] = rank-k accuracy
  double mean_ap = 0.0;

  double rank(std::size_t k) const;
};

/// CMC and mAP over the ranked gallery. Gallery items with the same image id
/// as the query are skipped. Throws ValidationError if a query identity has
/// no gallery match.
RetrievalReport evaluate_retrieval(const RetrievalSet& query, const RetrievalSet& gallery);

/// {"rank1":..,"rank5":..,"rank10":..,"mAP":..}
std::string report_to_json(const RetrievalReport& report);

}  // namespace hpim::triplet

#endif  // HPIM_TRIPLET_HPP_
