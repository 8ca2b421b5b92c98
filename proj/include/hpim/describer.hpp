#ifndef HPIM_DESCRIBER_HPP_
#define HPIM_DESCRIBER_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hpim/matrix.hpp"
#include "hpim/schema.hpp"
#include "hpim/spl.hpp"

namespace hpim::describer {

/// A feature vector with one target class per attribute group (class index
/// within the group; the negative class is the last index).
struct LabeledSample {
  std::string image_id;
  std::string identity_id;
  std::vector<double> feature;
  std::vector<std::size_t> labels;
};

/// One linear softmax classifier per attribute group.
class GroupSoftmaxModel {
 public:
  GroupSoftmaxModel() = default;
  /// All-zero parameters.
  GroupSoftmaxModel(AttributeSchema schema, std::size_t feature_dim);
  /// Parameters drawn from N(0, scale^2) with a seeded stream.
  static GroupSoftmaxModel random(AttributeSchema schema, std::size_t feature_dim,
                                  std::uint64_t seed, double scale = 0.01);

  const AttributeSchema& schema() const { return schema_; }
  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t num_groups() const { return weights_.size(); }

  /// feature_dim x classes.
  Matrix& weights(std::size_t g) { return weights_[g]; }
  const Matrix& weights(std::size_t g) const { return weights_[g]; }
  std::vector<double>& bias(std::size_t g) { return biases_[g]; }
  const std::vector<double>& bias(std::size_t g) const { return biases_[g]; }

  std::vector<double> logits(std::size_t g, std::span<const double> feature) const;
  std::vector<double> probabilities(std::size_t g, std::span<const double> feature) const;

  friend bool operator==(const GroupSoftmaxModel& a, const GroupSoftmaxModel& b) {
    return a.feature_dim_ == b.feature_dim_ && a.weights_ == b.weights_ && a.biases_ == b.biases_;
  }

 private:
  AttributeSchema schema_;
  std::size_t feature_dim_ = 0;
  std::vector<Matrix> weights_;
  std::vector<std::vector<double>> biases_;
};

inline constexpr double kProbabilityClamp = 1e-12;

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

/// Per-group cross-entropy -log(max(p_target, 1e-12)).
std::vector<double> weighted_loss(const GroupSoftmaxModel& model, const LabeledSample& sample);

/// samples x groups matrix of weighted_loss rows.
Matrix loss_matrix(const GroupSoftmaxModel& model, std::span<const LabeledSample> samples);

/// Parameter-shaped container for gradients.
struct Gradient {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
};

/// Gradient of (1/n) * sum_i sum_g v[i][g] * loss_g(sample i). A null
/// weight matrix means all weights are one.
Gradient objective_gradient(const GroupSoftmaxModel& model, std::span<const LabeledSample> samples,
                            const spl::WeightMatrix* weights);

/// (1/n) * sum_i sum_g v[i][g] * loss_g(sample i).
double objective(const GroupSoftmaxModel& model, std::span<const LabeledSample> samples,
                 const spl::WeightMatrix* weights);

struct FitConfig {
  double learning_rate = 0.1;
  std::size_t max_epochs = 200;
  /// Gradient steps taken with the weights held fixed.
  std::size_t steps_per_epoch = 1;
  double growth_factor = spl::kDefaultGrowth;
  /// Optional explicit starting thresholds; default is the per-group median.
  std::vector<double> initial_lambdas;
  /// End training as soon as every weight is one.
  bool stop_when_all_selected = true;
};

struct FitResult {
  GroupSoftmaxModel model;
  std::vector<spl::SplState> history;
  std::vector<spl::ScheduleRecord> schedule;
  std::size_t epochs_run = 0;
};

/// Self-paced training: each epoch assigns weights from the current losses,
/// takes gradient steps on the weighted objective, then grows the
/// thresholds. Stops once every weight is one or after max_epochs.
/// Throws NumericError naming the epoch on a non-finite loss.
FitResult fit_spl(GroupSoftmaxModel model, std::span<const LabeledSample> samples,
                  const FitConfig& config);

/// Plain gradient descent on the unweighted objective for max_epochs.
FitResult fit_unweighted(GroupSoftmaxModel model, std::span<const LabeledSample> samples,
                         const FitConfig& config);

/// Concatenated per-group softmax outputs.
DescriptionCode predict_code(const GroupSoftmaxModel& model, std::span<const double> feature,
                             std::string image_id = {}, std::string identity_id = {});

/// Balanced accuracy 0.5 * (TP/(TP+FN) + TN/(TN+FP)). Throws
/// ValidationError when targets lack positives or negatives.
double accuracy(std::span<const bool> predictions, std::span<const bool> targets);

/// Mean of accuracy() over positive attributes, thresholding each code entry
/// at 0.5. Attributes whose targets are all positive or all negative in
/// the sample set are skipped; throws if none remain.
double mean_attribute_accuracy(const GroupSoftmaxModel& model,
                               std::span<const LabeledSample> samples);

/// Fraction of (sample, group) pairs whose argmax class matches the label.
double group_accuracy(const GroupSoftmaxModel& model, std::span<const LabeledSample> samples);

/// Reads {image_id, identity_id?, feature:[..], labels:{group:class}} lines.
std::vector<LabeledSample> load_samples(const std::filesystem::path& path,
                                        const AttributeSchema& schema);
std::string samples_to_jsonl(const AttributeSchema& schema,
                             std::span<const LabeledSample> samples);

std::string model_to_json(const GroupSoftmaxModel& model);
GroupSoftmaxModel model_from_json(const std::string& text, const AttributeSchema& schema);

}  // namespace hpim::describer

#endif  // HPIM_DESCRIBER_HPP_
