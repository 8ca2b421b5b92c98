#include "hpim/describer.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

#include <json.hpp>

#include "hpim/error.hpp"
#include "hpim/io.hpp"

namespace hpim::describer {

using nlohmann::json;

GroupSoftmaxModel::GroupSoftmaxModel(AttributeSchema schema, std::size_t feature_dim)
    : schema_(std::move(schema)), feature_dim_(feature_dim) {
  for (const auto& g : schema_.groups()) {
    weights_.emplace_back(feature_dim_, g.num_classes(), 0.0);
    biases_.emplace_back(g.num_classes(), 0.0);
  }
}

GroupSoftmaxModel GroupSoftmaxModel::random(AttributeSchema schema, std::size_t feature_dim,
                                            std::uint64_t seed, double scale) {
  GroupSoftmaxModel m(std::move(schema), feature_dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  for (auto& w : m.weights_) {
    for (double& x : w.data()) x = normal(rng);
  }
  return m;
}

std::vector<double> GroupSoftmaxModel::logits(std::size_t g,
                                              std::span<const double> feature) const {
  if (feature.size() != feature_dim_) {
    throw ValidationError("feature dimension mismatch (got " + std::to_string(feature.size()) +
                          ", model expects " + std::to_string(feature_dim_) + ")");
  }
  const Matrix& w = weights_[g];
  std::vector<double> z = biases_[g];
  for (std::size_t d = 0; d < feature_dim_; ++d) {
    const double x = feature[d];
    if (x == 0.0) continue;
    auto row = w.row(d);
    for (std::size_t k = 0; k < z.size(); ++k) z[k] += x * row[k];
  }
  return z;
}

std::vector<double> GroupSoftmaxModel::probabilities(std::size_t g,
                                                     std::span<const double> feature) const {
  return softmax(logits(g, feature));
}

std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    p[k] = std::exp(logits[k] - mx);
    sum += p[k];
  }
  for (double& x : p) x /= sum;
  return p;
}

namespace {

void check_labels(const GroupSoftmaxModel& model, const LabeledSample& s) {
  if (s.labels.size() != model.num_groups()) {
    throw ValidationError("sample " + s.image_id + " has " + std::to_string(s.labels.size()) +
                          " group labels, expected " + std::to_string(model.num_groups()));
  }
  for (std::size_t g = 0; g < s.labels.size(); ++g) {
    if (s.labels[g] >= model.schema().groups()[g].num_classes()) {
      throw ValidationError("sample " + s.image_id + ": class index out of range in group " +
                            std::to_string(g));
    }
  }
}

}  // namespace

std::vector<double> weighted_loss(const GroupSoftmaxModel& model, const LabeledSample& sample) {
  check_labels(model, sample);
  std::vector<double> losses(model.num_groups());
  for (std::size_t g = 0; g < model.num_groups(); ++g) {
    const auto p = model.probabilities(g, sample.feature);
    losses[g] = -std::log(std::max(p[sample.labels[g]], kProbabilityClamp));
  }
  return losses;
}

Matrix loss_matrix(const GroupSoftmaxModel& model, std::span<const LabeledSample> samples) {
  Matrix out(samples.size(), model.num_groups());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto l = weighted_loss(model, samples[i]);
    std::copy(l.begin(), l.end(), out.row(i).begin());
  }
  return out;
}

double objective(const GroupSoftmaxModel& model, std::span<const LabeledSample> samples,
                 const spl::WeightMatrix* weights) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto l = weighted_loss(model, samples[i]);
    for (std::size_t g = 0; g < l.size(); ++g) {
      if (weights == nullptr || (*weights)(i, g)) total += l[g];
    }
  }
  return total / static_cast<double>(samples.size());
}

Gradient objective_gradient(const GroupSoftmaxModel& model,
                            std::span<const LabeledSample> samples,
                            const spl::WeightMatrix* weights) {
  Gradient grad;
  for (std::size_t g = 0; g < model.num_groups(); ++g) {
    grad.weights.emplace_back(model.weights(g).rows(), model.weights(g).cols(), 0.0);
    grad.biases.emplace_back(model.bias(g).size(), 0.0);
  }
  if (samples.empty()) return grad;
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    check_labels(model, s);
    for (std::size_t g = 0; g < model.num_groups(); ++g) {
      if (weights != nullptr && !(*weights)(i, g)) continue;
      auto delta = model.probabilities(g, s.feature);
      delta[s.labels[g]] -= 1.0;
      for (double& x : delta) x *= inv_n;
      auto& gw = grad.weights[g];
      for (std::size_t d = 0; d < model.feature_dim(); ++d) {
        const double x = s.feature[d];
        if (x == 0.0) continue;
        auto row = gw.row(d);
        for (std::size_t k = 0; k < delta.size(); ++k) row[k] += x * delta[k];
      }
      for (std::size_t k = 0; k < delta.size(); ++k) grad.biases[g][k] += delta[k];
    }
  }
  return grad;
}

namespace {

void descend(GroupSoftmaxModel& model, const Gradient& grad, double rate) {
  for (std::size_t g = 0; g < model.num_groups(); ++g) {
    auto& w = model.weights(g).data();
    const auto& gw = grad.weights[g].data();
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= rate * gw[k];
    auto& b = model.bias(g);
    for (std::size_t k = 0; k < b.size(); ++k) b[k] -= rate * grad.biases[g][k];
  }
}

void check_finite(const Matrix& losses, std::size_t epoch) {
  for (double l : losses.data()) {
    if (!std::isfinite(l)) {
      throw NumericError("non-finite loss during training at epoch " + std::to_string(epoch));
    }
  }
}

void check_config(const FitConfig& config) {
  if (!(config.learning_rate > 0.0) || !std::isfinite(config.learning_rate)) {
    throw ValidationError("learning rate must be a positive finite number");
  }
}

}  // namespace

FitResult fit_spl(GroupSoftmaxModel model, std::span<const LabeledSample> samples,
                  const FitConfig& config) {
  check_config(config);
  FitResult result;
  if (samples.empty()) throw ValidationError("no training samples");

  Matrix losses = loss_matrix(model, samples);
  check_finite(losses, 0);
  spl::SplState state =
      config.initial_lambdas.empty()
          ? spl::init_lambdas(losses, config.growth_factor)
          : spl::make_state(config.initial_lambdas, config.growth_factor);
  if (state.lambdas.size() != model.num_groups()) {
    throw ValidationError("initial thresholds do not match the number of groups");
  }

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto weights = spl::assign_weights(losses, state);
    result.history.push_back(state);
    for (std::size_t g = 0; g < model.num_groups(); ++g) {
      result.schedule.push_back(
          {epoch, g, state.lambdas[g], weights.selected(g), weights.samples});
    }
    for (std::size_t step = 0; step < config.steps_per_epoch; ++step) {
      descend(model, objective_gradient(model, samples, &weights), config.learning_rate);
    }
    ++result.epochs_run;
    losses = loss_matrix(model, samples);
    check_finite(losses, epoch + 1);
    if (config.stop_when_all_selected && weights.all_selected()) break;
    state = spl::advance(state);
  }
  result.model = std::move(model);
  return result;
}

FitResult fit_unweighted(GroupSoftmaxModel model, std::span<const LabeledSample> samples,
                         const FitConfig& config) {
  check_config(config);
  if (samples.empty()) throw ValidationError("no training samples");
  FitResult result;
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    for (std::size_t step = 0; step < config.steps_per_epoch; ++step) {
      descend(model, objective_gradient(model, samples, nullptr), config.learning_rate);
    }
    ++result.epochs_run;
    check_finite(loss_matrix(model, samples), epoch + 1);
  }
  result.model = std::move(model);
  return result;
}

DescriptionCode predict_code(const GroupSoftmaxModel& model, std::span<const double> feature,
                             std::string image_id, std::string identity_id) {
  DescriptionCode out{std::move(image_id), std::move(identity_id), {}};
  out.code.reserve(model.schema().total_code_dim());
  for (std::size_t g = 0; g < model.num_groups(); ++g) {
    const auto p = model.probabilities(g, feature);
    out.code.insert(out.code.end(), p.begin(), p.end());
  }
  return out;
}

double accuracy(std::span<const bool> predictions, std::span<const bool> targets) {
  if (predictions.size() != targets.size()) {
    throw ValidationError("prediction and target lengths differ");
  }
  std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i]) {
      (predictions[i] ? tp : fn) += 1;
    } else {
      (predictions[i] ? fp : tn) += 1;
    }
  }
  if (tp + fn == 0) throw ValidationError("accuracy undefined: no positive targets");
  if (tn + fp == 0) throw ValidationError("accuracy undefined: no negative targets");
  return 0.5 * (static_cast<double>(tp) / static_cast<double>(tp + fn) +
                static_cast<double>(tn) / static_cast<double>(tn + fp));
}

double mean_attribute_accuracy(const GroupSoftmaxModel& model,
                               std::span<const LabeledSample> samples) {
  const auto& schema = model.schema();
  std::vector<DescriptionCode> codes;
  codes.reserve(samples.size());
  for (const auto& s : samples) codes.push_back(predict_code(model, s.feature));

  double sum = 0.0;
  std::size_t count = 0;
  // std::vector<bool> is not contiguous, so use plain arrays for the spans.
  const std::size_t n = samples.size();
  auto pred = std::make_unique<bool[]>(n);
  auto target = std::make_unique<bool[]>(n);
  for (std::size_t g = 0; g < schema.num_groups(); ++g) {
    const std::size_t off = schema.group_offset(g);
    for (std::size_t a = 0; a < schema.groups()[g].attributes.size(); ++a) {
      std::size_t positives = 0;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        pred[i] = codes[i].code[off + a] >= 0.5;
        target[i] = samples[i].labels.at(g) == a;
        positives += target[i] ? 1 : 0;
      }
      if (positives == 0 || positives == samples.size()) continue;
      sum += accuracy(std::span<const bool>(pred.get(), n), std::span<const bool>(target.get(), n));
      ++count;
    }
  }
  if (count == 0) throw ValidationError("no attribute has both positive and negative targets");
  return sum / static_cast<double>(count);
}

double group_accuracy(const GroupSoftmaxModel& model, std::span<const LabeledSample> samples) {
  if (samples.empty()) throw ValidationError("no samples");
  std::size_t hits = 0;
  for (const auto& s : samples) {
    check_labels(model, s);
    for (std::size_t g = 0; g < model.num_groups(); ++g) {
      const auto z = model.logits(g, s.feature);
      const auto k = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
      hits += k == s.labels[g] ? 1 : 0;
    }
  }
  return static_cast<double>(hits) /
         static_cast<double>(samples.size() * model.num_groups());
}

std::vector<LabeledSample> load_samples(const std::filesystem::path& path,
                                        const AttributeSchema& schema) {
  std::vector<LabeledSample> out;
  io::for_each_json_line(path, [&](const json& j, std::size_t lineno) {
    LabeledSample s;
    s.image_id = j.at("image_id").get<std::string>();
    s.identity_id = j.value("identity_id", std::string{});
    s.feature = j.at("feature").get<std::vector<double>>();
    if (!out.empty() && s.feature.size() != out.front().feature.size()) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": image " +
                            s.image_id + " feature dimension differs from earlier records");
    }
    if (j.contains("labels")) {
      const auto& labels = j.at("labels");
      s.labels.assign(schema.num_groups(), 0);
      if (labels.size() != schema.num_groups()) {
        throw ValidationError("image " + s.image_id + ": expected a label for each of " +
                              std::to_string(schema.num_groups()) + " groups");
      }
      for (const auto& [group, cls] : labels.items()) {
        const auto g = schema.group_index(group);
        if (g == AttributeSchema::npos) {
          throw ValidationError("image " + s.image_id + ": unknown group '" + group + "'");
        }
        const auto k = schema.class_index(g, cls.get<std::string>());
        if (k == AttributeSchema::npos) {
          throw ValidationError("image " + s.image_id + ": unknown class '" +
                                cls.get<std::string>() + "' in group '" + group + "'");
        }
        s.labels[g] = k;
      }
    }
    out.push_back(std::move(s));
  });
  return out;
}

std::string samples_to_jsonl(const AttributeSchema& schema,
                             std::span<const LabeledSample> samples) {
  std::string out;
  for (const auto& s : samples) {
    json j{{"image_id", s.image_id}, {"identity_id", s.identity_id}, {"feature", s.feature}};
    if (!s.labels.empty()) {
      json labels = json::object();
      for (std::size_t g = 0; g < schema.num_groups(); ++g) {
        const auto& group = schema.groups()[g];
        const auto k = s.labels[g];
        labels[group.name] = k < group.attributes.size() ? group.attributes[k] : group.negative_label;
      }
      j["labels"] = labels;
    }
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string model_to_json(const GroupSoftmaxModel& model) {
  json groups = json::array();
  for (std::size_t g = 0; g < model.num_groups(); ++g) {
    const auto& w = model.weights(g);
    json rows = json::array();
    for (std::size_t d = 0; d < w.rows(); ++d) {
      rows.push_back(std::vector<double>(w.row(d).begin(), w.row(d).end()));
    }
    groups.push_back({{"name", model.schema().groups()[g].name},
                      {"weights", rows},
                      {"bias", model.bias(g)}});
  }
  return json{{"feature_dim", model.feature_dim()}, {"groups", groups}}.dump() + "\n";
}

GroupSoftmaxModel model_from_json(const std::string& text, const AttributeSchema& schema) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("model: ") + e.what());
  }
  try {
    GroupSoftmaxModel model(schema, j.at("feature_dim").get<std::size_t>());
    const auto& groups = j.at("groups");
    if (groups.size() != schema.num_groups()) {
      throw ValidationError("model group count does not match schema");
    }
    for (std::size_t g = 0; g < schema.num_groups(); ++g) {
      const auto& jg = groups[g];
      if (jg.at("name").get<std::string>() != schema.groups()[g].name) {
        throw ValidationError("model group " + std::to_string(g) + " name does not match schema");
      }
      auto& w = model.weights(g);
      const auto& rows = jg.at("weights");
      if (rows.size() != w.rows()) throw ValidationError("model weight shape mismatch");
      for (std::size_t d = 0; d < w.rows(); ++d) {
        const auto row = rows[d].get<std::vector<double>>();
        if (row.size() != w.cols()) throw ValidationError("model weight shape mismatch");
        std::copy(row.begin(), row.end(), w.row(d).begin());
      }
      auto bias = jg.at("bias").get<std::vector<double>>();
      if (bias.size() != w.cols()) throw ValidationError("model bias shape mismatch");
      model.bias(g) = std::move(bias);
    }
    return model;
  } catch (const json::exception& e) {
    throw ParseError(std::string("model: ") + e.what());
  }
}

}  // namespace hpim::describer
