#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "hpim/describer.hpp"
#include "hpim/error.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace hpim;
using namespace hpim::describer;

namespace {

AttributeSchema two_groups() {
  return AttributeSchema({{0, "gender", {"female"}, "none_gender"},
                          {1, "upper", {"black", "white", "red"}, "none_upper"}});
}

/// Two well separated 2-D clusters; label = cluster.
std::vector<LabeledSample> separable(std::size_t n, std::uint64_t seed, double corruption = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<LabeledSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % 2;
    const double c = cls ? 2.0 : -2.0;
    LabeledSample s{"s" + std::to_string(i), "", {c + noise(rng), c + noise(rng)}, {cls}};
    if (unit(rng) < corruption) s.labels[0] = 1 - cls;
    out.push_back(std::move(s));
  }
  return out;
}

AttributeSchema binary_schema() { return AttributeSchema({{0, "g", {"on"}, "off"}}); }

}  // namespace

TEST_CASE("weighted_loss values") {
  GroupSoftmaxModel m(two_groups(), 3);
  const LabeledSample s{"x", "", {0.1, -0.4, 2.0}, {1, 2}};
  // zero parameters -> uniform prediction
  auto l = weighted_loss(m, s);
  CHECK(l[0] == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(l[1] == doctest::Approx(std::log(4.0)).epsilon(1e-14));

  // perfect prediction
  m.bias(0) = {0.0, 1000.0};
  CHECK(weighted_loss(m, s)[0] == 0.0);
  // p[target] underflows -> clamped
  m.bias(0) = {1000.0, 0.0};
  CHECK(weighted_loss(m, s)[0] == doctest::Approx(-std::log(1e-12)).epsilon(1e-12));
  CHECK(weighted_loss(m, s)[0] == doctest::Approx(27.631021115928547));

  const LabeledSample wrong_dim{"y", "", {0.1}, {0, 0}};
  CHECK_THROWS_AS(weighted_loss(m, wrong_dim), ValidationError);
}

TEST_CASE("objective gradient matches central differences") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    auto model = GroupSoftmaxModel::random(two_groups(), 4, rng(), 0.5);
    std::vector<LabeledSample> samples;
    for (int i = 0; i < 6; ++i) {
      LabeledSample s{"s", "", std::vector<double>(4), {rng() % 2, rng() % 4}};
      for (double& x : s.feature) x = normal(rng);
      samples.push_back(s);
    }
    spl::WeightMatrix w{6, 2, {}};
    for (int i = 0; i < 12; ++i) w.v.push_back(static_cast<unsigned char>(rng() % 2));

    const auto grad = objective_gradient(model, samples, &w);
    // flatten parameters
    std::vector<double> flat, analytic;
    for (std::size_t g = 0; g < 2; ++g) {
      flat.insert(flat.end(), model.weights(g).data().begin(), model.weights(g).data().end());
      flat.insert(flat.end(), model.bias(g).begin(), model.bias(g).end());
      analytic.insert(analytic.end(), grad.weights[g].data().begin(), grad.weights[g].data().end());
      analytic.insert(analytic.end(), grad.biases[g].begin(), grad.biases[g].end());
    }
    auto f = [&](const std::vector<double>& params) {
      GroupSoftmaxModel m = model;
      std::size_t k = 0;
      for (std::size_t g = 0; g < 2; ++g) {
        for (double& x : m.weights(g).data()) x = params[k++];
        for (double& x : m.bias(g)) x = params[k++];
      }
      return objective(m, samples, &w);
    };
    const auto numeric = oracle::numeric_gradient(f, flat, 1e-5);
    CHECK(oracle::relative_error(analytic, numeric) < 1e-5);
  }
}

TEST_CASE("separable data reaches perfect test accuracy") {
  const auto train = separable(100, 1);
  const auto test = separable(100, 2);
  FitConfig cfg;
  cfg.max_epochs = 200;
  cfg.steps_per_epoch = 1;
  const auto r = fit_spl(GroupSoftmaxModel::random(binary_schema(), 2, 0), train, cfg);
  CHECK(r.epochs_run <= 200);
  CHECK(group_accuracy(r.model, test) == 1.0);
  CHECK(mean_attribute_accuracy(r.model, test) == 1.0);
  // thresholds never shrink
  for (std::size_t e = 1; e < r.history.size(); ++e) {
    CHECK(r.history[e].lambdas[0] >= r.history[e - 1].lambdas[0]);
  }
}

TEST_CASE("an epoch with every weight zero leaves parameters unchanged") {
  const auto train = separable(20, 3);
  const auto init = GroupSoftmaxModel::random(binary_schema(), 2, 9);
  FitConfig cfg;
  cfg.max_epochs = 5;
  cfg.initial_lambdas = {0.0};
  const auto r = fit_spl(init, train, cfg);
  CHECK(r.epochs_run == 5);
  CHECK(r.model == init);
  for (const auto& rec : r.schedule) CHECK(rec.selected == 0);
}

TEST_CASE("all weights forced to one reproduces the unweighted trainer") {
  const auto train = separable(40, 4, 0.2);
  const auto init = GroupSoftmaxModel::random(binary_schema(), 2, 17);
  FitConfig cfg;
  cfg.max_epochs = 30;
  cfg.steps_per_epoch = 2;
  cfg.initial_lambdas = {std::numeric_limits<double>::infinity()};
  cfg.stop_when_all_selected = false;
  const auto a = fit_spl(init, train, cfg);
  const auto b = fit_unweighted(init, train, cfg);
  CHECK(a.model == b.model);
}

TEST_CASE("fit_spl is deterministic and stops once everything is admitted") {
  const auto train = separable(60, 5, 0.2);
  FitConfig cfg;
  cfg.max_epochs = 500;
  const auto init = GroupSoftmaxModel::random(binary_schema(), 2, 1);
  const auto a = fit_spl(init, train, cfg);
  const auto b = fit_spl(init, train, cfg);
  CHECK(a.model == b.model);
  CHECK(a.epochs_run < 500);
  CHECK(a.schedule.back().selected == a.schedule.back().total);
}

TEST_CASE("non-finite training aborts with the epoch") {
  auto train = separable(10, 6);
  train[3].feature[0] = 1e300;
  FitConfig cfg;
  cfg.learning_rate = 1e10;
  cfg.max_epochs = 50;
  try {
    fit_unweighted(GroupSoftmaxModel::random(binary_schema(), 2, 0), train, cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("predict_code") {
  GroupSoftmaxModel zero(two_groups(), 2);
  const std::vector<double> f{0.3, -1.0};
  const auto c = predict_code(zero, f);
  REQUIRE(c.code.size() == 6);
  CHECK(c.code[0] == 0.5);
  CHECK(c.code[2] == 0.25);
  CHECK(c.code[5] == 0.25);

  auto model = GroupSoftmaxModel::random(two_groups(), 2, 3, 2.0);
  auto shifted = model;
  for (double& b : shifted.bias(1)) b += 7.5;
  const auto p1 = predict_code(model, f), p2 = predict_code(shifted, f);
  for (std::size_t k = 2; k < 6; ++k) CHECK(p1.code[k] == doctest::Approx(p2.code[k]).epsilon(1e-12));

  std::mt19937_64 rng(8);
  std::normal_distribution<double> wide(0.0, 50.0);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> x{wide(rng), wide(rng)};
    auto code = predict_code(model, x, "img", "id");
    CHECK_NOTHROW(check_code(model.schema(), code));
  }
  CHECK_THROWS_AS(predict_code(model, std::vector<double>{1.0}), ValidationError);
}

TEST_CASE("balanced accuracy") {
  const bool t[] = {true, true, true, true, false, false, false, false};
  const bool perfect[] = {true, true, true, true, false, false, false, false};
  const bool all_pos[] = {true, true, true, true, true, true, true, true};
  const bool mixed[] = {true, true, true, false, false, false, true, true};
  CHECK(accuracy(perfect, t) == 1.0);
  CHECK(accuracy(all_pos, t) == 0.5);
  CHECK(accuracy(mixed, t) == doctest::Approx(0.625));
  const bool none[] = {false, false};
  CHECK_THROWS_AS(accuracy(none, none), ValidationError);
  const bool ones[] = {true, true};
  CHECK_THROWS_AS(accuracy(ones, ones), ValidationError);
}

TEST_CASE("model and samples round-trip through files") {
  testutil::TempDir dir("describer");
  const auto schema = two_groups();
  const auto model = GroupSoftmaxModel::random(schema, 3, 12, 1.0);
  CHECK(model_from_json(model_to_json(model), schema) == model);

  std::vector<LabeledSample> samples{{"a", "p1", {0.1, 0.2, 1.0 / 3.0}, {0, 3}},
                                     {"b", "p2", {1e-300, -2.5, 7.0}, {1, 1}}};
  {
    std::ofstream out(dir / "f.jsonl");
    out << samples_to_jsonl(schema, samples);
  }
  const auto back = load_samples(dir / "f.jsonl", schema);
  REQUIRE(back.size() == 2);
  CHECK(back[0].feature == samples[0].feature);
  CHECK(back[1].labels == samples[1].labels);
  CHECK(back[1].identity_id == "p2");
}
