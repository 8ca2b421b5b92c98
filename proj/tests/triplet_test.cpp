#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "hpim/error.hpp"
#include "hpim/synthworld.hpp"
#include "hpim/triplet.hpp"
#include "oracles.hpp"

using namespace hpim;
using namespace hpim::triplet;

namespace {

EmbeddingBatch batch_1d(const std::vector<double>& xs, const std::vector<std::size_t>& labels) {
  EmbeddingBatch b;
  b.embeddings = Matrix(xs.size(), 1);
  for (std::size_t i = 0; i < xs.size(); ++i) b.embeddings(i, 0) = xs[i];
  b.labels = labels;
  return b;
}

EmbeddingBatch random_batch(std::mt19937_64& rng, std::size_t p, std::size_t s, std::size_t dim,
                            double spread = 1.0) {
  std::normal_distribution<double> g(0.0, spread);
  EmbeddingBatch b;
  b.embeddings = Matrix(p * s, dim);
  for (double& v : b.embeddings.data()) v = g(rng);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < s; ++j) b.labels.push_back(i);
  }
  return b;
}

std::vector<std::vector<double>> rows_of(const Matrix& m) {
  std::vector<std::vector<double>> out;
  for (std::size_t r = 0; r < m.rows(); ++r) out.emplace_back(m.row(r).begin(), m.row(r).end());
  return out;
}

const LossKind kAllKinds[] = {LossKind::kBatchAllHinge,     LossKind::kBatchAllLifted,
                              LossKind::kBatchHardHinge,    LossKind::kBatchHardSoftplus,
                              LossKind::kCentroidHinge,     LossKind::kCentroidSoftplus};

}  // namespace

TEST_CASE("pairwise_distances") {
  const auto d = pairwise_distances(batch_1d({0, 3}, {0, 1}).embeddings);
  CHECK(d(0, 1) == 3.0);
  CHECK(d(1, 0) == 3.0);
  CHECK(d(0, 0) == 0.0);
  const auto zero = pairwise_distances(Matrix(4, 3, 1.5));
  for (double v : zero.data()) CHECK(v == 0.0);

  std::mt19937_64 rng(1);
  auto b = random_batch(rng, 3, 3, 4);
  const auto before = pairwise_distances(b.embeddings);
  for (std::size_t r = 0; r < b.embeddings.rows(); ++r) {
    for (std::size_t c = 0; c < 4; ++c) b.embeddings(r, c) += 0.25 * static_cast<double>(c + 1);
  }
  const auto after = pairwise_distances(b.embeddings);
  for (std::size_t i = 0; i < before.data().size(); ++i) {
    CHECK(after.data()[i] == doctest::Approx(before.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("loss kind names round trip") {
  for (auto k : kAllKinds) CHECK(parse_loss_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_loss_kind("nope"), ValidationError);
}

TEST_CASE("batch_all examples") {
  EmbeddingBatch b;
  b.embeddings = Matrix(6, 2, 0.7);
  b.labels = {0, 0, 1, 1, 2, 2};
  const auto r = batch_all_loss(b);
  CHECK(r.value == 6.0);
  for (double t : r.per_anchor) CHECK(t == 1.0);
  CHECK(r.active_fraction == 1.0);

  const auto sep = batch_all_loss(batch_1d({0, 0.1, 100, 100.1}, {0, 0, 1, 1}));
  CHECK(sep.value == 0.0);
  CHECK(sep.active_fraction == 0.0);

  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) CHECK(batch_all_loss(random_batch(rng, 3, 2, 2), true).value >= 0.0);
}

TEST_CASE("batch_hard examples") {
  // anchors 0 and 2.5: [1 + 1 - 1.5]_+ = 0.5; anchors 1 and 1.5 see a
  // negative 0.5 away: [1 + 1 - 0.5]_+ = 1.5.
  const auto r = batch_hard_loss(batch_1d({0, 1, 1.5, 2.5}, {0, 0, 1, 1}));
  CHECK(r.per_anchor[0] == 0.5);
  CHECK(r.per_anchor[1] == 1.5);
  CHECK(r.per_anchor[2] == 1.5);
  CHECK(r.per_anchor[3] == 0.5);
  CHECK(r.value == 4.0);
  CHECK(r.value == oracle::batch_hard_bruteforce({{0}, {1}, {1.5}, {2.5}}, {0, 0, 1, 1}, 1.0));
  CHECK(r.active_fraction == 1.0);

  const auto far = batch_hard_loss(batch_1d({0, 1, 5, 6}, {0, 0, 1, 1}));
  CHECK(far.value == 0.0);
  CHECK(far.active_fraction == 0.0);

  const auto sp = batch_hard_loss(batch_1d({0, 1, 1.5, 2.5}, {0, 0, 1, 1}), true);
  CHECK(sp.per_anchor[0] == doctest::Approx(std::log1p(std::exp(-0.5))).epsilon(1e-15));
  CHECK(sp.per_anchor[1] == doctest::Approx(std::log1p(std::exp(0.5))).epsilon(1e-15));
}

TEST_CASE("batch_hard equals the exhaustive scan") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 500; ++t) {
    const std::size_t p = 2 + rng() % 3, s = 2 + rng() % 3, dim = 1 + rng() % 4;
    auto b = random_batch(rng, p, s, dim);
    b.margin = 0.1 + static_cast<double>(rng() % 20) / 10.0;
    const auto r = batch_hard_loss(b);
    CHECK(r.value == oracle::batch_hard_bruteforce(rows_of(b.embeddings), b.labels, b.margin));
    // per-anchor term dominates any fixed triplet
    const auto d = pairwise_distances(b.embeddings);
    for (std::size_t a = 0; a < b.labels.size(); ++a) {
      for (std::size_t q = 0; q < b.labels.size(); ++q) {
        if (q == a || b.labels[q] != b.labels[a]) continue;
        for (std::size_t n = 0; n < b.labels.size(); ++n) {
          if (b.labels[n] == b.labels[a]) continue;
          CHECK(r.per_anchor[a] >= std::max(0.0, b.margin + d(a, q) - d(a, n)));
        }
      }
    }
  }
}

TEST_CASE("invalid batches") {
  CHECK_THROWS_AS(batch_hard_loss(batch_1d({0, 1, 2}, {0, 0, 1})), ValidationError);
  CHECK_THROWS_AS(batch_all_loss(batch_1d({0, 1}, {0, 0})), ValidationError);
  CHECK_THROWS_AS(batch_hard_loss(batch_1d({0, NAN, 2, 3}, {0, 0, 1, 1})), ValidationError);
  CHECK_THROWS_AS(batch_hard_loss(batch_1d({0, 1, 2}, {0, 0, 1, 1})), ValidationError);
}

TEST_CASE("centroid regulariser") {
  const double log2 = std::log(2.0);
  EmbeddingBatch b = batch_1d({0, 0, 4, 4}, {0, 0, 1, 1});
  const auto hard = batch_hard_loss(b, true);
  const auto r = centroid_regularized_loss(b, true);
  for (std::size_t a = 0; a < 4; ++a) {
    CHECK(r.per_anchor[a] - hard.per_anchor[a] == doctest::Approx(0.55 * log2).epsilon(1e-14));
  }
  CHECK(0.55 * log2 == doctest::Approx(0.381231).epsilon(1e-6));

  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    auto rb = random_batch(rng, 3, 3, 3);
    rb.alpha = 0.0;
    CHECK(centroid_regularized_loss(rb, true).value == batch_hard_loss(rb, true).value);
    CHECK(centroid_regularized_loss(rb, false).value == batch_hard_loss(rb, false).value);
  }

  // spreading one identity increases its regulariser sum
  auto reg_sum = [](const EmbeddingBatch& eb) {
    const auto c = centroid_regularized_loss(eb, true);
    const auto h = batch_hard_loss(eb, true);
    return c.per_anchor[0] + c.per_anchor[1] + c.per_anchor[2] - h.per_anchor[0] - h.per_anchor[1] -
           h.per_anchor[2];
  };
  double prev = -1.0;
  for (double spread : {0.0, 0.1, 0.5, 1.0, 3.0}) {
    const auto eb = batch_1d({-spread, 0, spread, 10, 11, 12}, {0, 0, 0, 1, 1, 1});
    const double s = reg_sum(eb);
    CHECK(s > prev);
    prev = s;
  }
}

TEST_CASE("analytic gradients match finite differences") {
  std::mt19937_64 rng(5);
  for (auto kind : kAllKinds) {
    CAPTURE(to_string(kind));
    for (int t = 0; t < 50; ++t) {
      const std::size_t p = 2 + rng() % 3, s = 2 + rng() % 3, dim = 1 + rng() % 5;
      auto b = random_batch(rng, p, s, dim);
      const auto g = loss_gradient(b, kind);
      std::vector<double> x(b.embeddings.data().begin(), b.embeddings.data().end());
      auto f = [&](const std::vector<double>& v) {
        EmbeddingBatch c = b;
        std::copy(v.begin(), v.end(), c.embeddings.data().begin());
        return compute_loss(c, kind).value;
      };
      const auto num = oracle::numeric_gradient(f, x);
      std::vector<double> ana(g.data().begin(), g.data().end());
      CHECK(oracle::relative_error(ana, num) < 1e-5);
    }
  }
}

TEST_CASE("gradient flat regions and invariances") {
  const auto sep = batch_1d({0, 0.1, 100, 100.1}, {0, 0, 1, 1});
  for (auto kind : {LossKind::kBatchAllHinge, LossKind::kBatchHardHinge}) {
    const auto g = loss_gradient(sep, kind);
    for (double v : g.data()) CHECK(v == 0.0);
  }

  std::mt19937_64 rng(6);
  for (auto kind : kAllKinds) {
    for (int t = 0; t < 20; ++t) {
      auto b = random_batch(rng, 3, 3, 3);
      const double base = compute_loss(b, kind).value;
      const auto g = loss_gradient(b, kind);
      // zero directional derivative along a common translation
      for (std::size_t c = 0; c < 3; ++c) {
        double dir = 0.0;
        for (std::size_t r = 0; r < g.rows(); ++r) dir += g(r, c);
        CHECK(std::abs(dir) <= 1e-9 * std::max(1.0, base));
      }
      // value invariant under translation and rotation
      EmbeddingBatch moved = b;
      const double th = 0.3 + static_cast<double>(t);
      for (std::size_t r = 0; r < b.embeddings.rows(); ++r) {
        const double x = b.embeddings(r, 0), y = b.embeddings(r, 1);
        moved.embeddings(r, 0) = std::cos(th) * x - std::sin(th) * y + 3.0;
        moved.embeddings(r, 1) = std::sin(th) * x + std::cos(th) * y - 1.0;
        moved.embeddings(r, 2) += 2.5;
      }
      CHECK(std::abs(compute_loss(moved, kind).value - base) <= 1e-9 * std::max(1.0, base));
    }
  }
}

TEST_CASE("linear embedder and feature table") {
  LinearEmbedder e(4, 2, 9);
  CHECK(e.input_dim() == 4);
  CHECK(e.output_dim() == 2);
  CHECK(e == LinearEmbedder(4, 2, 9));
  CHECK_FALSE(e == LinearEmbedder(4, 2, 10));
  Matrix x(1, 4, 0.0);
  x(0, 2) = 1.0;
  const auto y = e.embed(x);
  CHECK(y(0, 0) == e.weights()(0, 2));
  CHECK(y(0, 1) == e.weights()(1, 2));

  FeatureTable t;
  const double f[2] = {1, 2};
  t.add("img0", "idA", f);
  CHECK(t.dim() == 2);
  CHECK(t.identity("img0") == "idA");
  CHECK(t.feature("img0")[1] == 2.0);
  CHECK_THROWS_AS(t.feature("missing"), ValidationError);
  const double g3[3] = {1, 2, 3};
  CHECK_THROWS_AS(t.add("img1", "idA", g3), ValidationError);
}

namespace {

struct DemoWorld {
  FeatureTable table;
  std::vector<sampler::BatchPlan> plans;
  sampler::BatchPlan held_out;
};

DemoWorld demo_world() {
  synth::WorldConfig wc;
  wc.num_identities = 8;
  wc.min_images = wc.max_images = 6;
  wc.feature_dim = 8;
  wc.seed = 3;
  const auto w = synth::generate_world(wc);
  DemoWorld d;
  std::map<std::string, std::vector<std::string>> by_id;
  for (const auto& s : w.samples) {
    d.table.add(s.image_id, s.identity_id, s.feature);
    by_id[s.identity_id].push_back(s.image_id);
  }
  std::vector<std::string> ids;
  for (const auto& [id, imgs] : by_id) ids.push_back(id);
  // every identity appears in training batches with its first four images
  for (std::size_t b = 0; b < 8; ++b) {
    sampler::BatchPlan p;
    p.batch_index = b;
    for (std::size_t k = 0; k < 4; ++k) {
      const auto& id = ids[(b + 3 * k) % ids.size()];
      p.identities.push_back(id);
      p.images[id] = {by_id[id][0], by_id[id][1], by_id[id][2], by_id[id][3]};
    }
    p.anchor = p.identities.front();
    d.plans.push_back(p);
  }
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& id = ids[k * 2];
    d.held_out.identities.push_back(id);
    d.held_out.images[id] = {by_id[id][4], by_id[id][5]};
  }
  d.held_out.anchor = d.held_out.identities.front();
  return d;
}

}  // namespace

TEST_CASE("train_demo") {
  const auto d = demo_world();
  TrainConfig cfg;
  cfg.embed_dim = 4;
  cfg.seed = 11;
  cfg.epochs = 0;
  const auto none = train_demo(d.table, d.plans, cfg);
  CHECK(none.embedder == LinearEmbedder(8, 4, 11));
  CHECK(none.log.empty());

  cfg.epochs = 2;
  const auto a = train_demo(d.table, d.plans, cfg);
  const auto b = train_demo(d.table, d.plans, cfg);
  CHECK(a.embedder == b.embedder);
  CHECK(metrics_to_csv(a.log) == metrics_to_csv(b.log));
  CHECK(a.log.size() == 16);
  CHECK(metrics_to_csv(a.log).rfind("batch_index,loss,active_fraction\n", 0) == 0);

  // held-out loss is non-increasing over the first 10 epochs at rate 1e-3
  cfg.epochs = 1;
  cfg.learning_rate = 1e-3;
  LinearEmbedder e(8, 4, 11);
  double prev = evaluate_batch(e, d.table, d.held_out, cfg).value;
  for (int epoch = 0; epoch < 10; ++epoch) {
    e = train_demo(e, d.table, d.plans, cfg).embedder;
    const double now = evaluate_batch(e, d.table, d.held_out, cfg).value;
    CHECK(now <= prev + 1e-12);
    prev = now;
  }

  cfg.learning_rate = 1e200;
  cfg.epochs = 3;
  CHECK_THROWS_AS(train_demo(d.table, d.plans, cfg), NumericError);
}

TEST_CASE("retrieval: perfect clusters and the AP example") {
  RetrievalSet s;
  s.embeddings = Matrix(6, 1);
  const double xs[6] = {0, 0.1, 10, 10.1, 20, 20.1};
  for (std::size_t i = 0; i < 6; ++i) {
    s.embeddings(i, 0) = xs[i];
    s.identities.push_back("id" + std::to_string(i / 2));
    s.images.push_back("img" + std::to_string(i));
  }
  const auto r = evaluate_retrieval(s, s);
  CHECK(r.rank(1) == 1.0);
  CHECK(r.mean_ap == 1.0);

  RetrievalSet q;
  q.embeddings = Matrix(1, 1, 0.0);
  q.identities = {"A"};
  RetrievalSet g;
  g.embeddings = Matrix(4, 1);
  const double gx[4] = {1, 2, 3, 4};
  for (std::size_t i = 0; i < 4; ++i) g.embeddings(i, 0) = gx[i];
  g.identities = {"A", "B", "A", "C"};
  const auto one = evaluate_retrieval(q, g);
  CHECK(one.mean_ap == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-15));
  CHECK(one.mean_ap == doctest::Approx(0.8333).epsilon(1e-4));
  CHECK(one.rank(1) == 1.0);

  q.identities = {"Z"};
  CHECK_THROWS_AS(evaluate_retrieval(q, g), ValidationError);

  const auto js = report_to_json(r);
  CHECK(js.find("\"rank1\"") != std::string::npos);
  CHECK(js.find("\"mAP\"") != std::string::npos);
}

TEST_CASE("retrieval matches brute-force AP") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    const std::size_t ng = 2 + rng() % 19, nq = 1 + rng() % 5, ids = 2 + rng() % 3;
    RetrievalSet gal, qs;
    gal.embeddings = Matrix(ng, 2);
    qs.embeddings = Matrix(nq, 2);
    for (double& v : gal.embeddings.data()) v = g(rng);
    for (double& v : qs.embeddings.data()) v = g(rng);
    for (std::size_t i = 0; i < ng; ++i) gal.identities.push_back(std::to_string(i % ids));
    for (std::size_t i = 0; i < nq; ++i) qs.identities.push_back(std::to_string(rng() % std::min(ids, ng)));
    const auto r = evaluate_retrieval(qs, gal);
    double map = 0.0, r1 = 0.0;
    for (std::size_t q = 0; q < nq; ++q) {
      std::vector<std::pair<double, std::size_t>> order;
      for (std::size_t i = 0; i < ng; ++i) {
        const double dx = qs.embeddings(q, 0) - gal.embeddings(i, 0);
        const double dy = qs.embeddings(q, 1) - gal.embeddings(i, 1);
        order.emplace_back(std::sqrt(dx * dx + dy * dy), i);
      }
      std::sort(order.begin(), order.end());
      std::vector<bool> rel;
      for (const auto& [dist, i] : order) rel.push_back(gal.identities[i] == qs.identities[q]);
      map += oracle::average_precision(rel);
      r1 += rel.front() ? 1.0 : 0.0;
    }
    CHECK(r.mean_ap == map / static_cast<double>(nq));
    CHECK(r.rank(1) == r1 / static_cast<double>(nq));
  }
}

TEST_CASE("retrieval: random embeddings give rank-1 near 1/N") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 1.0);
  const std::size_t n = 10, per = 5;
  double total = 0.0;
  const int seeds = 200;
  for (int t = 0; t < seeds; ++t) {
    RetrievalSet s;
    s.embeddings = Matrix(n * per, 4);
    for (double& v : s.embeddings.data()) v = g(rng);
    for (std::size_t i = 0; i < n * per; ++i) {
      s.identities.push_back(std::to_string(i % n));
      s.images.push_back(std::to_string(i));
    }
    total += evaluate_retrieval(s, s).rank(1);
  }
  // self-match excluded: 4 true matches among 49 candidates
  const double expected = (per - 1.0) / (n * per - 1.0);
  CHECK(std::abs(total / seeds - expected) < 0.01);
  CHECK(std::abs(total / seeds - 1.0 / n) < 0.03);
}
