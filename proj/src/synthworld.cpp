#include "hpim/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include <json.hpp>

#include "hpim/error.hpp"
#include "hpim/io.hpp"

namespace hpim::synth {

std::vector<GroupSpec> default_schema() {
  return {
      {0, "gender", {"female"}, "none_gender"},
      {1, "hair", {"long_hair", "short_hair"}, "none_hair"},
      {2, "upper", {"upper_black", "upper_white", "upper_red"}, "none_upper"},
      {3, "shoes", {"boots", "sneakers"}, "none_shoes"},
  };
}

void validate_config(const WorldConfig& c) {
  auto fail = [](const std::string& what) { throw ValidationError("world config: " + what); };
  if (c.num_identities < 1) fail("num_identities must be >= 1");
  if (c.min_images < 1 || c.max_images < c.min_images) fail("need 1 <= min_images <= max_images");
  if (!(c.code_noise >= 0.0)) fail("code_noise must be >= 0");
  if (!(c.feature_noise >= 0.0)) fail("feature_noise must be >= 0");
  if (!(c.identity_scale >= 0.0) || !(c.attribute_scale >= 0.0)) fail("scales must be >= 0");
  if (!(c.label_corruption >= 0.0 && c.label_corruption <= 1.0)) {
    fail("label_corruption must be in [0, 1]");
  }
  if (!(c.hard_pair_epsilon >= 0.0 && c.hard_pair_epsilon <= 1.0)) {
    fail("hard_pair_epsilon must be in [0, 1]");
  }
  if (2 * c.hard_pairs > c.num_identities) fail("too many hard pairs for the identity count");
  if (c.feature_dim < 1) fail("feature_dim must be >= 1");
  if (!(c.profile_concentration > 0.0) || !std::isfinite(c.profile_concentration)) {
    fail("profile_concentration must be > 0");
  }
}

namespace {

/// Symmetric Dirichlet draw via normalised Gamma(concentration) variates.
std::vector<double> dirichlet(std::size_t k, double concentration, std::mt19937_64& rng) {
  std::vector<double> p(k);
  double sum = 0.0;
  // Gamma(1) is Exp(1); the uniform case keeps the cheaper exponential draw.
  std::exponential_distribution<double> expo(1.0);
  std::gamma_distribution<double> gamma(concentration, 1.0);
  for (double& x : p) {
    x = concentration == 1.0 ? expo(rng) : gamma(rng);
    sum += x;
  }
  if (!(sum > 0.0)) {
    // every variate underflowed (tiny concentration): a vertex of the simplex
    std::fill(p.begin(), p.end(), 0.0);
    p[std::uniform_int_distribution<std::size_t>(0, k - 1)(rng)] = 1.0;
    return p;
  }
  for (double& x : p) x /= sum;
  return p;
}

std::size_t draw_class(const std::vector<double>& probs, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return k;
  }
  return probs.size() - 1;
}

std::string make_id(const char* prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*zu", prefix, width, i);
  return buf;
}

}  // namespace

World generate_world(const WorldConfig& config) {
  validate_config(config);
  World world;
  world.schema = AttributeSchema(config.groups.empty() ? default_schema() : config.groups);
  const auto& schema = world.schema;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t dim = config.feature_dim;

  world.class_anchors.resize(schema.num_groups());
  for (std::size_t g = 0; g < schema.num_groups(); ++g) {
    for (std::size_t k = 0; k < schema.groups()[g].num_classes(); ++k) {
      std::vector<double> v(dim);
      for (double& x : v) x = config.attribute_scale * normal(rng);
      world.class_anchors[g].push_back(std::move(v));
    }
  }

  std::uniform_int_distribution<std::size_t> count(config.min_images, config.max_images);
  for (std::size_t i = 0; i < config.num_identities; ++i) {
    LatentIdentity id;
    id.identity_id = make_id("id", i, 4);
    for (std::size_t g = 0; g < schema.num_groups(); ++g) {
      id.profile.push_back(dirichlet(schema.groups()[g].num_classes(), config.profile_concentration, rng));
    }
    id.prototype.resize(dim);
    for (double& x : id.prototype) x = config.identity_scale * normal(rng);
    id.image_count = count(rng);
    world.identities.push_back(std::move(id));
  }
  // Identity 2p+1 becomes a perturbed clone of identity 2p.
  for (std::size_t p = 0; p < config.hard_pairs; ++p) {
    const auto& base = world.identities[2 * p].profile;
    auto& clone = world.identities[2 * p + 1].profile;
    for (std::size_t g = 0; g < schema.num_groups(); ++g) {
      const auto fresh = dirichlet(base[g].size(), config.profile_concentration, rng);
      for (std::size_t k = 0; k < base[g].size(); ++k) {
        clone[g][k] = (1.0 - config.hard_pair_epsilon) * base[g][k] +
                      config.hard_pair_epsilon * fresh[k];
      }
    }
  }

  std::exponential_distribution<double> expo(1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t image_counter = 0;
  for (const auto& id : world.identities) {
    for (std::size_t n = 0; n < id.image_count; ++n) {
      DescriptionCode code{make_id("img", image_counter++, 6), id.identity_id, {}};
      describer::LabeledSample sample{code.image_id, id.identity_id, id.prototype, {}};
      std::vector<std::size_t> clean;
      for (std::size_t g = 0; g < schema.num_groups(); ++g) {
        const std::size_t classes = schema.groups()[g].num_classes();
        const std::size_t k = draw_class(id.profile[g], rng);
        clean.push_back(k);

        std::vector<double> slice(classes, 0.0);
        slice[k] = 1.0;
        if (config.code_noise > 0.0) {
          double sum = 0.0;
          for (double& x : slice) {
            x += config.code_noise * expo(rng);
            sum += x;
          }
          for (double& x : slice) x /= sum;
        }
        code.code.insert(code.code.end(), slice.begin(), slice.end());

        const auto& anchor = world.class_anchors[g][k];
        for (std::size_t d = 0; d < dim; ++d) sample.feature[d] += anchor[d];

        std::size_t label = k;
        if (classes > 1 && unit(rng) < config.label_corruption) {
          const std::size_t shift =
              1 + std::uniform_int_distribution<std::size_t>(0, classes - 2)(rng);
          label = (k + shift) % classes;
        }
        sample.labels.push_back(label);
      }
      for (double& x : sample.feature) x += config.feature_noise * normal(rng);
      world.codes.push_back(std::move(code));
      world.samples.push_back(std::move(sample));
      world.clean_labels.push_back(std::move(clean));
    }
  }
  return world;
}

double ground_truth_hardness(const LatentIdentity& a, const LatentIdentity& b) {
  if (a.profile.size() != b.profile.size()) {
    throw ValidationError("profiles of " + a.identity_id + " and " + b.identity_id +
                          " have different group counts");
  }
  double s = 0.0;
  for (std::size_t g = 0; g < a.profile.size(); ++g) {
    if (a.profile[g].size() != b.profile[g].size()) {
      throw ValidationError("profiles of " + a.identity_id + " and " + b.identity_id +
                            " differ in group " + std::to_string(g));
    }
    for (std::size_t k = 0; k < a.profile[g].size(); ++k) {
      const double d = a.profile[g][k] - b.profile[g][k];
      s += d * d;
    }
  }
  return std::sqrt(s);
}

std::string ground_truth_to_csv(const World& world) {
  std::string out = "id_a,id_b,hardness\n";
  const auto& ids = world.identities;
  for (std::size_t a = 0; a < ids.size(); ++a) {
    for (std::size_t b = a + 1; b < ids.size(); ++b) {
      out += ids[a].identity_id + "," + ids[b].identity_id + "," +
             io::format_double(ground_truth_hardness(ids[a], ids[b])) + "\n";
    }
  }
  return out;
}

void write_world(const World& world, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::write_file(dir / "schema.json", schema_to_json(world.schema));
  save_codes(dir / "codes.jsonl", world.codes);
  io::write_file(dir / "features.jsonl", describer::samples_to_jsonl(world.schema, world.samples));
  io::write_file(dir / "ground_truth.csv", ground_truth_to_csv(world));
  nlohmann::json latent = nlohmann::json::array();
  for (const auto& id : world.identities) {
    latent.push_back({{"identity_id", id.identity_id},
                      {"profile", id.profile},
                      {"image_count", id.image_count}});
  }
  io::write_file(dir / "latent.json", latent.dump() + "\n");
}

}  // namespace hpim::synth
