#ifndef HPIM_SYNTHWORLD_HPP_
#define HPIM_SYNTHWORLD_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hpim/describer.hpp"
#include "hpim/schema.hpp"

namespace hpim::synth {

/// An identity with a known attribute distribution.
struct LatentIdentity {
  std::string identity_id;
  /// One class-probability simplex per attribute group.
  std::vector<std::vector<double>> profile;
  /// Identity-specific feature offset.
  std::vector<double> prototype;
  std::size_t image_count = 1;
};

struct WorldConfig {
  std::size_t num_identities = 30;
  /// Group layout; defaults to default_schema() when empty.
  std::vector<GroupSpec> groups;
  /// Symmetric Dirichlet concentration of the latent profiles; 1 draws
  /// uniformly from each simplex, smaller values give peaked profiles.
  double profile_concentration = 1.0;
  std::size_t min_images = 10;
  std::size_t max_images = 10;
  /// Scale of the exponential perturbation applied to one-hot codes.
  double code_noise = 0.1;
  std::size_t feature_dim = 32;
  /// Gaussian noise added to each image feature.
  double feature_noise = 0.5;
  /// Scale of the identity prototype relative to the attribute anchors.
  double identity_scale = 1.0;
  /// Scale of the per-class attribute anchors mixed into features.
  double attribute_scale = 1.0;
  /// Probability that a training label is replaced by another class.
  double label_corruption = 0.0;
  /// Number of identity pairs whose profiles are near-clones.
  std::size_t hard_pairs = 0;
  /// Mixing weight of the fresh profile used to perturb a clone.
  double hard_pair_epsilon = 0.05;
  std::uint64_t seed = 0;
};

struct World {
  AttributeSchema schema;
  std::vector<LatentIdentity> identities;
  /// Class-anchor vectors, [group][class] -> feature_dim values.
  std::vector<std::vector<std::vector<double>>> class_anchors;
  std::vector<DescriptionCode> codes;
  /// Features with possibly corrupted labels.
  std::vector<describer::LabeledSample> samples;
  /// The uncorrupted labels, parallel to samples.
  std::vector<std::vector<std::size_t>> clean_labels;
};

/// Four groups (gender, hair, upper colour, shoes) with 1-3 attributes each.
std::vector<GroupSpec> default_schema();

/// Throws ValidationError on out-of-range rates or scales.
void validate_config(const WorldConfig& config);

/// Per image: draw a class per group from the identity profile, render the
/// code as a perturbed one-hot simplex, and the feature as
/// prototype + attribute anchors of the drawn classes + Gaussian noise.
/// Deterministic for a fixed seed.
World generate_world(const WorldConfig& config);

/// L2 distance between concatenated latent profiles (0 iff identical).
double ground_truth_hardness(const LatentIdentity& a, const LatentIdentity& b);

std::string ground_truth_to_csv(const World& world);

/// Writes schema.json, codes.jsonl, features.jsonl, ground_truth.csv and
/// latent.json into dir.
void write_world(const World& world, const std::filesystem::path& dir);

}  // namespace hpim::synth

#endif  // HPIM_SYNTHWORLD_HPP_
