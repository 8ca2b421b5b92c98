#ifndef HPIM_SCHEMA_HPP_
#define HPIM_SCHEMA_HPP_

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace hpim {

/// One exclusive attribute group: M_g positive attributes plus a negative
/// class that is active when none of them applies.
struct GroupSpec {
  std::size_t group_id = 0;
  std::string name;
  std::vector<std::string> attributes;
  std::string negative_label;

  /// Number of classes in the group's softmax (attributes + negative).
  std::size_t num_classes() const { return attributes.size() + 1; }
};

/// Attribute vocabulary partitioned into exclusive groups.
///
/// A description code is the concatenation of one probability simplex per
/// group, in group order; within a group the positive attributes come first
/// and the negative class last.
class AttributeSchema {
 public:
  AttributeSchema() = default;
  explicit AttributeSchema(std::vector<GroupSpec> groups);

  const std::vector<GroupSpec>& groups() const { return groups_; }
  std::size_t num_groups() const { return groups_.size(); }
  /// M: number of positive attributes across all groups.
  std::size_t total_attributes() const { return total_attributes_; }
  /// M + G.
  std::size_t total_code_dim() const { return total_code_dim_; }
  /// Offset of group g's slice inside a description code.
  std::size_t group_offset(std::size_t g) const { return offsets_.at(g); }

  /// Index of a class within group g; the negative label maps to the last
  /// slot. Returns npos if unknown.
  std::size_t class_index(std::size_t g, const std::string& label) const;
  std::size_t group_index(const std::string& name) const;

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  std::vector<GroupSpec> groups_;
  std::vector<std::size_t> offsets_;
  std::size_t total_attributes_ = 0;
  std::size_t total_code_dim_ = 0;
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

/// Checks disjointness, non-empty groups, unique names and the code
/// dimension identity.
ValidationReport validate_schema(const AttributeSchema& schema);

/// Parses the JSON schema shape
/// {"groups":[{"name":..,"attributes":[..],"negative":".."}]}.
/// Throws ParseError on malformed text; does not validate invariants.
AttributeSchema parse_schema(const std::string& text);
AttributeSchema load_schema(const std::filesystem::path& path);
std::string schema_to_json(const AttributeSchema& schema);

struct DescriptionCode {
  std::string image_id;
  std::string identity_id;
  std::vector<double> code;
};

struct IdentityCodeSet {
  std::string identity_id;
  std::vector<DescriptionCode> codes;
};

inline constexpr double kSimplexTolerance = 1e-6;

/// Validates one code against the schema and renormalizes group slices
/// that are within kSimplexTolerance of summing to one. Throws
/// ValidationError naming the image on dimension mismatch, out-of-range
/// entries or simplex violations.
void check_code(const AttributeSchema& schema, DescriptionCode& code);

/// Groups codes by identity in first-seen order.
std::vector<IdentityCodeSet> group_by_identity(std::vector<DescriptionCode> codes);

/// Reads one {image_id, identity_id, code} object per line.
std::vector<IdentityCodeSet> load_codes(const std::filesystem::path& path,
                                        const AttributeSchema& schema);

std::string codes_to_jsonl(std::span<const DescriptionCode> codes);
void save_codes(const std::filesystem::path& path, std::span<const DescriptionCode> codes);

}  // namespace hpim

#endif  // HPIM_SCHEMA_HPP_
