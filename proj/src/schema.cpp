#include "hpim/schema.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "hpim/error.hpp"
#include "hpim/io.hpp"

namespace hpim {

using nlohmann::json;

AttributeSchema::AttributeSchema(std::vector<GroupSpec> groups) : groups_(std::move(groups)) {
  std::size_t offset = 0;
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    groups_[g].group_id = g;
    offsets_.push_back(offset);
    offset += groups_[g].num_classes();
    total_attributes_ += groups_[g].attributes.size();
  }
  total_code_dim_ = offset;
}

std::size_t AttributeSchema::class_index(std::size_t g, const std::string& label) const {
  const auto& group = groups_.at(g);
  if (label == group.negative_label) return group.attributes.size();
  auto it = std::find(group.attributes.begin(), group.attributes.end(), label);
  return it == group.attributes.end() ? npos
                                      : static_cast<std::size_t>(it - group.attributes.begin());
}

std::size_t AttributeSchema::group_index(const std::string& name) const {
  for (const auto& g : groups_) {
    if (g.name == name) return g.group_id;
  }
  return npos;
}

ValidationReport validate_schema(const AttributeSchema& schema) {
  ValidationReport report;
  auto& v = report.violations;
  if (schema.num_groups() == 0) v.push_back("schema has no groups");

  std::map<std::string, std::vector<std::size_t>> owners;
  std::set<std::string> group_names;
  std::size_t union_size = 0;
  for (const auto& g : schema.groups()) {
    const std::string tag = "group " + std::to_string(g.group_id) + " ('" + g.name + "')";
    if (!group_names.insert(g.name).second) v.push_back(tag + ": duplicate group name");
    if (g.attributes.empty()) v.push_back(tag + ": empty group");
    if (g.negative_label.empty()) v.push_back(tag + ": missing negative class");
    std::set<std::string> seen;
    for (const auto& a : g.attributes) {
      if (!seen.insert(a).second) {
        v.push_back(tag + ": attribute " + a + " repeated within group");
        continue;
      }
      owners[a].push_back(g.group_id);
    }
    if (seen.count(g.negative_label)) {
      v.push_back(tag + ": negative class '" + g.negative_label + "' collides with an attribute");
    }
  }
  for (const auto& [name, gs] : owners) {
    ++union_size;
    if (gs.size() > 1) {
      std::string ids;
      for (auto g : gs) ids += (ids.empty() ? "" : ",") + std::to_string(g);
      v.push_back("attribute " + name + " in " + std::to_string(gs.size()) + " groups (" + ids +
                  ")");
    }
  }
  if (v.empty()) {
    if (union_size != schema.total_attributes()) {
      v.push_back("attribute union size " + std::to_string(union_size) + " != M=" +
                  std::to_string(schema.total_attributes()));
    }
    if (schema.total_code_dim() != schema.total_attributes() + schema.num_groups()) {
      v.push_back("code dimension is not M+G");
    }
  }
  return report;
}

namespace {

constexpr double kRoundingSlack = 1e-14;

std::size_t line_of_offset(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + byte, '\n'));
}

}  // namespace

AttributeSchema parse_schema(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("schema line " + std::to_string(line_of_offset(text, e.byte)) + ": " +
                     e.what());
  }
  try {
    std::vector<GroupSpec> groups;
    for (const auto& jg : j.at("groups")) {
      GroupSpec g;
      g.name = jg.at("name").get<std::string>();
      g.attributes = jg.at("attributes").get<std::vector<std::string>>();
      g.negative_label = jg.contains("negative") ? jg.at("negative").get<std::string>()
                                                 : "none_" + g.name;
      groups.push_back(std::move(g));
    }
    return AttributeSchema(std::move(groups));
  } catch (const json::exception& e) {
    throw ParseError(std::string("schema: ") + e.what());
  }
}

AttributeSchema load_schema(const std::filesystem::path& path) {
  try {
    return parse_schema(io::read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string schema_to_json(const AttributeSchema& schema) {
  json groups = json::array();
  for (const auto& g : schema.groups()) {
    groups.push_back({{"name", g.name}, {"attributes", g.attributes}, {"negative", g.negative_label}});
  }
  return json{{"groups", groups}}.dump(2) + "\n";
}

void check_code(const AttributeSchema& schema, DescriptionCode& code) {
  const auto where = "image " + code.image_id + ": ";
  if (code.code.size() != schema.total_code_dim()) {
    throw ValidationError(where + "dimension mismatch (got " + std::to_string(code.code.size()) +
                          ", expected " + std::to_string(schema.total_code_dim()) + ")");
  }
  for (double x : code.code) {
    if (!std::isfinite(x) || x < 0.0 || x > 1.0) {
      throw ValidationError(where + "probability out of range (" + io::format_double(x) + ")");
    }
  }
  for (std::size_t g = 0; g < schema.num_groups(); ++g) {
    const std::size_t off = schema.group_offset(g);
    const std::size_t k = schema.groups()[g].num_classes();
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) sum += code.code[off + c];
    if (std::abs(sum - 1.0) > kSimplexTolerance) {
      throw ValidationError(where + "simplex violation in group " + std::to_string(g) +
                            " (sum " + io::format_double(sum) + ")");
    }
    // Slices off by more than accumulated rounding are renormalized; exact
    // sums are left alone so save/load stays bit-exact.
    if (std::abs(sum - 1.0) > kRoundingSlack * static_cast<double>(k)) {
      for (std::size_t c = 0; c < k; ++c) code.code[off + c] /= sum;
    }
  }
}

std::vector<IdentityCodeSet> group_by_identity(std::vector<DescriptionCode> codes) {
  std::vector<IdentityCodeSet> sets;
  std::unordered_map<std::string, std::size_t> index;
  for (auto& c : codes) {
    auto [it, inserted] = index.try_emplace(c.identity_id, sets.size());
    if (inserted) sets.push_back(IdentityCodeSet{c.identity_id, {}});
    sets[it->second].codes.push_back(std::move(c));
  }
  return sets;
}

std::vector<IdentityCodeSet> load_codes(const std::filesystem::path& path,
                                        const AttributeSchema& schema) {
  std::vector<DescriptionCode> codes;
  io::for_each_json_line(path, [&](const json& j, std::size_t) {
    DescriptionCode c;
    c.image_id = j.at("image_id").get<std::string>();
    c.identity_id = j.at("identity_id").get<std::string>();
    c.code = j.at("code").get<std::vector<double>>();
    check_code(schema, c);
    codes.push_back(std::move(c));
  });
  return group_by_identity(std::move(codes));
}

std::string codes_to_jsonl(std::span<const DescriptionCode> codes) {
  std::string out;
  for (const auto& c : codes) {
    out += json{{"image_id", c.image_id}, {"identity_id", c.identity_id}, {"code", c.code}}.dump();
    out += '\n';
  }
  return out;
}

void save_codes(const std::filesystem::path& path, std::span<const DescriptionCode> codes) {
  io::write_file(path, codes_to_jsonl(codes));
}

}  // namespace hpim
