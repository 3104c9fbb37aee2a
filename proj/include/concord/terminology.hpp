#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "concord/csv.hpp"
#include "concord/error.hpp"

namespace concord {

/// A (scheme, value, meaning) code triplet. Identity is (scheme, value);
/// meaning is display text only.
struct CodedConcept {
  std::string scheme;
  std::string value;
  std::string meaning;

  bool same_code(const CodedConcept& o) const { return scheme == o.scheme && value == o.value; }
};

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

struct SegmentDefinition {
  std::string model_label;
  std::optional<std::uint32_t> label_value;
  CodedConcept category;
  CodedConcept ctype;
  std::optional<CodedConcept> modifier;
  std::optional<CodedConcept> anatomic_region;
  Rgb color;
};

struct CodeRef {
  std::string scheme;
  std::string value;
  friend auto operator<=>(const CodeRef&, const CodeRef&) = default;
  friend bool operator==(const CodeRef&, const CodeRef&) = default;
};

/// Coded identity of an anatomical structure across models.
/// anatomic_region does not participate.
struct StructureKey {
  CodeRef category;
  CodeRef ctype;
  std::optional<CodeRef> modifier;

  friend auto operator<=>(const StructureKey&, const StructureKey&) = default;
  friend bool operator==(const StructureKey&, const StructureKey&) = default;

  /// "SCT:123037004|SCT:45653009|SCT:7771000" (modifier part omitted when absent).
  std::string to_string() const {
    std::string s = category.scheme + ":" + category.value + "|" + ctype.scheme + ":" + ctype.value;
    if (modifier) s += "|" + modifier->scheme + ":" + modifier->value;
    return s;
  }

  static std::optional<StructureKey> parse(std::string_view text) {
    std::vector<CodeRef> parts;
    while (true) {
      const auto bar = text.find('|');
      const std::string_view part = text.substr(0, bar);
      const auto colon = part.find(':');
      if (colon == std::string_view::npos || colon == 0 || colon + 1 == part.size()) return std::nullopt;
      parts.push_back({std::string(part.substr(0, colon)), std::string(part.substr(colon + 1))});
      if (bar == std::string_view::npos) break;
      text.remove_prefix(bar + 1);
    }
    if (parts.size() < 2 || parts.size() > 3) return std::nullopt;
    StructureKey key{parts[0], parts[1], std::nullopt};
    if (parts.size() == 3) key.modifier = parts[2];
    return key;
  }
};

inline StructureKey key_of(const SegmentDefinition& def) {
  StructureKey key{{def.category.scheme, def.category.value}, {def.ctype.scheme, def.ctype.value}, std::nullopt};
  if (def.modifier) key.modifier = CodeRef{def.modifier->scheme, def.modifier->value};
  return key;
}

namespace mapping_columns {
inline constexpr std::string_view kAll[] = {
    "model_label",     "label_value",      "category_scheme", "category_value",  "category_meaning",
    "type_scheme",     "type_value",       "type_meaning",    "modifier_scheme", "modifier_value",
    "modifier_meaning", "region_scheme",   "region_value",    "region_meaning",  "color_r",
    "color_g",         "color_b"};
inline constexpr std::string_view kRequired[] = {
    "model_label", "category_scheme", "category_value", "category_meaning", "type_scheme",
    "type_value",  "type_meaning",    "color_r",        "color_g",          "color_b"};
}  // namespace mapping_columns

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

template <class Int>
std::optional<Int> parse_int(std::string_view s) {
  Int v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

/// Reads one model's harmonization table (see the column list in
/// mapping_columns::kAll). label_value and modifier/region triplets may be blank.
inline std::vector<SegmentDefinition> load_mapping_table(std::istream& in, const std::string& model_name) {
  const auto rows = csv::read(in);
  if (rows.empty()) throw MissingRequiredColumn(model_name + ": mapping table has no header row");

  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < rows[0].size(); ++i) col.emplace(detail::trim(rows[0][i]), i);
  for (auto name : mapping_columns::kRequired) {
    if (!col.contains(std::string(name)))
      throw MissingRequiredColumn(model_name + ": missing column '" + std::string(name) + "'");
  }

  std::vector<SegmentDefinition> defs;
  std::set<std::string> seen_labels;
  std::set<std::uint32_t> seen_values;

  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::string where = model_name + " row " + std::to_string(r + 1);
    auto get = [&](std::string_view name) -> std::string {
      const auto it = col.find(std::string(name));
      if (it == col.end() || it->second >= row.size()) return {};
      return detail::trim(row[it->second]);
    };
    auto triplet = [&](std::string_view prefix, bool required) -> std::optional<CodedConcept> {
      const std::string p(prefix);
      CodedConcept c{get(p + "_scheme"), get(p + "_value"), get(p + "_meaning")};
      if (c.scheme.empty() && c.value.empty()) {
        if (required) throw mapping_error(where + ": " + p + " code is required");
        return std::nullopt;
      }
      if (c.scheme.empty() || c.value.empty())
        throw mapping_error(where + ": " + p + " needs both scheme and value");
      return c;
    };

    SegmentDefinition def;
    def.model_label = get("model_label");
    if (def.model_label.empty()) throw mapping_error(where + ": empty model_label");
    if (!seen_labels.insert(def.model_label).second)
      throw DuplicateLabel(where + ": model_label '" + def.model_label + "' repeated");

    if (const std::string lv = get("label_value"); !lv.empty()) {
      const auto v = detail::parse_int<std::int64_t>(lv);
      if (!v || *v < 1 || *v > 0xFFFFFFFFll)
        throw mapping_error(where + ": label_value '" + lv + "' is not a positive integer");
      const auto value = static_cast<std::uint32_t>(*v);
      if (!seen_values.insert(value).second)
        throw DuplicateLabel(where + ": label_value " + lv + " repeated");
      def.label_value = value;
    }

    def.category = *triplet("category", true);
    def.ctype = *triplet("type", true);
    def.modifier = triplet("modifier", false);
    def.anatomic_region = triplet("region", false);

    std::uint8_t rgb[3];
    const char* names[3] = {"color_r", "color_g", "color_b"};
    for (int i = 0; i < 3; ++i) {
      const std::string s = get(names[i]);
      const auto v = detail::parse_int<int>(s);
      if (!v || *v < 0 || *v > 255) throw BadColor(where + ": " + names[i] + " = '" + s + "'");
      rgb[i] = static_cast<std::uint8_t>(*v);
    }
    def.color = {rgb[0], rgb[1], rgb[2]};
    defs.push_back(std::move(def));
  }
  return defs;
}

inline std::vector<SegmentDefinition> load_mapping_table(const std::filesystem::path& path,
                                                         const std::string& model_name) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open mapping table " + path.string());
  return load_mapping_table(in, model_name);
}

/// Ordered (model name, definitions) pairs; order is the supply order.
using MappingSet = std::vector<std::pair<std::string, std::vector<SegmentDefinition>>>;

struct ModelDefinition {
  std::string model;
  SegmentDefinition definition;
};

struct CatalogEntry {
  StructureKey key;
  std::string canonical_name;
  std::vector<std::string> models;  // presence, in supply order
  std::vector<ModelDefinition> definitions;

  std::size_t presence() const { return models.size(); }
  bool has_model(std::string_view m) const { return std::find(models.begin(), models.end(), m) != models.end(); }

  /// First definition the model gave for this structure.
  const SegmentDefinition* definition_for(std::string_view m) const {
    for (const auto& d : definitions) {
      if (d.model == m) return &d.definition;
    }
    return nullptr;
  }
};

class StructureCatalog {
 public:
  std::map<StructureKey, CatalogEntry> entries;
  std::vector<std::string> models;  // supply order

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }

  const CatalogEntry* find(const StructureKey& key) const {
    const auto it = entries.find(key);
    return it == entries.end() ? nullptr : &it->second;
  }

  const CatalogEntry* find_by_name(std::string_view name) const {
    for (const auto& [key, entry] : entries) {
      if (entry.canonical_name == name) return &entry;
    }
    return nullptr;
  }

  /// Accepts a coded key string or a canonical structure name.
  std::optional<StructureKey> resolve(std::string_view text) const {
    if (auto key = StructureKey::parse(text); key && find(*key)) return key;
    if (const auto* e = find_by_name(text)) return e->key;
    return std::nullopt;
  }

  std::string name_of(const StructureKey& key) const {
    const auto* e = find(key);
    return e ? e->canonical_name : key.to_string();
  }
};

/// Groups definitions by exact StructureKey. The canonical name is the label
/// used by the first model in `precedence` that defines the structure (supply
/// order when `precedence` is empty; models missing from it rank after it).
inline StructureCatalog build_catalog(const MappingSet& mappings, std::span<const std::string> precedence = {}) {
  StructureCatalog cat;
  for (const auto& [model, defs] : mappings) {
    if (std::find(cat.models.begin(), cat.models.end(), model) == cat.models.end()) cat.models.push_back(model);
    for (const auto& def : defs) {
      const StructureKey key = key_of(def);
      auto [it, inserted] = cat.entries.try_emplace(key);
      CatalogEntry& e = it->second;
      if (inserted) e.key = key;
      if (!e.has_model(model)) e.models.push_back(model);
      e.definitions.push_back({model, def});
    }
  }

  auto rank = [&](const std::string& m) -> std::size_t {
    const auto p = std::find(precedence.begin(), precedence.end(), m);
    if (p != precedence.end()) return static_cast<std::size_t>(p - precedence.begin());
    const auto s = std::find(cat.models.begin(), cat.models.end(), m);
    return precedence.size() + static_cast<std::size_t>(s - cat.models.begin());
  };
  for (auto& [key, e] : cat.entries) {
    const auto best = std::min_element(e.definitions.begin(), e.definitions.end(),
                                       [&](const auto& a, const auto& b) { return rank(a.model) < rank(b.model); });
    e.canonical_name = best->definition.model_label;
  }
  return cat;
}

/// Number of models -> number of structures defined by exactly that many models.
inline std::map<std::size_t, std::size_t> model_count_histogram(const StructureCatalog& catalog) {
  std::map<std::size_t, std::size_t> hist;
  for (const auto& [key, e] : catalog.entries) ++hist[e.presence()];
  return hist;
}

enum class IssueKind { ColorConflict, MeaningDrift, PairColorMismatch, DuplicateStructure };
enum class Severity { warning, error };

inline const char* to_string(IssueKind k) {
  switch (k) {
    case IssueKind::ColorConflict: return "ColorConflict";
    case IssueKind::MeaningDrift: return "MeaningDrift";
    case IssueKind::PairColorMismatch: return "PairColorMismatch";
    case IssueKind::DuplicateStructure: return "DuplicateStructure";
  }
  return "?";
}

inline const char* to_string(Severity s) { return s == Severity::error ? "error" : "warning"; }

struct Issue {
  IssueKind kind;
  Severity severity;
  std::string message;
};

namespace detail {

inline std::string rgb_string(const Rgb& c) {
  return "(" + std::to_string(c.r) + "," + std::to_string(c.g) + "," + std::to_string(c.b) + ")";
}

inline std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// SNOMED CT laterality qualifiers, with a meaning-based fallback for other schemes.
inline std::optional<int> laterality(const std::optional<CodedConcept>& m) {
  if (!m) return std::nullopt;
  if (m->scheme == "SCT" && m->value == "7771000") return 0;
  if (m->scheme == "SCT" && m->value == "24028007") return 1;
  const std::string meaning = lower(m->meaning);
  if (meaning == "left") return 0;
  if (meaning == "right") return 1;
  return std::nullopt;
}

}  // namespace detail

/// Reports consistency problems across the loaded mappings. Never mutates.
inline std::vector<Issue> validate_mappings(const StructureCatalog& catalog) {
  std::vector<Issue> issues;

  for (const auto& [key, e] : catalog.entries) {
    // One label per (model, structure).
    std::map<std::string, std::vector<std::string>> labels_by_model;
    for (const auto& d : e.definitions) labels_by_model[d.model].push_back(d.definition.model_label);
    for (const auto& [model, labels] : labels_by_model) {
      if (labels.size() > 1) {
        std::string msg = model + " maps " + std::to_string(labels.size()) + " labels to " + key.to_string() + ":";
        for (const auto& l : labels) msg += " " + l;
        issues.push_back({IssueKind::DuplicateStructure, Severity::error, msg});
      }
    }

    const auto& ref = e.definitions.front();
    for (std::size_t i = 1; i < e.definitions.size(); ++i) {
      const auto& d = e.definitions[i];
      if (d.model != ref.model && !(d.definition.color == ref.definition.color)) {
        issues.push_back({IssueKind::ColorConflict, Severity::warning,
                          e.canonical_name + ": " + ref.model + " " + detail::rgb_string(ref.definition.color) +
                              " vs " + d.model + " " + detail::rgb_string(d.definition.color)});
      }
    }
  }

  // Same code, different meaning text anywhere in the loaded definitions.
  std::map<CodeRef, std::set<std::string>> meanings;
  for (const auto& [key, e] : catalog.entries) {
    for (const auto& d : e.definitions) {
      const SegmentDefinition& def = d.definition;
      auto note = [&](const CodedConcept& c) { meanings[{c.scheme, c.value}].insert(c.meaning); };
      note(def.category);
      note(def.ctype);
      if (def.modifier) note(*def.modifier);
      if (def.anatomic_region) note(*def.anatomic_region);
    }
  }
  for (const auto& [code, texts] : meanings) {
    if (texts.size() > 1) {
      std::string msg = code.scheme + ":" + code.value + " has meanings";
      for (const auto& t : texts) msg += " '" + t + "'";
      issues.push_back({IssueKind::MeaningDrift, Severity::warning, msg});
    }
  }

  // Left/right counterparts within one model should share a color.
  for (const auto& model : catalog.models) {
    std::map<std::tuple<CodeRef, CodeRef>, std::array<const SegmentDefinition*, 2>> sides;
    for (const auto& [key, e] : catalog.entries) {
      const SegmentDefinition* def = e.definition_for(model);
      if (!def) continue;
      if (const auto side = detail::laterality(def->modifier)) {
        auto& slot = sides[{key.category, key.ctype}][static_cast<std::size_t>(*side)];
        if (!slot) slot = def;
      }
    }
    for (const auto& [type, pair] : sides) {
      if (pair[0] && pair[1] && !(pair[0]->color == pair[1]->color)) {
        issues.push_back({IssueKind::PairColorMismatch, Severity::warning,
                          model + ": " + pair[0]->model_label + " " + detail::rgb_string(pair[0]->color) + " vs " +
                              pair[1]->model_label + " " + detail::rgb_string(pair[1]->color)});
      }
    }
  }
  return issues;
}

}  // namespace concord
