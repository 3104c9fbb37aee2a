#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "concord/concordance.hpp"
#include "concord/csv.hpp"
#include "concord/error.hpp"
#include "concord/terminology.hpp"

namespace concord {

inline constexpr std::string_view kToolVersion = "0.1.0";

enum class BandName { green, yellow, red, blue, none };

inline const char* to_string(BandName b) {
  switch (b) {
    case BandName::green: return "green";
    case BandName::yellow: return "yellow";
    case BandName::red: return "red";
    case BandName::blue: return "blue";
    case BandName::none: return "none";
  }
  return "?";
}

/// Agreement range on the consensus/model volume ratio, in percent.
/// Lower bound inclusive; upper bound exclusive except for green, which closes at 100.
struct Band {
  BandName name;
  double lower;
  double upper;
};

inline constexpr std::array<Band, 5> kBands = {{
    {BandName::green, 90.0, 100.0},
    {BandName::yellow, 75.0, 90.0},
    {BandName::red, 50.0, 75.0},
    {BandName::blue, 25.0, 50.0},
    {BandName::none, 0.0, 25.0},
}};

inline Band classify_band(double ratio_pct) {
  for (const Band& b : kBands) {
    if (ratio_pct >= b.lower) return b;
  }
  return kBands.back();
}

// ---------------------------------------------------------------------------
// Results export

inline constexpr std::string_view kResultsCsvHeader =
    "patient_id,study_uid,series_uid,structure_name,category_value,type_value,modifier_value,model,"
    "n_participants,model_voxels,model_volume_mm3,consensus_voxels,consensus_volume_mm3,dsc,ratio_pct,"
    "empty_participant_flag";

/// Six significant digits, printf %g style.
inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline void export_records_csv(const ConcordanceTable& table, std::ostream& out) {
  out << kResultsCsvHeader << '\n';
  for (const auto& r : table.records) {
    out << csv::escape(r.patient_id) << ',' << csv::escape(r.study_uid) << ',' << csv::escape(r.series_uid) << ','
        << csv::escape(r.structure_name) << ',' << csv::escape(r.structure.category.value) << ','
        << csv::escape(r.structure.ctype.value) << ','
        << csv::escape(r.structure.modifier ? r.structure.modifier->value : std::string()) << ','
        << csv::escape(r.model) << ',' << r.n_participants << ',' << r.model_voxels << ','
        << format_real(r.model_volume_mm3) << ',' << r.consensus_voxels << ',' << format_real(r.consensus_volume_mm3)
        << ',' << (r.dsc ? format_real(*r.dsc) : "") << ',' << (r.ratio_pct ? format_real(*r.ratio_pct) : "") << ','
        << (r.empty_participant_flag ? "true" : "false") << '\n';
  }
}

inline nlohmann::ordered_json record_to_json(const ConcordanceRecord& r) {
  nlohmann::ordered_json j;
  j["patient_id"] = r.patient_id;
  j["study_uid"] = r.study_uid;
  j["series_uid"] = r.series_uid;
  j["structure_name"] = r.structure_name;
  j["structure_key"] = r.structure.to_string();
  j["category_value"] = r.structure.category.value;
  j["type_value"] = r.structure.ctype.value;
  j["modifier_value"] = r.structure.modifier ? r.structure.modifier->value : std::string();
  j["model"] = r.model;
  j["n_participants"] = r.n_participants;
  j["model_voxels"] = r.model_voxels;
  j["model_volume_mm3"] = r.model_volume_mm3;
  j["consensus_voxels"] = r.consensus_voxels;
  j["consensus_volume_mm3"] = r.consensus_volume_mm3;
  j["dsc"] = r.dsc ? nlohmann::ordered_json(*r.dsc) : nlohmann::ordered_json(nullptr);
  j["ratio_pct"] = r.ratio_pct ? nlohmann::ordered_json(*r.ratio_pct) : nlohmann::ordered_json(nullptr);
  j["empty_participant_flag"] = r.empty_participant_flag;
  return j;
}

inline ConcordanceRecord record_from_json(const nlohmann::json& j) {
  ConcordanceRecord r;
  r.patient_id = j.at("patient_id").get<std::string>();
  r.study_uid = j.at("study_uid").get<std::string>();
  r.series_uid = j.at("series_uid").get<std::string>();
  r.structure_name = j.at("structure_name").get<std::string>();
  const auto key = StructureKey::parse(j.at("structure_key").get<std::string>());
  if (!key) throw error("record has malformed structure_key");
  r.structure = *key;
  r.model = j.at("model").get<std::string>();
  r.n_participants = j.at("n_participants").get<std::size_t>();
  r.model_voxels = j.at("model_voxels").get<std::uint64_t>();
  r.model_volume_mm3 = j.at("model_volume_mm3").get<double>();
  r.consensus_voxels = j.at("consensus_voxels").get<std::uint64_t>();
  r.consensus_volume_mm3 = j.at("consensus_volume_mm3").get<double>();
  if (!j.at("dsc").is_null()) r.dsc = j.at("dsc").get<double>();
  if (!j.at("ratio_pct").is_null()) r.ratio_pct = j.at("ratio_pct").get<double>();
  r.empty_participant_flag = j.at("empty_participant_flag").get<bool>();
  return r;
}

inline nlohmann::ordered_json export_records_json(const ConcordanceTable& table) {
  nlohmann::ordered_json a = nlohmann::ordered_json::array();
  for (const auto& r : table.records) a.push_back(record_to_json(r));
  return a;
}

/// Rebuilds a table from the records array. Active models are taken in order
/// of first appearance.
inline ConcordanceTable import_records_json(const nlohmann::json& records) {
  if (!records.is_array()) throw error("results JSON must be an array of records");
  ConcordanceTable table;
  try {
    for (const auto& j : records) {
      table.records.push_back(record_from_json(j));
      const auto& m = table.records.back().model;
      if (std::find(table.active_models.begin(), table.active_models.end(), m) == table.active_models.end())
        table.active_models.push_back(m);
      table.retained.insert(table.records.back().structure);
    }
  } catch (const nlohmann::json::exception& e) {
    throw error(std::string("results JSON: ") + e.what());
  }
  return table;
}

// ---------------------------------------------------------------------------
// Payload

struct StructureGroup {
  std::string name;
  std::vector<StructureKey> members;
};

struct GroupConfig {
  std::vector<StructureGroup> groups;

  /// Throws if a structure is listed in two groups.
  void check() const {
    std::set<StructureKey> seen;
    for (const auto& g : groups) {
      for (const auto& k : g.members) {
        if (!seen.insert(k).second) throw error("structure " + k.to_string() + " appears in more than one group");
      }
    }
  }

  std::string group_of(const StructureKey& key) const {
    for (const auto& g : groups) {
      if (std::find(g.members.begin(), g.members.end(), key) != g.members.end()) return g.name;
    }
    return "Other";
  }
};

/// Groups file: {"groups": [{"name": "...", "members": ["<key or structure name>", ...]}]}.
/// Names resolve against `known` (structure name -> key).
inline GroupConfig parse_group_config(const nlohmann::json& doc, const std::map<std::string, StructureKey>& known) {
  GroupConfig cfg;
  try {
    for (const auto& jg : doc.at("groups")) {
      StructureGroup g{jg.at("name").get<std::string>(), {}};
      for (const auto& jm : jg.at("members")) {
        const std::string text = jm.get<std::string>();
        if (const auto it = known.find(text); it != known.end()) g.members.push_back(it->second);
        else if (const auto key = StructureKey::parse(text)) g.members.push_back(*key);
        else throw error("group '" + g.name + "': unknown structure '" + text + "'");
      }
      cfg.groups.push_back(std::move(g));
    }
  } catch (const nlohmann::json::exception& e) {
    throw error(std::string("groups file: ") + e.what());
  }
  cfg.check();
  return cfg;
}

inline constexpr std::string_view kMooseGreen = "#2ca02c";

/// MOOSE is green; other models take colors from a fixed cycle in declaration order.
inline std::map<std::string, std::string> default_palette(const std::vector<std::string>& models) {
  static constexpr std::array<std::string_view, 9> cycle = {"#1f77b4", "#ff7f0e", "#d62728", "#9467bd", "#8c564b",
                                                            "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  std::map<std::string, std::string> palette;
  std::size_t next = 0;
  for (const auto& m : models) {
    std::string upper = m;
    for (char& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (upper == "MOOSE") {
      palette[m] = kMooseGreen;
    } else {
      palette[m] = std::string(cycle[next % cycle.size()]);
      ++next;
    }
  }
  return palette;
}

inline constexpr std::array<std::string_view, 3> kViewerPlaceholders = {"{StudyInstanceUID}", "{SeriesInstanceUID}",
                                                                        "{PatientID}"};

inline void check_viewer_template(std::string_view tmpl) {
  for (std::size_t open = tmpl.find('{'); open != std::string_view::npos; open = tmpl.find('{', open + 1)) {
    const auto close = tmpl.find('}', open);
    if (close == std::string_view::npos) throw UnknownPlaceholder("unterminated placeholder in viewer template");
    const auto token = tmpl.substr(open, close - open + 1);
    if (std::find(kViewerPlaceholders.begin(), kViewerPlaceholders.end(), token) == kViewerPlaceholders.end())
      throw UnknownPlaceholder("unknown placeholder " + std::string(token));
  }
}

inline std::string substitute_viewer_url(std::string_view tmpl, const ConcordanceRecord& r) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool replaced = false;
    for (auto ph : kViewerPlaceholders) {
      if (tmpl.substr(i, ph.size()) == ph) {
        if (ph == "{StudyInstanceUID}") out += r.study_uid;
        else if (ph == "{SeriesInstanceUID}") out += r.series_uid;
        else out += r.patient_id;
        i += ph.size();
        replaced = true;
        break;
      }
    }
    if (!replaced) out.push_back(tmpl[i++]);
  }
  return out;
}

struct PayloadRecord {
  ConcordanceRecord record;
  std::string group;
  std::string model_color;
  std::optional<BandName> band;  // absent when ratio is undefined
  std::optional<std::string> viewer_url;
};

struct MeanEntry {
  std::string model;
  StructureKey structure;
  std::string structure_name;
  double mean_dsc;
};

struct PayloadMeta {
  std::string tool_version = std::string(kToolVersion);
  std::string generated_at;
  std::vector<std::string> active_subset;
};

struct ReportPayload {
  std::vector<PayloadRecord> records;
  std::vector<MeanEntry> means;
  GroupConfig groups;
  std::map<std::string, std::string> palette;
  std::string viewer_url_template;
  PayloadMeta meta;
};

inline std::string utc_timestamp(bool deterministic) {
  if (deterministic) return "1970-01-01T00:00:00Z";
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline ReportPayload build_report_payload(const ConcordanceTable& table,
                                          const std::map<std::pair<std::string, StructureKey>, double>& means,
                                          const GroupConfig& groups, const std::string& viewer_url_template,
                                          const std::map<std::string, std::string>& palette,
                                          bool deterministic = false) {
  if (!viewer_url_template.empty()) check_viewer_template(viewer_url_template);
  groups.check();

  ReportPayload p;
  p.groups = groups;
  p.palette = palette;
  p.viewer_url_template = viewer_url_template;
  p.meta.generated_at = utc_timestamp(deterministic);
  p.meta.active_subset = table.active_models;

  std::map<StructureKey, std::string> names;
  for (const auto& r : table.records) {
    names.try_emplace(r.structure, r.structure_name);
    PayloadRecord pr;
    pr.record = r;
    pr.group = groups.group_of(r.structure);
    const auto c = palette.find(r.model);
    pr.model_color = c == palette.end() ? std::string("#000000") : c->second;
    if (r.ratio_pct) pr.band = classify_band(*r.ratio_pct).name;
    if (!viewer_url_template.empty() && !r.study_uid.empty() && !r.series_uid.empty())
      pr.viewer_url = substitute_viewer_url(viewer_url_template, r);
    p.records.push_back(std::move(pr));
  }
  for (const auto& [k, v] : means) {
    const auto n = names.find(k.second);
    p.means.push_back({k.first, k.second, n == names.end() ? k.second.to_string() : n->second, v});
  }
  return p;
}

inline nlohmann::ordered_json payload_to_json(const ReportPayload& p) {
  using nlohmann::ordered_json;
  ordered_json doc;
  doc["records"] = ordered_json::array();
  for (const auto& pr : p.records) {
    ordered_json j = record_to_json(pr.record);
    j["group"] = pr.group;
    j["model_color"] = pr.model_color;
    j["band"] = pr.band ? ordered_json(to_string(*pr.band)) : ordered_json(nullptr);
    j["viewer_url"] = pr.viewer_url ? ordered_json(*pr.viewer_url) : ordered_json(nullptr);
    doc["records"].push_back(std::move(j));
  }
  doc["means"] = ordered_json::array();
  for (const auto& m : p.means) {
    doc["means"].push_back({{"model", m.model},
                            {"structure_key", m.structure.to_string()},
                            {"structure_name", m.structure_name},
                            {"mean_dsc", m.mean_dsc}});
  }
  doc["groups"] = ordered_json::array();
  for (const auto& g : p.groups.groups) {
    ordered_json members = ordered_json::array();
    for (const auto& k : g.members) members.push_back(k.to_string());
    doc["groups"].push_back({{"name", g.name}, {"members", members}});
  }
  doc["palette"] = ordered_json::object();
  for (const auto& [m, c] : p.palette) doc["palette"][m] = c;
  doc["viewer_url_template"] = p.viewer_url_template;
  doc["bands"] = ordered_json::array();
  for (const auto& b : kBands) doc["bands"].push_back({{"name", to_string(b.name)}, {"lower", b.lower}, {"upper", b.upper}});
  doc["meta"] = {{"tool_version", p.meta.tool_version},
                 {"generated_at", p.meta.generated_at},
                 {"active_subset", p.meta.active_subset}};
  return doc;
}

// ---------------------------------------------------------------------------
// HTML

inline constexpr std::string_view kDataIslandOpen = R"(<script type="application/json" id="concord-data">)";

/// Minimal renderer used when no frontend bundle is supplied: a summary and
/// the list of records with undefined metrics.
inline constexpr std::string_view kStubBundle = R"JS((function () {
  var data = JSON.parse(document.getElementById("concord-data").textContent);
  var root = document.getElementById("concord-root");
  var undef = data.records.filter(function (r) { return r.dsc === null || r.ratio_pct === null; });
  var h = document.createElement("p");
  h.textContent = data.records.length + " records, " + data.means.length + " model/structure means, " +
      undef.length + " with undefined metrics.";
  root.appendChild(h);
  var ul = document.createElement("ul");
  undef.forEach(function (r) {
    var li = document.createElement("li");
    li.textContent = r.series_uid + " / " + r.structure_name + " / " + r.model;
    ul.appendChild(li);
  });
  root.appendChild(ul);
})();
)JS";

namespace detail {

// Keeps "</script>" and HTML comment openers out of an inline script body.
inline std::string escape_script_body(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '<' && i + 1 < s.size() && (s[i + 1] == '/' || s[i + 1] == '!')) {
      out += "<\\";
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

}  // namespace detail

inline void emit_html_report(const ReportPayload& payload, std::string_view frontend_bundle, std::ostream& out) {
  // "<" is written as \u003c so the island cannot terminate early.
  std::string island;
  for (char c : payload_to_json(payload).dump()) {
    if (c == '<') island += "\\u003c";
    else island.push_back(c);
  }
  out << "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n"
      << "<title>Segmentation concordance report</title>\n"
      << "<style>body{font-family:sans-serif;margin:1.5em}</style>\n</head>\n<body>\n"
      << "<div id=\"concord-root\"></div>\n"
      << kDataIslandOpen << island << "</script>\n"
      << "<script>\n" << detail::escape_script_body(frontend_bundle) << "\n</script>\n"
      << "</body>\n</html>\n";
}

inline void emit_html_report(const ReportPayload& payload, std::string_view frontend_bundle,
                             const std::filesystem::path& destination) {
  std::ofstream out(destination, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot write " + destination.string());
  emit_html_report(payload, frontend_bundle, out);
  if (!out) throw io_error("short write to " + destination.string());
}

/// Pulls the payload back out of an emitted report.
inline nlohmann::json extract_data_island(std::string_view html) {
  const auto start = html.find(kDataIslandOpen);
  if (start == std::string_view::npos) throw error("report has no concord-data island");
  const auto body = start + kDataIslandOpen.size();
  const auto end = html.find("</script>", body);
  if (end == std::string_view::npos) throw error("unterminated concord-data island");
  return nlohmann::json::parse(html.substr(body, end - body));
}

}  // namespace concord
