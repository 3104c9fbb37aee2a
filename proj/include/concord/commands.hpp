#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "concord/cohort.hpp"
#include "concord/concordance.hpp"
#include "concord/error.hpp"
#include "concord/nifti.hpp"
#include "concord/report.hpp"
#include "concord/terminology.hpp"

namespace concord {

/// Options shared by the pipeline stages. Each stage reads what it needs.
struct RunConfig {
  std::filesystem::path manifest;
  std::vector<std::pair<std::string, std::filesystem::path>> mappings;  // MODEL=PATH, in flag order
  SelectionConfig selection;
  std::vector<std::string> include;  // key strings or structure names
  std::vector<std::string> exclude;
  std::optional<std::set<std::string>> subset;
  std::optional<std::filesystem::path> groups;
  std::string viewer_template;
  std::filesystem::path out_dir = ".";
  std::optional<std::filesystem::path> selection_file;  // default <out>/selection.json
  std::optional<std::filesystem::path> results_file;    // default <out>/results.json
  std::optional<std::filesystem::path> bundle;
  unsigned workers = 1;
  bool deterministic = false;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitNoRecords = 1;
inline constexpr int kExitIssues = 1;
inline constexpr int kExitBadInput = 2;

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot write " + path.string());
  out << text;
  if (!out) throw io_error("short write to " + path.string());
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw error(path.string() + ": " + e.what());
  }
}

struct LoadedCohort {
  Cohort cohort;
  StructureCatalog catalog;
};

inline LoadedCohort load_cohort_and_catalog(const RunConfig& cfg) {
  LoadedCohort lc;
  lc.cohort = load_manifest(cfg.manifest);
  std::map<std::string, std::filesystem::path> overrides(cfg.mappings.begin(), cfg.mappings.end());
  lc.catalog = build_catalog(load_cohort_mappings(lc.cohort, overrides));
  return lc;
}

}  // namespace detail

/// Loads the given mapping tables, prints validation issues and the
/// model-count histogram. Exit 0 unless an error-severity issue is found;
/// 2 on malformed input.
inline int cmd_validate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.mappings.empty()) {
    err << "validate: at least one --mapping MODEL=PATH is required\n";
    return kExitBadInput;
  }
  StructureCatalog catalog;
  try {
    MappingSet set;
    for (const auto& [model, path] : cfg.mappings) set.emplace_back(model, load_mapping_table(path, model));
    catalog = build_catalog(set);
  } catch (const error& e) {
    err << "validate: " << e.what() << '\n';
    return kExitBadInput;
  }

  const auto issues = validate_mappings(catalog);
  bool has_error = false;
  for (const auto& i : issues) {
    out << to_string(i.severity) << " " << to_string(i.kind) << ": " << i.message << '\n';
    has_error = has_error || i.severity == Severity::error;
  }
  out << "structures: " << catalog.size() << '\n';
  const auto hist = model_count_histogram(catalog);
  for (auto it = hist.rbegin(); it != hist.rend(); ++it)
    out << "segmented by " << it->first << " model(s): " << it->second << '\n';
  return has_error ? kExitIssues : kExitOk;
}

inline int cmd_select(const RunConfig& cfg, std::ostream& out, std::ostream& err,
                      const MaskLoader& loader = load_source_masks) {
  try {
    auto [cohort, catalog] = detail::load_cohort_and_catalog(cfg);
    SelectionConfig sc = cfg.selection;
    auto resolve_all = [&](const std::vector<std::string>& items, std::set<StructureKey>& into) {
      for (const auto& s : items) {
        const auto key = catalog.resolve(s);
        if (!key) throw error("unknown structure '" + s + "'");
        into.insert(*key);
      }
    };
    resolve_all(cfg.include, sc.force_include);
    resolve_all(cfg.exclude, sc.force_exclude);

    const auto observed = observe_cohort(cohort, catalog, loader, sc.boundary_margin_slices, cfg.workers);
    const auto selection = select_structures(catalog, observed.observations, sc);

    auto doc = selection_to_json(selection);
    doc["load_errors"] = nlohmann::ordered_json::array();
    for (const auto& e : observed.errors) {
      err << "warning: " << e.series_uid << " / " << e.model << ": " << e.message << '\n';
      doc["load_errors"].push_back({{"series_uid", e.series_uid}, {"model", e.model}, {"message", e.message}});
    }
    std::filesystem::create_directories(cfg.out_dir);
    const auto path = cfg.selection_file.value_or(cfg.out_dir / "selection.json");
    detail::write_text(path, doc.dump(2) + "\n");

    out << "observed " << selection.evidence.size() << " structures, retained " << selection.retained.size() << '\n';
    for (const auto& [reason, n] : selection.reason_counts()) out << "  " << to_string(reason) << ": " << n << '\n';
    out << "wrote " << path.string() << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    err << "select: " << e.what() << '\n';
    return kExitBadInput;
  }
}

inline int cmd_analyze(const RunConfig& cfg, std::ostream& out, std::ostream& err,
                       const MaskLoader& loader = load_source_masks) {
  AnalysisResult result;
  try {
    auto [cohort, catalog] = detail::load_cohort_and_catalog(cfg);
    const auto selection =
        selection_from_json(detail::read_json(cfg.selection_file.value_or(cfg.out_dir / "selection.json")));
    if (cfg.workers < 1) throw error("--workers must be >= 1");
    result = run_analysis(cohort, selection, catalog, cfg.subset, loader, cfg.workers);
  } catch (const std::exception& e) {
    err << "analyze: " << e.what() << '\n';
    return kExitBadInput;
  }

  std::filesystem::create_directories(cfg.out_dir);
  std::ostringstream csv_text;
  export_records_csv(result.table, csv_text);
  detail::write_text(cfg.out_dir / "results.csv", csv_text.str());
  detail::write_text(cfg.out_dir / "results.json", export_records_json(result.table).dump(1) + "\n");

  nlohmann::ordered_json log;
  log["errors"] = nlohmann::ordered_json::array();
  for (const auto& e : result.errors) {
    err << "error: " << e.series_uid << " / " << e.model << ": " << e.message << '\n';
    log["errors"].push_back({{"series_uid", e.series_uid}, {"model", e.model}, {"message", e.message}});
  }
  log["skipped_structures"] = nlohmann::ordered_json::array();
  for (const auto& s : result.skipped) {
    log["skipped_structures"].push_back(
        {{"key", s.structure.to_string()}, {"name", s.structure_name}, {"participants", s.participants}});
  }
  detail::write_text(cfg.out_dir / "errors.json", log.dump(2) + "\n");

  out << "records: " << result.table.records.size() << ", case errors: " << result.errors.size()
      << ", skipped structures: " << result.skipped.size() << '\n';
  return result.table.records.empty() ? kExitNoRecords : kExitOk;
}

inline int cmd_report(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    const auto table =
        import_records_json(detail::read_json(cfg.results_file.value_or(cfg.out_dir / "results.json")));

    GroupConfig groups;
    if (cfg.groups) {
      std::map<std::string, StructureKey> known;
      for (const auto& r : table.records) known.emplace(r.structure_name, r.structure);
      groups = parse_group_config(detail::read_json(*cfg.groups), known);
    }

    std::string bundle(kStubBundle);
    if (cfg.bundle) {
      const Bytes b = read_file_bytes(*cfg.bundle);
      bundle.assign(b.begin(), b.end());
    }

    const auto payload = build_report_payload(table, aggregate_mean_dsc(table), groups, cfg.viewer_template,
                                              default_palette(table.active_models), cfg.deterministic);
    std::filesystem::create_directories(cfg.out_dir);
    const auto path = cfg.out_dir / "report.html";
    emit_html_report(payload, bundle, path);
    out << "wrote " << path.string() << " (" << payload.records.size() << " records)\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << "report: " << e.what() << '\n';
    return kExitBadInput;
  }
}

}  // namespace concord
