#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "concord/error.hpp"
#include "concord/label_volume.hpp"
#include "concord/nifti.hpp"
#include "concord/parallel.hpp"
#include "concord/terminology.hpp"

namespace concord {

namespace fs = std::filesystem;

enum class SourceKind { multilabel, files };

struct SegmentationSource {
  std::string model;
  SourceKind kind = SourceKind::multilabel;
  fs::path path;                          // multilabel
  std::map<std::string, fs::path> files;  // per-structure: model_label -> path
  fs::path mapping;
};

struct AcquisitionMeta {
  std::optional<std::string> manufacturer;
  std::optional<std::string> manufacturer_model;
  std::optional<std::string> kernel;
  std::optional<double> slice_thickness_mm;
  std::optional<double> pixel_spacing_mm;
  std::optional<int> age;
  std::optional<std::string> sex;
};

struct CaseEntry {
  std::string patient_id;
  std::string study_uid;
  std::string series_uid;
  std::optional<int> scan_axis;  // 0 = x, 1 = y, 2 = z
  AcquisitionMeta meta;
  std::vector<SegmentationSource> sources;

  const SegmentationSource* source_for(std::string_view model) const {
    for (const auto& s : sources) {
      if (s.model == model) return &s;
    }
    return nullptr;
  }
};

struct CohortCounts {
  std::size_t patients = 0;
  std::size_t studies = 0;
  std::size_t series = 0;
};

struct Cohort {
  std::vector<CaseEntry> cases;

  CohortCounts counts() const {
    std::set<std::string> patients, studies;
    for (const auto& c : cases) {
      patients.insert(c.patient_id);
      studies.insert(c.study_uid);
    }
    return {patients.size(), studies.size(), cases.size()};
  }

  /// Model names in order of first appearance.
  std::vector<std::string> models() const {
    std::vector<std::string> out;
    for (const auto& c : cases) {
      for (const auto& s : c.sources) {
        if (std::find(out.begin(), out.end(), s.model) == out.end()) out.push_back(s.model);
      }
    }
    return out;
  }

  std::map<std::string, fs::path> mapping_paths() const {
    std::map<std::string, fs::path> out;
    for (const auto& c : cases) {
      for (const auto& s : c.sources) out.try_emplace(s.model, s.mapping);
    }
    return out;
  }
};

namespace detail {

template <class T>
std::optional<T> optional_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

inline std::string required_string(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j.at(key).is_string()) throw manifest_error(where + ": missing string field '" + key + "'");
  return j.at(key).get<std::string>();
}

}  // namespace detail

/// Builds a cohort from manifest JSON. Relative paths resolve against `base_dir`.
inline Cohort parse_manifest(const nlohmann::json& doc, const fs::path& base_dir, bool check_files = true) {
  if (!doc.is_object() || !doc.contains("cases") || !doc.at("cases").is_array())
    throw manifest_error("manifest must be an object with a 'cases' array");

  auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  auto must_exist = [&](const fs::path& p, const std::string& where) {
    if (check_files && !fs::exists(p)) throw MissingFile(where + ": " + p.string() + " does not exist");
  };

  Cohort cohort;
  std::set<std::string> seen_series;
  std::map<std::string, fs::path> model_mapping;

  for (const auto& jc : doc.at("cases")) {
    CaseEntry c;
    c.series_uid = detail::required_string(jc, "series_uid", "case");
    const std::string where = "case " + c.series_uid;
    c.patient_id = detail::required_string(jc, "patient_id", where);
    c.study_uid = detail::required_string(jc, "study_uid", where);
    if (!seen_series.insert(c.series_uid).second) throw DuplicateSeries("series_uid " + c.series_uid + " repeated");

    if (auto axis = detail::optional_field<std::string>(jc, "scan_axis")) {
      if (*axis == "x") c.scan_axis = 0;
      else if (*axis == "y") c.scan_axis = 1;
      else if (*axis == "z") c.scan_axis = 2;
      else throw manifest_error(where + ": scan_axis must be x, y or z");
    }
    if (jc.contains("meta") && jc.at("meta").is_object()) {
      const auto& m = jc.at("meta");
      c.meta.manufacturer = detail::optional_field<std::string>(m, "manufacturer");
      c.meta.manufacturer_model = detail::optional_field<std::string>(m, "model");
      c.meta.kernel = detail::optional_field<std::string>(m, "kernel");
      c.meta.slice_thickness_mm = detail::optional_field<double>(m, "slice_thickness");
      c.meta.pixel_spacing_mm = detail::optional_field<double>(m, "pixel_spacing");
      c.meta.age = detail::optional_field<int>(m, "age");
      c.meta.sex = detail::optional_field<std::string>(m, "sex");
    }

    if (!jc.contains("sources") || !jc.at("sources").is_array() || jc.at("sources").empty())
      throw manifest_error(where + ": at least one source is required");
    for (const auto& js : jc.at("sources")) {
      SegmentationSource s;
      s.model = detail::required_string(js, "model", where);
      const std::string swhere = where + " model " + s.model;
      if (c.source_for(s.model)) throw manifest_error(swhere + ": model listed twice");

      const std::string kind = detail::required_string(js, "kind", swhere);
      if (kind == "multilabel") {
        s.kind = SourceKind::multilabel;
        s.path = resolve(detail::required_string(js, "path", swhere));
        must_exist(s.path, swhere);
      } else if (kind == "files") {
        s.kind = SourceKind::files;
        if (!js.contains("files") || !js.at("files").is_object() || js.at("files").empty())
          throw manifest_error(swhere + ": 'files' must map model labels to paths");
        for (const auto& [label, p] : js.at("files").items()) {
          s.files.emplace(label, resolve(p.get<std::string>()));
          must_exist(s.files.at(label), swhere);
        }
      } else {
        throw manifest_error(swhere + ": kind must be 'multilabel' or 'files'");
      }

      if (!js.contains("mapping") || !js.at("mapping").is_string())
        throw UnknownMappingRef(swhere + ": no mapping table referenced");
      s.mapping = resolve(js.at("mapping").get<std::string>());
      if (check_files && !fs::exists(s.mapping))
        throw UnknownMappingRef(swhere + ": mapping " + s.mapping.string() + " not found");
      const auto [it, inserted] = model_mapping.try_emplace(s.model, s.mapping);
      if (!inserted && fs::weakly_canonical(it->second) != fs::weakly_canonical(s.mapping))
        throw UnknownMappingRef(swhere + ": model already uses mapping " + it->second.string());
      c.sources.push_back(std::move(s));
    }
    cohort.cases.push_back(std::move(c));
  }
  return cohort;
}

inline Cohort load_manifest(const fs::path& path, bool check_files = true) {
  std::ifstream in(path);
  if (!in) throw MissingFile("manifest " + path.string() + " not found");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw manifest_error(path.string() + ": " + e.what());
  }
  return parse_manifest(doc, path.parent_path(), check_files);
}

/// Mapping tables for every cohort model, in cohort model order. `overrides`
/// replaces the manifest's table for a model.
inline MappingSet load_cohort_mappings(const Cohort& cohort, const std::map<std::string, fs::path>& overrides = {}) {
  const auto paths = cohort.mapping_paths();
  MappingSet set;
  for (const auto& model : cohort.models()) {
    const auto o = overrides.find(model);
    set.emplace_back(model, load_mapping_table(o != overrides.end() ? o->second : paths.at(model), model));
  }
  return set;
}

/// Produces one mask per wanted definition for one model's output on one case.
using MaskLoader = std::function<std::vector<BinaryMask>(const CaseEntry&, const SegmentationSource&,
                                                         std::span<const SegmentDefinition>)>;

/// Reads masks from the NIfTI files a source points at. A structure the model
/// defines but did not write (per-structure files) is an empty mask.
inline std::vector<BinaryMask> load_source_masks(const CaseEntry&, const SegmentationSource& src,
                                                 std::span<const SegmentDefinition> wanted) {
  if (src.kind == SourceKind::multilabel) {
    std::vector<std::uint32_t> values;
    values.reserve(wanted.size());
    for (const auto& d : wanted) {
      if (!d.label_value) throw mapping_error(src.model + ": '" + d.model_label + "' has no label_value for a multilabel output");
      values.push_back(*d.label_value);
    }
    const LabelVolume vol = load_label_volume(src.path);
    return extract_binary_masks(vol, values);
  }

  std::vector<BinaryMask> out(wanted.size());
  std::vector<bool> have(wanted.size(), false);
  std::optional<VolumeGrid> grid;
  for (std::size_t i = 0; i < wanted.size(); ++i) {
    const auto it = src.files.find(wanted[i].model_label);
    if (it == src.files.end()) continue;
    const LabelVolume vol = load_label_volume(it->second);
    if (grid) require_grid_compatible(*grid, vol.grid);
    else grid = vol.grid;
    out[i] = nonzero_mask(vol);
    have[i] = true;
  }
  if (!grid) {
    if (src.files.empty()) throw manifest_error(src.model + ": per-structure source lists no files");
    grid = load_label_volume(src.files.begin()->second).grid;
  }
  for (std::size_t i = 0; i < wanted.size(); ++i) {
    if (!have[i]) out[i] = BinaryMask(*grid);
  }
  return out;
}

/// Axis of largest spacing; ties resolve toward z.
inline int infer_scan_axis(const VolumeGrid& grid) {
  int axis = 2;
  for (int a = 1; a >= 0; --a) {
    if (grid.spacing[a] > grid.spacing[axis]) axis = a;
  }
  return axis;
}

/// True iff a set voxel lies within `margin` slices of either end of the scan
/// axis (slice index < margin or > n - 1 - margin). Margin 0 never flags.
inline bool detect_incomplete_coverage(const BinaryMask& mask, int margin, std::optional<int> axis = std::nullopt) {
  if (mask.empty() || margin <= 0) return false;
  const VolumeGrid& g = mask.grid();
  const int a = axis.value_or(infer_scan_axis(g));
  const std::int64_t nx = g.dims[0], ny = g.dims[1];
  const std::int64_t n = g.dims[a];
  const auto words = mask.words();
  for (std::size_t w = 0; w < words.size(); ++w) {
    for (auto bits = words[w]; bits != 0; bits &= bits - 1) {
      const auto v = static_cast<std::int64_t>(w * BinaryMask::kWordBits + std::countr_zero(bits));
      std::int64_t idx;
      if (a == 0) idx = v % nx;
      else if (a == 1) idx = (v / nx) % ny;
      else idx = v / (nx * ny);
      if (idx < margin || idx > n - 1 - margin) return true;
    }
  }
  return false;
}

struct CaseError {
  std::string series_uid;
  std::string model;
  std::string message;
  friend auto operator<=>(const CaseError&, const CaseError&) = default;
};

/// What one model produced for one structure on one case.
struct Observation {
  std::string series_uid;
  std::string model;
  StructureKey key;
  std::size_t voxels = 0;
  bool touches_boundary = false;
};

struct ObservationSet {
  std::vector<Observation> observations;
  std::vector<CaseError> errors;
};

/// Loads every model's full vocabulary on every case and records voxel counts
/// and boundary contact. Cases that fail to load are reported and skipped.
inline ObservationSet observe_cohort(const Cohort& cohort, const StructureCatalog& catalog, const MaskLoader& loader,
                                     int margin, unsigned workers = 1) {
  struct Job {
    std::size_t case_index;
    const SegmentationSource* source;
  };
  std::vector<Job> jobs;
  for (std::size_t ci = 0; ci < cohort.cases.size(); ++ci) {
    for (const auto& s : cohort.cases[ci].sources) jobs.push_back({ci, &s});
  }

  std::vector<std::vector<Observation>> per_job(jobs.size());
  std::vector<std::optional<CaseError>> failures(jobs.size());
  parallel_for(jobs.size(), workers, [&](std::size_t j) {
    const CaseEntry& c = cohort.cases[jobs[j].case_index];
    const SegmentationSource& src = *jobs[j].source;
    std::vector<SegmentDefinition> wanted;
    std::vector<StructureKey> keys;
    for (const auto& [key, entry] : catalog.entries) {
      if (const auto* def = entry.definition_for(src.model)) {
        wanted.push_back(*def);
        keys.push_back(key);
      }
    }
    try {
      const auto masks = loader(c, src, wanted);
      for (std::size_t i = 0; i < masks.size(); ++i) {
        per_job[j].push_back({c.series_uid, src.model, keys[i], masks[i].count(),
                              detect_incomplete_coverage(masks[i], margin, c.scan_axis)});
      }
    } catch (const std::exception& e) {
      failures[j] = CaseError{c.series_uid, src.model, e.what()};
    }
  });

  ObservationSet out;
  std::set<std::string> failed_series;
  for (const auto& f : failures) {
    if (f) {
      out.errors.push_back(*f);
      failed_series.insert(f->series_uid);
    }
  }
  for (auto& obs : per_job) {
    for (auto& o : obs) {
      if (!failed_series.contains(o.series_uid)) out.observations.push_back(std::move(o));
    }
  }
  return out;
}

struct SelectionConfig {
  int min_models = 4;
  int boundary_margin_slices = 1;
  double coverage_exclusion_fraction = 0.5;
  std::set<StructureKey> force_include;
  std::set<StructureKey> force_exclude;
};

enum class ExclusionReason { single_model, insufficient_models, incomplete_coverage, forced };

inline const char* to_string(ExclusionReason r) {
  switch (r) {
    case ExclusionReason::single_model: return "single_model";
    case ExclusionReason::insufficient_models: return "insufficient_models";
    case ExclusionReason::incomplete_coverage: return "incomplete_coverage";
    case ExclusionReason::forced: return "forced";
  }
  return "?";
}

inline std::optional<ExclusionReason> exclusion_reason_from_string(std::string_view s) {
  for (auto r : {ExclusionReason::single_model, ExclusionReason::insufficient_models,
                 ExclusionReason::incomplete_coverage, ExclusionReason::forced}) {
    if (s == to_string(r)) return r;
  }
  return std::nullopt;
}

struct StructureEvidence {
  std::string name;
  std::size_t vocabulary_models = 0;
  std::vector<std::string> observed_models;  // produced a non-empty mask in some case
  std::size_t cases_observed = 0;
  std::vector<std::string> flagged_series;

  double coverage_fraction() const {
    return cases_observed == 0 ? 0.0 : static_cast<double>(flagged_series.size()) / static_cast<double>(cases_observed);
  }
};

struct SelectionResult {
  SelectionConfig config;
  std::set<StructureKey> retained;
  std::map<StructureKey, ExclusionReason> excluded;
  std::map<StructureKey, StructureEvidence> evidence;

  std::map<ExclusionReason, std::size_t> reason_counts() const {
    std::map<ExclusionReason, std::size_t> counts;
    for (const auto& [k, r] : excluded) ++counts[r];
    return counts;
  }
};

/// Applies, in order: single-model exclusion, coverage exclusion (unless
/// force_include), minimum-model exclusion, then force_exclude. Only structures
/// with at least one non-empty observation take part.
inline SelectionResult select_structures(const StructureCatalog& catalog, std::span<const Observation> observations,
                                         const SelectionConfig& cfg) {
  if (cfg.min_models < 1) throw error("min_models must be >= 1");

  struct Tally {
    std::set<std::string> models;
    std::set<std::string> cases;
    std::set<std::string> flagged;
  };
  std::map<StructureKey, Tally> tally;
  for (const auto& o : observations) {
    if (o.voxels == 0) continue;
    Tally& t = tally[o.key];
    t.models.insert(o.model);
    t.cases.insert(o.series_uid);
    if (o.touches_boundary) t.flagged.insert(o.series_uid);
  }

  SelectionResult result;
  result.config = cfg;
  for (const auto& [key, t] : tally) {
    StructureEvidence ev;
    ev.name = catalog.name_of(key);
    if (const auto* e = catalog.find(key)) ev.vocabulary_models = e->presence();
    // report observed models in catalog supply order
    for (const auto& m : catalog.models) {
      if (t.models.contains(m)) ev.observed_models.push_back(m);
    }
    for (const auto& m : t.models) {
      if (std::find(ev.observed_models.begin(), ev.observed_models.end(), m) == ev.observed_models.end())
        ev.observed_models.push_back(m);
    }
    ev.cases_observed = t.cases.size();
    ev.flagged_series.assign(t.flagged.begin(), t.flagged.end());

    const auto count = static_cast<int>(t.models.size());
    std::optional<ExclusionReason> reason;
    if (count == 1) {
      reason = ExclusionReason::single_model;
    } else if (ev.cases_observed > 0 && ev.coverage_fraction() >= cfg.coverage_exclusion_fraction &&
               !cfg.force_include.contains(key)) {
      reason = ExclusionReason::incomplete_coverage;
    } else if (count < cfg.min_models) {
      reason = ExclusionReason::insufficient_models;
    } else if (cfg.force_exclude.contains(key)) {
      reason = ExclusionReason::forced;
    }
    if (reason) result.excluded.emplace(key, *reason);
    else result.retained.insert(key);
    result.evidence.emplace(key, std::move(ev));
  }
  return result;
}

/// series_uid -> model -> structure -> mask
using MasksByCase = std::map<std::string, std::map<std::string, std::map<StructureKey, BinaryMask>>>;

inline SelectionResult select_structures(const StructureCatalog& catalog, const Cohort& cohort,
                                         const MasksByCase& masks, const SelectionConfig& cfg) {
  std::vector<Observation> obs;
  for (const auto& [series, by_model] : masks) {
    std::optional<int> axis;
    for (const auto& c : cohort.cases) {
      if (c.series_uid == series) axis = c.scan_axis;
    }
    for (const auto& [model, by_key] : by_model) {
      for (const auto& [key, mask] : by_key) {
        obs.push_back({series, model, key, mask.count(),
                       detect_incomplete_coverage(mask, cfg.boundary_margin_slices, axis)});
      }
    }
  }
  return select_structures(catalog, obs, cfg);
}

inline nlohmann::ordered_json selection_to_json(const SelectionResult& sel) {
  using nlohmann::ordered_json;
  auto key_list = [](const std::set<StructureKey>& keys) {
    ordered_json a = ordered_json::array();
    for (const auto& k : keys) a.push_back(k.to_string());
    return a;
  };
  auto name_of = [&](const StructureKey& k) {
    const auto it = sel.evidence.find(k);
    return it == sel.evidence.end() ? k.to_string() : it->second.name;
  };

  ordered_json doc;
  doc["config"] = {{"min_models", sel.config.min_models},
                   {"boundary_margin_slices", sel.config.boundary_margin_slices},
                   {"coverage_exclusion_fraction", sel.config.coverage_exclusion_fraction},
                   {"force_include", key_list(sel.config.force_include)},
                   {"force_exclude", key_list(sel.config.force_exclude)}};

  const auto counts = sel.reason_counts();
  ordered_json summary = {{"observed", sel.evidence.size()}, {"retained", sel.retained.size()}};
  for (auto r : {ExclusionReason::single_model, ExclusionReason::incomplete_coverage,
                 ExclusionReason::insufficient_models, ExclusionReason::forced}) {
    const auto it = counts.find(r);
    summary[to_string(r)] = it == counts.end() ? 0 : it->second;
  }
  doc["summary"] = summary;

  doc["retained"] = ordered_json::array();
  for (const auto& k : sel.retained) doc["retained"].push_back({{"key", k.to_string()}, {"name", name_of(k)}});
  doc["excluded"] = ordered_json::array();
  for (const auto& [k, r] : sel.excluded)
    doc["excluded"].push_back({{"key", k.to_string()}, {"name", name_of(k)}, {"reason", to_string(r)}});
  doc["evidence"] = ordered_json::array();
  for (const auto& [k, ev] : sel.evidence) {
    doc["evidence"].push_back({{"key", k.to_string()},
                               {"name", ev.name},
                               {"vocabulary_models", ev.vocabulary_models},
                               {"observed_models", ev.observed_models},
                               {"cases_observed", ev.cases_observed},
                               {"cases_flagged", ev.flagged_series.size()},
                               {"flagged_series", ev.flagged_series}});
  }
  return doc;
}

inline SelectionResult selection_from_json(const nlohmann::json& doc) {
  auto key = [](const nlohmann::json& j) {
    const auto k = StructureKey::parse(j.get<std::string>());
    if (!k) throw error("selection: malformed structure key '" + j.get<std::string>() + "'");
    return *k;
  };
  SelectionResult sel;
  try {
    const auto& c = doc.at("config");
    sel.config.min_models = c.at("min_models").get<int>();
    sel.config.boundary_margin_slices = c.at("boundary_margin_slices").get<int>();
    sel.config.coverage_exclusion_fraction = c.at("coverage_exclusion_fraction").get<double>();
    for (const auto& k : c.at("force_include")) sel.config.force_include.insert(key(k));
    for (const auto& k : c.at("force_exclude")) sel.config.force_exclude.insert(key(k));
    for (const auto& r : doc.at("retained")) sel.retained.insert(key(r.at("key")));
    for (const auto& x : doc.at("excluded")) {
      const auto reason = exclusion_reason_from_string(x.at("reason").get<std::string>());
      if (!reason) throw error("selection: unknown exclusion reason");
      sel.excluded.emplace(key(x.at("key")), *reason);
    }
    for (const auto& e : doc.at("evidence")) {
      StructureEvidence ev;
      ev.name = e.at("name").get<std::string>();
      ev.vocabulary_models = e.at("vocabulary_models").get<std::size_t>();
      ev.observed_models = e.at("observed_models").get<std::vector<std::string>>();
      ev.cases_observed = e.at("cases_observed").get<std::size_t>();
      ev.flagged_series = e.at("flagged_series").get<std::vector<std::string>>();
      sel.evidence.emplace(key(e.at("key")), std::move(ev));
    }
  } catch (const nlohmann::json::exception& e) {
    throw error(std::string("selection: ") + e.what());
  }
  return sel;
}

}  // namespace concord
