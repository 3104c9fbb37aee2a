#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "concord/cohort.hpp"
#include "concord/error.hpp"
#include "concord/grid.hpp"
#include "concord/label_volume.hpp"
#include "concord/parallel.hpp"
#include "concord/terminology.hpp"

namespace concord {

/// One model's agreement with the consensus for one structure on one series.
struct ConcordanceRecord {
  std::string patient_id;
  std::string study_uid;
  std::string series_uid;
  StructureKey structure;
  std::string structure_name;
  std::string model;
  std::uint64_t model_voxels = 0;
  double model_volume_mm3 = 0.0;
  std::uint64_t consensus_voxels = 0;
  double consensus_volume_mm3 = 0.0;
  std::optional<double> dsc;
  std::optional<double> ratio_pct;
  std::size_t n_participants = 0;
  bool empty_participant_flag = false;

  friend bool operator==(const ConcordanceRecord&, const ConcordanceRecord&) = default;
};

/// Output row order: (series_uid, structure_name, model).
inline bool record_less(const ConcordanceRecord& a, const ConcordanceRecord& b) {
  return std::tie(a.series_uid, a.structure_name, a.structure, a.model) <
         std::tie(b.series_uid, b.structure_name, b.structure, b.model);
}

struct ConcordanceTable {
  std::vector<ConcordanceRecord> records;
  std::vector<std::string> active_models;
  std::set<StructureKey> retained;
};

/// Voxelwise AND of all masks.
inline BinaryMask consensus(std::span<const BinaryMask> masks) {
  if (masks.empty()) throw error("consensus of an empty mask list");
  for (std::size_t i = 1; i < masks.size(); ++i) require_grid_compatible(masks[0].grid(), masks[i].grid());
  BinaryMask out = masks[0];
  for (std::size_t i = 1; i < masks.size(); ++i) out.intersect_with(masks[i]);
  return out;
}

/// 2|A∩B| / (|A|+|B|); nullopt when both masks are empty.
inline std::optional<double> dsc(const BinaryMask& a, const BinaryMask& b) {
  require_grid_compatible(a.grid(), b.grid());
  const std::size_t denom = a.count() + b.count();
  if (denom == 0) return std::nullopt;
  return 2.0 * static_cast<double>(intersection_count(a, b)) / static_cast<double>(denom);
}

inline double mask_volume(const BinaryMask& mask) {
  return static_cast<double>(mask.count()) * voxel_volume(mask.grid());
}

/// Consensus and per-participant metrics for one structure on one case.
/// `masks` holds every participant, including those that produced nothing.
inline std::vector<ConcordanceRecord> analyze_case(const StructureKey& structure, const std::string& structure_name,
                                                   const std::map<std::string, BinaryMask>& masks,
                                                   const CaseEntry& c) {
  if (masks.empty()) return {};
  std::vector<BinaryMask> all;
  all.reserve(masks.size());
  bool any_empty = false;
  for (const auto& [model, m] : masks) {
    all.push_back(m);
    any_empty = any_empty || m.empty();
  }
  const BinaryMask agreed = consensus(all);
  const double agreed_volume = mask_volume(agreed);

  std::vector<ConcordanceRecord> out;
  out.reserve(masks.size());
  for (const auto& [model, m] : masks) {
    ConcordanceRecord r;
    r.patient_id = c.patient_id;
    r.study_uid = c.study_uid;
    r.series_uid = c.series_uid;
    r.structure = structure;
    r.structure_name = structure_name;
    r.model = model;
    r.model_voxels = m.count();
    r.model_volume_mm3 = mask_volume(m);
    r.consensus_voxels = agreed.count();
    r.consensus_volume_mm3 = agreed_volume;
    r.dsc = dsc(m, agreed);
    if (m.count() > 0) r.ratio_pct = 100.0 * static_cast<double>(agreed.count()) / static_cast<double>(m.count());
    r.n_participants = masks.size();
    r.empty_participant_flag = any_empty;
    out.push_back(std::move(r));
  }
  return out;
}

struct SkippedStructure {
  StructureKey structure;
  std::string structure_name;
  std::size_t participants = 0;
};

struct AnalysisResult {
  ConcordanceTable table;
  std::vector<SkippedStructure> skipped;
  std::vector<CaseError> errors;
};

/// Runs the concordance analysis over every (series, retained structure).
///
/// Participants for a structure are the active models whose vocabulary
/// contains it. The consensus is always recomputed over the active subset.
/// Structures with fewer than two participants are skipped. A case whose
/// outputs fail to load or disagree on grid is reported and skipped as a
/// whole. Output is sorted and does not depend on `workers`.
inline AnalysisResult run_analysis(const Cohort& cohort, const SelectionResult& selection,
                                   const StructureCatalog& catalog,
                                   const std::optional<std::set<std::string>>& model_subset,
                                   const MaskLoader& loader = load_source_masks, unsigned workers = 1) {
  AnalysisResult result;
  const auto cohort_models = cohort.models();
  if (model_subset) {
    for (const auto& m : *model_subset) {
      if (std::find(cohort_models.begin(), cohort_models.end(), m) == cohort_models.end())
        throw error("model subset names unknown model '" + m + "'");
    }
  }
  for (const auto& m : cohort_models) {
    if (!model_subset || model_subset->contains(m)) result.table.active_models.push_back(m);
  }
  result.table.retained = selection.retained;

  struct Target {
    StructureKey key;
    std::string name;
    std::vector<std::string> participants;
  };
  std::vector<Target> targets;
  for (const auto& key : selection.retained) {
    const CatalogEntry* entry = catalog.find(key);
    Target t{key, catalog.name_of(key), {}};
    if (entry) {
      for (const auto& m : result.table.active_models) {
        if (entry->has_model(m)) t.participants.push_back(m);
      }
    }
    if (t.participants.size() < 2) {
      result.skipped.push_back({key, t.name, t.participants.size()});
    } else {
      targets.push_back(std::move(t));
    }
  }
  if (targets.empty()) return result;

  for (const CaseEntry& c : cohort.cases) {
    // Load each participating model's masks for this case.
    std::vector<const SegmentationSource*> sources;
    for (const auto& m : result.table.active_models) {
      if (const auto* s = c.source_for(m)) sources.push_back(s);
    }
    std::vector<std::map<StructureKey, BinaryMask>> loaded(sources.size());
    std::vector<std::optional<CaseError>> failures(sources.size());
    parallel_for(sources.size(), workers, [&](std::size_t i) {
      const SegmentationSource& src = *sources[i];
      std::vector<SegmentDefinition> wanted;
      std::vector<StructureKey> keys;
      for (const auto& t : targets) {
        if (std::find(t.participants.begin(), t.participants.end(), src.model) == t.participants.end()) continue;
        wanted.push_back(*catalog.find(t.key)->definition_for(src.model));
        keys.push_back(t.key);
      }
      if (wanted.empty()) return;
      try {
        auto masks = loader(c, src, wanted);
        if (masks.size() != wanted.size()) throw error("loader returned the wrong number of masks");
        for (std::size_t k = 0; k < keys.size(); ++k) loaded[i].emplace(keys[k], std::move(masks[k]));
      } catch (const std::exception& e) {
        failures[i] = CaseError{c.series_uid, src.model, e.what()};
      }
    });

    bool failed = false;
    for (const auto& f : failures) {
      if (f) {
        result.errors.push_back(*f);
        failed = true;
      }
    }
    if (failed) continue;

    // Every output of a case must live on one grid.
    const VolumeGrid* reference = nullptr;
    std::string reference_model;
    for (std::size_t i = 0; i < sources.size() && !failed; ++i) {
      for (const auto& [key, m] : loaded[i]) {
        if (!reference) {
          reference = &m.grid();
          reference_model = sources[i]->model;
        } else if (auto mismatch = check_grid_compatible(*reference, m.grid())) {
          result.errors.push_back({c.series_uid, sources[i]->model,
                                   std::string(mismatch->what()) + " (against " + reference_model + ")"});
          failed = true;
        }
        break;
      }
    }
    if (failed) continue;

    std::vector<std::vector<ConcordanceRecord>> per_target(targets.size());
    parallel_for(targets.size(), workers, [&](std::size_t t) {
      std::map<std::string, BinaryMask> masks;
      for (std::size_t i = 0; i < sources.size(); ++i) {
        const auto it = loaded[i].find(targets[t].key);
        if (it != loaded[i].end()) masks.emplace(sources[i]->model, it->second);
      }
      if (masks.size() < 2) return;
      per_target[t] = analyze_case(targets[t].key, targets[t].name, masks, c);
    });
    for (auto& recs : per_target) {
      for (auto& r : recs) result.table.records.push_back(std::move(r));
    }
  }

  std::sort(result.table.records.begin(), result.table.records.end(), record_less);
  std::sort(result.errors.begin(), result.errors.end());
  return result;
}

/// Mean DSC per (model, structure) over records with a defined DSC.
inline std::map<std::pair<std::string, StructureKey>, double> aggregate_mean_dsc(const ConcordanceTable& table) {
  std::map<std::pair<std::string, StructureKey>, std::pair<double, std::size_t>> acc;
  for (const auto& r : table.records) {
    if (!r.dsc) continue;
    auto& [sum, n] = acc[{r.model, r.structure}];
    sum += *r.dsc;
    ++n;
  }
  std::map<std::pair<std::string, StructureKey>, double> means;
  for (const auto& [k, v] : acc) means.emplace(k, v.first / static_cast<double>(v.second));
  return means;
}

}  // namespace concord
