#include <gtest/gtest.h>

#include <random>

#include "concord/concordance.hpp"
#include "support/oracle.hpp"
#include "support/synthetic.hpp"

using namespace concord;

namespace {

const VolumeGrid kLine = VolumeGrid::make({16, 1, 1}, {1, 1, 1});

BinaryMask voxels(std::initializer_list<std::size_t> idx, const VolumeGrid& g = kLine) {
  BinaryMask m(g);
  for (auto i : idx) m.set(i);
  return m;
}

BinaryMask range(std::size_t lo, std::size_t hi, const VolumeGrid& g = kLine) {
  BinaryMask m(g);
  for (auto i = lo; i <= hi; ++i) m.set(i);
  return m;
}

CaseEntry a_case() {
  CaseEntry c;
  c.patient_id = "P1";
  c.study_uid = "1.2";
  c.series_uid = "1.2.3";
  return c;
}

SelectionResult retain_all(int structures) {
  SelectionResult sel;
  for (int j = 0; j < structures; ++j) sel.retained.insert(test::synthetic_key(j));
  return sel;
}

}  // namespace

TEST(Consensus, SingleMaskUnchanged) {
  const auto a = voxels({1, 4, 9});
  EXPECT_EQ(consensus(std::vector{a}), a);
}

TEST(Consensus, IntersectionOfSets) {
  const auto c = consensus(std::vector{voxels({1, 2, 3, 4}), voxels({3, 4, 5})});
  EXPECT_EQ(c, voxels({3, 4}));
  EXPECT_EQ(c.count(), 2u);
}

TEST(Consensus, EmptyParticipantAnnihilates) {
  EXPECT_TRUE(consensus(std::vector{voxels({1, 2}), BinaryMask(kLine), voxels({2})}).empty());
}

TEST(Consensus, GridMismatch) {
  const auto other = VolumeGrid::make({16, 1, 1}, {1, 1, 2});
  EXPECT_THROW(consensus(std::vector{voxels({1}), voxels({1}, other)}), GridMismatch);
  EXPECT_THROW(dsc(voxels({1}), voxels({1}, other)), GridMismatch);
  EXPECT_THROW(consensus(std::vector<BinaryMask>{}), error);
}

TEST(Dsc, Examples) {
  EXPECT_EQ(dsc(voxels({1, 2}), voxels({1, 2})), 1.0);
  EXPECT_EQ(dsc(voxels({1, 2}), voxels({3})), 0.0);
  EXPECT_FALSE(dsc(BinaryMask(kLine), BinaryMask(kLine)).has_value());
  EXPECT_EQ(dsc(BinaryMask(kLine), voxels({3})), 0.0);
  // |A| = 4, |B| = 6, |A ∩ B| = 3
  const auto a = voxels({0, 1, 2, 3});
  const auto b = voxels({1, 2, 3, 10, 11, 12});
  EXPECT_DOUBLE_EQ(*dsc(a, b), 0.6);
  EXPECT_EQ(dsc(a, b), dsc(b, a));
}

TEST(MaskVolume, Examples) {
  EXPECT_EQ(mask_volume(BinaryMask(kLine)), 0.0);
  EXPECT_DOUBLE_EQ(mask_volume(voxels({5})), 1.0);
  const auto g = VolumeGrid::make({16, 1, 1}, {0.703, 0.703, 2.5});
  EXPECT_NEAR(mask_volume(range(0, 9, g)), 12.355225, 1e-9);
}

TEST(Metrics, MatchNaiveOracle) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::int64_t> dim(1, 8);
  std::uniform_real_distribution<double> p(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const std::int64_t nx = dim(rng), ny = dim(rng), nz = dim(rng);
    const auto g = VolumeGrid::make({nx, ny, nz}, {0.5 + p(rng), 0.5 + p(rng), 0.5 + 2 * p(rng)});
    std::vector<test::NaiveMask> naive;
    std::vector<BinaryMask> fast;
    const int n = 1 + trial % 4;
    for (int i = 0; i < n; ++i) {
      naive.push_back(test::random_naive_mask(nx, ny, nz, p(rng), rng));
      fast.push_back(test::to_binary_mask(naive.back(), g));
      ASSERT_EQ(fast.back().count(), test::naive_count(naive.back()));
    }
    const auto c = consensus(fast);
    ASSERT_EQ(c, test::to_binary_mask(test::naive_consensus(naive), g));
    ASSERT_EQ(dsc(fast[0], fast[n - 1]), test::naive_dsc(naive[0], naive[n - 1]));
    ASSERT_DOUBLE_EQ(mask_volume(fast[0]), test::naive_volume(naive[0], g.spacing[0], g.spacing[1], g.spacing[2]));
  }
}

TEST(AnalyzeCase, IdenticalMasks) {
  const auto recs = analyze_case(test::synthetic_key(0), "s0", {{"A", voxels({1, 2})}, {"B", voxels({1, 2})}}, a_case());
  ASSERT_EQ(recs.size(), 2u);
  for (const auto& r : recs) {
    EXPECT_EQ(r.dsc, 1.0);
    EXPECT_EQ(r.ratio_pct, 100.0);
    EXPECT_FALSE(r.empty_participant_flag);
    EXPECT_EQ(r.n_participants, 2u);
    EXPECT_EQ(r.series_uid, "1.2.3");
  }
}

TEST(AnalyzeCase, TenVersusNine) {
  const auto recs = analyze_case(test::synthetic_key(0), "s0", {{"A", range(1, 10)}, {"B", range(1, 9)}}, a_case());
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].model, "A");
  EXPECT_EQ(recs[0].consensus_voxels, 9u);
  EXPECT_DOUBLE_EQ(*recs[0].dsc, 18.0 / 19.0);
  EXPECT_DOUBLE_EQ(*recs[0].ratio_pct, 90.0);
  EXPECT_DOUBLE_EQ(*recs[1].dsc, 1.0);
  EXPECT_DOUBLE_EQ(*recs[1].ratio_pct, 100.0);
}

TEST(AnalyzeCase, EmptyParticipant) {
  const auto recs =
      analyze_case(test::synthetic_key(0), "s0", {{"A", BinaryMask(kLine)}, {"B", voxels({3, 4})}}, a_case());
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_FALSE(recs[0].dsc.has_value());
  EXPECT_FALSE(recs[0].ratio_pct.has_value());
  EXPECT_EQ(recs[1].dsc, 0.0);
  EXPECT_EQ(recs[1].ratio_pct, 0.0);
  EXPECT_TRUE(recs[0].empty_participant_flag);
  EXPECT_TRUE(recs[1].empty_participant_flag);
  EXPECT_EQ(recs[1].consensus_voxels, 0u);
}

TEST(AnalyzeCase, MetricLinkAndConsensusBound) {
  std::mt19937_64 rng(5);
  const auto g = VolumeGrid::make({8, 8, 8}, {1, 1, 1});
  for (int trial = 0; trial < 100; ++trial) {
    std::map<std::string, BinaryMask> masks;
    for (int m = 0; m < 4; ++m) masks.emplace("m" + std::to_string(m), test::to_binary_mask(test::random_naive_mask(8, 8, 8, 0.9, rng), g));
    for (const auto& r : analyze_case(test::synthetic_key(0), "s0", masks, a_case())) {
      ASSERT_LE(r.consensus_voxels, r.model_voxels);
      if (r.model_voxels == 0) continue;
      const double ratio = *r.ratio_pct;
      ASSERT_NEAR(*r.dsc, 2 * ratio / (100 + ratio), 1e-12 * *r.dsc);
      ASSERT_EQ(*r.dsc, 2.0 * double(r.consensus_voxels) / double(r.model_voxels + r.consensus_voxels));
    }
  }
}

TEST(RunAnalysis, FullCohortRecordCount) {
  test::SyntheticSpec spec;
  spec.dims = {16, 16, 16};
  const auto res = run_analysis(test::synthetic_cohort(spec), retain_all(24), build_catalog(test::synthetic_mappings(spec)),
                                std::nullopt, test::SyntheticLoader{spec}, 2);
  EXPECT_EQ(res.table.records.size(), 24u * 18u * 6u);
  EXPECT_TRUE(res.errors.empty());
  EXPECT_TRUE(res.skipped.empty());
  EXPECT_TRUE(std::is_sorted(res.table.records.begin(), res.table.records.end(), record_less));
}

TEST(RunAnalysis, SubsetsRecomputeConsensus) {
  test::SyntheticSpec spec;
  spec.dims = {16, 16, 16};
  spec.series = 3;
  const auto cohort = test::synthetic_cohort(spec);
  const auto cat = build_catalog(test::synthetic_mappings(spec));
  const test::SyntheticLoader loader{spec};

  const auto pair = run_analysis(cohort, retain_all(24), cat, std::set<std::string>{"MOOSE", "CADS"}, loader);
  EXPECT_EQ(pair.table.records.size(), 24u * 3u * 2u);
  EXPECT_EQ(pair.table.active_models, (std::vector<std::string>{"MOOSE", "CADS"}));

  const auto one = run_analysis(cohort, retain_all(24), cat, std::set<std::string>{"MOOSE"}, loader);
  EXPECT_TRUE(one.table.records.empty());
  EXPECT_EQ(one.skipped.size(), 24u);

  const auto all = run_analysis(cohort, retain_all(24), cat, std::nullopt, loader);
  // consensus over a superset never grows
  std::map<std::tuple<std::string, StructureKey>, std::uint64_t> full;
  for (const auto& r : all.table.records) full[{r.series_uid, r.structure}] = r.consensus_voxels;
  for (const auto& r : pair.table.records) EXPECT_LE((full[{r.series_uid, r.structure}]), r.consensus_voxels);

  EXPECT_THROW(run_analysis(cohort, retain_all(24), cat, std::set<std::string>{"nnU-Net"}, loader), error);
}

TEST(RunAnalysis, VocabularyGapsReduceParticipants) {
  test::SyntheticSpec spec;
  spec.dims = {12, 12, 12};
  spec.series = 2;
  spec.structures = 3;
  spec.in_vocab = [](int m, int j) { return j != 1 || m < 4; };
  const auto res = run_analysis(test::synthetic_cohort(spec), retain_all(3), build_catalog(test::synthetic_mappings(spec)),
                                std::nullopt, test::SyntheticLoader{spec});
  EXPECT_EQ(res.table.records.size(), 2u * (6u + 4u + 6u));
  for (const auto& r : res.table.records) EXPECT_EQ(r.n_participants, r.structure == test::synthetic_key(1) ? 4u : 6u);
}

TEST(RunAnalysis, FailedCaseIsReportedAndSkipped) {
  test::SyntheticSpec spec;
  spec.dims = {12, 12, 12};
  spec.series = 3;
  spec.structures = 2;
  const test::SyntheticLoader inner{spec};
  MaskLoader loader = [&](const CaseEntry& c, const SegmentationSource& s, std::span<const SegmentDefinition> w) {
    auto masks = inner(c, s, w);
    if (c.series_uid == test::series_uid(2) && s.model == "Auto3DSeg") {
      for (auto& m : masks) m = BinaryMask(VolumeGrid::make({12, 12, 13}, spec.spacing));
    }
    return masks;
  };
  const auto res = run_analysis(test::synthetic_cohort(spec), retain_all(2), build_catalog(test::synthetic_mappings(spec)),
                                std::nullopt, loader, 3);
  ASSERT_EQ(res.errors.size(), 1u);
  EXPECT_EQ(res.errors[0].series_uid, test::series_uid(2));
  EXPECT_EQ(res.table.records.size(), 2u * 2u * 6u);
}

TEST(RunAnalysis, WorkerCountDoesNotChangeOutput) {
  test::SyntheticSpec spec;
  spec.dims = {12, 12, 12};
  spec.series = 4;
  spec.structures = 8;
  const auto cohort = test::synthetic_cohort(spec);
  const auto cat = build_catalog(test::synthetic_mappings(spec));
  const auto a = run_analysis(cohort, retain_all(8), cat, std::nullopt, test::SyntheticLoader{spec}, 1);
  const auto b = run_analysis(cohort, retain_all(8), cat, std::nullopt, test::SyntheticLoader{spec}, 7);
  EXPECT_EQ(a.table.records, b.table.records);
}

TEST(MeanDsc, Examples) {
  EXPECT_TRUE(aggregate_mean_dsc({}).empty());
  ConcordanceTable t;
  ConcordanceRecord r;
  r.model = "A";
  r.structure = test::synthetic_key(0);
  r.dsc = 0.9;
  t.records.push_back(r);
  r.dsc = 1.0;
  t.records.push_back(r);
  r.structure = test::synthetic_key(1);
  r.dsc = std::nullopt;
  t.records.push_back(r);
  r.dsc = 0.8;
  t.records.push_back(r);
  r.model = "B";
  r.dsc = std::nullopt;
  t.records.push_back(r);
  const auto means = aggregate_mean_dsc(t);
  EXPECT_EQ(means.size(), 2u);
  EXPECT_DOUBLE_EQ(means.at({"A", test::synthetic_key(0)}), 0.95);
  EXPECT_DOUBLE_EQ(means.at({"A", test::synthetic_key(1)}), 0.8);
  EXPECT_FALSE(means.contains({"B", test::synthetic_key(1)}));
}
