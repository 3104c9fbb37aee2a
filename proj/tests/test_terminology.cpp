#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "concord/terminology.hpp"

using namespace concord;

namespace {

const std::string kHeader =
    "model_label,label_value,category_scheme,category_value,category_meaning,type_scheme,type_value,type_meaning,"
    "modifier_scheme,modifier_value,modifier_meaning,region_scheme,region_value,region_meaning,color_r,color_g,"
    "color_b\n";

std::vector<SegmentDefinition> parse(const std::string& body, const std::string& model = "m") {
  std::istringstream in(kHeader + body);
  return load_mapping_table(in, model);
}

SegmentDefinition def(std::string label, std::string type_value, Rgb color = {10, 20, 30},
                      std::optional<CodedConcept> modifier = std::nullopt, std::string type_meaning = "") {
  SegmentDefinition d;
  d.model_label = std::move(label);
  d.category = {"SCT", "123037004", "Anatomical Structure"};
  d.ctype = {"SCT", type_value, type_meaning.empty() ? "type " + type_value : type_meaning};
  d.modifier = std::move(modifier);
  d.color = color;
  return d;
}

const CodedConcept kLeft{"SCT", "7771000", "Left"};
const CodedConcept kRight{"SCT", "24028007", "Right"};

std::size_t count_kind(const std::vector<Issue>& issues, IssueKind k) {
  return static_cast<std::size_t>(std::count_if(issues.begin(), issues.end(), [&](const Issue& i) { return i.kind == k; }));
}

// Six models, each with 3 shared structures and 1 of its own.
MappingSet toy_mappings() {
  MappingSet set;
  for (int m = 0; m < 6; ++m) {
    std::vector<SegmentDefinition> defs = {def("shared_a", "1001"), def("shared_b", "1002"), def("shared_c", "1003")};
    defs.push_back(def("unique_" + std::to_string(m), std::to_string(2000 + m)));
    set.emplace_back("toy" + std::to_string(m), std::move(defs));
  }
  return set;
}

}  // namespace

TEST(MappingTable, LeftRightLungLobes) {
  const auto defs = parse(
      "lung_upper_lobe_left,10,SCT,123037004,Anatomical Structure,SCT,45653009,Upper lobe of lung,SCT,7771000,Left,,,,"
      "255,200,100\n"
      "lung_upper_lobe_right,11,SCT,123037004,Anatomical Structure,SCT,45653009,Upper lobe of lung,SCT,24028007,Right,,,,"
      "255,200,100\n");
  ASSERT_EQ(defs.size(), 2u);
  EXPECT_EQ(defs[0].model_label, "lung_upper_lobe_left");
  EXPECT_EQ(defs[0].label_value, 10u);
  EXPECT_TRUE(defs[0].ctype.same_code(defs[1].ctype));
  ASSERT_TRUE(defs[0].modifier && defs[1].modifier);
  EXPECT_EQ(defs[0].modifier->value, "7771000");
  EXPECT_EQ(defs[1].modifier->value, "24028007");
  EXPECT_NE(key_of(defs[0]), key_of(defs[1]));
  EXPECT_FALSE(defs[0].anatomic_region.has_value());
  EXPECT_EQ(defs[0].color, (Rgb{255, 200, 100}));
}

TEST(MappingTable, HeaderOnlyIsEmpty) {
  EXPECT_TRUE(parse("").empty());
}

TEST(MappingTable, QuotedFieldsAndBlankOptionalColumns) {
  const auto defs = parse("\"sternum, body\",,SCT,123037004,Anatomical Structure,SCT,56873002,\"Sternum \"\"bone\"\"\","
                          ",,,,,,1,2,3\n");
  ASSERT_EQ(defs.size(), 1u);
  EXPECT_EQ(defs[0].model_label, "sternum, body");
  EXPECT_FALSE(defs[0].label_value.has_value());
  EXPECT_EQ(defs[0].ctype.meaning, "Sternum \"bone\"");
  EXPECT_FALSE(defs[0].modifier.has_value());
}

TEST(MappingTable, DuplicateLabelValue) {
  EXPECT_THROW(parse("a,5,SCT,1,c,SCT,2,t,,,,,,,0,0,0\n"
                     "b,5,SCT,1,c,SCT,3,t,,,,,,,0,0,0\n"),
               DuplicateLabel);
}

TEST(MappingTable, DuplicateModelLabel) {
  EXPECT_THROW(parse("a,5,SCT,1,c,SCT,2,t,,,,,,,0,0,0\n"
                     "a,6,SCT,1,c,SCT,3,t,,,,,,,0,0,0\n"),
               DuplicateLabel);
}

TEST(MappingTable, BadColor) {
  EXPECT_THROW(parse("a,5,SCT,1,c,SCT,2,t,,,,,,,256,0,0\n"), BadColor);
  EXPECT_THROW(parse("a,5,SCT,1,c,SCT,2,t,,,,,,,-1,0,0\n"), BadColor);
  EXPECT_THROW(parse("a,5,SCT,1,c,SCT,2,t,,,,,,,red,0,0\n"), BadColor);
}

TEST(MappingTable, MissingRequiredColumn) {
  std::istringstream in("model_label,label_value,category_scheme\nx,1,SCT\n");
  EXPECT_THROW(load_mapping_table(in, "m"), MissingRequiredColumn);
  std::istringstream empty("");
  EXPECT_THROW(load_mapping_table(empty, "m"), MissingRequiredColumn);
}

TEST(MappingTable, NonPositiveLabelValue) {
  EXPECT_THROW(parse("a,0,SCT,1,c,SCT,2,t,,,,,,,0,0,0\n"), mapping_error);
  EXPECT_THROW(parse("a,x,SCT,1,c,SCT,2,t,,,,,,,0,0,0\n"), mapping_error);
}

TEST(StructureKey, StringRoundTrip) {
  const StructureKey k{{"SCT", "123037004"}, {"SCT", "45653009"}, CodeRef{"SCT", "7771000"}};
  EXPECT_EQ(k.to_string(), "SCT:123037004|SCT:45653009|SCT:7771000");
  EXPECT_EQ(StructureKey::parse(k.to_string()), k);
  const StructureKey bare{{"SCT", "1"}, {"99X", "2"}, std::nullopt};
  EXPECT_EQ(StructureKey::parse("SCT:1|99X:2"), bare);
  EXPECT_FALSE(StructureKey::parse("sternum").has_value());
  EXPECT_FALSE(StructureKey::parse("SCT:1").has_value());
  EXPECT_FALSE(StructureKey::parse("SCT:1|:2").has_value());
}

TEST(StructureKey, RegionDoesNotParticipate) {
  auto a = def("x", "5");
  auto b = def("y", "5");
  b.anatomic_region = CodedConcept{"SCT", "39607008", "Lung"};
  EXPECT_EQ(key_of(a), key_of(b));
}

TEST(Catalog, SharedStructureHasBothModels) {
  MappingSet set = {{"A", {def("sternum", "56873002")}}, {"B", {def("Sternum", "56873002")}}};
  const auto cat = build_catalog(set);
  ASSERT_EQ(cat.size(), 1u);
  const auto& e = cat.entries.begin()->second;
  EXPECT_EQ(e.models, (std::vector<std::string>{"A", "B"}));
  EXPECT_EQ(e.canonical_name, "sternum");

  const std::vector<std::string> prec = {"B"};
  EXPECT_EQ(build_catalog(set, prec).entries.begin()->second.canonical_name, "Sternum");
}

TEST(Catalog, EmptyInput) {
  EXPECT_TRUE(build_catalog({}).empty());
  EXPECT_TRUE(model_count_histogram(build_catalog({})).empty());
}

TEST(Catalog, ToyCatalogOfNine) {
  const auto cat = build_catalog(toy_mappings());
  EXPECT_EQ(cat.size(), 9u);
  std::size_t six = 0;
  for (const auto& [k, e] : cat.entries) six += e.presence() == 6;
  EXPECT_EQ(six, 3u);
  const auto hist = model_count_histogram(cat);
  EXPECT_EQ(hist, (std::map<std::size_t, std::size_t>{{1, 6}, {6, 3}}));
}

TEST(Catalog, SingleModelHistogram) {
  std::vector<SegmentDefinition> defs;
  for (int i = 0; i < 10; ++i) defs.push_back(def("s" + std::to_string(i), std::to_string(i + 1)));
  EXPECT_EQ(model_count_histogram(build_catalog({{"only", defs}})), (std::map<std::size_t, std::size_t>{{1, 10}}));
}

TEST(Catalog, PartitionInvariants) {
  const auto set = toy_mappings();
  const auto cat = build_catalog(set);
  const auto hist = model_count_histogram(cat);
  std::size_t keys = 0, weighted = 0;
  for (const auto& [k, n] : hist) {
    keys += n;
    weighted += k * n;
  }
  std::size_t defs = 0;
  for (const auto& [m, d] : set) defs += d.size();
  EXPECT_EQ(keys, cat.size());
  EXPECT_EQ(weighted, defs);
}

TEST(Catalog, GroupingIsOrderInsensitive) {
  auto set = toy_mappings();
  const auto a = build_catalog(set);
  std::reverse(set.begin(), set.end());
  const auto b = build_catalog(set);
  ASSERT_EQ(a.size(), b.size());
  for (auto ia = a.entries.begin(), ib = b.entries.begin(); ia != a.entries.end(); ++ia, ++ib) {
    EXPECT_EQ(ia->first, ib->first);
    auto ma = ia->second.models, mb = ib->second.models;
    std::sort(ma.begin(), ma.end());
    std::sort(mb.begin(), mb.end());
    EXPECT_EQ(ma, mb);
  }
}

TEST(Catalog, ResolveByKeyOrName) {
  const auto cat = build_catalog({{"A", {def("sternum", "56873002")}}});
  const StructureKey k = key_of(def("", "56873002"));
  EXPECT_EQ(cat.resolve("sternum"), k);
  EXPECT_EQ(cat.resolve(k.to_string()), k);
  EXPECT_FALSE(cat.resolve("SCT:123037004|SCT:1").has_value());
  EXPECT_FALSE(cat.resolve("liver").has_value());
}

TEST(Validate, ConsistentCatalogHasNoIssues) {
  EXPECT_TRUE(validate_mappings(build_catalog(toy_mappings())).empty());
}

TEST(Validate, ColorConflict) {
  const auto cat = build_catalog({{"A", {def("s", "5", {255, 0, 0})}}, {"B", {def("s", "5", {254, 0, 0})}}});
  const auto issues = validate_mappings(cat);
  ASSERT_EQ(issues.size(), 1u);
  EXPECT_EQ(issues[0].kind, IssueKind::ColorConflict);
  EXPECT_EQ(issues[0].severity, Severity::warning);
}

TEST(Validate, PairColorMismatch) {
  const auto cat = build_catalog({{"A",
                                   {def("rib_left_4", "25888004", {10, 10, 10}, kLeft),
                                    def("rib_right_4", "25888004", {11, 10, 10}, kRight)}}});
  const auto issues = validate_mappings(cat);
  EXPECT_EQ(count_kind(issues, IssueKind::PairColorMismatch), 1u);

  const auto ok = build_catalog({{"A",
                                  {def("rib_left_4", "25888004", {10, 10, 10}, kLeft),
                                   def("rib_right_4", "25888004", {10, 10, 10}, kRight)}}});
  EXPECT_TRUE(validate_mappings(ok).empty());
}

TEST(Validate, MeaningDriftGroupsTogether) {
  const auto cat = build_catalog(
      {{"A", {def("heart", "80891009", {1, 1, 1}, std::nullopt, "Heart")}},
       {"B", {def("heart", "80891009", {1, 1, 1}, std::nullopt, "Heart structure")}}});
  EXPECT_EQ(cat.size(), 1u);
  const auto issues = validate_mappings(cat);
  EXPECT_EQ(count_kind(issues, IssueKind::MeaningDrift), 1u);
}

TEST(Validate, DuplicateStructureWithinModel) {
  const auto cat = build_catalog({{"A", {def("liver", "10200004"), def("liver2", "10200004")}}});
  const auto issues = validate_mappings(cat);
  ASSERT_EQ(count_kind(issues, IssueKind::DuplicateStructure), 1u);
  EXPECT_EQ(issues[0].severity, Severity::error);
}
