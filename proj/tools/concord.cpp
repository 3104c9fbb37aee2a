#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "concord/commands.hpp"

namespace {

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-model segmentation concordance toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(concord::kToolVersion));

  concord::RunConfig cfg;
  std::vector<std::string> mapping_args;
  std::string subset_arg;
  std::string selection_path, results_path, groups_path, bundle_path, out_dir = ".";

  auto add_mapping = [&](CLI::App* cmd) {
    cmd->add_option("--mapping", mapping_args, "Mapping table for a model, MODEL=PATH (repeatable)");
  };
  auto add_out = [&](CLI::App* cmd) { cmd->add_option("--out", out_dir, "Output directory"); };

  auto* validate = app.add_subcommand("validate", "Check mapping tables and print the model-count histogram");
  add_mapping(validate);

  auto* select = app.add_subcommand("select", "Apply the structure-selection rules to a cohort");
  select->add_option("--manifest", cfg.manifest, "Cohort manifest JSON")->required();
  add_mapping(select);
  select->add_option("--min-models", cfg.selection.min_models, "Minimum number of models per structure")
      ->check(CLI::PositiveNumber);
  select->add_option("--boundary-margin", cfg.selection.boundary_margin_slices, "Boundary band in slices")
      ->check(CLI::NonNegativeNumber);
  select->add_option("--coverage-fraction", cfg.selection.coverage_exclusion_fraction,
                     "Fraction of boundary-touching cases that excludes a structure")
      ->check(CLI::Range(0.0, 1.0));
  select->add_option("--include", cfg.include, "Exempt a structure from coverage exclusion (repeatable)");
  select->add_option("--exclude", cfg.exclude, "Force-exclude a structure (repeatable)");
  select->add_option("--selection", selection_path, "Selection output file (default <out>/selection.json)");
  select->add_option("--workers", cfg.workers, "Worker threads")->check(CLI::PositiveNumber);
  add_out(select);

  auto* analyze = app.add_subcommand("analyze", "Compute DSC and volume ratio against the consensus");
  analyze->add_option("--manifest", cfg.manifest, "Cohort manifest JSON")->required();
  add_mapping(analyze);
  analyze->add_option("--selection", selection_path, "Selection file (default <out>/selection.json)");
  analyze->add_option("--subset", subset_arg, "Comma-separated models to analyze");
  analyze->add_option("--workers", cfg.workers, "Worker threads")->check(CLI::PositiveNumber);
  add_out(analyze);

  auto* report = app.add_subcommand("report", "Emit the interactive HTML report");
  report->add_option("--results", results_path, "Results JSON (default <out>/results.json)");
  report->add_option("--groups", groups_path, "Anatomical groups JSON");
  report->add_option("--viewer-template", cfg.viewer_template,
                     "Viewer URL with {StudyInstanceUID}, {SeriesInstanceUID}, {PatientID}");
  report->add_option("--bundle", bundle_path, "Frontend script bundle to inline");
  report->add_flag("--deterministic", cfg.deterministic, "Freeze the generation timestamp");
  add_out(report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? concord::kExitOk : concord::kExitBadInput;
  }

  for (const auto& m : mapping_args) {
    const auto eq = m.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == m.size()) {
      std::cerr << "--mapping expects MODEL=PATH, got '" << m << "'\n";
      return concord::kExitBadInput;
    }
    cfg.mappings.emplace_back(m.substr(0, eq), m.substr(eq + 1));
  }
  if (!subset_arg.empty()) {
    const auto models = split_commas(subset_arg);
    cfg.subset = std::set<std::string>(models.begin(), models.end());
  }
  cfg.out_dir = out_dir;
  if (!selection_path.empty()) cfg.selection_file = selection_path;
  if (!results_path.empty()) cfg.results_file = results_path;
  if (!groups_path.empty()) cfg.groups = groups_path;
  if (!bundle_path.empty()) cfg.bundle = bundle_path;

  if (*validate) return concord::cmd_validate(cfg, std::cout, std::cerr);
  if (*select) return concord::cmd_select(cfg, std::cout, std::cerr);
  if (*analyze) return concord::cmd_analyze(cfg, std::cout, std::cerr);
  if (*report) return concord::cmd_report(cfg, std::cout, std::cerr);
  return concord::kExitBadInput;
}
