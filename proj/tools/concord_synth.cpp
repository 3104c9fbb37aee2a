// Writes a synthetic demo cohort (mapping tables, NIfTI label maps, manifest).

#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "support/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic multi-model segmentation cohort"};
  concord::test::SyntheticSpec spec;
  std::string out = "synthetic_cohort";
  std::int64_t size = 48;
  app.add_option("--out", out, "Output directory");
  app.add_option("--series", spec.series, "Number of series")->check(CLI::PositiveNumber);
  app.add_option("--models", spec.models, "Number of models")->check(CLI::PositiveNumber);
  app.add_option("--structures", spec.structures, "Number of structures")->check(CLI::PositiveNumber);
  app.add_option("--size", size, "Grid edge length in voxels")->check(CLI::Range(4, 1024));
  app.add_option("--seed", spec.seed, "Random seed");
  CLI11_PARSE(app, argc, argv);

  spec.dims = {size, size, size};
  const auto manifest = concord::test::write_synthetic_cohort(out, spec);
  std::cout << "wrote " << manifest.string() << '\n';
  return 0;
}
