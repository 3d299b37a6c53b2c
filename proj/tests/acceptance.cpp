// Acceptance run: one PASS/FAIL line per criterion. Exit status 0 only when all pass.
// HYPODENS_ACCEPTANCE_SCALE shrinks the Monte Carlo budgets for quick local runs.

#include "hypodens/acceptance.hpp"

#include <cstdlib>
#include <iostream>

int main(int argc, char** argv) {
  hypodens::acceptance::Options opt;
  if (const char* s = std::getenv("HYPODENS_ACCEPTANCE_SCALE")) opt.scale = std::atof(s);
  if (argc > 1) opt.out_dir = argv[1];
  hypodens::acceptance::Runner runner(opt);
  const auto results = runner.run_all(&std::cout);
  int failed = 0;
  for (const auto& r : results) failed += r.passed ? 0 : 1;
  for (const auto& r : results) std::cout << "criterion " << r.id << " runtime " << hypodens::fmt_num(r.runtime_s) << " s\n";
  std::cout << (12 - failed) << "/12 criteria passed\n";
  return failed == 0 ? 0 : 1;
}
