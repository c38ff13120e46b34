#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trukan/gradcheck.hpp"

namespace trukan {

struct GradSuiteRow {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  std::size_t trials = 0;
  std::string worst;
};

// Central-difference checks of every layer kind (all parameter tensors plus
// the input) and both losses. Each trial reseeds inputs and parameters.
std::vector<GradSuiteRow> gradient_suite(std::size_t trials, std::uint64_t seed = 0,
                                         const GradcheckOptions& options = {});
std::vector<std::string> gradient_suite_cases();

}  // namespace trukan
