#pragma once

#include <functional>
#include <string>
#include <vector>

#include "trukan/tensor.hpp"

namespace trukan {

struct GradcheckOptions {
  double step = 1e-5;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, scale_floor).
  double scale_floor = 1e-3;
  // Upper bound on checked entries per tensor (0 = all); picked with `seed`.
  std::size_t max_entries_per_tensor = 0;
  unsigned seed = 0;
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  std::string worst;  // "<tensor index>[<entry>]"
};

// Compares analytic gradients of a scalar loss against central finite
// differences. `loss` must rebuild the graph from the current values of
// `inputs` on each call.
GradcheckResult gradcheck(const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                          const GradcheckOptions& options = {});

}  // namespace trukan
