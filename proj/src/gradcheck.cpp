#include "trukan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace trukan {

GradcheckResult gradcheck(const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                          const GradcheckOptions& options) {
  for (Tensor& t : inputs) t.zero_grad();
  backward(loss());
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const Tensor& t : inputs) analytic.push_back(t.grad());

  GradcheckResult result;
  std::mt19937_64 rng(options.seed);
  NoGradGuard no_grad;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor& t = inputs[ti];
    std::vector<std::size_t> entries(t.size());
    std::iota(entries.begin(), entries.end(), 0);
    if (options.max_entries_per_tensor != 0 && entries.size() > options.max_entries_per_tensor) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.max_entries_per_tensor);
    }
    for (std::size_t e : entries) {
      double& v = t.data_mut()[e];
      const double saved = v;
      v = saved + options.step;
      const double up = loss().item();
      v = saved - options.step;
      const double down = loss().item();
      v = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[ti][e];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.scale_floor});
      const double err = std::abs(a - numeric) / denom;
      ++result.entries_checked;
      if (err > result.max_rel_error || result.worst.empty()) {
        result.max_rel_error = std::max(result.max_rel_error, err);
        if (err >= result.max_rel_error) result.worst = std::to_string(ti) + "[" + std::to_string(e) + "]";
      }
    }
  }
  for (Tensor& t : inputs) t.zero_grad();
  return result;
}

}  // namespace trukan
