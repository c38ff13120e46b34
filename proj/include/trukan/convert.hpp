#pragma once

#include <vector>

#include <json.hpp>

#include "trukan/network.hpp"

namespace trukan::convert {

struct ConvertOptions {
  std::size_t samples = 1000;    // base evaluation grid per edge over [lo, hi]
  std::size_t refinements = 3;   // nested grids with (samples - 1) * 2^r + 1 points
};

struct LayerDeviation {
  std::size_t layer = 0;
  double max_condition = 0.0;
  // Max |KAN edge - converted edge| over the r-th nested grid, every edge.
  std::vector<double> max_deviation;
};

struct ConvertResult {
  nn::Network network;
  std::vector<LayerDeviation> layers;
  double max_deviation = 0.0;  // over the base grid
  double max_condition = 0.0;

  nlohmann::json report() const;
};

// Replaces every B-spline KAN layer by an equivalent truncated-power layer:
// G + 1 fixed knots on the grid points, spline scale folded into the
// coefficients and the SiLU branch kept as a frozen residual. Equivalence
// holds on the grid range [lo, hi]. Throws ValueError when the network has no
// KAN layer and NumericError for an ill-conditioned conversion.
ConvertResult kan_to_trukan(const nn::Network& net, const ConvertOptions& options = {});

}  // namespace trukan::convert
