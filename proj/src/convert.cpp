#include "trukan/convert.hpp"

#include <algorithm>
#include <cmath>

#include "trukan/basis.hpp"
#include "trukan/error.hpp"

namespace trukan::convert {

namespace {

std::vector<double> grid_points(double lo, double hi, std::size_t n) {
  std::vector<double> xs(n);
  for (std::size_t s = 0; s < n; ++s) xs[s] = lo + (hi - lo) * static_cast<double>(s) / static_cast<double>(n - 1);
  return xs;
}

std::unique_ptr<nn::TruKANLayer> convert_layer(const nn::KANLayer& kan, double& max_condition) {
  const auto& kc = kan.config();
  const std::size_t g = kc.grid, in = kc.in, out = kc.out, n = kan.basis_count();
  nn::TruKANConfig tc;
  tc.in = in;
  tc.out = out;
  tc.grid = g + 1;
  tc.order = kc.order;
  tc.lo = kc.lo;
  tc.hi = kc.hi;
  auto layer = std::make_unique<nn::TruKANLayer>(tc);
  const auto knots = layer->knots_for(0);
  auto c = layer->coeffs().data_mut();
  auto a = layer->poly().data_mut();
  std::fill(c.begin(), c.end(), 0.0);
  std::fill(a.begin(), a.end(), 0.0);
  Tensor residual = Tensor::zeros(in, out);
  const std::size_t terms = static_cast<std::size_t>(kc.order.value()) + 1;
  std::vector<double> cb(n);
  for (std::size_t i = 0; i < in; ++i)
    for (std::size_t o = 0; o < out; ++o) {
      for (std::size_t j = 0; j < n; ++j) cb[j] = kan.coeffs().data()[(i * n + j) * out + o];
      const auto rep = basis::bspline_to_truncated(cb, kan.grid(), kc.order.value(), basis::ConversionDomain::Interior);
      max_condition = std::max(max_condition, rep.condition);
      const double scale = kan.effective_spline_scale(i, o);
      for (std::size_t r = 0; r < terms; ++r) a[(i * terms + r) * out + o] = scale * rep.poly[r];
      for (std::size_t q = 0; q < rep.knots.size(); ++q) {
        // Interior grid points coincide with knots 1 .. G-1 of the new layer.
        const auto it = std::min_element(knots.begin(), knots.end(), [&](double u, double v) {
          return std::abs(u - rep.knots[q]) < std::abs(v - rep.knots[q]);
        });
        if (std::abs(*it - rep.knots[q]) > 1e-12 * (kc.hi - kc.lo)) {
          throw NumericError("convert: interior knot " + std::to_string(rep.knots[q]) + " has no match");
        }
        c[(i * (g + 1) + static_cast<std::size_t>(it - knots.begin())) * out + o] = scale * rep.coeffs[q];
      }
      residual.data_mut()[i * out + o] = kan.effective_base_scale(i, o);
    }
  layer->set_silu_residual(residual);
  if (!kan.mask().empty()) layer->set_mask(kan.mask());
  return layer;
}

}  // namespace

ConvertResult kan_to_trukan(const nn::Network& net, const ConvertOptions& options) {
  if (options.samples < 2) throw ValueError("convert: need at least two samples");
  ConvertResult res;
  bool any = false;
  for (std::size_t l = 0; l < net.size(); ++l) {
    const auto* kan = dynamic_cast<const nn::KANLayer*>(&net.layer(l));
    if (!kan) {
      res.network.add(net.layer(l).clone(), net.stage(l));
      continue;
    }
    any = true;
    LayerDeviation dev{l, 0.0, {}};
    auto layer = convert_layer(*kan, dev.max_condition);
    for (std::size_t r = 0; r <= options.refinements; ++r) {
      const auto xs = grid_points(kan->config().lo, kan->config().hi, (options.samples - 1) * (std::size_t{1} << r) + 1);
      double worst = 0.0;
      for (std::size_t i = 0; i < kan->in_dim(); ++i)
        for (std::size_t o = 0; o < kan->out_dim(); ++o) {
          const auto ya = kan->edge_values(i, o, xs);
          const auto yb = layer->edge_values(i, o, xs);
          for (std::size_t s = 0; s < xs.size(); ++s) worst = std::max(worst, std::abs(ya[s] - yb[s]));
        }
      dev.max_deviation.push_back(worst);
    }
    res.max_deviation = std::max(res.max_deviation, dev.max_deviation.front());
    res.max_condition = std::max(res.max_condition, dev.max_condition);
    res.layers.push_back(std::move(dev));
    res.network.add(std::move(layer), net.stage(l));
  }
  if (!any) throw ValueError("convert: network has no B-spline KAN layer");
  res.network.head = net.head + "-converted";
  res.network.meta = net.meta;
  return res;
}

nlohmann::json ConvertResult::report() const {
  nlohmann::json layers_j = nlohmann::json::array();
  for (const auto& l : layers) {
    layers_j.push_back({{"layer", l.layer}, {"max_condition", l.max_condition}, {"max_deviation", l.max_deviation}});
  }
  return {{"format", "trukan-conversion-report"},
          {"version", 1},
          {"max_deviation", max_deviation},
          {"max_condition", max_condition},
          {"layers", std::move(layers_j)}};
}

}  // namespace trukan::convert
