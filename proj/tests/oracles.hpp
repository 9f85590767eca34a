#pragma once

// Independent reference implementations used to pin expected values in
// tests. Deliberately written with plain loops and containers so they share
// no code path with the library implementations they check.

#include <array>
#include <cstdint>
#include <vector>

#include "ttv/image.hpp"
#include "ttv/vit.hpp"

namespace oracles {

// Sort-and-interpolate percentile (linear interpolation between closest
// ranks), q in [0, 1].
double percentile(std::vector<double> values, double q);

// Great-circle distance by the spherical law of cosines (not haversine) on
// the same 6,371,000 m sphere.
double spherical_law_of_cosines_m(double lat1, double lon1, double lat2, double lon2);

struct MeanSd {
  double mean = 0;
  double sd = 0;
};
MeanSd mean_sd(const std::vector<double>& values, bool sample);

// 4x4 confusion counts (rows predicted, columns true) by direct counting.
std::array<std::array<long, 4>, 4> confusion_counts(const std::vector<int>& preds,
                                                    const std::vector<int>& truths);

// Ordinary least squares through explicitly formed normal equations solved
// by Gauss-Jordan elimination with partial pivoting.
std::vector<double> ols_normal_equations(const std::vector<std::vector<double>>& X,
                                         const std::vector<double>& y);

// Straight-line re-implementation of the transformer forward pass
// (patch embedding + positional embeddings, pre-norm attention and MLP
// blocks with residuals, final layer norm of the class token, linear head).
// Plain nested loops over std::vector<double>; reads parameter values
// coefficient-by-coefficient.
std::vector<double> vit_logits(const ttv::RasterFrame& frame, const ttv::ViTParameters& params,
                               const ttv::ViTConfig& config);

}  // namespace oracles
