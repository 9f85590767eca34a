#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ttv/labeling_types.hpp"

namespace ttv {

// One trip's regression inputs: effective travel time (response), occupancy,
// approach hour (dummy-encoded), and an optional band for the augmented model.
struct TripObservation {
  std::string trip_id;
  int direction = 0;
  std::int64_t approach_ts = 0;
  double occupancy = 0;
  double eff_tt_s = 0;
  std::optional<TravelTimeBand> band;
};

// Band dummy parameterization. SumToZero keeps all four bands as effects
// constrained to sum to zero (High implied); DropReference drops the Low
// dummy. Band effect contrasts are identical under both.
enum class BandCoding { SumToZero, DropReference };

struct RegressionDesign {
  Eigen::MatrixXd X;  // n x p, first column is the intercept
  Eigen::VectorXd y;
  std::vector<std::string> columns;
  std::vector<std::string> trip_ids;          // row order
  std::vector<TravelTimeBand> bands_present;  // sorted; empty without bands
};

// Scope selects one direction (0 outbound, 1 inbound). Hour dummies cover the
// hours present in [6, 21] minus the earliest (reference); for the augmented
// model each observation must carry a band.
RegressionDesign build_design(const std::vector<TripObservation>& trips, int direction,
                              bool include_bands, BandCoding coding = BandCoding::SumToZero);

struct CoefficientStat {
  std::string name;
  double coef = 0;
  double se = 0;
  double t = 0;
  double p = 1;
  std::string stars;  // "**" p<0.05, "*" p<0.10
};

struct FitResult {
  std::vector<CoefficientStat> coefficients;  // column order, intercept first
  double r_squared = 0;
  double mae = 0;
  std::size_t n = 0;
  Eigen::VectorXd fitted;
};

// Least squares via column-pivoted QR; throws DesignError on rank deficiency
// (naming the redundant columns) and when n <= number of columns.
FitResult ols_fit(const RegressionDesign& design);

// Per-band effects centered to mean zero over the bands present in the
// design; bands without support come back as NaN. Identical for either
// coding.
std::array<double, kNumBands> band_effect_ladder(const RegressionDesign& design,
                                                 const FitResult& fit, BandCoding coding);

struct ScatterPoint {
  double actual = 0;
  double predicted = 0;
  std::string model;  // "ols" or "ols_plus"
};

struct ModelComparison {
  FitResult base;
  FitResult plus;
  double delta_r2 = 0;
  double delta_mae = 0;
  std::array<double, kNumBands> band_ladder{};
  std::vector<ScatterPoint> scatter;
};

// Fits the baseline and band-augmented models on identical rows (trips
// without a band are excluded from both).
ModelComparison compare_ols_vs_olsplus(const std::vector<TripObservation>& trips, int direction,
                                       BandCoding coding = BandCoding::SumToZero);

// Replaces each trip's band with the predicted band of the most recent
// preceding trip in the same direction; the first trip per direction is
// dropped.
std::vector<TripObservation> lookahead_bands(const std::vector<TripObservation>& trips);

}  // namespace ttv
