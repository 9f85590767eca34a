#include "ttv/regress.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <set>

#include <boost/math/distributions/students_t.hpp>

#include "ttv/errors.hpp"
#include "ttv/timeutil.hpp"

namespace ttv {

RegressionDesign build_design(const std::vector<TripObservation>& trips, int direction,
                              bool include_bands, BandCoding coding) {
  std::vector<const TripObservation*> rows;
  for (const auto& t : trips) {
    if (t.direction != direction) continue;
    if (include_bands && !t.band) continue;
    rows.push_back(&t);
  }
  if (rows.empty()) throw DesignError("no observations in scope");

  // Hour dummies for the hours present within the acquisition window; the
  // earliest present hour is the reference and gets no column.
  std::set<int> hours;
  for (const auto* t : rows) {
    const int h = hour_of_ts(t->approach_ts);
    if (h >= 6 && h <= 21) hours.insert(h);
  }
  std::vector<int> dummy_hours(hours.begin(), hours.end());
  if (!dummy_hours.empty()) dummy_hours.erase(dummy_hours.begin());  // drop reference

  RegressionDesign d;
  if (include_bands) {
    std::set<TravelTimeBand> present;
    for (const auto* t : rows) present.insert(*t->band);
    d.bands_present.assign(present.begin(), present.end());
  }
  // Only bands with support get a column: SumToZero folds the highest
  // present band into the others as -1 rows, DropReference drops the lowest.
  std::vector<TravelTimeBand> band_columns;
  std::optional<TravelTimeBand> band_reference;
  if (include_bands && d.bands_present.size() >= 2) {
    if (coding == BandCoding::SumToZero) {
      band_reference = d.bands_present.back();
      band_columns.assign(d.bands_present.begin(), d.bands_present.end() - 1);
    } else {
      band_reference = d.bands_present.front();
      band_columns.assign(d.bands_present.begin() + 1, d.bands_present.end());
    }
  }
  static const char* kBandColNames[] = {"TTB_Low", "TTB_Mod", "TTB_Aav", "TTB_High"};

  d.columns.push_back("Intercept");
  d.columns.push_back("Occupancy");
  for (int h : dummy_hours) d.columns.push_back("Hour_" + std::to_string(h));
  const std::size_t band_col0 = d.columns.size();
  for (const auto band : band_columns) {
    d.columns.push_back(kBandColNames[static_cast<int>(band)]);
  }

  d.X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()),
                              static_cast<Eigen::Index>(d.columns.size()));
  d.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& t = *rows[i];
    d.trip_ids.push_back(t.trip_id);
    d.y(static_cast<Eigen::Index>(i)) = t.eff_tt_s;
    d.X(i, 0) = 1.0;
    d.X(i, 1) = t.occupancy;
    const int h = hour_of_ts(t.approach_ts);
    for (std::size_t j = 0; j < dummy_hours.size(); ++j) {
      if (h == dummy_hours[j]) d.X(i, 2 + static_cast<Eigen::Index>(j)) = 1.0;
    }
    if (include_bands && band_reference) {
      const TravelTimeBand band = *t.band;
      if (coding == BandCoding::SumToZero && band == *band_reference) {
        for (std::size_t j = 0; j < band_columns.size(); ++j) {
          d.X(i, band_col0 + j) = -1.0;
        }
      } else {
        for (std::size_t j = 0; j < band_columns.size(); ++j) {
          if (band_columns[j] == band) d.X(i, band_col0 + j) = 1.0;
        }
      }
    }
  }
  return d;
}

FitResult ols_fit(const RegressionDesign& design) {
  const Eigen::Index n = design.X.rows();
  const Eigen::Index p = design.X.cols();
  if (n <= p) {
    throw DesignError("need more observations (" + std::to_string(n) + ") than columns (" +
                      std::to_string(p) + ")");
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design.X);
  const Eigen::Index rank = qr.rank();
  if (rank < p) {
    // Columns pivoted beyond the rank are the redundant ones.
    const auto perm = qr.colsPermutation().indices();
    std::string names;
    for (Eigen::Index i = rank; i < p; ++i) {
      if (!names.empty()) names += ", ";
      names += design.columns[perm(i)];
    }
    throw DesignError("design is rank deficient; redundant columns: " + names);
  }

  FitResult fit;
  Eigen::VectorXd beta = qr.solve(design.y);
  fit.fitted = design.X * beta;
  const Eigen::VectorXd resid = design.y - fit.fitted;
  const double rss = resid.squaredNorm();
  const double df = static_cast<double>(n - rank);
  const double sigma2 = rss / df;

  const Eigen::MatrixXd xtx_inv = (design.X.transpose() * design.X).inverse();
  boost::math::students_t tdist(df);

  for (Eigen::Index j = 0; j < p; ++j) {
    CoefficientStat c;
    c.name = design.columns[j];
    c.coef = beta(j);
    c.se = std::sqrt(std::max(0.0, sigma2 * xtx_inv(j, j)));
    c.t = c.se > 0 ? c.coef / c.se : 0.0;
    c.p = c.se > 0 ? 2.0 * boost::math::cdf(boost::math::complement(tdist, std::abs(c.t))) : 1.0;
    c.stars = c.p < 0.05 ? "**" : (c.p < 0.10 ? "*" : "");
    fit.coefficients.push_back(std::move(c));
  }

  const double mean_y = design.y.mean();
  const double tss = (design.y.array() - mean_y).square().sum();
  fit.r_squared = tss > 1e-12 ? 1.0 - rss / tss : (rss < 1e-12 ? 1.0 : 0.0);
  fit.mae = resid.cwiseAbs().mean();
  fit.n = static_cast<std::size_t>(n);
  return fit;
}

std::array<double, kNumBands> band_effect_ladder(const RegressionDesign& design,
                                                 const FitResult& fit, BandCoding coding) {
  static const char* kBandColNames[] = {"TTB_Low", "TTB_Mod", "TTB_Aav", "TTB_High"};
  auto coef_of = [&](const std::string& name) -> double {
    for (const auto& c : fit.coefficients) {
      if (c.name == name) return c.coef;
    }
    throw DesignError("band column '" + name + "' missing from fit");
  };
  std::array<double, kNumBands> effects{};
  effects.fill(std::numeric_limits<double>::quiet_NaN());
  const auto& present = design.bands_present;
  if (present.size() < 2) return effects;

  double sum_named = 0;
  for (std::size_t k = 0; k < present.size(); ++k) {
    const bool is_reference = coding == BandCoding::SumToZero ? k + 1 == present.size() : k == 0;
    if (is_reference) continue;
    const double c = coef_of(kBandColNames[static_cast<int>(present[k])]);
    effects[static_cast<int>(present[k])] = c;
    sum_named += c;
  }
  const int ref_index = static_cast<int>(
      coding == BandCoding::SumToZero ? present.back() : present.front());
  effects[ref_index] = coding == BandCoding::SumToZero ? -sum_named : 0.0;

  double mean = 0;
  for (const auto band : present) mean += effects[static_cast<int>(band)];
  mean /= static_cast<double>(present.size());
  for (const auto band : present) effects[static_cast<int>(band)] -= mean;
  return effects;
}

ModelComparison compare_ols_vs_olsplus(const std::vector<TripObservation>& trips, int direction,
                                       BandCoding coding) {
  // Both models fit the same rows, so trips without bands are dropped first.
  std::vector<TripObservation> usable;
  for (const auto& t : trips) {
    if (t.direction == direction && t.band) usable.push_back(t);
  }
  const RegressionDesign base_design = build_design(usable, direction, false);
  const RegressionDesign plus_design = build_design(usable, direction, true, coding);
  if (base_design.trip_ids != plus_design.trip_ids) {
    throw DesignError("row mismatch between baseline and augmented designs");
  }

  ModelComparison cmp;
  cmp.base = ols_fit(base_design);
  cmp.plus = ols_fit(plus_design);
  cmp.delta_r2 = cmp.plus.r_squared - cmp.base.r_squared;
  cmp.delta_mae = cmp.plus.mae - cmp.base.mae;
  cmp.band_ladder = band_effect_ladder(plus_design, cmp.plus, coding);
  for (Eigen::Index i = 0; i < base_design.y.size(); ++i) {
    cmp.scatter.push_back({base_design.y(i), cmp.base.fitted(i), "ols"});
    cmp.scatter.push_back({plus_design.y(i), cmp.plus.fitted(i), "ols_plus"});
  }
  return cmp;
}

std::vector<TripObservation> lookahead_bands(const std::vector<TripObservation>& trips) {
  std::vector<const TripObservation*> ordered;
  for (const auto& t : trips) ordered.push_back(&t);
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) {
    return a->approach_ts < b->approach_ts;
  });

  std::vector<TripObservation> out;
  std::array<std::optional<TravelTimeBand>, 2> previous;
  for (const auto* t : ordered) {
    const int d = t->direction == 1 ? 1 : 0;
    const auto prev = previous[d];
    previous[d] = t->band;
    if (!prev) continue;  // first trip per direction has no look-ahead source
    TripObservation shifted = *t;
    shifted.band = prev;
    out.push_back(std::move(shifted));
  }
  return out;
}

}  // namespace ttv
