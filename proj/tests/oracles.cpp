#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oracles {

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("empty");
  std::sort(values.begin(), values.end());
  const double rank = q * (static_cast<double>(values.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(rank);
  const std::size_t hi = lo + 1 < values.size() ? lo + 1 : lo;
  const double frac = rank - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

double spherical_law_of_cosines_m(double lat1, double lon1, double lat2, double lon2) {
  const double rad = M_PI / 180.0;
  const double p1 = lat1 * rad, p2 = lat2 * rad;
  const double dl = (lon2 - lon1) * rad;
  double c = std::sin(p1) * std::sin(p2) + std::cos(p1) * std::cos(p2) * std::cos(dl);
  c = std::max(-1.0, std::min(1.0, c));
  return 6371000.0 * std::acos(c);
}

MeanSd mean_sd(const std::vector<double>& values, bool sample) {
  MeanSd r;
  for (double v : values) r.mean += v;
  r.mean /= static_cast<double>(values.size());
  double ss = 0;
  for (double v : values) ss += (v - r.mean) * (v - r.mean);
  const double denom =
      sample && values.size() > 1 ? values.size() - 1.0 : static_cast<double>(values.size());
  r.sd = std::sqrt(ss / denom);
  return r;
}

std::array<std::array<long, 4>, 4> confusion_counts(const std::vector<int>& preds,
                                                    const std::vector<int>& truths) {
  std::array<std::array<long, 4>, 4> counts{};
  for (std::size_t i = 0; i < preds.size(); ++i) counts[preds[i]][truths[i]] += 1;
  return counts;
}

std::vector<double> ols_normal_equations(const std::vector<std::vector<double>>& X,
                                         const std::vector<double>& y) {
  const std::size_t n = X.size();
  const std::size_t p = X[0].size();
  // A = X'X, b = X'y
  std::vector<std::vector<double>> A(p, std::vector<double>(p + 1, 0.0));
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      double s = 0;
      for (std::size_t r = 0; r < n; ++r) s += X[r][i] * X[r][j];
      A[i][j] = s;
    }
    double s = 0;
    for (std::size_t r = 0; r < n; ++r) s += X[r][i] * y[r];
    A[i][p] = s;
  }
  // Gauss-Jordan with partial pivoting on the augmented system.
  for (std::size_t col = 0; col < p; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < p; ++r) {
      if (std::abs(A[r][col]) > std::abs(A[pivot][col])) pivot = r;
    }
    std::swap(A[col], A[pivot]);
    if (std::abs(A[col][col]) < 1e-12) throw std::runtime_error("singular system");
    const double d = A[col][col];
    for (std::size_t j = col; j <= p; ++j) A[col][j] /= d;
    for (std::size_t r = 0; r < p; ++r) {
      if (r == col) continue;
      const double f = A[r][col];
      for (std::size_t j = col; j <= p; ++j) A[r][j] -= f * A[col][j];
    }
  }
  std::vector<double> beta(p);
  for (std::size_t i = 0; i < p; ++i) beta[i] = A[i][p];
  return beta;
}

namespace {

using Grid = std::vector<std::vector<double>>;  // rows of doubles

Grid matmul(const Grid& a, const Grid& b) {
  const std::size_t n = a.size(), k = b.size(), m = b[0].size();
  Grid c(n, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      for (std::size_t j = 0; j < m; ++j) c[i][j] += a[i][t] * b[t][j];
    }
  }
  return c;
}

Grid from_eigen(const ttv::Mat& m) {
  Grid g(m.rows(), std::vector<double>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) g[r][c] = m(r, c);
  }
  return g;
}

std::vector<double> col0(const ttv::Mat& m) {
  std::vector<double> v(m.rows());
  for (Eigen::Index r = 0; r < m.rows(); ++r) v[r] = m(r, 0);
  return v;
}

std::vector<double> layer_norm(const std::vector<double>& x, const std::vector<double>& scale,
                               const std::vector<double>& shift) {
  const std::size_t d = x.size();
  double mu = 0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(d);
  double var = 0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(d);
  const double istd = 1.0 / std::sqrt(var + 1e-6);
  std::vector<double> out(d);
  for (std::size_t i = 0; i < d; ++i) out[i] = (x[i] - mu) * istd * scale[i] + shift[i];
  return out;
}

Grid linear(const Grid& x, const Grid& w, const std::vector<double>& b) {
  Grid out = matmul(x, w);
  for (auto& row : out) {
    for (std::size_t j = 0; j < b.size(); ++j) row[j] += b[j];
  }
  return out;
}

void softmax_row(std::vector<double>& row) {
  double mx = row[0];
  for (double v : row) mx = std::max(mx, v);
  double sum = 0;
  for (double& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : row) v /= sum;
}

}  // namespace

std::vector<double> vit_logits(const ttv::RasterFrame& frame, const ttv::ViTParameters& params,
                               const ttv::ViTConfig& config) {
  const int P = config.patch_size;
  const int gw = config.image_w / P, gh = config.image_h / P;
  const int N = gw * gh;
  const int D = config.latent_dim;
  const int heads = config.num_heads;
  const int dh = D / heads;

  // Patches, raster-scan order, normalized then standardized.
  Grid xp(N, std::vector<double>(P * P * 3));
  for (int py = 0; py < gh; ++py) {
    for (int px = 0; px < gw; ++px) {
      int col = 0;
      for (int y = 0; y < P; ++y) {
        for (int x = 0; x < P; ++x) {
          for (int c = 0; c < 3; ++c) {
            const double v = frame.at(px * P + x, py * P + y, c) / 255.0;
            xp[py * gw + px][col++] = (v - config.channel_mean[c]) / config.channel_sd[c];
          }
        }
      }
    }
  }

  // z0 = [class; xp E] + E_pos
  const Grid E = from_eigen(params.patch_proj);
  Grid z(N + 1, std::vector<double>(D, 0.0));
  const std::vector<double> cls = col0(params.class_token);
  for (int j = 0; j < D; ++j) z[0][j] = cls[j];
  const Grid proj = matmul(xp, E);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < D; ++j) z[i + 1][j] = proj[i][j];
  }
  for (int i = 0; i <= N; ++i) {
    for (int j = 0; j < D; ++j) z[i][j] += params.pos_embedding(i, j);
  }

  for (int li = 0; li < config.num_layers; ++li) {
    const auto& lp = params.layers[li];
    const std::vector<double> g1 = col0(lp.ln1_scale), b1 = col0(lp.ln1_shift);
    Grid a(N + 1);
    for (int i = 0; i <= N; ++i) a[i] = layer_norm(z[i], g1, b1);

    const Grid q = linear(a, from_eigen(lp.wq), col0(lp.bq));
    const Grid k = linear(a, from_eigen(lp.wk), col0(lp.bk));
    const Grid v = linear(a, from_eigen(lp.wv), col0(lp.bv));

    Grid concat(N + 1, std::vector<double>(D, 0.0));
    for (int h = 0; h < heads; ++h) {
      for (int i = 0; i <= N; ++i) {
        std::vector<double> scores(N + 1, 0.0);
        for (int j = 0; j <= N; ++j) {
          double s = 0;
          for (int t = 0; t < dh; ++t) s += q[i][h * dh + t] * k[j][h * dh + t];
          scores[j] = s / std::sqrt(static_cast<double>(dh));
        }
        softmax_row(scores);
        for (int t = 0; t < dh; ++t) {
          double o = 0;
          for (int j = 0; j <= N; ++j) o += scores[j] * v[j][h * dh + t];
          concat[i][h * dh + t] = o;
        }
      }
    }
    const Grid msa = linear(concat, from_eigen(lp.wo), col0(lp.bo));
    for (int i = 0; i <= N; ++i) {
      for (int j = 0; j < D; ++j) z[i][j] += msa[i][j];
    }

    const std::vector<double> g2 = col0(lp.ln2_scale), b2 = col0(lp.ln2_shift);
    Grid m(N + 1);
    for (int i = 0; i <= N; ++i) m[i] = layer_norm(z[i], g2, b2);
    Grid h1 = linear(m, from_eigen(lp.mlp_w1), col0(lp.mlp_b1));
    for (auto& row : h1) {
      for (double& x : row) x = x * 0.5 * std::erfc(-x / std::sqrt(2.0));
    }
    const Grid h2 = linear(h1, from_eigen(lp.mlp_w2), col0(lp.mlp_b2));
    for (int i = 0; i <= N; ++i) {
      for (int j = 0; j < D; ++j) z[i][j] += h2[i][j];
    }
  }

  const std::vector<double> y =
      layer_norm(z[0], col0(params.ln_f_scale), col0(params.ln_f_shift));
  std::vector<double> logits(config.num_classes, 0.0);
  for (int c = 0; c < config.num_classes; ++c) {
    double s = params.head_b(c, 0);
    for (int j = 0; j < D; ++j) s += y[j] * params.head_w(j, c);
    logits[c] = s;
  }
  return logits;
}

}  // namespace oracles
