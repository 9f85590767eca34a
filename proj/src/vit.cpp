#include "ttv/vit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include "ttv/errors.hpp"

namespace ttv {

namespace {

constexpr double kLnEps = 1e-6;

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

double gelu(double x) { return x * norm_cdf(x); }
double gelu_grad(double x) { return norm_cdf(x) + x * norm_pdf(x); }

Vec softmax(const Vec& logits) {
  const double m = logits.maxCoeff();
  Vec e = (logits.array() - m).exp();
  return e / e.sum();
}

// Row-wise softmax in place.
void softmax_rows(Mat& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double m = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - m).exp();
    s.row(r) /= s.row(r).sum();
  }
}

double trunc_normal_draw(Rng& rng, double sd) {
  for (int i = 0; i < 16; ++i) {
    const double v = rng.normal(0.0, sd);
    if (std::abs(v) <= 2.0 * sd) return v;
  }
  return 0.0;
}

Mat trunc_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols, double sd = 0.02) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = trunc_normal_draw(rng, sd);
  }
  return m;
}

}  // namespace

void ViTConfig::validate() const {
  if (image_h <= 0 || image_w <= 0) throw ArgumentError("image dimensions must be positive");
  if (channels != 3) throw ArgumentError("channels must be 3");
  if (patch_size <= 0) throw ArgumentError("patch size must be positive");
  if (image_h % patch_size != 0 || image_w % patch_size != 0) {
    throw ArgumentError("image dimensions must be divisible by patch size");
  }
  if (latent_dim <= 0 || num_layers <= 0 || num_heads <= 0 || mlp_hidden_dim <= 0) {
    throw ArgumentError("latent_dim, num_layers, num_heads, mlp_hidden_dim must be positive");
  }
  if (latent_dim % num_heads != 0) {
    throw ArgumentError("latent_dim must be divisible by num_heads");
  }
  if (num_classes != 4) throw ArgumentError("num_classes must be 4");
  if (dropout_p < 0.0 || dropout_p > 0.25) {
    throw ArgumentError("dropout_p outside [0, 0.25]");
  }
  for (double s : channel_sd) {
    if (s <= 0) throw ArgumentError("channel sd must be positive");
  }
}

ViTParameters ViTParameters::init(const ViTConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const int D = config.latent_dim;
  ViTParameters p;
  p.patch_proj = trunc_normal(rng, config.patch_dim(), D);
  p.pos_embedding = trunc_normal(rng, config.tokens(), D);
  p.class_token = trunc_normal(rng, D, 1);
  p.layers.resize(config.num_layers);
  for (auto& l : p.layers) {
    l.ln1_scale = Mat::Ones(D, 1);
    l.ln1_shift = Mat::Zero(D, 1);
    l.wq = trunc_normal(rng, D, D);
    l.bq = Mat::Zero(D, 1);
    l.wk = trunc_normal(rng, D, D);
    l.bk = Mat::Zero(D, 1);
    l.wv = trunc_normal(rng, D, D);
    l.bv = Mat::Zero(D, 1);
    l.wo = trunc_normal(rng, D, D);
    l.bo = Mat::Zero(D, 1);
    l.ln2_scale = Mat::Ones(D, 1);
    l.ln2_shift = Mat::Zero(D, 1);
    l.mlp_w1 = trunc_normal(rng, D, config.mlp_hidden_dim);
    l.mlp_b1 = Mat::Zero(config.mlp_hidden_dim, 1);
    l.mlp_w2 = trunc_normal(rng, config.mlp_hidden_dim, D);
    l.mlp_b2 = Mat::Zero(D, 1);
  }
  p.ln_f_scale = Mat::Ones(D, 1);
  p.ln_f_shift = Mat::Zero(D, 1);
  p.head_w = trunc_normal(rng, D, config.num_classes);
  p.head_b = Mat::Zero(config.num_classes, 1);
  return p;
}

ViTParameters ViTParameters::zeros_like(const ViTParameters& other) {
  ViTParameters p = other;
  for (auto& [name, mat] : param_refs(p)) mat->setZero();
  return p;
}

bool ViTParameters::all_finite() const {
  for (const auto& [name, mat] : param_refs(*this)) {
    if (!mat->allFinite()) return false;
  }
  return true;
}

std::vector<std::pair<std::string, Mat*>> param_refs(ViTParameters& p) {
  std::vector<std::pair<std::string, Mat*>> refs;
  refs.emplace_back("patch_proj", &p.patch_proj);
  refs.emplace_back("pos_embedding", &p.pos_embedding);
  refs.emplace_back("class_token", &p.class_token);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    const std::string pre = "layer" + std::to_string(i) + ".";
    refs.emplace_back(pre + "ln1_scale", &l.ln1_scale);
    refs.emplace_back(pre + "ln1_shift", &l.ln1_shift);
    refs.emplace_back(pre + "wq", &l.wq);
    refs.emplace_back(pre + "bq", &l.bq);
    refs.emplace_back(pre + "wk", &l.wk);
    refs.emplace_back(pre + "bk", &l.bk);
    refs.emplace_back(pre + "wv", &l.wv);
    refs.emplace_back(pre + "bv", &l.bv);
    refs.emplace_back(pre + "wo", &l.wo);
    refs.emplace_back(pre + "bo", &l.bo);
    refs.emplace_back(pre + "ln2_scale", &l.ln2_scale);
    refs.emplace_back(pre + "ln2_shift", &l.ln2_shift);
    refs.emplace_back(pre + "mlp_w1", &l.mlp_w1);
    refs.emplace_back(pre + "mlp_b1", &l.mlp_b1);
    refs.emplace_back(pre + "mlp_w2", &l.mlp_w2);
    refs.emplace_back(pre + "mlp_b2", &l.mlp_b2);
  }
  refs.emplace_back("ln_f_scale", &p.ln_f_scale);
  refs.emplace_back("ln_f_shift", &p.ln_f_shift);
  refs.emplace_back("head_w", &p.head_w);
  refs.emplace_back("head_b", &p.head_b);
  return refs;
}

std::vector<std::pair<std::string, const Mat*>> param_refs(const ViTParameters& p) {
  auto refs = param_refs(const_cast<ViTParameters&>(p));
  std::vector<std::pair<std::string, const Mat*>> out;
  out.reserve(refs.size());
  for (auto& [name, mat] : refs) out.emplace_back(name, mat);
  return out;
}

Mat patchify(const RasterFrame& frame, const ViTConfig& config) {
  config.validate();
  if (frame.width != config.image_w || frame.height != config.image_h || frame.channels != 3) {
    throw ArgumentError("patchify: frame dimensions do not match config");
  }
  const int P = config.patch_size;
  Mat patches(config.num_patches(), config.patch_dim());
  for (int py = 0; py < config.grid_h(); ++py) {
    for (int px = 0; px < config.grid_w(); ++px) {
      const int row = py * config.grid_w() + px;
      int col = 0;
      for (int y = 0; y < P; ++y) {
        for (int x = 0; x < P; ++x) {
          for (int c = 0; c < 3; ++c) {
            const double v = frame.at(px * P + x, py * P + y, c) / 255.0;
            patches(row, col++) = (v - config.channel_mean[c]) / config.channel_sd[c];
          }
        }
      }
    }
  }
  return patches;
}

RasterFrame unpatchify(const Mat& patches, const ViTConfig& config) {
  config.validate();
  if (patches.rows() != config.num_patches() || patches.cols() != config.patch_dim()) {
    throw ArgumentError("unpatchify: patch matrix shape mismatch");
  }
  const int P = config.patch_size;
  RasterFrame frame(config.image_w, config.image_h);
  for (int py = 0; py < config.grid_h(); ++py) {
    for (int px = 0; px < config.grid_w(); ++px) {
      const int row = py * config.grid_w() + px;
      int col = 0;
      for (int y = 0; y < P; ++y) {
        for (int x = 0; x < P; ++x) {
          for (int c = 0; c < 3; ++c) {
            const double v =
                (patches(row, col++) * config.channel_sd[c] + config.channel_mean[c]) * 255.0;
            frame.at(px * P + x, py * P + y, c) =
                static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
          }
        }
      }
    }
  }
  return frame;
}

namespace {

// Per-row layer norm; returns the normalized-and-affine output and stores
// xhat plus the inverse stddev for the backward pass.
Mat layernorm_rows(const Mat& x, const Mat& scale, const Mat& shift, Mat* xhat_out,
                   Vec* istd_out) {
  const Eigen::Index T = x.rows(), D = x.cols();
  Mat out(T, D);
  Mat xhat(T, D);
  Vec istd(T);
  for (Eigen::Index r = 0; r < T; ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + kLnEps);
    xhat.row(r) = (x.row(r).array() - mu) * is;
    out.row(r) = xhat.row(r).cwiseProduct(scale.transpose().row(0)) + shift.transpose().row(0);
    istd(r) = is;
  }
  if (xhat_out) *xhat_out = std::move(xhat);
  if (istd_out) *istd_out = std::move(istd);
  return out;
}

// Backward through row-wise layer norm. Accumulates parameter gradients and
// returns dx.
Mat layernorm_rows_backward(const Mat& dy, const Mat& xhat, const Vec& istd, const Mat& scale,
                            Mat* dscale, Mat* dshift) {
  const Eigen::Index T = dy.rows(), D = dy.cols();
  Mat dx(T, D);
  for (Eigen::Index r = 0; r < T; ++r) {
    const auto dyr = dy.row(r);
    const auto xh = xhat.row(r);
    if (dscale) dscale->col(0).noalias() += dyr.cwiseProduct(xh).transpose();
    if (dshift) dshift->col(0).noalias() += dyr.transpose();
    Eigen::RowVectorXd dxhat = dyr.cwiseProduct(scale.transpose().row(0));
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(xh).mean();
    dx.row(r) = (dxhat.array() - m1 - xh.array() * m2) * istd(r);
  }
  return dx;
}

struct LayerCache {
  Mat z_in;
  Mat ln1_xhat, ln1_out;
  Vec ln1_istd;
  Mat q, k, v;
  std::vector<Mat> attn;  // per head
  Mat heads_concat;
  Mat msa_out;  // after output projection, pre-dropout
  Mat msa_mask;
  Mat z_mid;
  Mat ln2_xhat, ln2_out;
  Vec ln2_istd;
  Mat h1, act;
  Mat mlp_mask;
};

struct ForwardCache {
  Mat patches;
  Mat z0;  // post-dropout embedding
  Mat emb_mask;
  std::vector<LayerCache> layers;
  Eigen::RowVectorXd lnf_xhat;
  double lnf_istd = 0;
  Vec y;
  Vec logits;
  Vec probs;
};

Mat dropout_mask(Rng& rng, Eigen::Index rows, Eigen::Index cols, double p) {
  Mat m(rows, cols);
  const double keep = 1.0 - p;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    }
  }
  return m;
}

void forward_impl(const Mat& patches, const ViTParameters& params, const ViTConfig& config,
                  RunMode mode, std::uint64_t dropout_seed, ForwardCache* cache,
                  AttentionMap* attention) {
  const int T = config.tokens();
  const int D = config.latent_dim;
  const int heads = config.num_heads;
  const int dh = D / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool drop = mode == RunMode::Train && config.dropout_p > 0;
  Rng drop_rng(dropout_seed);

  cache->patches = patches;
  Mat z(T, D);
  z.row(0) = params.class_token.col(0).transpose();
  z.bottomRows(T - 1).noalias() = patches * params.patch_proj;
  z += params.pos_embedding;
  if (drop) {
    cache->emb_mask = dropout_mask(drop_rng, T, D, config.dropout_p);
    z = z.cwiseProduct(cache->emb_mask);
  }
  cache->z0 = z;

  if (attention) {
    attention->per_layer_head.assign(config.num_layers, {});
    attention->grid_h = config.grid_h();
    attention->grid_w = config.grid_w();
  }

  cache->layers.resize(config.num_layers);
  for (int li = 0; li < config.num_layers; ++li) {
    auto& lc = cache->layers[li];
    const auto& lp = params.layers[li];
    lc.z_in = z;
    lc.ln1_out = layernorm_rows(z, lp.ln1_scale, lp.ln1_shift, &lc.ln1_xhat, &lc.ln1_istd);

    lc.q.noalias() = lc.ln1_out * lp.wq;
    lc.q.rowwise() += lp.bq.col(0).transpose();
    lc.k.noalias() = lc.ln1_out * lp.wk;
    lc.k.rowwise() += lp.bk.col(0).transpose();
    lc.v.noalias() = lc.ln1_out * lp.wv;
    lc.v.rowwise() += lp.bv.col(0).transpose();

    lc.attn.resize(heads);
    lc.heads_concat.resize(T, D);
    for (int h = 0; h < heads; ++h) {
      const auto qh = lc.q.middleCols(h * dh, dh);
      const auto kh = lc.k.middleCols(h * dh, dh);
      const auto vh = lc.v.middleCols(h * dh, dh);
      Mat s = qh * kh.transpose() * scale;
      softmax_rows(s);
      lc.heads_concat.middleCols(h * dh, dh).noalias() = s * vh;
      lc.attn[h] = std::move(s);
      if (attention) attention->per_layer_head[li].push_back(lc.attn[h]);
    }

    lc.msa_out.noalias() = lc.heads_concat * lp.wo;
    lc.msa_out.rowwise() += lp.bo.col(0).transpose();
    if (drop) {
      lc.msa_mask = dropout_mask(drop_rng, T, D, config.dropout_p);
      lc.z_mid = lc.z_in + lc.msa_out.cwiseProduct(lc.msa_mask);
    } else {
      lc.z_mid = lc.z_in + lc.msa_out;
    }

    lc.ln2_out = layernorm_rows(lc.z_mid, lp.ln2_scale, lp.ln2_shift, &lc.ln2_xhat, &lc.ln2_istd);
    lc.h1.noalias() = lc.ln2_out * lp.mlp_w1;
    lc.h1.rowwise() += lp.mlp_b1.col(0).transpose();
    lc.act = lc.h1.unaryExpr([](double x) { return gelu(x); });
    Mat mlp_out = lc.act * lp.mlp_w2;
    mlp_out.rowwise() += lp.mlp_b2.col(0).transpose();
    if (drop) {
      lc.mlp_mask = dropout_mask(drop_rng, T, D, config.dropout_p);
      z = lc.z_mid + mlp_out.cwiseProduct(lc.mlp_mask);
    } else {
      z = lc.z_mid + mlp_out;
    }
  }

  // Final representation: layer norm of the class-token output.
  const Eigen::RowVectorXd z_cls = z.row(0);
  const double mu = z_cls.mean();
  const double var = (z_cls.array() - mu).square().mean();
  cache->lnf_istd = 1.0 / std::sqrt(var + kLnEps);
  cache->lnf_xhat = (z_cls.array() - mu) * cache->lnf_istd;
  cache->y = (cache->lnf_xhat.cwiseProduct(params.ln_f_scale.col(0).transpose()) +
              params.ln_f_shift.col(0).transpose())
                 .transpose();

  cache->logits = params.head_w.transpose() * cache->y + params.head_b.col(0);
  cache->probs = softmax(cache->logits);

  if (attention) {
    // Class-token row of the last layer, averaged over heads.
    const auto& last = cache->layers.back().attn;
    const int n = config.num_patches();
    std::vector<double> avg(n, 0.0);
    for (const auto& a : last) {
      for (int j = 0; j < n; ++j) avg[j] += a(0, j + 1);
    }
    for (auto& v : avg) v /= static_cast<double>(last.size());
    const auto [mn_it, mx_it] = std::minmax_element(avg.begin(), avg.end());
    const double lo = *mn_it, span = *mx_it - *mn_it;
    for (auto& v : avg) v = span > 0 ? (v - lo) / span : 0.5;
    attention->averaged_spatial = std::move(avg);
  }
}

// Backward for one sample; accumulates weighted parameter gradients.
void backward_impl(const ForwardCache& cache, const ViTParameters& params,
                   const ViTConfig& config, int label, double weight, ViTParameters* grads) {
  const int T = config.tokens();
  const int D = config.latent_dim;
  const int heads = config.num_heads;
  const int dh = D / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Vec dlogits = cache.probs * weight;
  dlogits(label) -= weight;

  grads->head_w.noalias() += cache.y * dlogits.transpose();
  grads->head_b.col(0) += dlogits;
  Eigen::RowVectorXd dy = (params.head_w * dlogits).transpose();

  // Final LN over the class token row.
  grads->ln_f_scale.col(0) += dy.cwiseProduct(cache.lnf_xhat).transpose();
  grads->ln_f_shift.col(0) += dy.transpose();
  Eigen::RowVectorXd dxhat = dy.cwiseProduct(params.ln_f_scale.col(0).transpose());
  const double m1 = dxhat.mean();
  const double m2 = dxhat.cwiseProduct(cache.lnf_xhat).mean();
  Mat dz = Mat::Zero(T, D);
  dz.row(0) = (dxhat.array() - m1 - cache.lnf_xhat.array() * m2) * cache.lnf_istd;

  for (int li = config.num_layers - 1; li >= 0; --li) {
    const auto& lc = cache.layers[li];
    const auto& lp = params.layers[li];
    auto& lg = grads->layers[li];

    // MLP sub-block: z_out = z_mid + drop(mlp(ln2(z_mid)))
    Mat dmlp_out = lc.mlp_mask.size() ? dz.cwiseProduct(lc.mlp_mask) : dz;
    Mat dz_mid = dz;

    lg.mlp_w2.noalias() += lc.act.transpose() * dmlp_out;
    lg.mlp_b2.col(0) += dmlp_out.colwise().sum().transpose();
    Mat dact = dmlp_out * lp.mlp_w2.transpose();
    Mat dh1 = dact.cwiseProduct(lc.h1.unaryExpr([](double x) { return gelu_grad(x); }));
    lg.mlp_w1.noalias() += lc.ln2_out.transpose() * dh1;
    lg.mlp_b1.col(0) += dh1.colwise().sum().transpose();
    Mat dln2 = dh1 * lp.mlp_w1.transpose();
    dz_mid += layernorm_rows_backward(dln2, lc.ln2_xhat, lc.ln2_istd, lp.ln2_scale, &lg.ln2_scale,
                                      &lg.ln2_shift);

    // Attention sub-block: z_mid = z_in + drop(msa(ln1(z_in)))
    Mat dmsa_out = lc.msa_mask.size() ? dz_mid.cwiseProduct(lc.msa_mask) : dz_mid;
    Mat dz_in = dz_mid;

    lg.wo.noalias() += lc.heads_concat.transpose() * dmsa_out;
    lg.bo.col(0) += dmsa_out.colwise().sum().transpose();
    Mat dheads = dmsa_out * lp.wo.transpose();

    Mat dq(T, D), dk(T, D), dv(T, D);
    for (int h = 0; h < heads; ++h) {
      const auto vh = lc.v.middleCols(h * dh, dh);
      const auto qh = lc.q.middleCols(h * dh, dh);
      const auto kh = lc.k.middleCols(h * dh, dh);
      const auto& a = lc.attn[h];
      const auto doh = dheads.middleCols(h * dh, dh);
      Mat da = doh * vh.transpose();
      dv.middleCols(h * dh, dh).noalias() = a.transpose() * doh;
      // Softmax rows backward.
      Mat ds(T, T);
      for (int r = 0; r < T; ++r) {
        const double dot = da.row(r).cwiseProduct(a.row(r)).sum();
        ds.row(r) = (a.row(r).array() * (da.row(r).array() - dot)).matrix();
      }
      dq.middleCols(h * dh, dh).noalias() = ds * kh * scale;
      dk.middleCols(h * dh, dh).noalias() = ds.transpose() * qh * scale;
    }

    lg.wq.noalias() += lc.ln1_out.transpose() * dq;
    lg.bq.col(0) += dq.colwise().sum().transpose();
    lg.wk.noalias() += lc.ln1_out.transpose() * dk;
    lg.bk.col(0) += dk.colwise().sum().transpose();
    lg.wv.noalias() += lc.ln1_out.transpose() * dv;
    lg.bv.col(0) += dv.colwise().sum().transpose();

    Mat dln1 = dq * lp.wq.transpose() + dk * lp.wk.transpose() + dv * lp.wv.transpose();
    dz_in += layernorm_rows_backward(dln1, lc.ln1_xhat, lc.ln1_istd, lp.ln1_scale, &lg.ln1_scale,
                                     &lg.ln1_shift);
    dz = std::move(dz_in);
  }

  Mat dz0 = cache.emb_mask.size() ? dz.cwiseProduct(cache.emb_mask) : dz;
  grads->pos_embedding += dz0;
  grads->class_token.col(0) += dz0.row(0).transpose();
  grads->patch_proj.noalias() += cache.patches.transpose() * dz0.bottomRows(T - 1);
}

}  // namespace

ForwardResult forward_patches(const Mat& patches, const ViTParameters& params,
                              const ViTConfig& config, RunMode mode, std::uint64_t dropout_seed) {
  config.validate();
  if (!params.all_finite()) throw TrainingError("non-finite parameter in forward pass");
  ForwardCache cache;
  ForwardResult result;
  forward_impl(patches, params, config, mode, dropout_seed, &cache, &result.attention);
  result.logits = cache.logits;
  result.probabilities = cache.probs;
  return result;
}

ForwardResult forward(const RasterFrame& frame, const ViTParameters& params,
                      const ViTConfig& config, RunMode mode, std::uint64_t dropout_seed) {
  return forward_patches(patchify(frame, config), params, config, mode, dropout_seed);
}

GradResult loss_and_gradients(const std::vector<const RasterFrame*>& frames,
                              const std::vector<int>& labels, const ViTParameters& params,
                              const ViTConfig& config, std::uint64_t dropout_seed) {
  config.validate();
  if (frames.empty()) throw ArgumentError("loss_and_gradients: empty batch");
  if (frames.size() != labels.size()) throw ArgumentError("batch/label size mismatch");
  if (!params.all_finite()) throw TrainingError("non-finite parameter before gradient step");

  GradResult result;
  result.grads = ViTParameters::zeros_like(params);
  const double w = 1.0 / static_cast<double>(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= config.num_classes) {
      throw ArgumentError("label outside the band enumeration");
    }
    ForwardCache cache;
    forward_impl(patchify(*frames[i], config), params, config, RunMode::Train,
                 derive_seed(dropout_seed, static_cast<std::uint64_t>(i)), &cache, nullptr);
    result.loss += -std::log(std::max(cache.probs(labels[i]), 1e-300)) * w;
    backward_impl(cache, params, config, labels[i], w, &result.grads);
  }
  return result;
}

FrameDataset load_dataset(const std::vector<FrameRecord>& rows, const ViTConfig& config) {
  config.validate();
  FrameDataset ds;
  ds.frames.reserve(rows.size());
  for (const auto& r : rows) {
    if (!r.band) throw DataError("load_dataset: unlabeled row " + r.frame_path);
    RasterFrame f = read_ppm(r.frame_path);
    if (f.width != config.image_w || f.height != config.image_h) {
      f = resize_bilinear(f, config.image_w, config.image_h);
    }
    f.capture_ts = r.capture_ts;
    ds.frames.push_back(std::move(f));
    ds.labels.push_back(static_cast<int>(*r.band));
    ds.trip_ids.push_back(r.trip_id);
    ds.capture_ts.push_back(r.capture_ts);
    ds.directions.push_back(r.direction);
    ds.augmented.push_back(r.is_augmented());
  }
  return ds;
}

namespace {

struct AdamState {
  ViTParameters m, v;
  long step = 0;
};

void adam_update(ViTParameters& params, const ViTParameters& grads, AdamState& state, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  auto pr = param_refs(params);
  auto gr = param_refs(const_cast<ViTParameters&>(grads));
  auto mr = param_refs(state.m);
  auto vr = param_refs(state.v);
  for (std::size_t i = 0; i < pr.size(); ++i) {
    Mat& p = *pr[i].second;
    const Mat& g = *gr[i].second;
    Mat& m = *mr[i].second;
    Mat& v = *vr[i].second;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  }
}

// Per-sample gradients computed in parallel chunks, reduced in chunk order so
// a given thread count always produces identical results.
GradResult batched_gradients(const FrameDataset& ds, const std::vector<std::size_t>& batch,
                             const ViTParameters& params, const ViTConfig& config,
                             std::uint64_t step_seed, int threads) {
  const int n_threads = std::clamp<int>(threads, 1, static_cast<int>(batch.size()));
  const double w = 1.0 / static_cast<double>(batch.size());

  if (n_threads == 1) {
    GradResult r;
    r.grads = ViTParameters::zeros_like(params);
    for (std::size_t bi = 0; bi < batch.size(); ++bi) {
      ForwardCache cache;
      forward_impl(patchify(ds.frames[batch[bi]], config), params, config, RunMode::Train,
                   derive_seed(step_seed, static_cast<std::uint64_t>(bi)), &cache, nullptr);
      r.loss += -std::log(std::max(cache.probs(ds.labels[batch[bi]]), 1e-300)) * w;
      backward_impl(cache, params, config, ds.labels[batch[bi]], w, &r.grads);
    }
    return r;
  }

  std::vector<GradResult> partial(n_threads);
  std::vector<std::thread> pool;
  const std::size_t per = (batch.size() + n_threads - 1) / n_threads;
  for (int t = 0; t < n_threads; ++t) {
    partial[t].grads = ViTParameters::zeros_like(params);
    const std::size_t lo = t * per;
    const std::size_t hi = std::min(batch.size(), lo + per);
    if (lo >= hi) continue;
    pool.emplace_back([&, t, lo, hi] {
      for (std::size_t bi = lo; bi < hi; ++bi) {
        ForwardCache cache;
        forward_impl(patchify(ds.frames[batch[bi]], config), params, config, RunMode::Train,
                     derive_seed(step_seed, static_cast<std::uint64_t>(bi)), &cache, nullptr);
        partial[t].loss += -std::log(std::max(cache.probs(ds.labels[batch[bi]]), 1e-300)) * w;
        backward_impl(cache, params, config, ds.labels[batch[bi]], w, &partial[t].grads);
      }
    });
  }
  for (auto& th : pool) th.join();

  GradResult total = std::move(partial[0]);
  auto tr = param_refs(total.grads);
  for (int t = 1; t < n_threads; ++t) {
    total.loss += partial[t].loss;
    auto sr = param_refs(partial[t].grads);
    for (std::size_t i = 0; i < tr.size(); ++i) *tr[i].second += *sr[i].second;
  }
  return total;
}

}  // namespace

TrainResult train_vit(const FrameDataset& train_set, const FrameDataset* val_set,
                      const ViTConfig& config, const TrainOptions& options) {
  config.validate();
  if (train_set.size() == 0) throw ArgumentError("train_vit: empty training set");
  if (options.batch_size <= 0 || options.epochs < 0 || options.learning_rate <= 0) {
    throw ArgumentError("train_vit: invalid options");
  }
  for (int label : train_set.labels) {
    if (label < 0 || label >= config.num_classes) {
      throw ArgumentError("train_vit: label outside the band enumeration");
    }
  }

  TrainResult result;
  result.params = ViTParameters::init(config, derive_seed(options.seed, "init"));
  AdamState adam;
  adam.m = ViTParameters::zeros_like(result.params);
  adam.v = ViTParameters::zeros_like(result.params);

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  long global_step = 0;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(options.seed, "epoch" + std::to_string(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());

    double loss_sum = 0;
    long batches = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      std::vector<std::size_t> batch(order.begin() + start, order.begin() + end);
      const std::uint64_t step_seed =
          derive_seed(derive_seed(options.seed, "drop"), static_cast<std::uint64_t>(global_step));
      GradResult g =
          batched_gradients(train_set, batch, result.params, config, step_seed, options.threads);
      if (!std::isfinite(g.loss)) {
        throw TrainingError("training diverged (non-finite loss) at step " +
                            std::to_string(global_step));
      }
      adam_update(result.params, g.grads, adam, options.learning_rate);
      loss_sum += g.loss;
      ++batches;
      ++global_step;
    }

    EpochLog log;
    log.epoch = epoch + 1;
    log.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    if (val_set && val_set->size() > 0) {
      log.val_accuracy = frame_accuracy(*val_set, result.params, config, options.threads);
    }
    result.log.push_back(log);
  }
  return result;
}

std::vector<Vec> predict_probs(const FrameDataset& dataset, const ViTParameters& params,
                               const ViTConfig& config, int threads) {
  std::vector<Vec> probs(dataset.size());
  const int n_threads = std::clamp<int>(threads, 1, std::max(1, static_cast<int>(dataset.size())));
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      ForwardCache cache;
      forward_impl(patchify(dataset.frames[i], config), params, config, RunMode::Eval, 0, &cache,
                   nullptr);
      probs[i] = cache.probs;
    }
  };
  if (n_threads == 1) {
    work(0, dataset.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t per = (dataset.size() + n_threads - 1) / n_threads;
    for (int t = 0; t < n_threads; ++t) {
      const std::size_t lo = t * per;
      const std::size_t hi = std::min(dataset.size(), lo + per);
      if (lo < hi) pool.emplace_back(work, lo, hi);
    }
    for (auto& th : pool) th.join();
  }
  return probs;
}

double frame_accuracy(const FrameDataset& dataset, const ViTParameters& params,
                      const ViTConfig& config, int threads) {
  if (dataset.size() == 0) return 0.0;
  const auto probs = predict_probs(dataset, params, config, threads);
  long correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    Eigen::Index pred;
    probs[i].maxCoeff(&pred);
    if (static_cast<int>(pred) == dataset.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

RasterFrame attention_overlay(const RasterFrame& frame, const ViTParameters& params,
                              const ViTConfig& config) {
  RasterFrame input = frame;
  if (input.width != config.image_w || input.height != config.image_h) {
    input = resize_bilinear(input, config.image_w, config.image_h);
  }
  const ForwardResult fr = forward(input, params, config, RunMode::Eval);
  const auto& heat = fr.attention.averaged_spatial;
  const int gh = fr.attention.grid_h, gw = fr.attention.grid_w;

  RasterFrame out = input;
  const double alpha = 0.5;
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      // Bilinear sample of the patch-grid heat map.
      const double gx = std::clamp((x + 0.5) * gw / out.width - 0.5, 0.0, gw - 1.0);
      const double gy = std::clamp((y + 0.5) * gh / out.height - 0.5, 0.0, gh - 1.0);
      const int x0 = static_cast<int>(gx), y0 = static_cast<int>(gy);
      const int x1 = std::min(x0 + 1, gw - 1), y1 = std::min(y0 + 1, gh - 1);
      const double fx = gx - x0, fy = gy - y0;
      const double top = heat[y0 * gw + x0] * (1 - fx) + heat[y0 * gw + x1] * fx;
      const double bot = heat[y1 * gw + x0] * (1 - fx) + heat[y1 * gw + x1] * fx;
      const double t = top * (1 - fy) + bot * fy;
      // Hot colormap; brighter pixels mean higher attention.
      const double r = std::clamp(3.0 * t, 0.0, 1.0);
      const double g = std::clamp(3.0 * t - 1.0, 0.0, 1.0);
      const double b = std::clamp(3.0 * t - 2.0, 0.0, 1.0);
      const double heat_rgb[3] = {r, g, b};
      for (int c = 0; c < 3; ++c) {
        const double blended = (1 - alpha) * out.at(x, y, c) + alpha * heat_rgb[c] * 255.0;
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(blended), 0L, 255L));
      }
    }
  }
  return out;
}

GridSearchResult grid_search(const FrameDataset& train_set, const FrameDataset& val_set,
                             const ViTConfig& base_config, const std::vector<GridPoint>& points,
                             int budget_epochs, std::uint64_t seed, int threads) {
  if (points.empty()) throw ArgumentError("grid_search: empty grid");
  GridSearchResult result;
  double best_score = -1.0;
  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    const auto& pt = points[pi];
    ViTConfig config = base_config;
    config.num_layers = pt.num_layers;
    config.num_heads = pt.num_heads;
    config.dropout_p = pt.dropout_p;
    TrainOptions opts;
    opts.batch_size = pt.batch_size;
    opts.learning_rate = pt.learning_rate;
    opts.epochs = budget_epochs;
    opts.seed = derive_seed(seed, static_cast<std::uint64_t>(pi));
    opts.threads = threads;

    GridScore score;
    score.point = pt;
    try {
      const TrainResult tr = train_vit(train_set, nullptr, config, opts);
      const auto probs = predict_probs(val_set, tr.params, config, threads);
      // Macro F-1 over the four bands.
      long tp[4] = {0, 0, 0, 0}, fp[4] = {0, 0, 0, 0}, fn[4] = {0, 0, 0, 0};
      for (std::size_t i = 0; i < probs.size(); ++i) {
        Eigen::Index pred;
        probs[i].maxCoeff(&pred);
        const int truth = val_set.labels[i];
        if (pred == truth) {
          ++tp[truth];
        } else {
          ++fp[pred];
          ++fn[truth];
        }
      }
      double f1_sum = 0;
      for (int c = 0; c < 4; ++c) {
        const double prec = tp[c] + fp[c] ? static_cast<double>(tp[c]) / (tp[c] + fp[c]) : 0.0;
        const double rec = tp[c] + fn[c] ? static_cast<double>(tp[c]) / (tp[c] + fn[c]) : 0.0;
        f1_sum += prec + rec > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
      }
      score.macro_f1 = f1_sum / 4.0;
    } catch (const TrainingError&) {
      score.diverged = true;
      score.macro_f1 = 0.0;
    }
    if (score.macro_f1 > best_score) {
      best_score = score.macro_f1;
      result.best = pt;
    }
    result.scores.push_back(score);
  }
  return result;
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<char*>(b), 4);
}

void put_i32(std::ostream& out, std::int32_t v) { put_u32(out, static_cast<std::uint32_t>(v)); }

void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::int32_t get_i32(std::istream& in) { return static_cast<std::int32_t>(get_u32(in)); }

std::uint64_t get_u64(std::istream& in) {
  const std::uint64_t lo = get_u32(in);
  const std::uint64_t hi = get_u32(in);
  return lo | (hi << 32);
}

constexpr std::uint32_t kMagic = 0x54495654;  // "TVIT"
constexpr std::uint32_t kVersion = 1;
constexpr double kMicro = 1e6;

}  // namespace

void save_checkpoint(const std::string& path, const ViTParameters& params,
                     const ViTConfig& config) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  put_u32(out, kMagic);
  put_u32(out, kVersion);
  put_i32(out, config.image_h);
  put_i32(out, config.image_w);
  put_i32(out, config.channels);
  put_i32(out, config.patch_size);
  put_i32(out, config.latent_dim);
  put_i32(out, config.num_layers);
  put_i32(out, config.num_heads);
  put_i32(out, config.mlp_hidden_dim);
  put_i32(out, config.num_classes);
  put_i32(out, static_cast<std::int32_t>(std::lround(config.dropout_p * kMicro)));
  for (double v : config.channel_mean) put_i32(out, static_cast<std::int32_t>(std::lround(v * kMicro)));
  for (double v : config.channel_sd) put_i32(out, static_cast<std::int32_t>(std::lround(v * kMicro)));

  for (const auto& [name, mat] : param_refs(params)) {
    const std::uint64_t bytes = static_cast<std::uint64_t>(mat->size()) * 4;
    put_u64(out, bytes);
    for (Eigen::Index r = 0; r < mat->rows(); ++r) {
      for (Eigen::Index c = 0; c < mat->cols(); ++c) {
        const float f = static_cast<float>((*mat)(r, c));
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(out, bits);
      }
    }
  }
  if (!out) throw IoError("write failed for checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  if (get_u32(in) != kMagic) throw FormatError(path + ": not a checkpoint file");
  const auto version = get_u32(in);
  if (version != kVersion) {
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.config.image_h = get_i32(in);
  ckpt.config.image_w = get_i32(in);
  ckpt.config.channels = get_i32(in);
  ckpt.config.patch_size = get_i32(in);
  ckpt.config.latent_dim = get_i32(in);
  ckpt.config.num_layers = get_i32(in);
  ckpt.config.num_heads = get_i32(in);
  ckpt.config.mlp_hidden_dim = get_i32(in);
  ckpt.config.num_classes = get_i32(in);
  ckpt.config.dropout_p = get_i32(in) / kMicro;
  for (auto& v : ckpt.config.channel_mean) v = get_i32(in) / kMicro;
  for (auto& v : ckpt.config.channel_sd) v = get_i32(in) / kMicro;
  ckpt.config.validate();

  ckpt.params = ViTParameters::init(ckpt.config, 0);
  for (auto& [name, mat] : param_refs(ckpt.params)) {
    const std::uint64_t bytes = get_u64(in);
    if (bytes != static_cast<std::uint64_t>(mat->size()) * 4) {
      throw FormatError(path + ": group '" + name + "' has unexpected size");
    }
    for (Eigen::Index r = 0; r < mat->rows(); ++r) {
      for (Eigen::Index c = 0; c < mat->cols(); ++c) {
        const std::uint32_t bits = get_u32(in);
        float f;
        std::memcpy(&f, &bits, 4);
        (*mat)(r, c) = f;
      }
    }
  }
  if (!in) throw FormatError(path + ": truncated checkpoint");
  return ckpt;
}

}  // namespace ttv
