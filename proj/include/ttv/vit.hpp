#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ttv/image.hpp"
#include "ttv/manifest.hpp"
#include "ttv/rng.hpp"

namespace ttv {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct ViTConfig {
  int image_h = 64;
  int image_w = 64;
  int channels = 3;
  int patch_size = 16;
  int latent_dim = 64;
  int num_layers = 4;
  int num_heads = 4;
  int mlp_hidden_dim = 128;
  int num_classes = 4;
  double dropout_p = 0.0;
  std::array<double, 3> channel_mean{0.5, 0.5, 0.5};
  std::array<double, 3> channel_sd{0.5, 0.5, 0.5};

  int grid_h() const { return image_h / patch_size; }
  int grid_w() const { return image_w / patch_size; }
  int num_patches() const { return grid_h() * grid_w(); }
  int tokens() const { return num_patches() + 1; }
  int patch_dim() const { return patch_size * patch_size * channels; }

  void validate() const;  // throws ArgumentError
};

// One encoder block: pre-norm multi-head self-attention and pre-norm MLP,
// both with residual connections. Vectors are stored as D x 1 matrices so
// that every learnable tensor shares one type.
struct ViTLayerParams {
  Mat ln1_scale, ln1_shift;
  Mat wq, bq, wk, bk, wv, bv, wo, bo;
  Mat ln2_scale, ln2_shift;
  Mat mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct ViTParameters {
  Mat patch_proj;     // (P^2 * C) x D
  Mat pos_embedding;  // (N + 1) x D
  Mat class_token;    // D x 1
  std::vector<ViTLayerParams> layers;
  Mat ln_f_scale, ln_f_shift;  // D x 1
  Mat head_w;                  // D x num_classes
  Mat head_b;                  // num_classes x 1

  // Truncated-normal (sd 0.02) projections/embeddings, zero biases and LN
  // shifts, unit LN scales.
  static ViTParameters init(const ViTConfig& config, std::uint64_t seed);
  static ViTParameters zeros_like(const ViTParameters& other);

  bool all_finite() const;
};

// Ordered view over every learnable tensor; the order defines the checkpoint
// layout. Names are stable identifiers like "layer2.wq".
std::vector<std::pair<std::string, Mat*>> param_refs(ViTParameters& params);
std::vector<std::pair<std::string, const Mat*>> param_refs(const ViTParameters& params);

struct AttentionMap {
  // [layer][head], each (N+1) x (N+1) row-stochastic.
  std::vector<std::vector<Mat>> per_layer_head;
  // Final-layer class-token attention over patches, head-averaged and
  // min-max rescaled to [0, 1]; row-major on the patch grid.
  std::vector<double> averaged_spatial;
  int grid_h = 0;
  int grid_w = 0;
};

enum class RunMode { Train, Eval };

struct ForwardResult {
  Vec logits;
  Vec probabilities;
  AttentionMap attention;
};

// Rows are flattened patches in raster-scan order; values scaled to [0, 1]
// then standardized by the configured channel mean/sd.
Mat patchify(const RasterFrame& frame, const ViTConfig& config);
RasterFrame unpatchify(const Mat& patches, const ViTConfig& config);

ForwardResult forward(const RasterFrame& frame, const ViTParameters& params,
                      const ViTConfig& config, RunMode mode = RunMode::Eval,
                      std::uint64_t dropout_seed = 0);
ForwardResult forward_patches(const Mat& patches, const ViTParameters& params,
                              const ViTConfig& config, RunMode mode = RunMode::Eval,
                              std::uint64_t dropout_seed = 0);

struct GradResult {
  double loss = 0;
  ViTParameters grads;
};

// Mean cross-entropy over the batch plus full parameter gradients.
// Deterministic for a fixed dropout_seed.
GradResult loss_and_gradients(const std::vector<const RasterFrame*>& frames,
                              const std::vector<int>& labels, const ViTParameters& params,
                              const ViTConfig& config, std::uint64_t dropout_seed = 0);

// In-memory dataset ready for the model; frames are resized to the config's
// input dimensions at load time.
struct FrameDataset {
  std::vector<RasterFrame> frames;
  std::vector<int> labels;
  std::vector<std::string> trip_ids;
  std::vector<std::int64_t> capture_ts;
  std::vector<int> directions;
  std::vector<bool> augmented;

  std::size_t size() const { return frames.size(); }
};

FrameDataset load_dataset(const std::vector<FrameRecord>& rows, const ViTConfig& config);

struct TrainOptions {
  int batch_size = 32;
  double learning_rate = 1e-3;
  int epochs = 10;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  double val_accuracy = -1;  // -1 when no validation set was given
};

struct TrainResult {
  ViTParameters params;
  std::vector<EpochLog> log;
};

// Adam with bias-corrected moments, fixed step, no weight decay. Throws
// TrainingError naming the step when the loss stops being finite.
TrainResult train_vit(const FrameDataset& train_set, const FrameDataset* val_set,
                      const ViTConfig& config, const TrainOptions& options);

std::vector<Vec> predict_probs(const FrameDataset& dataset, const ViTParameters& params,
                               const ViTConfig& config, int threads = 1);
double frame_accuracy(const FrameDataset& dataset, const ViTParameters& params,
                      const ViTConfig& config, int threads = 1);

// Final-layer class-token attention upsampled to frame size and alpha-blended
// over the input.
RasterFrame attention_overlay(const RasterFrame& frame, const ViTParameters& params,
                              const ViTConfig& config);

struct GridPoint {
  int num_layers = 2;
  int num_heads = 2;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double dropout_p = 0.0;
};

struct GridScore {
  GridPoint point;
  double macro_f1 = 0;
  bool diverged = false;
};

struct GridSearchResult {
  GridPoint best;
  std::vector<GridScore> scores;
};

// Trains each point for budget_epochs on train_set and scores validation
// macro F-1; diverging points score zero. Returns the best point and the
// full table.
GridSearchResult grid_search(const FrameDataset& train_set, const FrameDataset& val_set,
                             const ViTConfig& base_config, const std::vector<GridPoint>& points,
                             int budget_epochs, std::uint64_t seed, int threads = 1);

// Binary checkpoint: magic, version, config fields as little-endian ints
// (dropout and channel stats in micro-units), then parameter groups in
// param_refs order, each as an 8-byte little-endian byte length followed by
// row-major little-endian float32 data.
void save_checkpoint(const std::string& path, const ViTParameters& params,
                     const ViTConfig& config);
struct Checkpoint {
  ViTConfig config;
  ViTParameters params;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ttv
