#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "posemb/linalg.hpp"
#include "posemb/mining.hpp"
#include "posemb/render.hpp"

namespace posemb {

enum class Activation { kTanh, kRelu };

const char* to_string(Activation a);

/// One dense layer: out = act(w * in + b), w stored out x in.
struct LayerParams {
  Mat w;
  std::vector<double> b;
};

using ParamBlocks = std::vector<LayerParams>;

/// Fully connected embedding network. Hidden layers use `activation`; the
/// final layer is linear, optionally followed by L2 normalization with an
/// epsilon floor against zero vectors.
struct EmbeddingModel {
  std::vector<int> layer_sizes;  // input, hidden..., embedding dim
  ParamBlocks layers;
  Activation activation = Activation::kTanh;
  bool normalize_output = true;
  double norm_epsilon = 1e-12;

  int input_dim() const { return layer_sizes.front(); }
  int embedding_dim() const { return layer_sizes.back(); }
  std::size_t parameter_count() const;
};

/// Architecture choice; input width comes from the canvas at build time.
struct ModelSpec {
  std::vector<int> hidden = {256, 64};
  int embedding_dim = 32;
  Activation activation = Activation::kTanh;
  bool normalize_output = true;
};

/// Seeded init: weights uniform in +-1/sqrt(fan_in), biases zero. Layers are
/// drawn in order, weights row-major.
EmbeddingModel make_model(const ModelSpec& spec, int input_dim, std::uint64_t seed);

/// Row-per-sample forward pass.
void forward_batch(const EmbeddingModel& model, const Mat& inputs, Mat& out);

std::vector<double> forward(const EmbeddingModel& model, std::span<const double> input);
std::vector<double> forward(const EmbeddingModel& model, const ImageGrid& image);

/// Hinge triplet loss max(0, margin + ||a-p||^2 - ||a-n||^2) on embeddings.
double triplet_loss(std::span<const double> anchor, std::span<const double> positive,
                    std::span<const double> negative, double margin);

ParamBlocks zeros_like(const EmbeddingModel& model);

struct BatchGradients {
  ParamBlocks blocks;
  double mean_loss = 0.0;
  int active = 0;  // triplets with a violated margin
};

/// Gradients of the mean triplet loss over the batch with respect to every
/// parameter. Rows i of the three input matrices form triplet i.
BatchGradients compute_gradients(const EmbeddingModel& model, const Mat& anchors,
                                 const Mat& positives, const Mat& negatives, double margin);

/// Mean triplet loss only (the gradient check's primitive).
double batch_loss(const EmbeddingModel& model, const Mat& anchors, const Mat& positives,
                  const Mat& negatives, double margin);

struct AdaGradState {
  ParamBlocks accum;  // per-parameter sums of squared gradients
};

AdaGradState make_adagrad_state(const EmbeddingModel& model);

/// accum += g^2; param -= lr * g / (sqrt(accum) + epsilon), elementwise.
void adagrad_update(EmbeddingModel& model, const ParamBlocks& grads, AdaGradState& state,
                    double lr, double epsilon);

struct TrainConfig {
  int batch_size = 600;
  double learning_rate = 0.05;
  double margin = 0.2;
  int steps = 300;
  std::uint64_t seed = 0;
  double adagrad_epsilon = 1e-8;

  void validate() const;
};

struct TrainResult {
  EmbeddingModel model;
  std::vector<double> loss_by_step;
};

/// Seeded init, then `steps` batches of `batch_size` triplets drawn uniformly
/// from the index. Anchor and positive renders are augmented; negatives use
/// the cached plain render. Aborts with a diagnostic on non-finite loss.
TrainResult train_model(const PoseDataset& dataset, const TripletIndex& triplets,
                        RenderPipeline& pipeline, const ModelSpec& spec,
                        const TrainConfig& config);

/// Max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-6),
/// numeric by central differences with h = 1e-5. Small models only.
double gradient_check(const EmbeddingModel& model, const Mat& anchors, const Mat& positives,
                      const Mat& negatives, double margin);

/// Binary checkpoint: magic "PEMB", version, activation, normalize flag,
/// layer sizes, then parameters as little-endian 64-bit floats (per layer:
/// weights row-major, then biases).
void save_model(const EmbeddingModel& model, const std::string& path);
EmbeddingModel load_model(const std::string& path);

void write_loss_csv(const std::vector<double>& loss_by_step, const std::string& path);

}  // namespace posemb
