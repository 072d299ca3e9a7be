#include "posemb/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "posemb/parallel.hpp"
#include "posemb/rng.hpp"

namespace posemb {

namespace {

// Seed streams carved out of the training seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kBatchStream = 2;

double activate(Activation a, double z) {
  return a == Activation::kTanh ? std::tanh(z) : (z > 0.0 ? z : 0.0);
}

// Derivative expressed through the activation output.
double activate_grad(Activation a, double out) {
  return a == Activation::kTanh ? 1.0 - out * out : (out > 0.0 ? 1.0 : 0.0);
}

struct ForwardCache {
  std::vector<Mat> acts;      // acts[0] = input, acts[l+1] = layer l output
  std::vector<double> norms;  // pre-normalization row norms (floored)
  Mat embedded;               // final embeddings (normalized when enabled)
};

void forward_cached(const EmbeddingModel& model, const Mat& inputs, ForwardCache& cache) {
  if (inputs.cols != model.input_dim())
    throw std::invalid_argument(detail::cat("forward: input width ", inputs.cols,
                                            " does not match model input dim ",
                                            model.input_dim()));
  const int n_layers = static_cast<int>(model.layers.size());
  cache.acts.assign(1, inputs);
  for (int l = 0; l < n_layers; ++l) {
    const LayerParams& layer = model.layers[l];
    Mat z;
    matmul_abt(cache.acts[l], layer.w, z);
    const bool hidden = l + 1 < n_layers;
    const Activation act = model.activation;
    parallel_for(0, z.rows, [&](int lo, int hi) {
      for (int r = lo; r < hi; ++r) {
        double* row = z.row(r);
        for (int c = 0; c < z.cols; ++c) {
          const double v = row[c] + layer.b[c];
          row[c] = hidden ? activate(act, v) : v;
        }
      }
    });
    cache.acts.push_back(std::move(z));
  }

  const Mat& y = cache.acts.back();
  cache.norms.assign(y.rows, 0.0);
  if (!model.normalize_output) {
    cache.embedded = y;
    return;
  }
  cache.embedded = Mat(y.rows, y.cols);
  for (int r = 0; r < y.rows; ++r) {
    const double* src = y.row(r);
    const double norm = std::sqrt(dot(src, src, y.cols));
    const double floored = std::max(norm, model.norm_epsilon);
    cache.norms[r] = floored;
    double* dst = cache.embedded.row(r);
    for (int c = 0; c < y.cols; ++c) dst[c] = src[c] / floored;
  }
}

Mat stack_triplet_rows(const Mat& anchors, const Mat& positives, const Mat& negatives) {
  if (anchors.rows != positives.rows || anchors.rows != negatives.rows ||
      anchors.cols != positives.cols || anchors.cols != negatives.cols)
    throw std::invalid_argument("triplet batch: anchor/positive/negative shapes differ");
  if (anchors.rows == 0) throw std::invalid_argument("triplet batch: empty");
  Mat x(3 * anchors.rows, anchors.cols);
  const std::size_t block = anchors.d.size();
  std::copy(anchors.d.begin(), anchors.d.end(), x.d.begin());
  std::copy(positives.d.begin(), positives.d.end(), x.d.begin() + block);
  std::copy(negatives.d.begin(), negatives.d.end(), x.d.begin() + 2 * block);
  return x;
}

void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), 4);
}

void put_f64(std::ofstream& out, double v) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint32_t get_u32(std::ifstream& in, const std::string& path) {
  unsigned char buf[4];
  if (!in.read(reinterpret_cast<char*>(buf), 4))
    throw std::runtime_error(detail::cat("checkpoint ", path, ": truncated"));
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  return v;
}

double get_f64(std::ifstream& in, const std::string& path) {
  unsigned char buf[8];
  if (!in.read(reinterpret_cast<char*>(buf), 8))
    throw std::runtime_error(detail::cat("checkpoint ", path, ": truncated"));
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

constexpr char kMagic[4] = {'P', 'E', 'M', 'B'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

const char* to_string(Activation a) { return a == Activation::kTanh ? "tanh" : "relu"; }

std::size_t EmbeddingModel::parameter_count() const {
  std::size_t n = 0;
  for (const LayerParams& layer : layers) n += layer.w.d.size() + layer.b.size();
  return n;
}

EmbeddingModel make_model(const ModelSpec& spec, int input_dim, std::uint64_t seed) {
  if (input_dim <= 0) throw std::invalid_argument("make_model: input_dim must be positive");
  if (spec.embedding_dim <= 0)
    throw std::invalid_argument("make_model: embedding_dim must be positive");
  for (int h : spec.hidden)
    if (h <= 0) throw std::invalid_argument("make_model: hidden sizes must be positive");

  EmbeddingModel model;
  model.activation = spec.activation;
  model.normalize_output = spec.normalize_output;
  model.layer_sizes.push_back(input_dim);
  for (int h : spec.hidden) model.layer_sizes.push_back(h);
  model.layer_sizes.push_back(spec.embedding_dim);

  Rng rng = make_rng(seed);
  for (std::size_t l = 0; l + 1 < model.layer_sizes.size(); ++l) {
    const int fan_in = model.layer_sizes[l];
    const int fan_out = model.layer_sizes[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    LayerParams layer;
    layer.w = Mat(fan_out, fan_in);
    for (double& v : layer.w.d) v = uniform_in(rng, -bound, bound);
    layer.b.assign(fan_out, 0.0);
    model.layers.push_back(std::move(layer));
  }
  return model;
}

void forward_batch(const EmbeddingModel& model, const Mat& inputs, Mat& out) {
  ForwardCache cache;
  forward_cached(model, inputs, cache);
  out = std::move(cache.embedded);
}

std::vector<double> forward(const EmbeddingModel& model, std::span<const double> input) {
  if (static_cast<int>(input.size()) != model.input_dim())
    throw std::invalid_argument(detail::cat("forward: got ", input.size(),
                                            " values, model expects ", model.input_dim()));
  Mat in(1, model.input_dim());
  std::copy(input.begin(), input.end(), in.d.begin());
  Mat out;
  forward_batch(model, in, out);
  return out.d;
}

std::vector<double> forward(const EmbeddingModel& model, const ImageGrid& image) {
  return forward(model, std::span<const double>(image.pixels));
}

double triplet_loss(std::span<const double> anchor, std::span<const double> positive,
                    std::span<const double> negative, double margin) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size())
    throw std::invalid_argument("triplet_loss: embedding sizes differ");
  const int n = static_cast<int>(anchor.size());
  const double dp = squared_l2_distance(anchor.data(), positive.data(), n);
  const double dn = squared_l2_distance(anchor.data(), negative.data(), n);
  return std::max(0.0, margin + dp - dn);
}

ParamBlocks zeros_like(const EmbeddingModel& model) {
  ParamBlocks blocks;
  blocks.reserve(model.layers.size());
  for (const LayerParams& layer : model.layers) {
    LayerParams z;
    z.w = Mat(layer.w.rows, layer.w.cols);
    z.b.assign(layer.b.size(), 0.0);
    blocks.push_back(std::move(z));
  }
  return blocks;
}

BatchGradients compute_gradients(const EmbeddingModel& model, const Mat& anchors,
                                 const Mat& positives, const Mat& negatives, double margin) {
  const int batch = anchors.rows;
  const Mat x = stack_triplet_rows(anchors, positives, negatives);
  ForwardCache cache;
  forward_cached(model, x, cache);
  const Mat& e = cache.embedded;
  const int dim = e.cols;

  // Loss gradient with respect to the embeddings.
  Mat de(e.rows, e.cols);
  BatchGradients result;
  result.blocks = zeros_like(model);
  double loss_sum = 0.0;
  const double scale = 2.0 / batch;
  for (int i = 0; i < batch; ++i) {
    const double* ea = e.row(i);
    const double* ep = e.row(batch + i);
    const double* en = e.row(2 * batch + i);
    const double dp = squared_l2_distance(ea, ep, dim);
    const double dn = squared_l2_distance(ea, en, dim);
    const double violation = margin + dp - dn;
    if (violation > 0.0) {
      loss_sum += violation;
      ++result.active;
      double* ga = de.row(i);
      double* gp = de.row(batch + i);
      double* gn = de.row(2 * batch + i);
      for (int c = 0; c < dim; ++c) {
        ga[c] = scale * (en[c] - ep[c]);
        gp[c] = scale * (ep[c] - ea[c]);
        gn[c] = scale * (ea[c] - en[c]);
      }
    }
  }
  result.mean_loss = loss_sum / batch;

  // Through the optional normalization: y -> y / max(|y|, eps).
  Mat dz;
  if (model.normalize_output) {
    dz = Mat(e.rows, e.cols);
    for (int r = 0; r < e.rows; ++r) {
      const double* erow = e.row(r);
      const double* drow = de.row(r);
      double* out = dz.row(r);
      const double norm = cache.norms[r];
      if (norm > model.norm_epsilon) {
        const double proj = dot(erow, drow, dim);
        for (int c = 0; c < dim; ++c) out[c] = (drow[c] - erow[c] * proj) / norm;
      } else {
        for (int c = 0; c < dim; ++c) out[c] = drow[c] / norm;
      }
    }
  } else {
    dz = std::move(de);
  }

  // Layer-by-layer backward pass; the final layer is linear.
  for (int l = static_cast<int>(model.layers.size()) - 1; l >= 0; --l) {
    const Mat& layer_in = cache.acts[l];
    LayerParams& grad = result.blocks[l];
    matmul_atb(dz, layer_in, grad.w);
    for (int r = 0; r < dz.rows; ++r) {
      const double* row = dz.row(r);
      for (int c = 0; c < dz.cols; ++c) grad.b[c] += row[c];
    }
    if (l == 0) break;
    Mat dprev;
    matmul_ab(dz, model.layers[l].w, dprev);
    const Mat& hidden_out = cache.acts[l];
    parallel_for(0, dprev.rows, [&](int lo, int hi) {
      for (int r = lo; r < hi; ++r) {
        double* row = dprev.row(r);
        const double* act_row = hidden_out.row(r);
        for (int c = 0; c < dprev.cols; ++c)
          row[c] *= activate_grad(model.activation, act_row[c]);
      }
    });
    dz = std::move(dprev);
  }
  return result;
}

double batch_loss(const EmbeddingModel& model, const Mat& anchors, const Mat& positives,
                  const Mat& negatives, double margin) {
  const int batch = anchors.rows;
  const Mat x = stack_triplet_rows(anchors, positives, negatives);
  ForwardCache cache;
  forward_cached(model, x, cache);
  const Mat& e = cache.embedded;
  double loss_sum = 0.0;
  for (int i = 0; i < batch; ++i) {
    const double dp = squared_l2_distance(e.row(i), e.row(batch + i), e.cols);
    const double dn = squared_l2_distance(e.row(i), e.row(2 * batch + i), e.cols);
    loss_sum += std::max(0.0, margin + dp - dn);
  }
  return loss_sum / batch;
}

AdaGradState make_adagrad_state(const EmbeddingModel& model) {
  return AdaGradState{zeros_like(model)};
}

void adagrad_update(EmbeddingModel& model, const ParamBlocks& grads, AdaGradState& state,
                    double lr, double epsilon) {
  if (grads.size() != model.layers.size() || state.accum.size() != model.layers.size())
    throw std::invalid_argument("adagrad_update: block count mismatch");
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    LayerParams& layer = model.layers[l];
    const LayerParams& g = grads[l];
    LayerParams& acc = state.accum[l];
    for (std::size_t i = 0; i < layer.w.d.size(); ++i) {
      acc.w.d[i] += g.w.d[i] * g.w.d[i];
      layer.w.d[i] -= lr * g.w.d[i] / (std::sqrt(acc.w.d[i]) + epsilon);
    }
    for (std::size_t i = 0; i < layer.b.size(); ++i) {
      acc.b[i] += g.b[i] * g.b[i];
      layer.b[i] -= lr * g.b[i] / (std::sqrt(acc.b[i]) + epsilon);
    }
  }
}

void TrainConfig::validate() const {
  if (batch_size <= 0) throw std::invalid_argument("train: batch_size must be positive");
  if (steps < 0) throw std::invalid_argument("train: steps must be non-negative");
  if (learning_rate <= 0.0) throw std::invalid_argument("train: learning_rate must be positive");
  if (margin < 0.0) throw std::invalid_argument("train: margin must be non-negative");
  if (adagrad_epsilon <= 0.0)
    throw std::invalid_argument("train: adagrad_epsilon must be positive");
}

TrainResult train_model(const PoseDataset& dataset, const TripletIndex& triplets,
                        RenderPipeline& pipeline, const ModelSpec& spec,
                        const TrainConfig& config) {
  config.validate();
  if (triplets.size() == 0) throw std::invalid_argument("train: triplet index is empty");

  TrainResult result;
  result.model = make_model(spec, pipeline.input_dim(), mix_seed(config.seed, kInitStream));
  AdaGradState state = make_adagrad_state(result.model);
  Rng batch_rng = make_rng(mix_seed(config.seed, kBatchStream));

  const int batch = config.batch_size;
  const int dim = pipeline.input_dim();
  Mat anchors(batch, dim), positives(batch, dim), negatives(batch, dim);
  result.loss_by_step.reserve(config.steps);

  for (int step = 0; step < config.steps; ++step) {
    for (int i = 0; i < batch; ++i) {
      const Triplet t = triplets.at(uniform_below(batch_rng, triplets.size()));
      // Each drawn sample owns two augmentation counters (anchor, positive);
      // negatives reuse the cached plain render.
      const std::uint64_t sample = static_cast<std::uint64_t>(step) * batch + i;
      const ImageGrid anchor_img =
          pipeline.render_augmented(dataset.pose_by_id(t.anchor), 2 * sample);
      const ImageGrid positive_img =
          pipeline.render_augmented(dataset.pose_by_id(t.positive), 2 * sample + 1);
      const ImageGrid& negative_img = pipeline.render_cached(dataset.pose_by_id(t.negative));
      std::copy(anchor_img.pixels.begin(), anchor_img.pixels.end(), anchors.row(i));
      std::copy(positive_img.pixels.begin(), positive_img.pixels.end(), positives.row(i));
      std::copy(negative_img.pixels.begin(), negative_img.pixels.end(), negatives.row(i));
    }
    BatchGradients grads =
        compute_gradients(result.model, anchors, positives, negatives, config.margin);
    if (!std::isfinite(grads.mean_loss))
      throw std::runtime_error(detail::cat("train: non-finite loss ", grads.mean_loss,
                                           " at step ", step));
    result.loss_by_step.push_back(grads.mean_loss);
    adagrad_update(result.model, grads.blocks, state, config.learning_rate,
                   config.adagrad_epsilon);
  }
  return result;
}

double gradient_check(const EmbeddingModel& model, const Mat& anchors, const Mat& positives,
                      const Mat& negatives, double margin) {
  const double h = 1e-5;
  const double floor = 1e-6;
  const BatchGradients analytic = compute_gradients(model, anchors, positives, negatives, margin);
  EmbeddingModel probe = model;

  double worst = 0.0;
  auto check_one = [&](double& param, double analytic_grad) {
    const double saved = param;
    param = saved + h;
    const double up = batch_loss(probe, anchors, positives, negatives, margin);
    param = saved - h;
    const double down = batch_loss(probe, anchors, positives, negatives, margin);
    param = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic_grad), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(analytic_grad - numeric) / denom);
  };

  for (std::size_t l = 0; l < probe.layers.size(); ++l) {
    for (std::size_t i = 0; i < probe.layers[l].w.d.size(); ++i)
      check_one(probe.layers[l].w.d[i], analytic.blocks[l].w.d[i]);
    for (std::size_t i = 0; i < probe.layers[l].b.size(); ++i)
      check_one(probe.layers[l].b[i], analytic.blocks[l].b[i]);
  }
  return worst;
}

void save_model(const EmbeddingModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(detail::cat("checkpoint ", path, ": cannot open for write"));
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, model.activation == Activation::kTanh ? 0u : 1u);
  put_u32(out, model.normalize_output ? 1u : 0u);
  put_u32(out, static_cast<std::uint32_t>(model.layer_sizes.size()));
  for (int s : model.layer_sizes) put_u32(out, static_cast<std::uint32_t>(s));
  for (const LayerParams& layer : model.layers) {
    for (double v : layer.w.d) put_f64(out, v);
    for (double v : layer.b) put_f64(out, v);
  }
  out.flush();
  if (!out) throw std::runtime_error(detail::cat("checkpoint ", path, ": write failed"));
}

EmbeddingModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(detail::cat("checkpoint ", path, ": cannot open"));
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic))
    throw std::runtime_error(detail::cat("checkpoint ", path, ": bad magic"));
  const std::uint32_t version = get_u32(in, path);
  if (version != kVersion)
    throw std::runtime_error(detail::cat("checkpoint ", path, ": unsupported version ", version));
  const std::uint32_t activation = get_u32(in, path);
  if (activation > 1)
    throw std::runtime_error(detail::cat("checkpoint ", path, ": bad activation tag ", activation));
  const std::uint32_t normalize = get_u32(in, path);
  const std::uint32_t n_sizes = get_u32(in, path);
  if (n_sizes < 2 || n_sizes > 64)
    throw std::runtime_error(detail::cat("checkpoint ", path, ": bad layer count ", n_sizes));

  EmbeddingModel model;
  model.activation = activation == 0 ? Activation::kTanh : Activation::kRelu;
  model.normalize_output = normalize != 0;
  for (std::uint32_t i = 0; i < n_sizes; ++i) {
    const std::uint32_t s = get_u32(in, path);
    if (s == 0 || s > 10'000'000)
      throw std::runtime_error(detail::cat("checkpoint ", path, ": bad layer size ", s));
    model.layer_sizes.push_back(static_cast<int>(s));
  }
  for (std::size_t l = 0; l + 1 < model.layer_sizes.size(); ++l) {
    LayerParams layer;
    layer.w = Mat(model.layer_sizes[l + 1], model.layer_sizes[l]);
    for (double& v : layer.w.d) v = get_f64(in, path);
    layer.b.resize(model.layer_sizes[l + 1]);
    for (double& v : layer.b) v = get_f64(in, path);
    model.layers.push_back(std::move(layer));
  }
  if (in.peek() != std::ifstream::traits_type::eof())
    throw std::runtime_error(detail::cat("checkpoint ", path, ": trailing bytes"));
  return model;
}

void write_loss_csv(const std::vector<double>& loss_by_step, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(detail::cat("loss csv ", path, ": cannot open for write"));
  out << "step,mean_loss\n";
  char buf[64];
  for (std::size_t i = 0; i < loss_by_step.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", loss_by_step[i]);
    out << i << ',' << buf << '\n';
  }
  if (!out) throw std::runtime_error(detail::cat("loss csv ", path, ": write failed"));
}

}  // namespace posemb
