// SPDX-License-Identifier: Apache-2.0
//
// Small reverse-mode training engine for the sequential networks described by
// NetConfig.
//
// Each convolution unit is conv -> (channel shuffle) -> batch norm ->
// activation. In `real` mode weights are used as-is and the activation is
// ReLU; in `binary` mode the forward pass uses sign(latent weight) and a
// sign activation, both with a straight-through gradient clipped to
// |u| <= 1. sign(0) = +1. Binary convolutions pad with -1, plane inputs
// (the encoder output) pad with 0. The classifier is a linear layer without
// bias whose output is multiplied by a fixed 1/sqrt(fan_in) to form logits.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "thermobnn/bitcore.hpp"
#include "thermobnn/dataio.hpp"
#include "thermobnn/encoders.hpp"
#include "thermobnn/topology.hpp"

namespace thermobnn {

enum class Mode : std::uint8_t { real = 0, binary = 1 };
const char* to_string(Mode m);

enum class ParamKind : std::uint8_t { weight = 0, bn_gamma = 1, bn_beta = 2, glt_latent = 3 };

struct Param {
  std::string name;
  ParamKind kind = ParamKind::weight;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;

  friend bool operator==(const Param& a, const Param& b) {
    return a.name == b.name && a.kind == b.kind && a.shape == b.shape && a.value == b.value;
  }
};

/// Running statistics of one batch-norm layer.
struct NormStats {
  std::string name;
  std::vector<double> mean;
  std::vector<double> var;

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

struct Logits {
  std::size_t n = 0;
  std::size_t classes = 0;
  std::vector<double> v;

  Logits() = default;
  Logits(std::size_t rows, std::size_t cols) : n(rows), classes(cols), v(rows * cols, 0.0) {}
  double& at(std::size_t i, std::size_t j) { return v[i * classes + j]; }
  double at(std::size_t i, std::size_t j) const { return v[i * classes + j]; }
  std::size_t argmax(std::size_t i) const;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Inference-time batch norm, shared by the float path and threshold folding.
inline double batchnorm_eval(double x, double mean, double inv_std, double gamma, double beta) {
  return (x - mean) * inv_std * gamma + beta;
}

/// Counts operands fed to binary-mode multiply-accumulates.
struct KernelAudit {
  std::uint64_t binary_layers = 0;
  std::uint64_t operands_checked = 0;
  std::uint64_t non_binary_operands = 0;
};
void set_kernel_audit(bool enabled);
KernelAudit kernel_audit();
void reset_kernel_audit();

template <typename T>
struct BasicWorkspace;
using Workspace = BasicWorkspace<float>;
using Workspace64 = BasicWorkspace<double>;

class Model {
 public:
  Model(NetConfig cfg, std::uint64_t init_seed);

  const NetConfig& config() const noexcept { return cfg_; }
  const std::vector<LayerInfo>& layers() const noexcept { return layers_; }
  Mode mode() const noexcept { return mode_; }
  void set_mode(Mode m) noexcept { mode_ = m; }

  std::vector<Param>& params() noexcept { return params_; }
  const std::vector<Param>& params() const noexcept { return params_; }
  std::vector<NormStats>& norm_stats() noexcept { return stats_; }
  const std::vector<NormStats>& norm_stats() const noexcept { return stats_; }
  Param* find_param(const std::string& name);
  const Param* find_param(const std::string& name) const;
  NormStats* find_stats(const std::string& name);

  /// Thresholds per channel: learned for GLT, the linear ramp for FT.
  std::vector<std::vector<double>> encoder_thresholds() const;
  /// GLT latent parameters (throws ConfigError for other encoders).
  ThermoParams thermo() const;
  EncodedPlanes encode(const ImageF& image, const ImageU16* raw = nullptr) const;

  /// Forward pass over normalized images. With `training`, batch statistics
  /// are used and running statistics updated; `ws` (optional) keeps what
  /// backward() needs. Base-2 encoders need `raw` integer images.
  Logits forward(std::span<const ImageF> batch, bool training, Workspace* ws,
                 std::span<const ImageU16> raw = {});
  Logits infer(std::span<const ImageF> batch, std::span<const ImageU16> raw = {}) const;

  /// Accumulates parameter gradients for dL/dlogits.
  void backward(Workspace& ws, const Logits& dlogits);

  /// Double-precision variants of forward/backward (gradient checks).
  Logits forward_f64(std::span<const ImageF> batch, bool training, Workspace64* ws,
                     std::span<const ImageU16> raw = {});
  void backward_f64(Workspace64& ws, const Logits& dlogits);
  void zero_grad();

  double logit_scale() const noexcept { return logit_scale_; }
  SurrogateConfig surrogate;
  /// Weight of the current batch in the running-statistics update.
  double norm_momentum = kBatchNormMomentum;

  /// Parameters equal (value-wise) and same topology/mode.
  friend bool operator==(const Model& a, const Model& b) {
    return a.cfg_ == b.cfg_ && a.mode_ == b.mode_ && a.params_ == b.params_ && a.stats_ == b.stats_;
  }

 private:
  template <typename T>
  Logits forward_impl(std::span<const ImageF> batch, bool training, BasicWorkspace<T>* ws,
                      std::span<const ImageU16> raw);
  template <typename T>
  void backward_impl(BasicWorkspace<T>& ws, const Logits& dlogits);

  NetConfig cfg_;
  std::vector<LayerInfo> layers_;
  Mode mode_ = Mode::real;
  std::vector<Param> params_;
  std::vector<NormStats> stats_;
  double logit_scale_ = 1.0;
};

/// Per-batch activations kept between forward and backward.
template <typename T>
struct BasicWorkspace {
  struct Unit {
    std::size_t batch = 0;
    std::vector<T> input;     // classifier input (flattened)
    std::vector<T> cols;      // im2col, groups concatenated
    std::vector<T> weights;   // effective (signed or real) weights
    std::vector<T> xhat;      // normalized conv output
    std::vector<double> inv_std;
    std::vector<T> preact;    // batch-norm output
  };
  std::vector<Unit> units;
  std::vector<ImageF> images;  // encoder inputs (GLT backward)
};

/// Copies every parameter and statistic whose name and shape match; returns
/// the names that were not found in `src`.
std::vector<std::string> transfer_parameters(const Model& src, Model& dst);

/// Fresh fan-in scaled initialization for the weights of one layer.
void reinitialize_layer(Model& model, const std::string& layer, std::uint64_t seed);

// ---------------------------------------------------------------- losses

struct LossConfig {
  double temperature = 8.0;
  double lambda = 0.5;

  void validate() const;
  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

/// Mean softmax cross-entropy; writes dL/dlogits when `grad` is non-null.
double softmax_cross_entropy(const Logits& logits, std::span<const std::uint32_t> labels, Logits* grad = nullptr);

/// (T^2 / N) sum_i KL(softmax(teacher_i / T) || softmax(student_i / T)).
/// The teacher is a constant; `grad` receives dL/dstudent.
double distributional_loss(const Logits& teacher, const Logits& student, double temperature,
                           Logits* grad = nullptr);

double total_loss(double ce, double distr, double lambda);

// ---------------------------------------------------------------- optimizer

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool rectified = true;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct CosineSchedule {
  double lr_init = 1e-3;
  double lr_final = 1e-8;
  std::int64_t total_steps = 1;

  /// lr_final + (lr_init - lr_final) * (1 + cos(pi * step / total)) / 2, clamped at the ends.
  double lr(std::int64_t step) const;
  friend bool operator==(const CosineSchedule&, const CosineSchedule&) = default;
};

struct TrainState {
  Mode mode = Mode::real;
  std::string stage = "pretrain";
  std::size_t epoch = 0;           // completed epochs in the current stage
  std::int64_t step = 0;           // optimizer steps in the current stage
  std::int64_t global_step = 0;    // never decreases
  CosineSchedule schedule;
  OptimizerConfig optimizer;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  /// Zero moments shaped like `params` and restarts the stage counters.
  void reset(std::span<const Param> params, std::string stage_name, std::int64_t total_steps);
  friend bool operator==(const TrainState&, const TrainState&) = default;
};

/// One Adam (or rectified Adam) update with the scheduled learning rate,
/// followed by projection of GLT latents onto [floor, inf).
void optimizer_step(std::span<Param> params, TrainState& state, double latent_floor = kLatentFloor);

// ---------------------------------------------------------------- training

struct TrainConfig {
  std::size_t pretrain_epochs = 4;
  std::size_t binary_epochs = 4;
  std::size_t batch_size = 64;
  double lr_init = 1e-3;
  double lr_final = 1e-8;
  OptimizerConfig optimizer;
  AugmentConfig augment;
  double gamma = 1.0;  // gamma inversion after normalization; 1 disables
  SurrogateConfig surrogate;
  LossConfig loss;
  std::uint64_t seed = 1;
  bool eval_each_epoch = true;
  /// Re-estimate batch-norm statistics over the training split after every epoch.
  bool recalibrate_norm = true;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EpochRecord {
  std::string stage;
  std::size_t epoch = 0;
  std::int64_t step = 0;
  std::int64_t global_step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double ce = 0.0;
  double kd = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> test_accuracy;
};

using LogSink = std::function<void(const EpochRecord&)>;
/// Called after every completed epoch, e.g. to write a resumable checkpoint.
using EpochHook = std::function<void(const Model&, const TrainState&)>;

struct StageOptions {
  std::size_t epochs = 1;
  /// Teacher for the distributional loss; with nullptr the loss is pure CE.
  const Model* teacher = nullptr;
  double lambda = 0.0;
  /// Stop after this many epochs in this call (simulated interruption).
  std::optional<std::size_t> stop_after;
  EpochHook on_epoch;
};

/// Trains in the model's current mode until state.epoch == options.epochs.
/// The data order and augmentation of epoch e depend only on (seed, stage, e),
/// so an interrupted stage resumes exactly.
void train_stage(Model& model, TrainState& state, const Dataset& data, const TrainConfig& cfg,
                 const StageOptions& options, const LogSink& log = {});

/// Starts stage `name` in `mode`: resets moments and the cosine schedule.
void begin_stage(Model& model, TrainState& state, const Dataset& data, const TrainConfig& cfg, Mode mode,
                 std::string name, std::size_t epochs);

/// Real-valued pre-training followed by binary training initialized from it.
/// Continues from `state` if it is already part-way through.
TrainState pretrain_then_binarize(Model& model, const Dataset& data, const TrainConfig& cfg,
                                  const LogSink& log = {}, std::optional<TrainState> resume = std::nullopt,
                                  std::optional<std::size_t> stop_after = std::nullopt,
                                  const EpochHook& on_epoch = {});

/// Copies a trained real-valued model into a binary-mode model of the same topology.
void binarize_from(const Model& real_model, Model& target);

/// Accuracy in percent. Binary-mode models are evaluated with the integer
/// XNOR/popcount pipeline.
double evaluate(const Model& model, const Dataset& data, Split split, double gamma);

/// Replaces the running batch-norm statistics by the average batch
/// statistics of one pass over the (unaugmented) training split.
void recalibrate_norm(Model& model, const Dataset& data, const TrainConfig& cfg);

std::vector<ImageF> prepare_batch(const Dataset& data, std::span<const std::size_t> idx, double gamma);

// ---------------------------------------------------------------- deployment

/// Fully-binarized inference: packed weights and integer thresholds.
class IntegerNet {
 public:
  static IntegerNet compile(const Model& model);

  /// Integer class scores for one encoded input.
  std::vector<std::int32_t> run(const EncodedPlanes& planes) const;
  std::vector<std::int32_t> run(const Model& model, const ImageF& image, const ImageU16* raw = nullptr) const;

  struct ConvStage {
    std::string name;
    BitTensor weights;  // signed, rows flipped where the folded BN scale is negative
    PackedConvWeights packed;
    ConvParams conv;
    std::vector<std::size_t> shuffle;  // empty when not shuffled
    std::vector<std::int32_t> thresholds;
  };
  const std::vector<ConvStage>& stages() const noexcept { return stages_; }
  const BitTensor& classifier() const noexcept { return classifier_; }

 private:
  std::vector<ConvStage> stages_;
  BitTensor classifier_;
};

/// Smallest integer z with batchnorm_eval(z) >= 0 (or the flipped form for a
/// negative scale). Exact over |z| <= bound.
std::int32_t fold_threshold(double mean, double inv_std, double gamma, double beta, std::int32_t bound,
                            bool* flipped);

}  // namespace thermobnn
