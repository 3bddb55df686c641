// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numbers>

#include "thermobnn/errors.hpp"
#include "thermobnn/io.hpp"
#include "thermobnn/rng.hpp"
#include "thermobnn/train.hpp"

namespace thermobnn {

namespace {

void check_logits(const Logits& l, const char* what) {
  if (l.v.size() != l.n * l.classes) throw DimensionError(std::string(what) + ": malformed logits");
}

// log-sum-exp of row i of (logits / T), and the matching softmax.
double log_softmax_row(const Logits& l, std::size_t i, double t, std::vector<double>& p) {
  p.resize(l.classes);
  double mx = -INFINITY;
  for (std::size_t j = 0; j < l.classes; ++j) mx = std::max(mx, l.at(i, j) / t);
  double sum = 0.0;
  for (std::size_t j = 0; j < l.classes; ++j) {
    p[j] = std::exp(l.at(i, j) / t - mx);
    sum += p[j];
  }
  for (double& x : p) x /= sum;
  return mx + std::log(sum);
}

std::uint64_t text_stream(const std::string& s) {
  return io::fnv1a64({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

std::size_t steps_per_epoch(const Dataset& data, const TrainConfig& cfg) {
  const std::size_t n = data.indices(Split::train).size();
  if (n == 0) throw ConfigError("training split is empty");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
  return (n + cfg.batch_size - 1) / cfg.batch_size;
}

}  // namespace

// ---------------------------------------------------------------- losses

void LossConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be positive");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
}

double softmax_cross_entropy(const Logits& logits, std::span<const std::uint32_t> labels, Logits* grad) {
  check_logits(logits, "cross-entropy");
  if (labels.size() != logits.n) throw DimensionError("cross-entropy: label count does not match batch");
  if (grad) *grad = Logits(logits.n, logits.classes);
  std::vector<double> p;
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(logits.n);
  for (std::size_t i = 0; i < logits.n; ++i) {
    if (labels[i] >= logits.classes) throw DomainError("cross-entropy: label out of range");
    const double lse = log_softmax_row(logits, i, 1.0, p);
    loss += lse - logits.at(i, labels[i]);
    if (grad) {
      for (std::size_t j = 0; j < logits.classes; ++j) grad->at(i, j) = (p[j] - (j == labels[i] ? 1.0 : 0.0)) * inv_n;
    }
  }
  return loss * inv_n;
}

double distributional_loss(const Logits& teacher, const Logits& student, double temperature, Logits* grad) {
  check_logits(teacher, "distributional loss");
  check_logits(student, "distributional loss");
  if (teacher.n != student.n || teacher.classes != student.classes) {
    throw DimensionError("distributional loss: teacher and student shapes differ");
  }
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (grad) *grad = Logits(student.n, student.classes);
  const double t = temperature;
  std::vector<double> pt, ps;
  double total = 0.0;
  for (std::size_t i = 0; i < student.n; ++i) {
    const double lt = log_softmax_row(teacher, i, t, pt);
    const double ls = log_softmax_row(student, i, t, ps);
    double kl = 0.0;
    for (std::size_t j = 0; j < student.classes; ++j) {
      if (pt[j] == 0.0) continue;
      const double log_pt = teacher.at(i, j) / t - lt;
      const double log_ps = student.at(i, j) / t - ls;
      kl += pt[j] * (log_pt - log_ps);
    }
    total += std::max(kl, 0.0);
    if (grad) {
      for (std::size_t j = 0; j < student.classes; ++j) {
        grad->at(i, j) = t / static_cast<double>(student.n) * (ps[j] - pt[j]);
      }
    }
  }
  return t * t / static_cast<double>(student.n) * total;
}

double total_loss(double ce, double distr, double lambda) { return (1.0 - lambda) * ce + lambda * distr; }

// ---------------------------------------------------------------- optimizer

double CosineSchedule::lr(std::int64_t step) const {
  if (total_steps <= 0 || step >= total_steps) return lr_final;
  if (step <= 0) return lr_init;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_final + (lr_init - lr_final) * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

void TrainState::reset(std::span<const Param> params, std::string stage_name, std::int64_t total_steps) {
  stage = std::move(stage_name);
  epoch = 0;
  step = 0;
  schedule.total_steps = total_steps;
  m.clear();
  v.clear();
  for (const auto& p : params) {
    m.emplace_back(p.value.size(), 0.0);
    v.emplace_back(p.value.size(), 0.0);
  }
}

void optimizer_step(std::span<Param> params, TrainState& state, double latent_floor) {
  if (state.m.size() != params.size()) throw ConfigError("optimizer state does not match the parameters");
  const auto& oc = state.optimizer;
  const double lr = state.schedule.lr(state.step);
  ++state.step;
  ++state.global_step;
  const double t = static_cast<double>(state.step);
  const double b1t = std::pow(oc.beta1, t), b2t = std::pow(oc.beta2, t);
  const double bias1 = 1.0 - b1t;

  bool adaptive = true;
  double rect = 1.0;
  if (oc.rectified) {
    const double rho_inf = 2.0 / (1.0 - oc.beta2) - 1.0;
    const double rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
    adaptive = rho_t > 5.0;
    if (adaptive) {
      rect = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
    }
  }

  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.value.size()) throw ConfigError("optimizer state does not match parameter '" + p.name + "'");
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in '" + p.name + "'");
      m[i] = oc.beta1 * m[i] + (1.0 - oc.beta1) * g;
      v[i] = oc.beta2 * v[i] + (1.0 - oc.beta2) * g * g;
      const double mhat = m[i] / bias1;
      if (adaptive) {
        const double vhat = std::sqrt(v[i] / (1.0 - b2t));
        p.value[i] -= lr * rect * mhat / (vhat + oc.eps);
      } else {
        p.value[i] -= lr * mhat;
      }
    }
    if (p.kind == ParamKind::glt_latent) {
      for (double& x : p.value) x = std::max(x, latent_floor);
    }
  }
}

// ---------------------------------------------------------------- training

std::vector<ImageF> prepare_batch(const Dataset& data, std::span<const std::size_t> idx, double gamma) {
  std::vector<ImageF> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(normalize(data.images.at(i), data.adc_bits, gamma));
  return out;
}

void recalibrate_norm(Model& model, const Dataset& data, const TrainConfig& cfg) {
  const auto idx = data.indices(Split::train);
  const bool base2 = model.config().encoder.kind == EncodingKind::base2;
  const double saved = model.norm_momentum;
  std::size_t k = 0;
  for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size, ++k) {
    const std::span<const std::size_t> part(idx.data() + start, std::min(cfg.batch_size, idx.size() - start));
    const auto images = prepare_batch(data, part, cfg.gamma);
    std::vector<ImageU16> raw;
    if (base2) {
      for (auto i : part) raw.push_back(data.images[i]);
    }
    model.norm_momentum = 1.0 / static_cast<double>(k + 1);
    model.forward(images, true, nullptr, raw);
  }
  model.norm_momentum = saved;
}

void begin_stage(Model& model, TrainState& state, const Dataset& data, const TrainConfig& cfg, Mode mode,
                 std::string name, std::size_t epochs) {
  model.set_mode(mode);
  state.mode = mode;
  state.optimizer = cfg.optimizer;
  state.schedule.lr_init = cfg.lr_init;
  state.schedule.lr_final = cfg.lr_final;
  const auto total = static_cast<std::int64_t>(epochs * steps_per_epoch(data, cfg));
  state.reset(model.params(), std::move(name), total);
}

void train_stage(Model& model, TrainState& state, const Dataset& data, const TrainConfig& cfg,
                 const StageOptions& options, const LogSink& log) {
  cfg.loss.validate();
  cfg.surrogate.validate();
  if (model.mode() != state.mode) throw ConfigError("model mode does not match the training state");
  if (data.channels != model.config().in_channels || data.height != model.config().height ||
      data.width != model.config().width) {
    throw DimensionError("dataset dimensions do not match the network input");
  }
  model.surrogate = cfg.surrogate;
  const auto train_idx = data.indices(Split::train);
  const bool use_teacher = options.teacher != nullptr && options.lambda > 0.0;
  const bool base2 = model.config().encoder.kind == EncodingKind::base2;
  const std::uint64_t stage_key = text_stream(state.stage);
  Workspace ws;
  std::size_t ran = 0;

  while (state.epoch < options.epochs) {
    if (options.stop_after && ran >= *options.stop_after) return;
    const std::size_t e = state.epoch;
    std::vector<std::size_t> order = train_idx;
    Rng shuffle_rng(cfg.seed, derive_stream({stage_key, e, 0x5EEDULL}));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double loss_sum = 0.0, ce_sum = 0.0, kd_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<ImageU16> raw;
      std::vector<ImageF> images;
      std::vector<std::uint32_t> labels;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        Rng aug_rng(cfg.seed, derive_stream({stage_key, e, idx}));
        raw.push_back(augment(data.images[idx], cfg.augment, aug_rng));
        images.push_back(normalize(raw.back(), data.adc_bits, cfg.gamma));
        labels.push_back(data.labels[idx]);
      }
      const std::span<const ImageU16> raw_span = base2 ? std::span<const ImageU16>(raw) : std::span<const ImageU16>{};
      model.zero_grad();
      Logits logits = model.forward(images, true, &ws, raw_span);
      Logits dce, grad;
      const double ce = softmax_cross_entropy(logits, labels, &dce);
      double kd = 0.0, loss = ce;
      if (use_teacher) {
        const Logits tl = options.teacher->infer(images, raw_span);
        Logits dkd;
        kd = distributional_loss(tl, logits, cfg.loss.temperature, &dkd);
        loss = total_loss(ce, kd, options.lambda);
        grad = Logits(logits.n, logits.classes);
        for (std::size_t k = 0; k < grad.v.size(); ++k) {
          grad.v[k] = (1.0 - options.lambda) * dce.v[k] + options.lambda * dkd.v[k];
        }
      } else {
        grad = std::move(dce);
      }
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite loss in stage '" + state.stage + "' epoch " + std::to_string(e) +
                           " step " + std::to_string(state.step));
      }
      model.backward(ws, grad);
      optimizer_step(model.params(), state, kLatentFloor);
      const double nb = static_cast<double>(end - start);
      loss_sum += loss * nb;
      ce_sum += ce * nb;
      kd_sum += kd * nb;
      for (std::size_t i = 0; i < logits.n; ++i) correct += logits.argmax(i) == labels[i] ? 1 : 0;
    }
    if (cfg.recalibrate_norm) recalibrate_norm(model, data, cfg);
    ++state.epoch;
    ++ran;
    EpochRecord rec;
    rec.stage = state.stage;
    rec.epoch = state.epoch;
    rec.step = state.step;
    rec.global_step = state.global_step;
    rec.lr = state.schedule.lr(state.step);
    const double n = static_cast<double>(order.size());
    rec.loss = loss_sum / n;
    rec.ce = ce_sum / n;
    rec.kd = kd_sum / n;
    rec.train_accuracy = 100.0 * static_cast<double>(correct) / n;
    if (cfg.eval_each_epoch && !data.indices(Split::test).empty()) {
      rec.test_accuracy = evaluate(model, data, Split::test, cfg.gamma);
    }
    if (log) log(rec);
    if (options.on_epoch) options.on_epoch(model, state);
  }
}

TrainState pretrain_then_binarize(Model& model, const Dataset& data, const TrainConfig& cfg, const LogSink& log,
                                  std::optional<TrainState> resume, std::optional<std::size_t> stop_after,
                                  const EpochHook& on_epoch) {
  TrainState state;
  if (resume) {
    state = std::move(*resume);
    model.set_mode(state.mode);
  } else {
    begin_stage(model, state, data, cfg, Mode::real, "pretrain", cfg.pretrain_epochs);
  }
  std::optional<std::size_t> budget = stop_after;
  if (state.stage == "pretrain") {
    const std::size_t before = state.epoch;
    train_stage(model, state, data, cfg, {cfg.pretrain_epochs, nullptr, 0.0, budget, on_epoch}, log);
    if (state.epoch < cfg.pretrain_epochs) return state;
    if (budget) *budget -= std::min(*budget, state.epoch - before);
    begin_stage(model, state, data, cfg, Mode::binary, "binary", cfg.binary_epochs);
    if (budget && *budget == 0) return state;
  } else if (state.stage != "binary") {
    throw ConfigError("cannot resume unknown stage '" + state.stage + "'");
  }
  train_stage(model, state, data, cfg, {cfg.binary_epochs, nullptr, 0.0, budget, on_epoch}, log);
  return state;
}

void binarize_from(const Model& real_model, Model& target) {
  if (!(real_model.config() == target.config())) throw ConfigError("binarize_from: topologies differ");
  target.params() = real_model.params();
  target.norm_stats() = real_model.norm_stats();
  target.set_mode(Mode::binary);
}

double evaluate(const Model& model, const Dataset& data, Split split, double gamma) {
  const auto idx = data.indices(split);
  if (idx.empty()) return 0.0;
  const bool base2 = model.config().encoder.kind == EncodingKind::base2;
  std::size_t correct = 0;
  if (model.mode() == Mode::binary) {
    const IntegerNet net = IntegerNet::compile(model);
    for (auto i : idx) {
      const ImageF img = normalize(data.images[i], data.adc_bits, gamma);
      const auto scores = net.run(model, img, base2 ? &data.images[i] : nullptr);
      const auto best = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
      correct += best == data.labels[i] ? 1 : 0;
    }
  } else {
    constexpr std::size_t kChunk = 128;
    for (std::size_t s = 0; s < idx.size(); s += kChunk) {
      const std::span<const std::size_t> part(idx.data() + s, std::min(kChunk, idx.size() - s));
      const auto images = prepare_batch(data, part, gamma);
      std::vector<ImageU16> raw;
      if (base2) {
        for (auto i : part) raw.push_back(data.images[i]);
      }
      const Logits l = model.infer(images, raw);
      for (std::size_t k = 0; k < part.size(); ++k) correct += l.argmax(k) == data.labels[part[k]] ? 1 : 0;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(idx.size());
}

}  // namespace thermobnn
