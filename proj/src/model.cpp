// SPDX-License-Identifier: Apache-2.0
#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <climits>
#include <cmath>

#include "thermobnn/errors.hpp"
#include "thermobnn/io.hpp"
#include "thermobnn/rng.hpp"
#include "thermobnn/train.hpp"

namespace thermobnn {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

std::atomic<bool> g_audit{false};
std::atomic<std::uint64_t> g_audit_layers{0}, g_audit_checked{0}, g_audit_bad{0};

template <typename T>
void audit_operands(std::span<const T> vals, bool allow_planes) {
  std::uint64_t bad = 0;
  for (T v : vals) {
    const bool ok = v == T(1) || v == T(-1) || (allow_planes && v == T(0));
    bad += ok ? 0 : 1;
  }
  g_audit_checked += vals.size();
  g_audit_bad += bad;
}

std::uint64_t name_stream(const std::string& name) {
  return io::fnv1a64({reinterpret_cast<const std::uint8_t*>(name.data()), name.size()});
}

void init_weights(Param& p, std::size_t fan_in, std::uint64_t seed) {
  Rng rng(seed, name_stream(p.name));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : p.value) v = rng.uniform(-bound, bound);
}

std::size_t fan_in_of(const LayerInfo& li) {
  return li.kind == LayerKind::linear ? li.in.c * li.in.h * li.in.w
                                      : (li.in.c / li.conv.groups) * li.conv.kernel * li.conv.kernel;
}

template <typename T>
T sign_of(double v) { return v >= 0.0 ? T(1) : T(-1); }

struct ConvGeom {
  std::size_t n, cin, h, w, cout, ho, wo, k, s, pad, g, cg, og, kk, p, np;
  ConvGeom(const LayerInfo& li, std::size_t batch)
      : n(batch), cin(li.in.c), h(li.in.h), w(li.in.w), cout(li.out.c), ho(li.out.h), wo(li.out.w),
        k(li.conv.kernel), s(li.conv.stride), pad(li.conv.kernel / 2), g(li.conv.groups),
        cg(cin / g), og(cout / g), kk(cg * k * k), p(ho * wo), np(batch * ho * wo) {}
};

template <typename T>
void im2col(const T* x, const ConvGeom& cg, T pad_value, std::vector<T>& cols) {
  cols.resize(cg.g * cg.kk * cg.np);
  for (std::size_t gi = 0; gi < cg.g; ++gi) {
    for (std::size_t cl = 0; cl < cg.cg; ++cl) {
      const std::size_t c = gi * cg.cg + cl;
      for (std::size_t ky = 0; ky < cg.k; ++ky) {
        for (std::size_t kx = 0; kx < cg.k; ++kx) {
          T* dst = cols.data() + (gi * cg.kk + (cl * cg.k + ky) * cg.k + kx) * cg.np;
          for (std::size_t n = 0; n < cg.n; ++n) {
            const T* src = x + (n * cg.cin + c) * cg.h * cg.w;
            for (std::size_t oy = 0; oy < cg.ho; ++oy) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * cg.s + ky) - static_cast<std::ptrdiff_t>(cg.pad);
              T* row = dst + n * cg.p + oy * cg.wo;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(cg.h)) {
                std::fill(row, row + cg.wo, pad_value);
                continue;
              }
              const T* srow = src + static_cast<std::size_t>(iy) * cg.w;
              for (std::size_t ox = 0; ox < cg.wo; ++ox) {
                const auto ix = static_cast<std::ptrdiff_t>(ox * cg.s + kx) - static_cast<std::ptrdiff_t>(cg.pad);
                row[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(cg.w)) ? pad_value : srow[ix];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* dcols, const ConvGeom& cg, std::size_t gi, T* dx) {
  for (std::size_t cl = 0; cl < cg.cg; ++cl) {
    const std::size_t c = gi * cg.cg + cl;
    for (std::size_t ky = 0; ky < cg.k; ++ky) {
      for (std::size_t kx = 0; kx < cg.k; ++kx) {
        const T* src = dcols + ((cl * cg.k + ky) * cg.k + kx) * cg.np;
        for (std::size_t n = 0; n < cg.n; ++n) {
          T* dst = dx + (n * cg.cin + c) * cg.h * cg.w;
          for (std::size_t oy = 0; oy < cg.ho; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * cg.s + ky) - static_cast<std::ptrdiff_t>(cg.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(cg.h)) continue;
            const T* srow = src + n * cg.p + oy * cg.wo;
            T* drow = dst + static_cast<std::size_t>(iy) * cg.w;
            for (std::size_t ox = 0; ox < cg.wo; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * cg.s + kx) - static_cast<std::ptrdiff_t>(cg.pad);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(cg.w)) drow[ix] += srow[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

const char* to_string(Mode m) { return m == Mode::binary ? "binary" : "real"; }

void set_kernel_audit(bool enabled) { g_audit = enabled; }
KernelAudit kernel_audit() { return {g_audit_layers.load(), g_audit_checked.load(), g_audit_bad.load()}; }
void reset_kernel_audit() {
  g_audit_layers = 0;
  g_audit_checked = 0;
  g_audit_bad = 0;
}

std::size_t Logits::argmax(std::size_t i) const {
  std::size_t best = 0;
  for (std::size_t j = 1; j < classes; ++j) {
    if (at(i, j) > at(i, best)) best = j;
  }
  return best;
}

Model::Model(NetConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
  layers_ = infer_shapes(cfg_);
  if (cfg_.encoder.kind == EncodingKind::glt) {
    const auto tp = ThermoParams::init(cfg_.in_channels, cfg_.encoder.planes, cfg_.encoder.adc_bits);
    params_.push_back(Param{"encoder.latent", ParamKind::glt_latent, Shape{tp.channels, tp.planes + 1},
                            tp.latent, std::vector<double>(tp.latent.size(), 0.0)});
  }
  for (const auto& li : layers_) {
    Param w{li.name + ".weight", ParamKind::weight, {}, {}, {}};
    if (li.kind == LayerKind::linear) {
      w.shape = {li.out.c, fan_in_of(li)};
    } else {
      w.shape = {li.out.c, li.in.c / li.conv.groups, li.conv.kernel, li.conv.kernel};
    }
    w.value.assign(li.weight_count, 0.0);
    w.grad.assign(li.weight_count, 0.0);
    init_weights(w, fan_in_of(li), init_seed);
    params_.push_back(std::move(w));
    if (li.bn_channels > 0) {
      const std::size_t c = li.bn_channels;
      params_.push_back(Param{li.name + ".bn.gamma", ParamKind::bn_gamma, Shape{c},
                              std::vector<double>(c, 1.0), std::vector<double>(c, 0.0)});
      params_.push_back(Param{li.name + ".bn.beta", ParamKind::bn_beta, Shape{c},
                              std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)});
      stats_.push_back(NormStats{li.name + ".bn", std::vector<double>(c, 0.0), std::vector<double>(c, 1.0)});
    }
  }
  const auto& cls = layers_.back();
  logit_scale_ = 1.0 / std::sqrt(static_cast<double>(fan_in_of(cls)));
}

Param* Model::find_param(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

const Param* Model::find_param(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

NormStats* Model::find_stats(const std::string& name) {
  for (auto& s : stats_) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

ThermoParams Model::thermo() const {
  const Param* p = find_param("encoder.latent");
  if (!p) throw ConfigError("model has no learned thermometer");
  ThermoParams tp;
  tp.channels = cfg_.in_channels;
  tp.planes = cfg_.encoder.planes;
  tp.adc_bits = cfg_.encoder.adc_bits;
  tp.latent = p->value;
  return tp;
}

std::vector<std::vector<double>> Model::encoder_thresholds() const {
  switch (cfg_.encoder.kind) {
    case EncodingKind::glt: return thermo().all_thresholds();
    case EncodingKind::fixed_thermometer:
      return std::vector<std::vector<double>>(cfg_.in_channels, linear_ramp(cfg_.encoder.planes, cfg_.encoder.adc_bits));
    case EncodingKind::base2: break;
  }
  throw ConfigError("base-2 encoding has no thresholds");
}

EncodedPlanes Model::encode(const ImageF& image, const ImageU16* raw) const {
  if (cfg_.encoder.kind == EncodingKind::base2) {
    if (!raw) throw ConfigError("base-2 encoding needs integer pixels");
    return encode_base2(*raw, cfg_.encoder.adc_bits);
  }
  return encode_thermometer(image, encoder_thresholds(), cfg_.encoder.kind);
}

void Model::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

Logits Model::infer(std::span<const ImageF> batch, std::span<const ImageU16> raw) const {
  // eval mode reads running statistics only
  Model& self = const_cast<Model&>(*this);
  return self.forward(batch, false, nullptr, raw);
}

template <typename T>
Logits Model::forward_impl(std::span<const ImageF> batch, bool training, BasicWorkspace<T>* ws,
                           std::span<const ImageU16> raw) {
  const std::size_t n = batch.size();
  if (n == 0) return Logits(0, cfg_.num_classes);
  const bool binary = mode_ == Mode::binary;
  const bool audit = binary && g_audit.load();
  if (ws) {
    ws->units.resize(layers_.size());
    if (cfg_.encoder.kind == EncodingKind::glt) ws->images.assign(batch.begin(), batch.end());
  }

  // Encoder: N x (C*M) x H x W planes of 0/1.
  const std::size_t planes = cfg_.encoder.planes_per_channel();
  const std::size_t hw = cfg_.height * cfg_.width;
  std::vector<T> x(n * cfg_.in_channels * planes * hw, T(0));
  if (cfg_.encoder.kind == EncodingKind::base2) {
    if (raw.size() != n) throw ConfigError("base-2 encoding needs integer pixels");
    for (std::size_t i = 0; i < n; ++i) {
      const auto ep = encode_base2(raw[i], cfg_.encoder.adc_bits);
      for (std::size_t k = 0; k < ep.planes.numel(); ++k) x[i * ep.planes.numel() + k] = ep.planes.bit(k) ? T(1) : T(0);
    }
  } else {
    const auto thr = encoder_thresholds();
    for (std::size_t i = 0; i < n; ++i) {
      const auto& im = batch[i];
      if (im.channels != cfg_.in_channels || im.height != cfg_.height || im.width != cfg_.width) {
        throw DimensionError("forward: image dimensions do not match the network input");
      }
      for (std::size_t c = 0; c < im.channels; ++c) {
        const auto& t = thr[c];
        for (std::size_t p = 0; p < hw; ++p) {
          const double v = std::clamp(static_cast<double>(im.data[c * hw + p]), 0.0, 1.0);
          for (std::size_t k = 0; k < planes && v >= t[k]; ++k) {
            x[((i * im.channels + c) * planes + k) * hw + p] = T(1);
          }
        }
      }
    }
  }

  std::size_t pi = cfg_.encoder.kind == EncodingKind::glt ? 1 : 0;  // parameter cursor
  std::size_t si = 0;                                                // stats cursor
  std::vector<T> y;
  for (std::size_t u = 0; u + 1 < layers_.size(); ++u) {
    const auto& li = layers_[u];
    const ConvGeom cg(li, n);
    const Param& wp = params_[pi];
    const Param& gp = params_[pi + 1];
    const Param& bp = params_[pi + 2];
    NormStats& st = stats_[si];
    pi += 3;
    ++si;

    typename BasicWorkspace<T>::Unit scratch;
    typename BasicWorkspace<T>::Unit& wu = ws ? ws->units[u] : scratch;
    wu.batch = n;
    wu.weights.resize(wp.value.size());
    for (std::size_t k = 0; k < wp.value.size(); ++k) {
      wu.weights[k] = binary ? sign_of<T>(wp.value[k]) : static_cast<T>(wp.value[k]);
    }
    const bool plane_input = u == 0;
    const T pad_value = (binary && !plane_input) ? -T(1) : T(0);
    im2col(x.data(), cg, pad_value, wu.cols);
    if (audit) {
      ++g_audit_layers;
      audit_operands<T>(wu.weights, false);
      audit_operands<T>(wu.cols, plane_input);
    }
    std::vector<T> conv(cg.cout * cg.np);
    for (std::size_t gi = 0; gi < cg.g; ++gi) {
      CMapR<T> wg(wu.weights.data() + gi * cg.og * cg.kk, static_cast<Eigen::Index>(cg.og), static_cast<Eigen::Index>(cg.kk));
      CMapR<T> cols(wu.cols.data() + gi * cg.kk * cg.np, static_cast<Eigen::Index>(cg.kk), static_cast<Eigen::Index>(cg.np));
      MapR<T> out(conv.data() + gi * cg.og * cg.np, static_cast<Eigen::Index>(cg.og), static_cast<Eigen::Index>(cg.np));
      out.noalias() = wg * cols;
    }
    // conv rows are output channels (group-major, already the natural order);
    // apply the shuffle, then batch norm and activation into NCHW.
    std::vector<std::size_t> perm = li.conv.shuffle ? shuffle_permutation(cg.cout, cg.g) : std::vector<std::size_t>{};
    y.assign(n * cg.cout * cg.p, T(0));
    if (ws) {
      wu.xhat.assign(n * cg.cout * cg.p, T(0));
      wu.preact.assign(n * cg.cout * cg.p, T(0));
      wu.inv_std.assign(cg.cout, 0.0);
    }
    const double count = static_cast<double>(cg.np);
    for (std::size_t j = 0; j < cg.cout; ++j) {
      const T* src = conv.data() + (perm.empty() ? j : perm[j]) * cg.np;
      double mean = 0.0, var = 0.0;
      if (training) {
        for (std::size_t q = 0; q < cg.np; ++q) mean += src[q];
        mean /= count;
        for (std::size_t q = 0; q < cg.np; ++q) var += (src[q] - mean) * (src[q] - mean);
        var /= count;
        st.mean[j] = (1.0 - norm_momentum) * st.mean[j] + norm_momentum * mean;
        const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
        st.var[j] = (1.0 - norm_momentum) * st.var[j] + norm_momentum * unbiased;
      } else {
        mean = st.mean[j];
        var = st.var[j];
      }
      const double inv_std = 1.0 / std::sqrt(var + kBatchNormEps);
      const double gamma = gp.value[j], beta = bp.value[j];
      if (ws) wu.inv_std[j] = inv_std;
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t q = 0; q < cg.p; ++q) {
          const std::size_t at = (b * cg.cout + j) * cg.p + q;
          const double pre = batchnorm_eval(src[b * cg.p + q], mean, inv_std, gamma, beta);
          if (ws) {
            wu.xhat[at] = static_cast<T>((src[b * cg.p + q] - mean) * inv_std);
            wu.preact[at] = static_cast<T>(pre);
          }
          y[at] = binary ? (pre >= 0.0 ? T(1) : -T(1)) : static_cast<T>(std::max(pre, 0.0));
        }
      }
    }
    x.swap(y);
  }

  // Classifier.
  const auto& cli = layers_.back();
  const Param& wp = params_[pi];
  const std::size_t d = fan_in_of(cli), classes = cli.out.c;
  typename BasicWorkspace<T>::Unit scratch;
  typename BasicWorkspace<T>::Unit& wu = ws ? ws->units.back() : scratch;
  wu.batch = n;
  wu.weights.resize(wp.value.size());
  for (std::size_t k = 0; k < wp.value.size(); ++k) {
    wu.weights[k] = binary ? sign_of<T>(wp.value[k]) : static_cast<T>(wp.value[k]);
  }
  if (audit) {
    ++g_audit_layers;
    audit_operands<T>(wu.weights, false);
    audit_operands<T>(x, false);
  }
  std::vector<T> z(n * classes);
  {
    CMapR<T> xin(x.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    CMapR<T> w(wu.weights.data(), static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(d));
    MapR<T> out(z.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(classes));
    out.noalias() = xin * w.transpose();
  }
  if (ws) wu.input = x;
  Logits logits(n, classes);
  for (std::size_t k = 0; k < z.size(); ++k) logits.v[k] = logit_scale_ * static_cast<double>(z[k]);
  return logits;
}

template <typename T>
void Model::backward_impl(BasicWorkspace<T>& ws, const Logits& dlogits) {
  if (ws.units.size() != layers_.size()) throw ConfigError("backward without a matching forward");
  const bool binary = mode_ == Mode::binary;
  const std::size_t n = dlogits.n;
  const bool glt = cfg_.encoder.kind == EncodingKind::glt;

  // Classifier.
  const auto& cli = layers_.back();
  Param& cw = params_.back();
  auto& cu = ws.units.back();
  const std::size_t d = fan_in_of(cli), classes = cli.out.c;
  std::vector<T> dz(n * classes);
  for (std::size_t k = 0; k < dz.size(); ++k) dz[k] = static_cast<T>(logit_scale_ * dlogits.v[k]);
  std::vector<T> dx(n * d);
  {
    CMapR<T> g(dz.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(classes));
    CMapR<T> xin(cu.input.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    CMapR<T> w(cu.weights.data(), static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(d));
    MatR<T> dw = g.transpose() * xin;
    for (std::size_t k = 0; k < cw.value.size(); ++k) {
      const double gk = dw.data()[k];
      if (!binary || std::abs(cw.value[k]) <= 1.0) cw.grad[k] += gk;
    }
    MapR<T> dxm(dx.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    dxm.noalias() = g * w;
  }

  std::size_t pi = params_.size() - 1;
  std::size_t si = stats_.size();
  for (std::size_t u = layers_.size() - 1; u-- > 0;) {
    const auto& li = layers_[u];
    const ConvGeom cg(li, n);
    pi -= 3;
    --si;
    Param& wp = params_[pi];
    Param& gp = params_[pi + 1];
    Param& bp = params_[pi + 2];
    auto& wu = ws.units[u];

    // Activation then batch norm, per output channel.
    const double count = static_cast<double>(cg.np);
    std::vector<T> dconv(cg.cout * cg.np);
    std::vector<std::size_t> perm = li.conv.shuffle ? shuffle_permutation(cg.cout, cg.g) : std::vector<std::size_t>{};
    std::vector<double> dpre(cg.np);
    for (std::size_t j = 0; j < cg.cout; ++j) {
      double dbeta = 0.0, dgamma = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t q = 0; q < cg.p; ++q) {
          const std::size_t at = (b * cg.cout + j) * cg.p + q;
          const T pre = wu.preact[at];
          const bool pass = binary ? std::abs(pre) <= T(1) : pre > T(0);
          const double g = pass ? dx[at] : 0.0;
          dpre[b * cg.p + q] = g;
          dbeta += g;
          dgamma += g * wu.xhat[at];
        }
      }
      gp.grad[j] += dgamma;
      bp.grad[j] += dbeta;
      const double scale = gp.value[j] * wu.inv_std[j] / count;
      T* dst = dconv.data() + (perm.empty() ? j : perm[j]) * cg.np;
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t q = 0; q < cg.p; ++q) {
          const std::size_t at = (b * cg.cout + j) * cg.p + q;
          dst[b * cg.p + q] = static_cast<T>(scale * (count * dpre[b * cg.p + q] - dbeta - wu.xhat[at] * dgamma));
        }
      }
    }

    const bool need_dx = u > 0 || glt;
    std::vector<T> dinput(need_dx ? n * cg.cin * cg.h * cg.w : 0, T(0));
    std::vector<T> dcols;
    for (std::size_t gi = 0; gi < cg.g; ++gi) {
      CMapR<T> dy(dconv.data() + gi * cg.og * cg.np, static_cast<Eigen::Index>(cg.og), static_cast<Eigen::Index>(cg.np));
      CMapR<T> cols(wu.cols.data() + gi * cg.kk * cg.np, static_cast<Eigen::Index>(cg.kk), static_cast<Eigen::Index>(cg.np));
      MatR<T> dw = dy * cols.transpose();
      for (std::size_t o = 0; o < cg.og; ++o) {
        for (std::size_t k = 0; k < cg.kk; ++k) {
          const std::size_t idx = (gi * cg.og + o) * cg.kk + k;
          if (!binary || std::abs(wp.value[idx]) <= 1.0) wp.grad[idx] += dw(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(k));
        }
      }
      if (need_dx) {
        CMapR<T> wg(wu.weights.data() + gi * cg.og * cg.kk, static_cast<Eigen::Index>(cg.og), static_cast<Eigen::Index>(cg.kk));
        dcols.resize(cg.kk * cg.np);
        MapR<T> dc(dcols.data(), static_cast<Eigen::Index>(cg.kk), static_cast<Eigen::Index>(cg.np));
        dc.noalias() = wg.transpose() * dy;
        col2im(dcols.data(), cg, gi, dinput.data());
      }
    }
    dx.swap(dinput);
  }

  if (glt) {
    // dx now holds dL/dI^b for the encoder planes.
    const ThermoParams tp = thermo();
    Param& lp = params_.front();
    const std::size_t per = cfg_.in_channels * cfg_.encoder.planes * cfg_.height * cfg_.width;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<float> up(dx.begin() + static_cast<std::ptrdiff_t>(i * per),
                            dx.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
      glt_backward(up, ws.images[i], tp, surrogate, lp.grad);
    }
  }
}

Logits Model::forward(std::span<const ImageF> batch, bool training, Workspace* ws,
                      std::span<const ImageU16> raw) {
  return forward_impl<float>(batch, training, ws, raw);
}

Logits Model::forward_f64(std::span<const ImageF> batch, bool training, Workspace64* ws,
                          std::span<const ImageU16> raw) {
  return forward_impl<double>(batch, training, ws, raw);
}

void Model::backward(Workspace& ws, const Logits& dlogits) { backward_impl<float>(ws, dlogits); }
void Model::backward_f64(Workspace64& ws, const Logits& dlogits) { backward_impl<double>(ws, dlogits); }

std::vector<std::string> transfer_parameters(const Model& src, Model& dst) {
  std::vector<std::string> missing;
  for (auto& p : dst.params()) {
    const Param* s = src.find_param(p.name);
    if (s && s->shape == p.shape) {
      p.value = s->value;
    } else {
      missing.push_back(p.name);
    }
  }
  for (auto& st : dst.norm_stats()) {
    for (const auto& s : src.norm_stats()) {
      if (s.name == st.name && s.mean.size() == st.mean.size()) st = s;
    }
  }
  return missing;
}

void reinitialize_layer(Model& model, const std::string& layer, std::uint64_t seed) {
  for (const auto& li : model.layers()) {
    if (li.name != layer) continue;
    if (Param* w = model.find_param(layer + ".weight")) init_weights(*w, fan_in_of(li), seed);
    if (Param* g = model.find_param(layer + ".bn.gamma")) std::fill(g->value.begin(), g->value.end(), 1.0);
    if (Param* b = model.find_param(layer + ".bn.beta")) std::fill(b->value.begin(), b->value.end(), 0.0);
    if (NormStats* s = model.find_stats(layer + ".bn")) {
      std::fill(s->mean.begin(), s->mean.end(), 0.0);
      std::fill(s->var.begin(), s->var.end(), 1.0);
    }
    return;
  }
  throw ConfigError("reinitialize_layer: no layer named '" + layer + "'");
}

// ---------------------------------------------------------------- integer path

std::int32_t fold_threshold(double mean, double inv_std, double gamma, double beta, std::int32_t bound,
                            bool* flipped) {
  const std::int32_t never = bound + 1;
  *flipped = gamma < 0.0;
  auto fires = [&](std::int32_t z) { return batchnorm_eval(static_cast<double>(z), mean, inv_std, gamma, beta) >= 0.0; };
  if (gamma == 0.0) return beta >= 0.0 ? -bound : never;
  if (gamma > 0.0) {
    // smallest z in [-bound, bound] that fires; f is non-decreasing
    if (!fires(bound)) return never;
    std::int32_t lo = -bound, hi = bound;
    while (lo < hi) {
      const std::int32_t mid = lo + (hi - lo) / 2;
      if (fires(mid)) hi = mid; else lo = mid + 1;
    }
    return lo;
  }
  // gamma < 0: fires for z <= zmax; with negated weights z' = -z fires for z' >= -zmax.
  if (!fires(-bound)) return never;
  std::int32_t lo = -bound, hi = bound;
  while (lo < hi) {
    const std::int32_t mid = lo + (hi - lo + 1) / 2;
    if (fires(mid)) lo = mid; else hi = mid - 1;
  }
  return -lo;
}

IntegerNet IntegerNet::compile(const Model& model) {
  if (model.mode() != Mode::binary) throw ConfigError("IntegerNet: model is not in binary mode");
  IntegerNet net;
  const auto& layers = model.layers();
  for (std::size_t u = 0; u + 1 < layers.size(); ++u) {
    const auto& li = layers[u];
    const Param* w = model.find_param(li.name + ".weight");
    const Param* g = model.find_param(li.name + ".bn.gamma");
    const Param* b = model.find_param(li.name + ".bn.beta");
    const NormStats* st = nullptr;
    for (const auto& s : model.norm_stats()) {
      if (s.name == li.name + ".bn") st = &s;
    }
    ConvStage cs;
    cs.name = li.name;
    cs.conv = {li.conv.stride, li.conv.kernel / 2, li.conv.groups};
    cs.weights = BitTensor(w->shape, BitSemantics::signed_pm1);
    for (std::size_t k = 0; k < w->value.size(); ++k) cs.weights.set_bit(k, w->value[k] >= 0.0);
    if (li.conv.shuffle) cs.shuffle = shuffle_permutation(li.out.c, li.conv.groups);
    const auto bound = static_cast<std::int32_t>(fan_in_of(li));
    const std::size_t row = w->value.size() / li.out.c;
    for (std::size_t j = 0; j < li.out.c; ++j) {
      const double inv_std = 1.0 / std::sqrt(st->var[j] + kBatchNormEps);
      bool flipped = false;
      cs.thresholds.push_back(fold_threshold(st->mean[j], inv_std, g->value[j], b->value[j], bound, &flipped));
      if (flipped) {
        const std::size_t src = cs.shuffle.empty() ? j : cs.shuffle[j];
        for (std::size_t k = 0; k < row; ++k) cs.weights.set_bit(src * row + k, !cs.weights.bit(src * row + k));
      }
    }
    cs.packed = pack_conv_weights(cs.weights);
    net.stages_.push_back(std::move(cs));
  }
  const Param* cw = model.find_param("cls.weight");
  net.classifier_ = BitTensor(cw->shape, BitSemantics::signed_pm1);
  for (std::size_t k = 0; k < cw->value.size(); ++k) net.classifier_.set_bit(k, cw->value[k] >= 0.0);
  return net;
}

std::vector<std::int32_t> IntegerNet::run(const EncodedPlanes& planes) const {
  BitTensor x = planes.planes;
  for (const auto& st : stages_) {
    IntTensor z = bin_conv2d(x, st.packed, st.conv);
    if (!st.shuffle.empty()) {
      z.data = channel_shuffle<std::int32_t>(std::span<const std::int32_t>(z.data), z.shape[0], st.conv.groups);
    }
    x = heaviside_threshold(z, st.thresholds);
  }
  BitTensor flat(Shape{x.numel()}, BitSemantics::signed_pm1);
  for (std::size_t k = 0; k < x.numel(); ++k) flat.set_bit(k, x.bit(k));
  return popcount_linear(flat, classifier_).data;
}

std::vector<std::int32_t> IntegerNet::run(const Model& model, const ImageF& image, const ImageU16* raw) const {
  return run(model.encode(image, raw));
}

}  // namespace thermobnn
