// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "thermobnn/errors.hpp"
#include "thermobnn/train.hpp"

using namespace thermobnn;

namespace {

using fixture::tiny_data;
using fixture::tiny_net;

std::vector<ImageF> random_images(Rng& rng, std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  std::vector<ImageF> out;
  for (std::size_t i = 0; i < n; ++i) {
    ImageF img(c, h, w);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform());
    out.push_back(std::move(img));
  }
  return out;
}

void perturb(Model& m, Rng& rng, double scale) {
  for (auto& p : m.params()) {
    if (p.kind == ParamKind::bn_gamma) {
      for (auto& v : p.value) v = 0.5 + rng.uniform();
    } else if (p.kind == ParamKind::bn_beta) {
      for (auto& v : p.value) v = scale * (rng.uniform() - 0.5);
    }
  }
}

double ce_f64(Model& m, const std::vector<ImageF>& x, const std::vector<std::uint32_t>& y) {
  return softmax_cross_entropy(m.forward_f64(x, true, nullptr), y);
}

}  // namespace

// ---------------------------------------------------------------- losses

TEST_CASE("distributional loss examples") {
  Logits t(1, 2), s(1, 2);
  t.at(0, 0) = 2.0;
  s.at(0, 1) = 2.0;
  const double got = distributional_loss(t, s, 8.0);
  const long double want = 64.0L * oracle::kl_softmax(t.v, s.v, 8.0L);
  CHECK(std::abs(static_cast<long double>(got) - want) < 1e-9L);
  CHECK(std::abs(got - 1.989648028345539) < 1e-9);

  Rng rng(1, 0);
  Logits a(5, 7);
  for (auto& v : a.v) v = 4.0 * rng.normal();
  CHECK(std::abs(distributional_loss(a, a, 8.0)) < 1e-12);
  for (int trial = 0; trial < 1000; ++trial) {
    Logits p(2, 5), q(2, 5);
    for (auto& v : p.v) v = 6.0 * rng.normal();
    for (auto& v : q.v) v = 6.0 * rng.normal();
    REQUIRE(distributional_loss(p, q, 0.5 + 10.0 * rng.uniform()) >= 0.0);
  }
}

TEST_CASE("loss gradients match central differences") {
  Rng rng(2, 1);
  Logits t(3, 4), s(3, 4);
  for (auto& v : t.v) v = 2.0 * rng.normal();
  for (auto& v : s.v) v = 2.0 * rng.normal();
  const std::vector<std::uint32_t> labels{0, 3, 2};
  Logits gkd, gce;
  distributional_loss(t, s, 3.0, &gkd);
  softmax_cross_entropy(s, labels, &gce);
  const double eps = 1e-6;
  for (std::size_t k = 0; k < s.v.size(); ++k) {
    Logits up = s, dn = s;
    up.v[k] += eps;
    dn.v[k] -= eps;
    const double fkd = (distributional_loss(t, up, 3.0) - distributional_loss(t, dn, 3.0)) / (2 * eps);
    const double fce = (softmax_cross_entropy(up, labels) - softmax_cross_entropy(dn, labels)) / (2 * eps);
    CHECK(gkd.v[k] == doctest::Approx(fkd).epsilon(1e-6));
    CHECK(gce.v[k] == doctest::Approx(fce).epsilon(1e-6));
  }
}

TEST_CASE("total loss mixes the two terms") {
  CHECK(total_loss(2.0, 4.0, 0.0) == 2.0);
  CHECK(total_loss(2.0, 4.0, 1.0) == 4.0);
  CHECK(total_loss(2.0, 4.0, 0.5) == 3.0);
  LossConfig bad;
  bad.lambda = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

// ---------------------------------------------------------------- optimizer

TEST_CASE("cosine schedule endpoints, midpoint and monotonicity") {
  for (double floor : {1e-8, 1e-10}) {
    const CosineSchedule s{1e-3, floor, 1000};
    CHECK(std::abs(s.lr(0) - 1e-3) < 1e-12);
    CHECK(std::abs(s.lr(1000) - floor) < 1e-12);
    CHECK(std::abs(s.lr(500) - (1e-3 + floor) / 2) < 1e-12);
    for (std::int64_t k = 1; k <= 1000; ++k) REQUIRE(s.lr(k) <= s.lr(k - 1));
  }
}

TEST_CASE("first optimizer step moves against the gradient") {
  for (bool rect : {true, false}) {
    std::vector<Param> params(1);
    params[0].name = "w";
    params[0].value = {0.5, -0.25, 0.0};
    params[0].grad = {0.3, -2.0, 1e-3};
    TrainState st;
    st.optimizer.rectified = rect;
    st.reset(params, "s", 10);
    const auto before = params[0].value;
    optimizer_step(params, st);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK((params[0].value[i] - before[i]) * params[0].grad[i] < 0.0);
    }
    CHECK(st.step == 1);
    CHECK(st.global_step == 1);
  }
}

TEST_CASE("optimizer rejects non-finite gradients") {
  std::vector<Param> params(1);
  params[0].name = "w";
  params[0].value = {1.0};
  params[0].grad = {NAN};
  TrainState st;
  st.reset(params, "s", 10);
  CHECK_THROWS_AS(optimizer_step(params, st), NumericError);
}

TEST_CASE("GLT latents stay above the floor with monotone thresholds") {
  Rng rng(3, 2);
  std::vector<Param> params(1);
  params[0].name = "encoder.latent";
  params[0].kind = ParamKind::glt_latent;
  const ThermoParams init = ThermoParams::init(3, 8, 8);
  params[0].value = init.latent;
  params[0].grad.assign(init.latent.size(), 0.0);
  TrainState st;
  st.schedule = CosineSchedule{0.05, 1e-8, 300};
  st.reset(params, "fuzz", 300);
  for (int step = 0; step < 300; ++step) {
    for (auto& g : params[0].grad) g = 10.0 * rng.normal();
    optimizer_step(params, st);
    ThermoParams p = init;
    p.latent = params[0].value;
    for (double v : p.latent) REQUIRE(v >= kLatentFloor);
    for (std::size_t c = 0; c < 3; ++c) {
      const auto t = p.thresholds(c);
      REQUIRE(t.front() > 0.0);
      REQUIRE(t.back() < 1.0);
      for (std::size_t i = 1; i < t.size(); ++i) REQUIRE(t[i] > t[i - 1]);
    }
  }
}

// ---------------------------------------------------------------- engine

TEST_CASE("model parameters follow the topology") {
  const Model m(tiny_net(EncodingKind::glt), 5);
  REQUIRE(m.find_param("encoder.latent") != nullptr);
  CHECK(m.find_param("encoder.latent")->shape == Shape{3, 5});
  CHECK(m.find_param("stem.l1.weight")->shape == Shape{8, 12, 3, 3});
  CHECK(m.find_param("b2.l1.weight")->shape == Shape{16, 8, 3, 3});
  CHECK(m.find_param("cls.weight")->shape == Shape{4, 16 * 4 * 4});
  CHECK(m.thermo().all_thresholds()[2] == thresholds_from_latent(glt_init(4, 8)));
  CHECK(Model(tiny_net(EncodingKind::glt), 5) == m);
  CHECK_FALSE(Model(tiny_net(EncodingKind::glt), 6) == m);
}

TEST_CASE("real-mode gradients match central differences in double precision") {
  Model m(tiny_net(EncodingKind::fixed_thermometer), 11);
  Rng rng(4, 3);
  perturb(m, rng, 0.4);
  const auto x = random_images(rng, 4, 3, 8, 8);
  const std::vector<std::uint32_t> y{0, 1, 2, 3};
  Workspace64 ws;
  m.zero_grad();
  const Logits l = m.forward_f64(x, true, &ws);
  Logits dl;
  softmax_cross_entropy(l, y, &dl);
  m.backward_f64(ws, dl);

  const double eps = 1e-6;
  std::size_t checked = 0;
  double worst = 0.0;
  for (auto& p : m.params()) {
    const std::size_t stride = std::max<std::size_t>(1, p.value.size() / 24);
    for (std::size_t k = 0; k < p.value.size(); k += stride) {
      const double orig = p.value[k];
      p.value[k] = orig + eps;
      const double up = ce_f64(m, x, y);
      p.value[k] = orig - eps;
      const double dn = ce_f64(m, x, y);
      p.value[k] = orig;
      const double fd = (up - dn) / (2 * eps);
      const double an = p.grad[k];
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4});
      worst = std::max(worst, rel);
      ++checked;
    }
  }
  MESSAGE("checked " << checked << " entries, worst relative error " << worst);
  CHECK(checked > 100);
  CHECK(worst < 1e-4);
}

TEST_CASE("single-precision gradients agree with the double engine") {
  Model m(tiny_net(EncodingKind::glt), 12);
  Rng rng(5, 4);
  perturb(m, rng, 0.4);
  const auto x = random_images(rng, 4, 3, 8, 8);
  const std::vector<std::uint32_t> y{3, 2, 1, 0};
  Workspace ws32;
  Workspace64 ws64;
  m.zero_grad();
  Logits dl;
  softmax_cross_entropy(m.forward(x, true, &ws32), y, &dl);
  m.backward(ws32, dl);
  std::vector<std::vector<double>> g32;
  for (const auto& p : m.params()) g32.push_back(p.grad);
  m.zero_grad();
  softmax_cross_entropy(m.forward_f64(x, true, &ws64), y, &dl);
  m.backward_f64(ws64, dl);
  for (std::size_t k = 0; k < g32.size(); ++k) {
    const auto& g64 = m.params()[k].grad;
    double scale = 1e-6;
    for (double v : g64) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < g64.size(); ++i) REQUIRE(std::abs(g32[k][i] - g64[i]) <= 1e-3 * scale);
  }
}

TEST_CASE("a batch of identical samples has the single-sample gradient") {
  Model m(tiny_net(EncodingKind::fixed_thermometer), 13);
  Rng rng(6, 5);
  const auto one = random_images(rng, 1, 3, 8, 8);
  const std::vector<ImageF> three{one[0], one[0], one[0]};
  Workspace64 ws;
  Logits dl;
  m.zero_grad();
  softmax_cross_entropy(m.forward_f64(one, false, &ws), std::vector<std::uint32_t>{1}, &dl);
  m.backward_f64(ws, dl);
  std::vector<std::vector<double>> g1;
  for (const auto& p : m.params()) g1.push_back(p.grad);
  m.zero_grad();
  softmax_cross_entropy(m.forward_f64(three, false, &ws), std::vector<std::uint32_t>{1, 1, 1}, &dl);
  m.backward_f64(ws, dl);
  for (std::size_t k = 0; k < g1.size(); ++k) {
    for (std::size_t i = 0; i < g1[k].size(); ++i) {
      REQUIRE(m.params()[k].grad[i] == doctest::Approx(g1[k][i]).epsilon(1e-9).scale(1e-12));
    }
  }
}

TEST_CASE("a single linear layer learns an identity-like task") {
  NetConfig cfg;
  cfg.name = "linear";
  cfg.in_channels = 4;
  cfg.height = cfg.width = 2;
  cfg.encoder = EncoderSpec{EncodingKind::fixed_thermometer, 4, 8};
  cfg.num_classes = 4;
  std::vector<ImageF> x;
  std::vector<std::uint32_t> y;
  for (std::uint32_t k = 0; k < 4; ++k) {
    ImageF img(4, 2, 2, 0.1F);
    for (std::size_t p = 0; p < 4; ++p) img.at(k, p / 2, p % 2) = 0.9F;
    x.push_back(img);
    y.push_back(k);
  }
  for (bool rect : {true, false}) {
    Model m(cfg, 3);
    TrainState st;
    st.optimizer.rectified = rect;
    st.schedule = CosineSchedule{1e-2, 1e-4, 100};
    st.reset(m.params(), "linear", 100);
    Workspace ws;
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 100; ++step) {
      m.zero_grad();
      Logits dl;
      const double loss = softmax_cross_entropy(m.forward(x, true, &ws), y, &dl);
      if (step == 0) first = loss;
      CHECK(loss <= last + 1e-9 + (step == 0 ? 1e9 : 0.0));
      last = loss;
      m.backward(ws, dl);
      optimizer_step(m.params(), st);
    }
    CHECK(last < first);
    if (!rect) {
      // the rectified variant is still warming up after 100 steps
      CHECK(last < 0.5 * first);
      const Logits out = m.infer(x);
      for (std::size_t i = 0; i < 4; ++i) CHECK(out.argmax(i) == i);
    }
  }
}

TEST_CASE("binary mode feeds only +-1 operands to the multiply-accumulates") {
  Model m(tiny_net(EncodingKind::glt), 14);
  m.set_mode(Mode::binary);
  Rng rng(7, 6);
  const auto x = random_images(rng, 3, 3, 8, 8);
  set_kernel_audit(true);
  reset_kernel_audit();
  Workspace ws;
  m.forward(x, true, &ws);
  const KernelAudit a = kernel_audit();
  set_kernel_audit(false);
  CHECK(a.binary_layers == 5 * 1);
  CHECK(a.operands_checked > 0);
  CHECK(a.non_binary_operands == 0);
}

TEST_CASE("threshold folding is exact over the integer domain") {
  Rng rng(8, 7);
  for (int trial = 0; trial < 500; ++trial) {
    const double mean = 20.0 * rng.normal(), inv_std = 0.01 + rng.uniform();
    const double gamma = rng.bernoulli(0.5) ? 0.1 + rng.uniform() : -(0.1 + rng.uniform());
    const double beta = 2.0 * rng.normal();
    bool flipped = false;
    const std::int32_t bound = 60;
    const std::int32_t thr = fold_threshold(mean, inv_std, gamma, beta, bound, &flipped);
    CHECK(flipped == (gamma < 0.0));
    for (std::int32_t z = -bound; z <= bound; ++z) {
      const bool fires = batchnorm_eval(z, mean, inv_std, gamma, beta) >= 0.0;
      const std::int32_t zz = flipped ? -z : z;
      REQUIRE(fires == (zz >= thr));
    }
  }
}

TEST_CASE("integer XNOR/popcount inference equals the float binary forward") {
  for (EncodingKind kind : {EncodingKind::glt, EncodingKind::fixed_thermometer, EncodingKind::base2}) {
    Model m(tiny_net(kind), 15);
    Rng rng(9, 8);
    perturb(m, rng, 1.0);
    m.set_mode(Mode::binary);
    const Dataset ds = tiny_data(2, 64, 16);
    // populate running statistics with a few training-mode passes
    Workspace ws;
    for (std::size_t s = 0; s < 64; s += 16) {
      std::vector<std::size_t> idx;
      std::vector<ImageU16> raw;
      for (std::size_t k = s; k < s + 16; ++k) {
        idx.push_back(k);
        raw.push_back(ds.images[k]);
      }
      m.forward(prepare_batch(ds, idx, 2.2), true, &ws, raw);
    }
    for (auto& st : m.norm_stats()) {
      for (auto& v : st.mean) v += 0.5 * rng.normal();
    }
    const IntegerNet net = IntegerNet::compile(m);
    for (std::size_t i = 0; i < 80; ++i) {
      const ImageF img = normalize(ds.images[i], 8, 2.2);
      const std::vector<ImageF> one{img};
      const std::vector<ImageU16> raw{ds.images[i]};
      const Logits l = m.infer(one, raw);
      const auto scores = net.run(m, img, &ds.images[i]);
      for (std::size_t j = 0; j < 4; ++j) REQUIRE(l.at(0, j) == doctest::Approx(scores[j] * m.logit_scale()).epsilon(1e-12));
    }
  }
}

TEST_CASE("transfer and binarize copy parameters by name") {
  const Model src(tiny_net(EncodingKind::glt), 16);
  Model dst(tiny_net(EncodingKind::glt), 17);
  CHECK(transfer_parameters(src, dst).empty());
  CHECK(dst == src);
  Model bin(tiny_net(EncodingKind::glt), 18);
  binarize_from(src, bin);
  CHECK(bin.mode() == Mode::binary);
  CHECK(bin.params() == src.params());
  Model other(tiny_net(EncodingKind::glt, 5), 1);
  CHECK_THROWS_AS(binarize_from(src, other), ConfigError);
  const auto missing = transfer_parameters(src, other);
  CHECK(missing == std::vector<std::string>{"cls.weight"});
}

TEST_CASE("norm recalibration averages batch statistics over the training split") {
  const Dataset ds = tiny_data(4);
  TrainConfig cfg;
  cfg.batch_size = 40;
  cfg.gamma = 2.2;
  Model a(tiny_net(EncodingKind::glt), 31);
  Model b = a;
  for (auto& st : b.norm_stats()) std::fill(st.mean.begin(), st.mean.end(), 7.0);
  recalibrate_norm(a, ds, cfg);
  recalibrate_norm(b, ds, cfg);
  CHECK(a.norm_stats() == b.norm_stats());
  CHECK(a.norm_momentum == kBatchNormMomentum);

  Model whole(tiny_net(EncodingKind::glt), 31);
  cfg.batch_size = 240;
  recalibrate_norm(whole, ds, cfg);
  REQUIRE(whole.norm_stats().size() == a.norm_stats().size());
  // equal-sized batches: the mean of batch means is the split mean (first layer only,
  // deeper layers see different batch normalizations)
  const auto& sa = a.norm_stats().front().mean;
  const auto& sw = whole.norm_stats().front().mean;
  for (std::size_t j = 0; j < sa.size(); ++j) CHECK(sa[j] == doctest::Approx(sw[j]).epsilon(1e-5));
}

// ---------------------------------------------------------------- protocol

TEST_CASE("two-stage training logs, switches mode and resumes exactly") {
  const Dataset ds = tiny_data(3);
  TrainConfig cfg;
  cfg.pretrain_epochs = 2;
  cfg.binary_epochs = 2;
  cfg.batch_size = 32;
  cfg.gamma = 2.2;
  cfg.augment.pad = 1;
  cfg.augment.flip = true;
  cfg.eval_each_epoch = false;
  Model full(tiny_net(EncodingKind::glt), 21);
  std::vector<EpochRecord> log;
  const TrainState fs = pretrain_then_binarize(full, ds, cfg, [&](const EpochRecord& r) { log.push_back(r); });
  REQUIRE(log.size() == 4);
  CHECK(log[0].stage == "pretrain");
  CHECK(log[3].stage == "binary");
  for (std::size_t i = 1; i < log.size(); ++i) CHECK(log[i].global_step > log[i - 1].global_step);
  CHECK(fs.mode == Mode::binary);
  CHECK(full.mode() == Mode::binary);
  CHECK(fs.global_step == 4 * 8);
  CHECK(full.thermo().latent != ThermoParams::init(3, 4, 8).latent);

  for (std::size_t cut : {1U, 2U, 3U}) {
    Model part(tiny_net(EncodingKind::glt), 21);
    const TrainState s1 = pretrain_then_binarize(part, ds, cfg, {}, std::nullopt, cut);
    const TrainState s2 = pretrain_then_binarize(part, ds, cfg, {}, s1);
    CHECK(part == full);
    CHECK(s2 == fs);
  }
}

TEST_CASE("binary training initialized from the real model beats a random start") {
  SyntheticSpec spec;
  spec.train = 1500;
  spec.test = 500;
  const Dataset ds = make_synthetic(spec);
  TrainConfig cfg;
  cfg.pretrain_epochs = 3;
  cfg.binary_epochs = 3;
  cfg.batch_size = 32;
  cfg.gamma = 2.2;
  cfg.optimizer.rectified = false;
  cfg.eval_each_epoch = false;
  const NetConfig net = preset_config("toy11");
  Model staged(net, 1);
  pretrain_then_binarize(staged, ds, cfg);
  Model random(net, 1);
  TrainState st;
  begin_stage(random, st, ds, cfg, Mode::binary, "binary", cfg.binary_epochs);
  train_stage(random, st, ds, cfg, {cfg.binary_epochs, nullptr, 0.0, std::nullopt, {}});
  const double a = evaluate(staged, ds, Split::test, cfg.gamma);
  const double b = evaluate(random, ds, Split::test, cfg.gamma);
  MESSAGE("pretrained start " << a << "%, random start " << b << "%");
  CHECK(a > b);
}

TEST_CASE("an untrained model scores near chance") {
  SyntheticSpec s;
  s.train = 10;
  s.test = 2000;
  const Dataset ds = make_synthetic(s);
  for (std::uint64_t seed : {1U, 2U, 3U}) {
    Model m(NetConfig(preset_config("toy11")), seed);
    m.set_mode(Mode::binary);
    const double acc = evaluate(m, ds, Split::test, 2.2);
    CHECK(acc >= 5.0);
    CHECK(acc <= 15.0);
  }
}

TEST_CASE("training rejects mismatched data") {
  const Dataset ds = tiny_data(5, 32, 8);
  Model m(tiny_net(EncodingKind::glt), 1);
  m.set_mode(Mode::real);
  TrainConfig cfg;
  NetConfig wrong = tiny_net(EncodingKind::glt);
  wrong.height = wrong.width = 16;
  Model w(wrong, 1);
  TrainState st;
  begin_stage(w, st, ds, cfg, Mode::real, "pretrain", 1);
  CHECK_THROWS_AS(train_stage(w, st, ds, cfg, {1, nullptr, 0.0, std::nullopt, {}}), DimensionError);
}
