// SPDX-License-Identifier: Apache-2.0
#include "thermobnn/experiment.hpp"

#include <json.hpp>

#include "thermobnn/errors.hpp"
#include "thermobnn/io.hpp"

namespace thermobnn {

namespace {

using json = nlohmann::json;

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

EncoderSpec encoder_from(const json& j, EncoderSpec e) {
  if (j.contains("kind")) {
    const auto k = j.at("kind").get<std::string>();
    if (k == "glt") e.kind = EncodingKind::glt;
    else if (k == "ft") e.kind = EncodingKind::fixed_thermometer;
    else if (k == "base2") e.kind = EncodingKind::base2;
    else throw ConfigError("unknown encoder kind '" + k + "'");
  }
  take(j, "planes", e.planes);
  take(j, "adc_bits", e.adc_bits);
  return e;
}

}  // namespace

void ExperimentConfig::set_seed(std::uint64_t s) {
  seed = s;
  train.seed = s;
}

ExperimentConfig experiment_from_json(const std::string& text, const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  try {
    const json j = json::parse(text);
    if (j.value("format", std::string{}) != "thermobnn-experiment") {
      throw ConfigError("experiment config: missing format tag 'thermobnn-experiment'");
    }
    if (j.value("version", 0) != 1) throw ConfigError("experiment config: unsupported version");
    std::uint64_t seed = 1;
    take(j, "seed", seed);

    const json& net = j.at("network");
    if (net.contains("preset")) {
      EncoderSpec enc = encoder_from(net.value("encoder", json::object()), {});
      cfg.net = preset_config(net.at("preset").get<std::string>(), enc, net.value("height", std::size_t{32}),
                              net.value("width", std::size_t{32}));
      take(net, "classes", cfg.net.num_classes);
    } else if (net.contains("file")) {
      cfg.net = load_net_config((base_dir / net.at("file").get<std::string>()).string());
    } else {
      cfg.net = net_config_from_json(net.dump());
    }

    if (j.contains("data")) {
      const json& d = j.at("data");
      if (d.contains("synthetic")) {
        SyntheticSpec s;
        const json& js = d.at("synthetic");
        take(js, "classes", s.classes);
        take(js, "train", s.train);
        take(js, "test", s.test);
        take(js, "height", s.height);
        take(js, "width", s.width);
        take(js, "channels", s.channels);
        take(js, "seed", s.seed);
        take(js, "noise", s.noise);
        cfg.data.synthetic = s;
      } else if (d.contains("path")) {
        cfg.data.path = base_dir / d.at("path").get<std::string>();
      }
    }

    TrainConfig& t = cfg.train;
    if (j.contains("train")) {
      const json& jt = j.at("train");
      take(jt, "pretrain_epochs", t.pretrain_epochs);
      take(jt, "binary_epochs", t.binary_epochs);
      take(jt, "batch_size", t.batch_size);
      take(jt, "lr_init", t.lr_init);
      take(jt, "lr_final", t.lr_final);
      take(jt, "gamma", t.gamma);
      take(jt, "eval_each_epoch", t.eval_each_epoch);
      take(jt, "recalibrate_norm", t.recalibrate_norm);
      if (jt.contains("optimizer")) {
        const json& o = jt.at("optimizer");
        const auto name = o.value("name", std::string{"radam"});
        if (name != "radam" && name != "adam") throw ConfigError("unknown optimizer '" + name + "'");
        t.optimizer.rectified = name == "radam";
        take(o, "beta1", t.optimizer.beta1);
        take(o, "beta2", t.optimizer.beta2);
        take(o, "eps", t.optimizer.eps);
      }
      if (jt.contains("augment")) {
        const json& a = jt.at("augment");
        take(a, "pad", t.augment.pad);
        take(a, "crop_h", t.augment.crop_h);
        take(a, "crop_w", t.augment.crop_w);
        take(a, "flip", t.augment.flip);
        take(a, "cutout", t.augment.cutout);
      }
      if (jt.contains("surrogate")) {
        const json& s = jt.at("surrogate");
        take(s, "p", t.surrogate.p);
        take(s, "m", t.surrogate.m);
        if (s.contains("beta") && !s.at("beta").is_null()) t.surrogate.beta = s.at("beta").get<double>();
      }
      if (jt.contains("loss")) {
        take(jt.at("loss"), "temperature", t.loss.temperature);
        take(jt.at("loss"), "lambda", t.loss.lambda);
      }
    }
    if (j.contains("prune")) {
      const json& p = j.at("prune");
      PruneConfig& pc = cfg.prune;
      take(p, "first_block", pc.first_block);
      take(p, "stage_epochs", pc.stage_epochs);
      take(p, "oneshot_epochs", pc.oneshot_epochs);
      take(p, "scratch_pretrain_epochs", pc.scratch_pretrain_epochs);
      take(p, "scratch_binary_epochs", pc.scratch_binary_epochs);
      take(p, "lambda", pc.lambda);
      take(p, "groups", pc.groups);
    } else {
      cfg.prune.lambda = t.loss.lambda;
    }
    cfg.set_seed(seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  cfg.train.loss.validate();
  cfg.train.surrogate.validate();
  if (cfg.train.batch_size == 0) throw ConfigError("experiment config: batch_size must be positive");
  return cfg;
}

std::string experiment_to_json(const ExperimentConfig& cfg) {
  json j;
  j["format"] = "thermobnn-experiment";
  j["version"] = 1;
  j["seed"] = cfg.seed;
  j["network"] = json::parse(net_config_to_json(cfg.net));
  if (cfg.data.synthetic) {
    const auto& s = *cfg.data.synthetic;
    j["data"]["synthetic"] = {{"classes", s.classes}, {"train", s.train}, {"test", s.test}, {"height", s.height},
                              {"width", s.width},     {"channels", s.channels}, {"seed", s.seed}, {"noise", s.noise}};
  } else if (!cfg.data.path.empty()) {
    j["data"]["path"] = cfg.data.path.string();
  }
  const TrainConfig& t = cfg.train;
  j["train"] = {{"pretrain_epochs", t.pretrain_epochs},
                {"binary_epochs", t.binary_epochs},
                {"batch_size", t.batch_size},
                {"lr_init", t.lr_init},
                {"lr_final", t.lr_final},
                {"optimizer",
                 {{"name", t.optimizer.rectified ? "radam" : "adam"},
                  {"beta1", t.optimizer.beta1},
                  {"beta2", t.optimizer.beta2},
                  {"eps", t.optimizer.eps}}},
                {"augment",
                 {{"pad", t.augment.pad},
                  {"crop_h", t.augment.crop_h},
                  {"crop_w", t.augment.crop_w},
                  {"flip", t.augment.flip},
                  {"cutout", t.augment.cutout}}},
                {"gamma", t.gamma},
                {"surrogate", {{"p", t.surrogate.p}, {"m", t.surrogate.m}}},
                {"loss", {{"temperature", t.loss.temperature}, {"lambda", t.loss.lambda}}},
                {"eval_each_epoch", t.eval_each_epoch},
                {"recalibrate_norm", t.recalibrate_norm}};
  j["train"]["surrogate"]["beta"] = t.surrogate.beta ? json(*t.surrogate.beta) : json(nullptr);
  const PruneConfig& p = cfg.prune;
  j["prune"] = {{"first_block", p.first_block},
                {"stage_epochs", p.stage_epochs},
                {"oneshot_epochs", p.oneshot_epochs},
                {"scratch_pretrain_epochs", p.scratch_pretrain_epochs},
                {"scratch_binary_epochs", p.scratch_binary_epochs},
                {"lambda", p.lambda},
                {"groups", p.groups}};
  return j.dump(2) + "\n";
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  return experiment_from_json(io::read_text_file(path), path.parent_path());
}

Dataset load_experiment_data(const ExperimentConfig& cfg, const std::filesystem::path& override_path) {
  if (!override_path.empty()) return load_dataset(override_path);
  if (cfg.data.synthetic) return make_synthetic(*cfg.data.synthetic);
  if (cfg.data.path.empty()) throw ConfigError("experiment config names no data");
  return load_dataset(cfg.data.path);
}

}  // namespace thermobnn
