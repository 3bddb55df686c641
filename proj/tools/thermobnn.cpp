// SPDX-License-Identifier: Apache-2.0
//
// thermobnn command-line front end.
//
// Exit codes: 0 ok, 1 usage or configuration error, 2 data error,
// 3 numeric failure.
#include <Eigen/Core>
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "thermobnn/adcsim.hpp"
#include "thermobnn/checkpoint.hpp"
#include "thermobnn/errors.hpp"
#include "thermobnn/experiment.hpp"
#include "thermobnn/io.hpp"
#include "thermobnn/pruning.hpp"
#include "thermobnn/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace thermobnn;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Globals {
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  std::string config;
};

ExperimentConfig read_config(const Globals& g) {
  if (g.config.empty()) throw ConfigError("--config is required");
  ExperimentConfig cfg = load_experiment(g.config);
  if (g.seed) cfg.set_seed(*g.seed);
  return cfg;
}

json record_json(const EpochRecord& r) {
  json j{{"stage", r.stage},          {"epoch", r.epoch}, {"step", r.step}, {"global_step", r.global_step},
         {"lr", r.lr},                {"loss", r.loss},   {"ce", r.ce},     {"kd", r.kd},
         {"train_accuracy", r.train_accuracy}};
  j["test_accuracy"] = r.test_accuracy ? json(*r.test_accuracy) : json(nullptr);
  return j;
}

std::string provenance_of(const TrainState& s) { return s.stage == "binary" ? "binarized" : "pretrain"; }

// ---------------------------------------------------------------- train

int cmd_train(const Globals& g, const std::string& data_path, const std::string& out, std::string log_path,
              const std::string& resume, std::optional<std::size_t> stop_after) {
  ExperimentConfig cfg = read_config(g);
  const Dataset data = load_experiment_data(cfg, data_path);
  if (log_path.empty()) log_path = out + ".log.jsonl";
  const std::string experiment = experiment_to_json(cfg);

  Model model(cfg.net, cfg.seed);
  std::optional<TrainState> state;
  std::vector<std::string> history;
  if (!resume.empty()) {
    Checkpoint ck = load_checkpoint(resume);
    if (!ck.state) throw LoadError("checkpoint has no optimizer state to resume from: " + resume);
    if (!(ck.config == cfg.net)) throw ConfigError("checkpoint network differs from the config");
    model = restore(ck);
    state = ck.state;
    history = ck.history;
    history.push_back("resume:" + ck.state->stage + ":" + std::to_string(ck.state->epoch));
  }

  std::ofstream log(log_path, resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw LoadError("cannot write log " + log_path);
  auto sink = [&](const EpochRecord& r) {
    log << record_json(r).dump() << "\n";
    log.flush();
    std::fprintf(stderr, "[%s] epoch %zu loss %.4f train %.2f%%\n", r.stage.c_str(), r.epoch, r.loss,
                 r.train_accuracy);
  };
  auto hook = [&](const Model& m, const TrainState& s) {
    Checkpoint ck = capture(m, provenance_of(s), cfg.seed, cfg.train.seed, s);
    ck.history = history;
    ck.experiment = experiment;
    save_checkpoint(ck, out);
  };
  const TrainState final_state = pretrain_then_binarize(model, data, cfg.train, sink, state, stop_after, hook);
  Checkpoint ck = capture(model, provenance_of(final_state), cfg.seed, cfg.train.seed, final_state);
  ck.history = history;
  ck.experiment = experiment;
  save_checkpoint(ck, out);
  std::printf("checkpoint %s hash %s\n", out.c_str(), io::hex64(checkpoint_hash(ck)).c_str());
  return kOk;
}

// ---------------------------------------------------------------- prune

int cmd_prune(const Globals& g, const std::string& teacher_path, const std::string& data_path,
              const std::string& out_dir, const std::string& mode, bool resume,
              std::optional<std::size_t> stop_after) {
  ExperimentConfig cfg = read_config(g);
  const Dataset data = load_experiment_data(cfg, data_path);
  const Checkpoint tck = load_checkpoint(teacher_path);
  Model teacher = restore(tck);
  teacher.set_mode(Mode::binary);
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !resume) {
    throw ConfigError("output directory " + out_dir + " is not empty; pass --resume to continue");
  }
  fs::create_directories(out_dir);
  PruneOptions opt;
  opt.dir = fs::path(out_dir);
  opt.stop_after = stop_after;
  opt.init_seed = cfg.seed;
  opt.log = [](const EpochRecord& r) {
    std::fprintf(stderr, "[%s] epoch %zu loss %.4f train %.2f%%\n", r.stage.c_str(), r.epoch, r.loss,
                 r.train_accuracy);
  };

  const PruneStage baseline = measure(teacher, data, cfg.train, "baseline", "baseline", 0);
  std::vector<PruneStage> rows;
  const bool all = mode == "all";
  std::vector<PruneRun> runs;
  if (all || mode == "gradual") runs.push_back(prune_gradual(teacher, data, cfg.train, cfg.prune, opt));
  if ((all || mode == "oneshot") && (runs.empty() || runs.back().complete)) {
    runs.push_back(prune_oneshot_depth(teacher, data, cfg.train, cfg.prune, opt));
  }
  if ((all || mode == "scratch") && (runs.empty() || runs.back().complete)) {
    runs.push_back(train_from_scratch(pruned_config(teacher.config(), cfg.prune), data, cfg.train, cfg.prune, opt));
  }
  for (const auto& run : runs) {
    if (!run.complete) {
      std::printf("interrupted; rerun with --resume to continue\n");
      return kOk;
    }
    rows.insert(rows.end(), run.stages.begin(), run.stages.end());
  }
  io::write_text_atomic(fs::path(out_dir) / "tradeoff.csv", emit_tradeoff(baseline, rows));
  std::fputs(emit_tradeoff(baseline, rows).c_str(), stdout);
  return kOk;
}

// ---------------------------------------------------------------- encode

int cmd_encode(const std::string& image_path, const std::string& ck_path, bool ft, bool base2, std::size_t planes,
               double gamma, const std::string& out, const std::string& dump) {
  int bits = 8;
  const ImageU16 raw = read_netpbm(image_path, &bits);
  const ImageF img = normalize(raw, bits, gamma);
  EncodedPlanes e;
  if (base2) {
    e = encode_base2(raw, bits);
  } else if (ft) {
    e = encode_fixed_thermometer(img, planes, bits);
  } else {
    if (ck_path.empty()) throw ConfigError("encode needs --checkpoint, --ft or --base2");
    const Model m = restore(load_checkpoint(ck_path));
    if (m.config().in_channels != img.channels) {
      throw DimensionError("image has " + std::to_string(img.channels) + " channels, model expects " +
                           std::to_string(m.config().in_channels));
    }
    e = m.encode(img, &raw);
  }
  io::write_file_atomic(out, encoded_planes_to_bytes(e));
  if (!dump.empty()) io::write_text_atomic(dump, encoded_planes_dump(e));
  std::printf("%zu planes of %zux%zu, %zu clamped\n", e.planes.shape()[0], e.planes.shape()[1],
              e.planes.shape()[2], e.clamped);
  return kOk;
}

// ---------------------------------------------------------------- thresholds / curves

int cmd_export_thresholds(const std::string& ck_path, int bits, const std::string& format, const std::string& out) {
  const Model m = restore(load_checkpoint(ck_path));
  ThresholdTable table;
  if (m.config().encoder.kind == EncodingKind::glt) {
    table = ThresholdTable::from_params(m.thermo(), bits);
  } else if (m.config().encoder.kind == EncodingKind::fixed_thermometer) {
    table.adc_bits = bits;
    table.planes = m.config().encoder.planes;
    for (const auto& t : m.encoder_thresholds()) table.codes.push_back(quantize_thresholds(t, bits));
  } else {
    throw ConfigError("base-2 encoders have no thresholds to export");
  }
  for (std::size_t c = 0; c < table.codes.size(); ++c) {
    if (const auto n = code_collisions(table.codes[c])) {
      std::fprintf(stderr, "warning: channel %zu has %zu colliding codes at %d bits\n", c, n, bits);
    }
  }
  if (format == "binary") {
    io::write_file_atomic(out, threshold_table_to_binary(table));
  } else {
    io::write_text_atomic(out, threshold_table_to_text(table));
  }
  return kOk;
}

int cmd_curves(const std::string& ck_path, const std::string& out) {
  const Model m = restore(load_checkpoint(ck_path));
  const auto thr = m.encoder_thresholds();
  std::string csv = "channel,level,threshold\n";
  for (std::size_t c = 0; c < thr.size(); ++c) {
    for (std::size_t i = 0; i < thr[c].size(); ++i) {
      csv += std::to_string(c) + "," + std::to_string(i + 1) + "," + io::fixed(thr[c][i], 8) + "\n";
    }
  }
  io::write_text_atomic(out, csv);
  return kOk;
}

// ---------------------------------------------------------------- eval

int cmd_eval(const Globals& g, const std::string& ck_path, const std::string& data_path,
             std::optional<double> gamma_override) {
  const Checkpoint ck = load_checkpoint(ck_path);
  const Model m = restore(ck);
  double gamma = 1.0;
  Dataset data;
  if (!g.config.empty()) {
    const ExperimentConfig cfg = read_config(g);
    gamma = cfg.train.gamma;
    data = load_experiment_data(cfg, data_path);
  } else if (!ck.experiment.empty()) {
    const ExperimentConfig cfg = experiment_from_json(ck.experiment);
    gamma = cfg.train.gamma;
    data = load_experiment_data(cfg, data_path);
  } else {
    if (data_path.empty()) throw ConfigError("eval needs --data or --config");
    data = load_dataset(data_path);
  }
  if (gamma_override) gamma = *gamma_override;
  const auto size = count_model_size(m.config());
  json j{{"mode", to_string(m.mode())},
         {"train_accuracy", evaluate(m, data, Split::train, gamma)},
         {"test_accuracy", evaluate(m, data, Split::test, gamma)},
         {"size_bits", size.total_bits()},
         {"binary_weight_bits", size.binary_weight_bits},
         {"batchnorm_bits", size.batchnorm_bits},
         {"encoder_bits", size.encoder_bits},
         {"bops", count_bops(m.config()).total}};
  std::printf("%s\n", j.dump(2).c_str());
  return kOk;
}

int cmd_synth(const Globals& g, const SyntheticSpec& base, const std::string& out) {
  SyntheticSpec s = base;
  if (g.seed) s.seed = *g.seed;
  save_dataset(make_synthetic(s), out);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fully-binarized networks with learned thermometer input encoding"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Seed for initialization, data order and augmentation");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--config", g.config, "Experiment config (JSON)");

  std::string data, out, log, resume_path, checkpoint, teacher, mode = "all", image, dump, format = "text";
  std::size_t stop_after = 0, planes = 8;
  double gamma = 1.0;
  int bits = 8;
  bool resume = false, ft = false, base2 = false;

  auto* train = app.add_subcommand("train", "Pre-train in real mode, then train the binary network");
  train->add_option("--data", data, "Dataset file or folder (overrides the config)");
  train->add_option("--out", out, "Checkpoint path")->required();
  train->add_option("--log", log, "Epoch log (JSON lines); default <out>.log.jsonl");
  train->add_option("--resume", resume_path, "Continue from a checkpoint with optimizer state");
  auto* train_stop = train->add_option("--stop-after", stop_after, "Stop after this many epochs");

  auto* prune = app.add_subcommand("prune", "Gradual block pruning and competitors");
  prune->add_option("--teacher", teacher, "Baseline checkpoint")->required();
  prune->add_option("--data", data, "Dataset file or folder (overrides the config)");
  prune->add_option("--out", out, "Output directory")->required();
  prune->add_option("--mode", mode, "gradual, oneshot, scratch or all")
      ->check(CLI::IsMember({"gradual", "oneshot", "scratch", "all"}));
  prune->add_flag("--resume", resume, "Continue from the output directory");
  auto* prune_stop = prune->add_option("--stop-after", stop_after, "Stop after this many epochs");

  auto* encode = app.add_subcommand("encode", "Encode an image into bit planes");
  encode->add_option("--image", image, "PGM/PPM image")->required()->check(CLI::ExistingFile);
  auto* enc_ck = encode->add_option("--checkpoint", checkpoint, "Model whose encoder to use");
  auto* enc_ft = encode->add_flag("--ft", ft, "Fixed linear thermometer");
  auto* enc_b2 = encode->add_flag("--base2", base2, "Base-2 bit planes");
  enc_ck->excludes(enc_ft)->excludes(enc_b2);
  enc_ft->excludes(enc_b2);
  encode->add_option("--planes", planes, "Planes per channel for --ft")->check(CLI::PositiveNumber);
  encode->add_option("--gamma", gamma, "Gamma inversion applied after normalization");
  encode->add_option("--out", out, "Packed plane file")->required();
  encode->add_option("--dump", dump, "Optional text dump");

  auto* exportt = app.add_subcommand("export-thresholds", "Write per-channel ADC code tables");
  exportt->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  exportt->add_option("--bits", bits, "DAC resolution")->check(CLI::Range(1, 16));
  exportt->add_option("--format", format, "text or binary")->check(CLI::IsMember({"text", "binary"}));
  exportt->add_option("--out", out, "Output file")->required();

  auto* curves = app.add_subcommand("curves", "Encoding curves as CSV (channel, level, threshold)");
  curves->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  curves->add_option("--out", out, "CSV path")->required();

  auto* eval = app.add_subcommand("eval", "Accuracy, model size and BOPs");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  eval->add_option("--data", data, "Dataset file or folder");
  auto* eval_gamma = eval->add_option("--gamma", gamma, "Override the gamma inversion");

  SyntheticSpec synth_spec;
  auto* synth = app.add_subcommand("synth", "Write the synthetic dataset to a file");
  synth->add_option("--classes", synth_spec.classes);
  synth->add_option("--train", synth_spec.train);
  synth->add_option("--test", synth_spec.test);
  synth->add_option("--size", synth_spec.height)->each([&](const std::string&) { synth_spec.width = synth_spec.height; });
  synth->add_option("--out", out, "Dataset file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  if (*seed_opt) g.seed = seed;
  set_kernel_threads(g.threads);
  Eigen::setNbThreads(static_cast<int>(g.threads));

  try {
    if (*train) {
      return cmd_train(g, data, out, log, resume_path,
                       *train_stop ? std::optional<std::size_t>(stop_after) : std::nullopt);
    }
    if (*prune) {
      return cmd_prune(g, teacher, data, out, mode, resume,
                       *prune_stop ? std::optional<std::size_t>(stop_after) : std::nullopt);
    }
    if (*encode) return cmd_encode(image, checkpoint, ft, base2, planes, gamma, out, dump);
    if (*exportt) return cmd_export_thresholds(checkpoint, bits, format, out);
    if (*curves) return cmd_curves(checkpoint, out);
    if (*eval) return cmd_eval(g, checkpoint, data, *eval_gamma ? std::optional<double>(gamma) : std::nullopt);
    if (*synth) return cmd_synth(g, synth_spec, out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kNumeric;
  } catch (const Error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  }
  return kUsage;
}
