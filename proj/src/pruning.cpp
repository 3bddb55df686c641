// SPDX-License-Identifier: Apache-2.0
#include "thermobnn/pruning.hpp"

#include "thermobnn/checkpoint.hpp"
#include "thermobnn/errors.hpp"
#include "thermobnn/io.hpp"
#include "thermobnn/rng.hpp"

namespace thermobnn {

namespace {

namespace fs = std::filesystem;

void remove_checkpoint(const fs::path& p) {
  std::error_code ec;
  fs::remove(p, ec);
  fs::remove(p.string() + ".json", ec);
}

struct StageRunner {
  const Dataset& data;
  const TrainConfig& cfg;
  const PruneOptions& opt;
  std::optional<std::size_t> budget;

  fs::path file(const std::string& kind, const std::string& name) const {
    return *opt.dir / (kind + "-" + name + ".tbck");
  }

  std::optional<Model> finished(const std::string& name) const {
    if (!opt.dir || !fs::exists(file("stage", name))) return std::nullopt;
    return restore(load_checkpoint(file("stage", name)));
  }

  // Trains `fresh` (or the partial checkpoint of `name`) for `epochs` binary
  // epochs. Returns false when the epoch budget ran out first.
  bool run(Model& model, const std::string& name, std::size_t epochs, const Model* teacher, double lambda) {
    TrainState state;
    if (opt.dir && fs::exists(file("partial", name))) {
      const Checkpoint ck = load_checkpoint(file("partial", name));
      if (!ck.state) throw LoadError("partial checkpoint without optimizer state: " + file("partial", name).string());
      model = restore(ck);
      state = *ck.state;
    } else {
      begin_stage(model, state, data, cfg, Mode::binary, name, epochs);
    }
    StageOptions so;
    so.epochs = epochs;
    so.teacher = teacher;
    so.lambda = lambda;
    so.stop_after = budget;
    if (opt.dir) {
      so.on_epoch = [&](const Model& m, const TrainState& s) {
        save_checkpoint(capture(m, name, opt.init_seed, cfg.seed, s), file("partial", name));
      };
    }
    const std::size_t before = state.epoch;
    train_stage(model, state, data, cfg, so, opt.log);
    if (budget) *budget -= std::min(*budget, state.epoch - before);
    if (state.epoch < epochs) return false;
    if (opt.dir) {
      save_checkpoint(capture(model, name, opt.init_seed, cfg.seed), file("stage", name));
      remove_checkpoint(file("partial", name));
    }
    return true;
  }
};

std::uint64_t stage_seed(std::uint64_t seed, int block) {
  return derive_stream({seed, 0xB10CULL, static_cast<std::uint64_t>(block)});
}

void prepare_dir(const PruneOptions& opt) {
  if (opt.dir) fs::create_directories(*opt.dir);
}

}  // namespace

std::size_t prune_groups(const NetConfig& cfg, const PruneConfig& pc, int block) {
  if (block < 1 || static_cast<std::size_t>(block) > cfg.blocks.size()) throw ConfigError("block index out of range");
  const auto b = static_cast<std::size_t>(block - 1);
  if (!pc.groups.empty()) {
    if (pc.groups.size() != cfg.blocks.size()) throw ConfigError("groups list must name every block");
    return pc.groups[b];
  }
  return cfg.blocks[b].lwc_groups;
}

std::size_t stage_count(const NetConfig& cfg, const PruneConfig& pc) {
  const int n = static_cast<int>(cfg.blocks.size());
  if (pc.first_block < 1 || pc.first_block > n) {
    throw ConfigError("first_block must lie in [1, " + std::to_string(n) + "]");
  }
  for (int b = pc.first_block; b <= n; ++b) {
    if (!cfg.blocks[static_cast<std::size_t>(b - 1)].prunable) {
      throw ConfigError("block " + std::to_string(b) + " is not prunable");
    }
  }
  return static_cast<std::size_t>(n - pc.first_block + 1);
}

NetConfig pruned_config(const NetConfig& cfg, const PruneConfig& pc) {
  stage_count(cfg, pc);
  NetConfig out = cfg;
  for (int b = static_cast<int>(cfg.blocks.size()); b >= pc.first_block; --b) {
    out = replace_block(out, b, prune_groups(cfg, pc, b));
  }
  return out;
}

Model make_stage_model(const Model& previous, int block, std::size_t groups, std::uint64_t init_seed) {
  Model m(replace_block(previous.config(), block, groups), init_seed);
  transfer_parameters(previous, m);
  m.set_mode(Mode::binary);
  return m;
}

PruneStage measure(const Model& model, const Dataset& data, const TrainConfig& cfg, std::string name,
                   std::string method, int block) {
  PruneStage s;
  s.name = std::move(name);
  s.method = std::move(method);
  s.block = block;
  s.config = model.config();
  s.size_bits = count_model_size(s.config).total_bits();
  s.bops = count_bops(s.config).total;
  s.test_accuracy = evaluate(model, data, Split::test, cfg.gamma);
  return s;
}

PruneRun prune_gradual(const Model& teacher, const Dataset& data, const TrainConfig& cfg, const PruneConfig& pc,
                       const PruneOptions& opt) {
  stage_count(teacher.config(), pc);
  if (!(pc.lambda >= 0.0 && pc.lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  prepare_dir(opt);
  StageRunner runner{data, cfg, opt, opt.stop_after};
  PruneRun out;
  Model prev = teacher;
  prev.set_mode(Mode::binary);
  for (int b = static_cast<int>(teacher.config().blocks.size()); b >= pc.first_block; --b) {
    const std::string name = "prune-b" + std::to_string(b);
    if (auto done = runner.finished(name)) {
      prev = std::move(*done);
    } else {
      Model student = make_stage_model(prev, b, prune_groups(teacher.config(), pc, b), stage_seed(opt.init_seed, b));
      try {
        if (!runner.run(student, name, pc.stage_epochs, &teacher, pc.lambda)) return out;
      } catch (const NumericError& e) {
        throw NumericError("pruning stage for block " + std::to_string(b) + " failed: " + e.what());
      }
      prev = std::move(student);
    }
    out.stages.push_back(measure(prev, data, cfg, name, "gradual", b));
  }
  out.final_model = std::move(prev);
  out.complete = true;
  return out;
}

PruneRun prune_oneshot_depth(const Model& teacher, const Dataset& data, const TrainConfig& cfg,
                             const PruneConfig& pc, const PruneOptions& opt) {
  stage_count(teacher.config(), pc);
  prepare_dir(opt);
  StageRunner runner{data, cfg, opt, opt.stop_after};
  PruneRun out;
  const std::string name = "oneshot";
  std::optional<Model> model = runner.finished(name);
  if (!model) {
    Model student(pruned_config(teacher.config(), pc), stage_seed(opt.init_seed, 0));
    transfer_parameters(teacher, student);
    student.set_mode(Mode::binary);
    const std::size_t epochs = pc.oneshot_epochs ? pc.oneshot_epochs : pc.stage_epochs;
    if (!runner.run(student, name, epochs, nullptr, 0.0)) return out;
    model = std::move(student);
  }
  out.stages.push_back(measure(*model, data, cfg, name, "oneshot", 0));
  out.final_model = std::move(model);
  out.complete = true;
  return out;
}

PruneRun train_from_scratch(const NetConfig& pruned, const Dataset& data, const TrainConfig& cfg,
                            const PruneConfig& pc, const PruneOptions& opt) {
  prepare_dir(opt);
  TrainConfig tc = cfg;
  if (pc.scratch_pretrain_epochs) tc.pretrain_epochs = pc.scratch_pretrain_epochs;
  if (pc.scratch_binary_epochs) tc.binary_epochs = pc.scratch_binary_epochs;
  StageRunner runner{data, tc, opt, opt.stop_after};
  PruneRun out;
  const std::string name = "scratch";
  std::optional<Model> model = runner.finished(name);
  if (!model) {
    Model m(pruned, stage_seed(opt.init_seed, -1));
    std::optional<TrainState> resume;
    const fs::path partial = opt.dir ? runner.file("partial", name) : fs::path{};
    if (opt.dir && fs::exists(partial)) {
      const Checkpoint ck = load_checkpoint(partial);
      m = restore(ck);
      resume = ck.state;
    }
    EpochHook hook;
    if (opt.dir) {
      hook = [&](const Model& mm, const TrainState& s) {
        save_checkpoint(capture(mm, name, opt.init_seed, tc.seed, s), partial);
      };
    }
    const TrainState st = pretrain_then_binarize(m, data, tc, opt.log, resume, opt.stop_after, hook);
    if (!(st.stage == "binary" && st.epoch >= tc.binary_epochs)) {
      if (opt.dir) save_checkpoint(capture(m, name, opt.init_seed, tc.seed, st), partial);
      return out;
    }
    if (opt.dir) {
      save_checkpoint(capture(m, name, opt.init_seed, tc.seed), runner.file("stage", name));
      remove_checkpoint(partial);
    }
    model = std::move(m);
  }
  out.stages.push_back(measure(*model, data, tc, name, "scratch", 0));
  out.final_model = std::move(model);
  out.complete = true;
  return out;
}

std::string emit_tradeoff(const PruneStage& baseline, const std::vector<PruneStage>& stages) {
  std::string csv = "stage,method,block,size_bits,bops,test_accuracy\n";
  auto row = [&](const PruneStage& s) {
    csv += s.name + "," + s.method + "," + std::to_string(s.block) + "," + std::to_string(s.size_bits) + "," +
           std::to_string(s.bops) + "," + io::fixed(s.test_accuracy, 4) + "\n";
  };
  row(baseline);
  for (const auto& s : stages) row(s);
  return csv;
}

}  // namespace thermobnn
