// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <string>

#include "fixtures.hpp"
#include "thermobnn/checkpoint.hpp"
#include "thermobnn/errors.hpp"
#include "thermobnn/pruning.hpp"

using namespace thermobnn;
using fixture::tiny_data;
using fixture::tiny_net;
using fixture::tiny_prunable;
namespace fs = std::filesystem;

namespace {

TrainConfig quick_train() {
  TrainConfig tc;
  tc.pretrain_epochs = 1;
  tc.binary_epochs = 1;
  tc.batch_size = 32;
  tc.eval_each_epoch = false;
  tc.seed = 11;
  return tc;
}

PruneConfig quick_prune() {
  PruneConfig pc;
  pc.first_block = 1;
  pc.stage_epochs = 1;
  return pc;
}

Model teacher(const Dataset& data) {
  Model m(tiny_prunable(), 21);
  pretrain_then_binarize(m, data, quick_train());
  return m;
}

std::uint64_t model_hash(const Model& m) { return checkpoint_hash(capture(m, "x", 0, 0)); }

}  // namespace

TEST_CASE("stage count and pruned topology") {
  const NetConfig cfg = tiny_prunable();
  PruneConfig pc;
  pc.first_block = 1;
  CHECK(stage_count(cfg, pc) == 2);
  pc.first_block = 2;
  CHECK(stage_count(cfg, pc) == 1);
  CHECK(pruned_config(cfg, pc) == replace_block(cfg, 2, 4));
  pc.first_block = 1;
  CHECK(pruned_config(cfg, pc) == replace_block(replace_block(cfg, 2, 4), 1, 2));
  pc.groups = {1, 8};
  CHECK(pruned_config(cfg, pc) == replace_block(replace_block(cfg, 2, 8), 1, 1));
  pc.groups = {1};
  CHECK_THROWS_AS(pruned_config(cfg, pc), ConfigError);
  for (int bad : {0, 3}) {
    PruneConfig b;
    b.first_block = bad;
    CHECK_THROWS_AS(stage_count(cfg, b), ConfigError);
  }
  PruneConfig one;
  one.first_block = 1;
  CHECK_THROWS_AS(stage_count(tiny_net(EncodingKind::glt), one), ConfigError);
  one.first_block = 2;
  CHECK_THROWS_AS(stage_count(tiny_net(EncodingKind::glt), one), ConfigError);
}

TEST_CASE("a stage model keeps every parameter outside the replaced block") {
  Model prev(tiny_prunable(), 3);
  Rng rng(3, 3);
  for (auto& p : prev.params()) {
    for (auto& v : p.value) v += 0.01 * rng.normal();
  }
  const Model next = make_stage_model(prev, 2, 4, 77);
  CHECK(next.mode() == Mode::binary);
  CHECK(next.config() == replace_block(prev.config(), 2, 4));
  std::size_t kept = 0;
  for (const auto& p : next.params()) {
    if (p.name.rfind("b2.", 0) == 0) {
      CHECK(p.name.rfind("b2.lwc", 0) == 0);
      continue;
    }
    const Param* old = prev.find_param(p.name);
    REQUIRE(old != nullptr);
    CHECK(old->value == p.value);
    ++kept;
  }
  CHECK(kept > 0);
  CHECK(model_hash(make_stage_model(prev, 2, 4, 77)) == model_hash(next));
}

TEST_CASE("gradual pruning runs one stage per block and leaves the teacher alone") {
  const Dataset data = tiny_data(4);
  const Model t = teacher(data);
  const std::uint64_t before = model_hash(t);
  std::vector<EpochRecord> log;
  PruneOptions opt;
  opt.log = [&](const EpochRecord& r) { log.push_back(r); };
  const PruneRun run = prune_gradual(t, data, quick_train(), quick_prune(), opt);
  CHECK(model_hash(t) == before);
  REQUIRE(run.complete);
  REQUIRE(run.stages.size() == 2);
  CHECK(run.stages[0].block == 2);
  CHECK(run.stages[1].block == 1);
  CHECK(run.final_model->config() == pruned_config(t.config(), quick_prune()));
  CHECK(log.size() == 2);
  for (const auto& r : log) CHECK(r.kd > 0.0);

  const PruneStage base = measure(t, data, quick_train(), "baseline", "baseline", 0);
  CHECK(run.stages[0].size_bits < base.size_bits);
  CHECK(run.stages[1].size_bits < run.stages[0].size_bits);
  CHECK(run.stages[1].bops < run.stages[0].bops);
  const std::string csv = emit_tradeoff(base, run.stages);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(csv.rfind("stage,method,block,size_bits,bops,test_accuracy\nbaseline,baseline,0,", 0) == 0);
  CHECK(csv.find("\nprune-b2,gradual,2,") != std::string::npos);
  CHECK(emit_tradeoff(base, run.stages) == csv);

  const PruneRun again = prune_gradual(t, data, quick_train(), quick_prune());
  CHECK(model_hash(*again.final_model) == model_hash(*run.final_model));
}

TEST_CASE("one-shot and from-scratch competitors produce the pruned topology") {
  const Dataset data = tiny_data(5);
  const Model t = teacher(data);
  const NetConfig target = pruned_config(t.config(), quick_prune());
  std::size_t epochs = 0;
  PruneOptions opt;
  opt.log = [&](const EpochRecord& r) {
    ++epochs;
    CHECK(r.kd == 0.0);
  };
  const PruneRun one = prune_oneshot_depth(t, data, quick_train(), quick_prune(), opt);
  REQUIRE(one.complete);
  CHECK(one.final_model->config() == target);
  CHECK(epochs == 1);  // one stage budget

  epochs = 0;
  PruneConfig longer = quick_prune();
  longer.oneshot_epochs = 2;
  CHECK(prune_oneshot_depth(t, data, quick_train(), longer, opt).complete);
  CHECK(epochs == 2);

  epochs = 0;
  PruneConfig pc = quick_prune();
  pc.scratch_binary_epochs = 2;
  const PruneRun scratch = train_from_scratch(target, data, quick_train(), pc, opt);
  REQUIRE(scratch.complete);
  CHECK(scratch.final_model->config() == target);
  CHECK(scratch.final_model->mode() == Mode::binary);
  CHECK(epochs == 3);
  CHECK(scratch.stages.at(0).method == "scratch");
}

TEST_CASE("an interrupted pruning run resumes to the same result") {
  const Dataset data = tiny_data(6);
  const Model t = teacher(data);
  PruneConfig pc = quick_prune();
  pc.stage_epochs = 2;
  const fs::path full_dir = fixture::scratch_dir("prune_full"), cut_dir = fixture::scratch_dir("prune_cut");
  PruneOptions full;
  full.dir = full_dir;
  const PruneRun ref = prune_gradual(t, data, quick_train(), pc, full);
  REQUIRE(ref.complete);
  CHECK(fs::exists(full_dir / "stage-prune-b1.tbck"));
  CHECK_FALSE(fs::exists(full_dir / "partial-prune-b1.tbck"));

  PruneOptions cut;
  cut.dir = cut_dir;
  cut.stop_after = 1;
  CHECK_FALSE(prune_gradual(t, data, quick_train(), pc, cut).complete);
  CHECK(fs::exists(cut_dir / "partial-prune-b2.tbck"));
  cut.stop_after = 2;
  CHECK_FALSE(prune_gradual(t, data, quick_train(), pc, cut).complete);
  CHECK(fs::exists(cut_dir / "stage-prune-b2.tbck"));
  CHECK(fs::exists(cut_dir / "partial-prune-b1.tbck"));
  cut.stop_after.reset();
  const PruneRun resumed = prune_gradual(t, data, quick_train(), pc, cut);
  REQUIRE(resumed.complete);
  CHECK(model_hash(*resumed.final_model) == model_hash(*ref.final_model));
  REQUIRE(resumed.stages.size() == ref.stages.size());
  for (std::size_t i = 0; i < ref.stages.size(); ++i) {
    CHECK(resumed.stages[i].test_accuracy == ref.stages[i].test_accuracy);
  }
  fs::remove_all(full_dir);
  fs::remove_all(cut_dir);
}
