// SPDX-License-Identifier: Apache-2.0
#include "thermobnn/checkpoint.hpp"

#include <json.hpp>

#include "thermobnn/errors.hpp"
#include "thermobnn/io.hpp"

namespace thermobnn {

namespace {

using json = nlohmann::json;

json manifest_json(const Checkpoint& ck) {
  json j;
  j["format"] = "thermobnn-checkpoint";
  j["version"] = kCheckpointVersion;
  j["network"] = json::parse(net_config_to_json(ck.config));
  j["mode"] = to_string(ck.mode);
  j["seeds"] = {{"init", ck.init_seed}, {"train", ck.train_seed}};
  j["provenance"] = ck.provenance;
  j["history"] = ck.history;
  j["experiment"] = ck.experiment;
  return j;
}

void put_state(io::ByteWriter& w, const TrainState& s) {
  w.put<std::uint8_t>(static_cast<std::uint8_t>(s.mode));
  w.put_string(s.stage);
  w.put<std::uint64_t>(s.epoch);
  w.put<std::int64_t>(s.step);
  w.put<std::int64_t>(s.global_step);
  w.put<double>(s.schedule.lr_init);
  w.put<double>(s.schedule.lr_final);
  w.put<std::int64_t>(s.schedule.total_steps);
  w.put<double>(s.optimizer.beta1);
  w.put<double>(s.optimizer.beta2);
  w.put<double>(s.optimizer.eps);
  w.put<std::uint8_t>(s.optimizer.rectified ? 1 : 0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.m.size()));
  for (std::size_t k = 0; k < s.m.size(); ++k) {
    w.put_array(std::span<const double>(s.m[k]));
    w.put_array(std::span<const double>(s.v[k]));
  }
}

TrainState get_state(io::ByteReader& r) {
  TrainState s;
  const auto mode = r.get<std::uint8_t>("state.mode");
  if (mode > 1) r.fail("state.mode", "unknown mode");
  s.mode = static_cast<Mode>(mode);
  s.stage = r.get_string("state.stage");
  s.epoch = r.get<std::uint64_t>("state.epoch");
  s.step = r.get<std::int64_t>("state.step");
  s.global_step = r.get<std::int64_t>("state.global_step");
  s.schedule.lr_init = r.get<double>("state.lr_init");
  s.schedule.lr_final = r.get<double>("state.lr_final");
  s.schedule.total_steps = r.get<std::int64_t>("state.total_steps");
  s.optimizer.beta1 = r.get<double>("state.beta1");
  s.optimizer.beta2 = r.get<double>("state.beta2");
  s.optimizer.eps = r.get<double>("state.eps");
  s.optimizer.rectified = r.get<std::uint8_t>("state.rectified") != 0;
  const auto n = r.get<std::uint32_t>("state.moments");
  for (std::uint32_t k = 0; k < n; ++k) {
    s.m.push_back(r.get_array<double>("state.m"));
    s.v.push_back(r.get_array<double>("state.v"));
  }
  return s;
}

}  // namespace

Checkpoint capture(const Model& model, std::string provenance, std::uint64_t init_seed, std::uint64_t train_seed,
                   std::optional<TrainState> state) {
  Checkpoint ck;
  ck.config = model.config();
  ck.mode = model.mode();
  ck.params = model.params();
  for (auto& p : ck.params) std::fill(p.grad.begin(), p.grad.end(), 0.0);
  ck.stats = model.norm_stats();
  ck.state = std::move(state);
  ck.init_seed = init_seed;
  ck.train_seed = train_seed;
  ck.provenance = std::move(provenance);
  return ck;
}

Model restore(const Checkpoint& ck) {
  Model m(ck.config, ck.init_seed);
  m.set_mode(ck.mode);
  if (m.params().size() != ck.params.size() || m.norm_stats().size() != ck.stats.size()) {
    throw LoadError("checkpoint does not match its network description");
  }
  for (std::size_t k = 0; k < ck.params.size(); ++k) {
    Param& dst = m.params()[k];
    const Param& src = ck.params[k];
    if (dst.name != src.name || dst.shape != src.shape || dst.value.size() != src.value.size()) {
      throw LoadError("checkpoint parameter '" + src.name + "' does not match the network");
    }
    dst.value = src.value;
  }
  for (std::size_t k = 0; k < ck.stats.size(); ++k) {
    if (m.norm_stats()[k].name != ck.stats[k].name) throw LoadError("checkpoint statistics do not match the network");
    m.norm_stats()[k] = ck.stats[k];
  }
  return m;
}

std::string checkpoint_manifest(const Checkpoint& ck) { return manifest_json(ck).dump(2) + "\n"; }

std::vector<std::uint8_t> checkpoint_to_bytes(const Checkpoint& ck) {
  io::ByteWriter w;
  w.put_magic("TBCK");
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put_string(manifest_json(ck).dump());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.params.size()));
  for (const auto& p : ck.params) {
    w.put_string(p.name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(p.kind));
    std::vector<std::uint64_t> shape(p.shape.begin(), p.shape.end());
    w.put_array(std::span<const std::uint64_t>(shape));
    w.put_array(std::span<const double>(p.value));
    if (p.kind == ParamKind::weight) {
      BitTensor bits(Shape{p.value.size()}, BitSemantics::signed_pm1);
      for (std::size_t k = 0; k < p.value.size(); ++k) bits.set_bit(k, p.value[k] >= 0.0);
      w.put<std::uint8_t>(1);
      const auto packed = bits.to_bytes();
      w.put_array(std::span<const std::uint8_t>(packed));
    } else {
      w.put<std::uint8_t>(0);
    }
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.stats.size()));
  for (const auto& s : ck.stats) {
    w.put_string(s.name);
    w.put_array(std::span<const double>(s.mean));
    w.put_array(std::span<const double>(s.var));
  }
  w.put<std::uint8_t>(ck.state ? 1 : 0);
  if (ck.state) put_state(w, *ck.state);
  const auto hash = io::fnv1a64(w.bytes());
  w.put<std::uint64_t>(hash);
  return w.take();
}

Checkpoint checkpoint_from_bytes(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "checkpoint");
  r.expect_magic("TBCK");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) r.fail("version", "unsupported version " + std::to_string(version));
  if (bytes.size() < 8) r.fail("hash", "file too short");
  {
    std::uint64_t stored = 0;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
    if (io::fnv1a64(bytes.first(bytes.size() - 8)) != stored) {
      throw LoadError("checkpoint: content hash mismatch (field 'hash' at byte offset " +
                      std::to_string(bytes.size() - 8) + ")");
    }
  }
  Checkpoint ck;
  const auto manifest_offset = r.offset();
  const std::string manifest = r.get_string("manifest");
  try {
    const json j = json::parse(manifest);
    ck.config = net_config_from_json(j.at("network").dump());
    const auto mode = j.at("mode").get<std::string>();
    if (mode != "real" && mode != "binary") throw ConfigError("unknown mode '" + mode + "'");
    ck.mode = mode == "binary" ? Mode::binary : Mode::real;
    ck.init_seed = j.at("seeds").at("init").get<std::uint64_t>();
    ck.train_seed = j.at("seeds").at("train").get<std::uint64_t>();
    ck.provenance = j.at("provenance").get<std::string>();
    ck.history = j.at("history").get<std::vector<std::string>>();
    ck.experiment = j.value("experiment", std::string{});
  } catch (const std::exception& e) {
    throw LoadError("checkpoint: bad manifest (field 'manifest' at byte offset " + std::to_string(manifest_offset) +
                    "): " + e.what());
  }
  const auto np = r.get<std::uint32_t>("param count");
  for (std::uint32_t k = 0; k < np; ++k) {
    Param p;
    p.name = r.get_string("param.name");
    const auto kind = r.get<std::uint8_t>("param.kind");
    if (kind > 3) r.fail("param.kind", "unknown parameter kind");
    p.kind = static_cast<ParamKind>(kind);
    for (auto d : r.get_array<std::uint64_t>("param.shape")) p.shape.push_back(static_cast<std::size_t>(d));
    p.value = r.get_array<double>("param.values");
    if (shape_numel(p.shape) != p.value.size()) r.fail("param.values", "value count does not match shape");
    p.grad.assign(p.value.size(), 0.0);
    if (r.get<std::uint8_t>("param.packed") != 0) {
      const auto packed = r.get_array<std::uint8_t>("param.bits");
      const auto bits = BitTensor::from_bytes(Shape{p.value.size()}, BitSemantics::signed_pm1, packed);
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        if (bits.bit(i) != (p.value[i] >= 0.0)) r.fail("param.bits", "packed signs disagree with '" + p.name + "'");
      }
    }
    ck.params.push_back(std::move(p));
  }
  const auto ns = r.get<std::uint32_t>("stats count");
  for (std::uint32_t k = 0; k < ns; ++k) {
    NormStats s;
    s.name = r.get_string("stats.name");
    s.mean = r.get_array<double>("stats.mean");
    s.var = r.get_array<double>("stats.var");
    ck.stats.push_back(std::move(s));
  }
  if (r.get<std::uint8_t>("state flag") != 0) ck.state = get_state(r);
  r.get<std::uint64_t>("hash");
  if (!r.at_end()) r.fail("trailer", "unexpected trailing bytes");
  return ck;
}

std::uint64_t checkpoint_hash(const Checkpoint& ck) {
  const auto bytes = checkpoint_to_bytes(ck);
  std::uint64_t h = 0;
  std::memcpy(&h, bytes.data() + bytes.size() - 8, 8);
  return h;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto bytes = checkpoint_to_bytes(ck);
  std::uint64_t h = 0;
  std::memcpy(&h, bytes.data() + bytes.size() - 8, 8);
  json side = manifest_json(ck);
  side["content_hash"] = io::hex64(h);
  side["bytes"] = bytes.size();
  json params = json::array();
  for (const auto& p : ck.params) params.push_back({{"name", p.name}, {"shape", p.shape}});
  side["parameters"] = params;
  if (ck.state) {
    side["optimizer_state"] = {{"stage", ck.state->stage}, {"epoch", ck.state->epoch},
                               {"step", ck.state->step}, {"global_step", ck.state->global_step}};
  }
  io::write_file_atomic(path, bytes);
  io::write_text_atomic(path.string() + ".json", side.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_bytes(io::read_file(path)); }

}  // namespace thermobnn
