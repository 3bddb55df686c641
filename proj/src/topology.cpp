// SPDX-License-Identifier: Apache-2.0
#include "thermobnn/topology.hpp"

#include <json.hpp>
#include <sstream>

#include "thermobnn/errors.hpp"
#include "thermobnn/io.hpp"

namespace thermobnn {

namespace {

using nlohmann::json;

std::string dims_str(const TensorDims& d) {
  return std::to_string(d.c) + "x" + std::to_string(d.h) + "x" + std::to_string(d.w);
}

LayerInfo conv_layer(std::string name, int block, const TensorDims& in, const ConvSpec& spec) {
  if (spec.out_channels == 0 || spec.kernel == 0 || spec.stride == 0 || spec.groups == 0) {
    throw ConfigError("layer " + name + ": channels, kernel, stride and groups must be positive");
  }
  if (in.c % spec.groups != 0 || spec.out_channels % spec.groups != 0) {
    throw ConfigError("layer " + name + ": channels " + std::to_string(in.c) + "->" +
                      std::to_string(spec.out_channels) + " not divisible by groups " +
                      std::to_string(spec.groups));
  }
  if (spec.shuffle && spec.groups == 1) throw ConfigError("layer " + name + ": shuffle needs groups > 1");
  LayerInfo li;
  li.name = std::move(name);
  li.kind = LayerKind::conv;
  li.block = block;
  li.in = in;
  li.conv = spec;
  li.out = {spec.out_channels, conv_out_dim(in.h, spec.kernel, spec.stride),
            conv_out_dim(in.w, spec.kernel, spec.stride)};
  li.weight_count = spec.out_channels * (in.c / spec.groups) * spec.kernel * spec.kernel;
  li.bn_channels = spec.out_channels;
  li.bops = static_cast<std::uint64_t>(li.out.h) * li.out.w * li.weight_count;
  return li;
}

std::vector<LayerInfo> infer(const NetConfig& cfg, std::size_t h, std::size_t w) {
  if (cfg.version != kNetConfigVersion) {
    throw ConfigError("unsupported network config version " + std::to_string(cfg.version));
  }
  if (cfg.in_channels == 0 || h == 0 || w == 0) throw ConfigError("input dimensions must be positive");
  if (cfg.num_classes < 2) throw ConfigError("classifier needs at least two classes");
  std::vector<LayerInfo> out;
  TensorDims cur{cfg.in_channels * cfg.encoder.planes_per_channel(), h, w};
  for (std::size_t i = 0; i < cfg.stem.size(); ++i) {
    out.push_back(conv_layer("stem.l" + std::to_string(i + 1), 0, cur, cfg.stem[i]));
    cur = out.back().out;
  }
  for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
    const auto& blk = cfg.blocks[b];
    if (blk.layers.empty()) throw ConfigError("block " + std::to_string(b + 1) + " has no layers");
    const int bi = static_cast<int>(b + 1);
    for (std::size_t l = 0; l < blk.layers.size(); ++l) {
      const std::string name = blk.kind == BlockKind::lwc
                                   ? "b" + std::to_string(bi) + ".lwc"
                                   : "b" + std::to_string(bi) + ".l" + std::to_string(l + 1);
      out.push_back(conv_layer(name, bi, cur, blk.layers[l]));
      cur = out.back().out;
    }
  }
  LayerInfo cls;
  cls.name = "cls";
  cls.kind = LayerKind::linear;
  cls.in = cur;
  cls.out = {cfg.num_classes, 1, 1};
  cls.conv.kernel = 1;
  cls.conv.out_channels = cfg.num_classes;
  cls.weight_count = cur.c * cur.h * cur.w * cfg.num_classes;
  cls.bops = cls.weight_count;
  out.push_back(cls);
  return out;
}

const char* block_kind_str(BlockKind k) { return k == BlockKind::lwc ? "lwc" : "plain"; }

json conv_to_json(const ConvSpec& c) {
  return json{{"out", c.out_channels}, {"kernel", c.kernel}, {"stride", c.stride},
              {"groups", c.groups}, {"shuffle", c.shuffle}};
}

ConvSpec conv_from_json(const json& j) {
  ConvSpec c;
  c.out_channels = j.at("out").get<std::size_t>();
  c.kernel = j.value("kernel", std::size_t{3});
  c.stride = j.value("stride", std::size_t{1});
  c.groups = j.value("groups", std::size_t{1});
  c.shuffle = j.value("shuffle", false);
  return c;
}

EncodingKind encoding_from_string(const std::string& s) {
  if (s == "glt") return EncodingKind::glt;
  if (s == "ft") return EncodingKind::fixed_thermometer;
  if (s == "base2") return EncodingKind::base2;
  throw ConfigError("unknown encoder kind '" + s + "'");
}

}  // namespace

std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride) {
  const std::size_t pad = kernel / 2;
  if (in + 2 * pad < kernel) throw ConfigError("kernel larger than padded input");
  return (in + 2 * pad - kernel) / stride + 1;
}

std::vector<LayerInfo> infer_shapes(const NetConfig& cfg) { return infer(cfg, cfg.height, cfg.width); }

TensorDims block_input(const NetConfig& cfg, int block) {
  if (block < 1 || block > static_cast<int>(cfg.blocks.size())) {
    throw ConfigError("block index " + std::to_string(block) + " out of range");
  }
  for (const auto& li : infer_shapes(cfg)) {
    if (li.block == block) return li.in;
  }
  throw ConfigError("block " + std::to_string(block) + " has no layers");
}

TensorDims block_output(const NetConfig& cfg, int block) {
  if (block < 1 || block > static_cast<int>(cfg.blocks.size())) {
    throw ConfigError("block index " + std::to_string(block) + " out of range");
  }
  TensorDims out;
  for (const auto& li : infer_shapes(cfg)) {
    if (li.block == block) out = li.out;
  }
  return out;
}

BlockSpec make_lwc(std::string name, std::size_t in_channels, std::size_t groups) {
  BlockSpec b;
  b.name = std::move(name);
  b.kind = BlockKind::lwc;
  b.prunable = false;
  b.lwc_groups = groups;
  b.layers.push_back(ConvSpec{2 * in_channels, 3, 2, groups, groups > 1});
  return b;
}

NetConfig replace_block(const NetConfig& cfg, int block, std::size_t groups) {
  const auto before = infer_shapes(cfg);
  if (block < 1 || block > static_cast<int>(cfg.blocks.size())) {
    throw ConfigError("replace_block: block index " + std::to_string(block) + " out of range");
  }
  const auto& old = cfg.blocks[static_cast<std::size_t>(block - 1)];
  if (!old.prunable || old.kind != BlockKind::plain) {
    throw ConfigError("replace_block: block " + std::to_string(block) + " ('" + old.name +
                      "') is not prunable");
  }
  const TensorDims in = block_input(cfg, block), want = block_output(cfg, block);
  NetConfig next = cfg;
  auto& slot = next.blocks[static_cast<std::size_t>(block - 1)];
  slot = make_lwc(old.name, in.c, groups);
  const TensorDims got{2 * in.c, conv_out_dim(in.h, 3, 2), conv_out_dim(in.w, 3, 2)};
  if (got != want) {
    throw ConfigError("replace_block: LWC output " + dims_str(got) + " differs from block output " +
                      dims_str(want));
  }
  const auto after = infer_shapes(next);
  // Every layer outside the replaced block keeps its shapes.
  std::vector<TensorDims> a, b;
  for (const auto& li : before) {
    if (li.block != block) a.push_back(li.out);
  }
  for (const auto& li : after) {
    if (li.block != block) b.push_back(li.out);
  }
  if (a != b) throw ConfigError("replace_block: downstream shapes changed");
  return next;
}

std::vector<std::size_t> shuffle_permutation(std::size_t channels, std::size_t groups) {
  if (groups == 0 || channels % groups != 0) {
    throw ConfigError("channel_shuffle: " + std::to_string(channels) + " channels not divisible by " +
                      std::to_string(groups) + " groups");
  }
  const std::size_t per = channels / groups;
  std::vector<std::size_t> perm(channels);
  for (std::size_t j = 0; j < channels; ++j) perm[j] = (j % groups) * per + j / groups;
  return perm;
}

SizeReport count_model_size(const NetConfig& cfg) {
  SizeReport r;
  for (const auto& li : infer_shapes(cfg)) {
    r.binary_weight_bits += li.weight_count;
    r.batchnorm_bits += 2ULL * 32ULL * li.bn_channels;
  }
  if (cfg.encoder.kind == EncodingKind::glt) {
    r.encoder_bits = 32ULL * cfg.in_channels * (cfg.encoder.planes + 1);
  }
  return r;
}

BopsReport count_bops(const NetConfig& cfg, std::optional<std::pair<std::size_t, std::size_t>> input) {
  const auto layers = input ? infer(cfg, input->first, input->second) : infer_shapes(cfg);
  BopsReport r;
  for (const auto& li : layers) {
    r.per_layer.emplace_back(li.name, li.bops);
    r.total += li.bops;
  }
  return r;
}

std::string size_bops_csv(const NetConfig& cfg) {
  std::ostringstream os;
  os << "layer,kind,in_c,in_h,in_w,out_c,out_h,out_w,groups,weight_bits,bops\n";
  for (const auto& li : infer_shapes(cfg)) {
    os << li.name << ',' << (li.kind == LayerKind::conv ? "conv" : "linear") << ',' << li.in.c << ','
       << li.in.h << ',' << li.in.w << ',' << li.out.c << ',' << li.out.h << ',' << li.out.w << ','
       << li.conv.groups << ',' << li.weight_count << ',' << li.bops << '\n';
  }
  const auto s = count_model_size(cfg);
  os << "total,,,,,,,,," << s.total_bits() << ',' << count_bops(cfg).total << '\n';
  return os.str();
}

std::string net_config_to_json(const NetConfig& cfg) {
  json j;
  j["format"] = "thermobnn-net";
  j["version"] = cfg.version;
  j["name"] = cfg.name;
  j["input"] = {{"channels", cfg.in_channels}, {"height", cfg.height}, {"width", cfg.width}};
  j["encoder"] = {{"kind", to_string(cfg.encoder.kind)},
                  {"planes", cfg.encoder.planes},
                  {"adc_bits", cfg.encoder.adc_bits}};
  j["stem"] = json::array();
  for (const auto& c : cfg.stem) j["stem"].push_back(conv_to_json(c));
  j["blocks"] = json::array();
  for (const auto& b : cfg.blocks) {
    json jb{{"name", b.name}, {"kind", block_kind_str(b.kind)}, {"prunable", b.prunable},
            {"lwc_groups", b.lwc_groups}, {"layers", json::array()}};
    for (const auto& c : b.layers) jb["layers"].push_back(conv_to_json(c));
    j["blocks"].push_back(jb);
  }
  j["classifier"] = {{"classes", cfg.num_classes}};
  j["conventions"] = {{"padding_bit", 0},
                      {"padding", "kernel/2"},
                      {"plane_order", "channel-major"},
                      {"bops", "1 binary MAC = 1 BOP"}};
  return j.dump(2) + "\n";
}

NetConfig net_config_from_json(const std::string& text) {
  NetConfig cfg;
  try {
    const json j = json::parse(text);
    if (j.value("format", std::string{}) != "thermobnn-net") {
      throw ConfigError("network config: missing format tag 'thermobnn-net'");
    }
    cfg.version = j.at("version").get<int>();
    cfg.name = j.value("name", std::string{});
    const auto& in = j.at("input");
    cfg.in_channels = in.at("channels").get<std::size_t>();
    cfg.height = in.at("height").get<std::size_t>();
    cfg.width = in.at("width").get<std::size_t>();
    const auto& enc = j.at("encoder");
    cfg.encoder.kind = encoding_from_string(enc.at("kind").get<std::string>());
    cfg.encoder.planes = enc.value("planes", std::size_t{8});
    cfg.encoder.adc_bits = enc.value("adc_bits", 8);
    for (const auto& c : j.value("stem", json::array())) cfg.stem.push_back(conv_from_json(c));
    for (const auto& jb : j.at("blocks")) {
      BlockSpec b;
      b.name = jb.value("name", std::string{});
      const auto kind = jb.value("kind", std::string{"plain"});
      if (kind != "plain" && kind != "lwc") throw ConfigError("unknown block kind '" + kind + "'");
      b.kind = kind == "lwc" ? BlockKind::lwc : BlockKind::plain;
      b.prunable = jb.value("prunable", false);
      b.lwc_groups = jb.value("lwc_groups", std::size_t{1});
      for (const auto& c : jb.at("layers")) b.layers.push_back(conv_from_json(c));
      cfg.blocks.push_back(std::move(b));
    }
    cfg.num_classes = j.at("classifier").at("classes").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("network config: ") + e.what());
  }
  infer_shapes(cfg);
  return cfg;
}

NetConfig load_net_config(const std::string& path) { return net_config_from_json(io::read_text_file(path)); }

NetConfig preset_config(const std::string& name, EncoderSpec encoder, std::size_t height, std::size_t width) {
  auto block = [](std::string bname, std::size_t groups, std::vector<ConvSpec> layers) {
    return BlockSpec{std::move(bname), BlockKind::plain, true, groups, std::move(layers)};
  };
  NetConfig cfg;
  cfg.name = name;
  cfg.encoder = encoder;
  cfg.height = height;
  cfg.width = width;
  if (name == "toy11") {
    cfg.stem = {ConvSpec{16, 3, 2}};
    cfg.blocks = {block("b1", 1, {ConvSpec{32, 3, 2}, ConvSpec{32}, ConvSpec{32}}),
                  block("b2", 2, {ConvSpec{64, 3, 2}, ConvSpec{64}, ConvSpec{64}}),
                  block("b3", 8, {ConvSpec{128, 3, 2}, ConvSpec{128}, ConvSpec{128}})};
  } else if (name == "vgg_small_like") {
    cfg.stem = {ConvSpec{128}};
    cfg.blocks = {block("b1", 4, {ConvSpec{128, 3, 2}, ConvSpec{256}}),
                  block("b2", 8, {ConvSpec{256, 3, 2}, ConvSpec{512}}),
                  BlockSpec{"b3", BlockKind::plain, false, 1, {ConvSpec{512, 3, 2}}}};
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  infer_shapes(cfg);
  return cfg;
}

}  // namespace thermobnn
