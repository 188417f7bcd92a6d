#include "fer/weights_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fer/errors.hpp"
#include "json.hpp"

namespace fer {
inline namespace FER_PRECISION_NS {
namespace {

using nlohmann::json;
using Code = WeightsError::Code;

constexpr std::string_view kMagic = "FERW1";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  }
  return v;
}

json spec_to_json(const LayerSpec& s) {
  json j = {{"kind", layer_kind_name(s.kind)}};
  switch (s.kind) {
    case LayerKind::kConv:
      j["filters"] = s.units;
      j["kernel"] = s.kernel;
      j["stride"] = s.stride;
      j["padding"] = s.padding == Padding::kSame ? "same" : "valid";
      break;
    case LayerKind::kMaxPool:
      j["kernel"] = s.kernel;
      j["stride"] = s.stride;
      j["ceil_mode"] = s.ceil_mode;
      break;
    case LayerKind::kDense:
      j["units"] = s.units;
      break;
    case LayerKind::kDropout:
      j["rate"] = static_cast<double>(s.rate);
      break;
    default:
      break;
  }
  return j;
}

LayerSpec spec_from_json(const json& j) {
  LayerSpec s;
  s.kind = parse_layer_kind(j.at("kind").get<std::string>());
  switch (s.kind) {
    case LayerKind::kConv:
      s.units = j.at("filters").get<int>();
      s.kernel = j.at("kernel").get<int>();
      s.stride = j.at("stride").get<int>();
      s.padding = j.at("padding").get<std::string>() == "valid" ? Padding::kValid : Padding::kSame;
      break;
    case LayerKind::kMaxPool:
      s.kernel = j.at("kernel").get<int>();
      s.stride = j.at("stride").get<int>();
      s.ceil_mode = j.at("ceil_mode").get<bool>();
      break;
    case LayerKind::kDense:
      s.units = j.at("units").get<int>();
      break;
    case LayerKind::kDropout:
      s.rate = static_cast<Scalar>(j.at("rate").get<double>());
      break;
    default:
      break;
  }
  return s;
}

// Every tensor stored in the file, in manifest order.
template <typename Model, typename Fn>
void for_each_stored(Model& model, Fn&& fn) {
  for (auto& layer : model.layers()) {
    for (auto& p : layer.params) fn(p.name, p.value);
    if (layer.spec.kind == LayerKind::kBatchNorm) {
      fn(layer.name + ".running_mean", layer.running.mean);
      fn(layer.name + ".running_var", layer.running.var);
    }
  }
}

}  // namespace

std::string serialize_weights(const ModelGraph& model) {
  json meta;
  meta["arch"] = arch_name(model.arch());
  meta["input_shape"] = model.input_shape();
  meta["batchnorm"] = {{"momentum", static_cast<double>(model.bn_config().momentum)},
                       {"epsilon", static_cast<double>(model.bn_config().epsilon)}};
  json layers = json::array();
  for (const auto& layer : model.layers()) layers.push_back(spec_to_json(layer.spec));
  meta["layers"] = std::move(layers);
  json manifest = json::array();
  for_each_stored(model, [&](const std::string& name, const Tensor& t) {
    manifest.push_back({{"name", name}, {"shape", t.shape()}});
  });
  meta["tensors"] = std::move(manifest);
  meta["training"] = {{"epochs", model.info().epochs},
                      {"val_accuracy", model.info().val_accuracy}};

  const std::string meta_text = meta.dump();
  std::string out(kMagic);
  put_u32(out, static_cast<std::uint32_t>(meta_text.size()));
  out += meta_text;
  for_each_stored(model, [&](const std::string&, const Tensor& t) {
    for (Scalar v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  });
  return out;
}

ModelGraph deserialize_weights(const std::string& bytes) {
  if (bytes.size() < kMagic.size() || bytes.compare(0, kMagic.size(), kMagic) != 0) {
    throw WeightsError(Code::kBadMagic, "not a weights file (bad magic)");
  }
  std::size_t offset = kMagic.size();
  if (bytes.size() < offset + 4) throw WeightsError(Code::kTruncated, "truncated header");
  const std::uint32_t meta_len = get_u32(bytes, offset);
  offset += 4;
  if (bytes.size() < offset + meta_len) throw WeightsError(Code::kTruncated, "truncated metadata");

  json meta;
  Arch arch;
  Shape input_shape;
  std::vector<LayerSpec> specs;
  BatchNormConfig bn_config;
  try {
    meta = json::parse(bytes.substr(offset, meta_len));
    arch = parse_arch(meta.at("arch").get<std::string>());
    input_shape = meta.at("input_shape").get<Shape>();
    for (const auto& j : meta.at("layers")) specs.push_back(spec_from_json(j));
    if (meta.contains("batchnorm")) {
      bn_config.momentum = static_cast<Scalar>(meta["batchnorm"].at("momentum").get<double>());
      bn_config.epsilon = static_cast<Scalar>(meta["batchnorm"].at("epsilon").get<double>());
    }
  } catch (const WeightsError&) {
    throw;
  } catch (const std::exception& e) {
    throw WeightsError(Code::kBadMetadata, std::string("bad metadata: ") + e.what());
  }
  offset += meta_len;

  if (arch != Arch::kCustom && specs != architecture_specs(arch)) {
    throw WeightsError(Code::kShapeMismatch,
                       "layer stack does not match architecture " + std::string(arch_name(arch)));
  }
  ModelGraph model = [&] {
    try {
      return ModelGraph(arch, specs, input_shape, 0, bn_config);
    } catch (const std::exception& e) {
      throw WeightsError(Code::kShapeMismatch, std::string("invalid layer stack: ") + e.what());
    }
  }();

  const json& manifest = meta.at("tensors");
  std::size_t index = 0;
  for_each_stored(model, [&](const std::string& name, Tensor& t) {
    if (index >= manifest.size()) {
      throw WeightsError(Code::kShapeMismatch, "manifest is missing tensor " + name);
    }
    const json& entry = manifest[index++];
    Shape shape;
    try {
      shape = entry.at("shape").get<Shape>();
    } catch (const std::exception& e) {
      throw WeightsError(Code::kBadMetadata, std::string("bad manifest entry: ") + e.what());
    }
    if (entry.value("name", std::string()) != name || shape != t.shape()) {
      throw WeightsError(Code::kShapeMismatch, "tensor " + name + " expected shape " +
                                                   shape_string(t.shape()) + ", file has " +
                                                   shape_string(shape));
    }
    if (bytes.size() < offset + 4 * t.size()) {
      throw WeightsError(Code::kTruncated, "payload truncated at tensor " + name);
    }
    for (auto& v : t.values()) {
      v = static_cast<Scalar>(std::bit_cast<float>(get_u32(bytes, offset)));
      offset += 4;
    }
  });
  if (index != manifest.size()) {
    throw WeightsError(Code::kShapeMismatch, "manifest lists extra tensors");
  }
  if (offset != bytes.size()) throw WeightsError(Code::kTruncated, "trailing bytes after payload");

  if (meta.contains("training")) {
    model.info().epochs = meta["training"].value("epochs", 0);
    model.info().val_accuracy = meta["training"].value("val_accuracy", 0.0);
  }
  return model;
}

void save_weights(const ModelGraph& model, const std::filesystem::path& path) {
  const std::string bytes = serialize_weights(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw WeightsError(Code::kIo, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw WeightsError(Code::kIo, "write failed for " + path.string());
}

ModelGraph load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WeightsError(Code::kIo, "cannot open weights file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return deserialize_weights(buffer.str());
}

}  // namespace FER_PRECISION_NS
}  // namespace fer
