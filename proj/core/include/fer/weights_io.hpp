#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "fer/model.hpp"

namespace fer {
inline namespace FER_PRECISION_NS {

// Weights file layout (all integers little-endian):
//   "FERW1"                      5-byte magic
//   u32 metadata_length
//   metadata                     JSON: arch, input shape, layer specs,
//                                tensor manifest (name + shape), training info
//   payload                      float32 tensors in manifest order
class WeightsError : public std::runtime_error {
 public:
  enum class Code { kIo, kBadMagic, kTruncated, kBadMetadata, kShapeMismatch };

  WeightsError(Code code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

void save_weights(const ModelGraph& model, const std::filesystem::path& path);
ModelGraph load_weights(const std::filesystem::path& path);

std::string serialize_weights(const ModelGraph& model);
ModelGraph deserialize_weights(const std::string& bytes);

}  // namespace FER_PRECISION_NS
}  // namespace fer
