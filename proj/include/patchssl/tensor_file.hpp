#pragma once

#include <filesystem>

#include "json.hpp"
#include "patchssl/tensor.hpp"

namespace patchssl {

// Container layout:
//   8 bytes   magic "PSSLTNSR"
//   8 bytes   header length n, little-endian
//   n bytes   JSON header {"tensors": [{name, dtype, shape, offset, nbytes}],
//                          "payload_bytes", "crc32", "meta"}
//   payload   raw little-endian float32 blobs at the listed offsets
struct TensorFile {
  ParamSet<float> tensors;
  nlohmann::json meta = nlohmann::json::object();
};

// Written to a temporary sibling and renamed, so readers never see a partial file.
void save_tensor_file(const std::filesystem::path& path, const ParamSet<float>& tensors,
                      const nlohmann::json& meta = nlohmann::json::object());

// Throws IoError when unreadable, FormatError on a bad magic, header, length or checksum.
TensorFile load_tensor_file(const std::filesystem::path& path);

}  // namespace patchssl
