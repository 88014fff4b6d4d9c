#include "patchssl/tensor_file.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "patchssl/error.hpp"

namespace patchssl {

static_assert(std::endian::native == std::endian::little,
              "tensor files are written with the host byte order, which must be little-endian");

namespace {

constexpr char kMagic[8] = {'P', 'S', 'S', 'L', 'T', 'N', 'S', 'R'};

std::uint32_t crc_of(const std::vector<char>& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + done), chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

void save_tensor_file(const std::filesystem::path& path, const ParamSet<float>& tensors,
                      const nlohmann::json& meta) {
  std::vector<char> payload;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    const std::size_t nbytes = t.size() * sizeof(float);
    entries.push_back({{"name", name},
                       {"dtype", "float32"},
                       {"shape", t.shape()},
                       {"offset", payload.size()},
                       {"nbytes", nbytes}});
    const auto* src = reinterpret_cast<const char*>(t.data());
    payload.insert(payload.end(), src, src + nbytes);
  }
  nlohmann::json header = {{"tensors", entries},
                           {"payload_bytes", payload.size()},
                           {"crc32", crc_of(payload)},
                           {"meta", meta}};
  const std::string text = header.dump();
  const std::uint64_t n = text.size();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

TensorFile load_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string where = " in " + path.string();

  char magic[8];
  std::uint64_t n = 0;
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw FormatError("not a tensor file" + where);
  }
  if (!in.read(reinterpret_cast<char*>(&n), sizeof n)) throw FormatError("truncated header" + where);
  const auto file_size = std::filesystem::file_size(path);
  if (n > file_size) throw FormatError("header length exceeds file size" + where);
  std::string text(n, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(n))) {
    throw FormatError("truncated header" + where);
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("unreadable header" + where + ": " + e.what());
  }

  TensorFile out;
  try {
    const std::size_t payload_bytes = header.at("payload_bytes").get<std::size_t>();
    if (file_size != 16 + n + payload_bytes) {
      throw FormatError("file length " + std::to_string(file_size) + " does not match header" +
                        where);
    }
    std::vector<char> payload(payload_bytes);
    if (!in.read(payload.data(), static_cast<std::streamsize>(payload_bytes))) {
      throw FormatError("truncated payload" + where);
    }
    if (crc_of(payload) != header.at("crc32").get<std::uint32_t>()) {
      throw FormatError("checksum mismatch" + where);
    }
    std::set<std::string> seen;
    for (const auto& e : header.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      if (!seen.insert(name).second) throw FormatError("duplicate tensor " + name + where);
      if (e.at("dtype").get<std::string>() != "float32") {
        throw FormatError("unsupported dtype for " + name + where);
      }
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto nbytes = e.at("nbytes").get<std::size_t>();
      if (nbytes != shape_size(shape) * sizeof(float) || offset + nbytes > payload_bytes) {
        throw FormatError("bad extent for " + name + where);
      }
      Tensor<float> t(shape);
      std::memcpy(t.data(), payload.data() + offset, nbytes);
      out.tensors.emplace(name, std::move(t));
    }
    out.meta = header.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed header" + where + ": " + e.what());
  }
  return out;
}

}  // namespace patchssl
