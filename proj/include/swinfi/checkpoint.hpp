#pragma once

// "SWCK" checkpoint container: config digest, normalization statistics and
// the named parameter blobs in canonical order, float32 little-endian.
// Writes go through a temp file + rename so a killed run never leaves a
// loadable truncated checkpoint.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "swinfi/csiprep.hpp"
#include "swinfi/model.hpp"

namespace swinfi {

inline constexpr char kCheckpointMagic[4] = {'S', 'W', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void save_checkpoint(const std::filesystem::path& path,
                     const SwinModel<T>& model, const NormStats& stats,
                     bool include_head) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    os.write(kCheckpointMagic, 4);
    write_le<std::uint32_t>(os, kCheckpointVersion);
    write_le<std::uint64_t>(os, model.digest());
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(stats.mean.size()));
    for (std::size_t i = 0; i < stats.mean.size(); ++i) {
      write_le<double>(os, stats.mean[i]);
      write_le<double>(os, stats.stddev[i]);
    }
    const auto params = model.named_parameters(include_head);
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, tensor] : params) {
      write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_le<std::uint32_t>(os,
                              static_cast<std::uint32_t>(tensor.rank()));
      for (auto e : tensor.shape())
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e));
      for (const T& v : tensor.values())
        write_le<float>(os, static_cast<float>(v));
    }
    if (!os) throw IoError("checkpoint write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

// Loads parameters by name into the model; returns true when the file also
// carried the classifier head.  The stored digest must match the model's.
template <class T>
bool load_checkpoint(const std::filesystem::path& path, SwinModel<T>& model,
                     NormStats& stats) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw FormatError("not a SWCK checkpoint: " + path.string());
  const auto version = read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(version));
  const auto digest = read_le<std::uint64_t>(is);
  if (digest != model.digest())
    throw CheckpointError("checkpoint was produced by a different model "
                          "configuration");
  const auto n_channels = read_le<std::uint32_t>(is);
  stats.mean.resize(n_channels);
  stats.stddev.resize(n_channels);
  for (std::size_t i = 0; i < n_channels; ++i) {
    stats.mean[i] = read_le<double>(is);
    stats.stddev[i] = read_le<double>(is);
  }

  std::map<std::string, Tensor<T>> by_name;
  for (auto& [name, tensor] : model.named_parameters(true))
    by_name.emplace(name, tensor);

  const auto blob_count = read_le<std::uint32_t>(is);
  bool head_loaded = false;
  for (std::uint32_t b = 0; b < blob_count; ++b) {
    const auto name_len = read_le<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto rank = read_le<std::uint32_t>(is);
    Shape shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape[d] = read_le<std::uint32_t>(is);
      numel *= shape[d];
    }
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw FormatError("checkpoint carries unknown parameter '" + name + "'");
    if (it->second.shape() != shape)
      throw FormatError("checkpoint parameter '" + name +
                        "' has mismatched shape");
    auto& dst = it->second.mutable_values();
    for (std::size_t i = 0; i < numel; ++i)
      dst[i] = static_cast<T>(read_le<float>(is));
    if (name.rfind("head.", 0) == 0) head_loaded = true;
  }
  if (!is) throw FormatError("checkpoint truncated: " + path.string());
  return head_loaded;
}

}  // namespace swinfi
