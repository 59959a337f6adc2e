#pragma once

// "SWFI" feature-image wire records and the edge -> cloud stream ops with
// byte-level accounting.
//
// Record layout (little-endian, 24-byte header):
//   magic "SWFI" | u8 version | u8 dtype (0 = f32) | u16 dim | u16 grid_sub
//   | u16 grid_time | u32 frame_id | u64 config_digest | payload floats

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <vector>

#include "swinfi/model.hpp"

namespace swinfi {

inline constexpr char kWireMagic[4] = {'S', 'W', 'F', 'I'};
inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::uint8_t kWireDtypeF32 = 0;
inline constexpr std::size_t kWireHeaderBytes = 24;

inline std::size_t wire_record_bytes(const ModelConfig& cfg) {
  return kWireHeaderBytes + cfg.latent_elements() * sizeof(float);
}

inline std::vector<std::uint8_t> serialize_feature_image(
    const FeatureImage& fi) {
  if (fi.feats.size() != fi.token_count() * fi.dim)
    throw ShapeError("feature image payload does not match its grid");
  std::vector<std::uint8_t> out;
  out.reserve(kWireHeaderBytes + fi.feats.size() * sizeof(float));
  out.insert(out.end(), kWireMagic, kWireMagic + 4);
  append_le<std::uint8_t>(out, kWireVersion);
  append_le<std::uint8_t>(out, kWireDtypeF32);
  append_le<std::uint16_t>(out, fi.dim);
  append_le<std::uint16_t>(out, fi.grid_sub);
  append_le<std::uint16_t>(out, fi.grid_time);
  append_le<std::uint32_t>(out, fi.frame_id);
  append_le<std::uint64_t>(out, fi.config_digest);
  for (float v : fi.feats) append_le<float>(out, v);
  return out;
}

inline FeatureImage deserialize_feature_image(const std::uint8_t* data,
                                              std::size_t size) {
  if (size < kWireHeaderBytes)
    throw FormatError("feature image record truncated");
  if (std::memcmp(data, kWireMagic, 4) != 0)
    throw FormatError("not a SWFI record (bad magic)");
  FeatureImage fi;
  const std::uint8_t version = data[4];
  const std::uint8_t dtype = data[5];
  if (version != kWireVersion)
    throw FormatError("unsupported SWFI version " + std::to_string(version));
  if (dtype != kWireDtypeF32)
    throw FormatError("unsupported SWFI dtype " + std::to_string(dtype));
  fi.dim = take_le<std::uint16_t>(data + 6);
  fi.grid_sub = take_le<std::uint16_t>(data + 8);
  fi.grid_time = take_le<std::uint16_t>(data + 10);
  fi.frame_id = take_le<std::uint32_t>(data + 12);
  fi.config_digest = take_le<std::uint64_t>(data + 16);
  const std::size_t n = fi.token_count() * fi.dim;
  if (size != kWireHeaderBytes + n * sizeof(float))
    throw FormatError("feature image payload length mismatch");
  fi.feats.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    fi.feats[i] = take_le<float>(data + kWireHeaderBytes + i * sizeof(float));
  return fi;
}

inline FeatureImage deserialize_feature_image(
    const std::vector<std::uint8_t>& bytes) {
  return deserialize_feature_image(bytes.data(), bytes.size());
}

// ---------------------------------------------------------------------------
// Stream accounting
// ---------------------------------------------------------------------------

struct StreamStats {
  std::uint64_t frames_sent = 0;
  std::uint64_t raw_bytes = 0;
  std::uint64_t compressed_bytes = 0;
  double gamma = 0.0;  // configured compression ratio

  double measured_ratio() const {
    return compressed_bytes == 0
               ? 0.0
               : static_cast<double>(raw_bytes) / compressed_bytes;
  }
};

class StreamError : public Error {
 public:
  StreamError(const std::string& what, StreamStats partial)
      : Error(what), partial_stats(partial) {}
  StreamStats partial_stats;
};

// Encodes every frame of `frames` [B, D, S, T], serializes and writes to the
// sink.  Raw accounting uses 4-byte components, matching the capture format.
template <class T>
StreamStats edge_encode_stream(const SwinModel<T>& model,
                               const Tensor<T>& frames, std::ostream& sink,
                               std::uint32_t first_frame_id = 0) {
  StreamStats stats;
  stats.gamma = compression_ratio(model.config()).value();
  const auto& sh = frames.shape();
  if (sh.size() != 4) throw ShapeError("edge stream expects [B, D, S, T]");
  const std::uint64_t raw_per_frame = sh[1] * sh[2] * sh[3] * sizeof(float);
  auto images = model.encode(frames, first_frame_id);
  for (const auto& fi : images) {
    const auto bytes = serialize_feature_image(fi);
    sink.write(reinterpret_cast<const char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()));
    if (!sink)
      throw StreamError("sink write failed after " +
                            std::to_string(stats.frames_sent) + " frames",
                        stats);
    stats.frames_sent += 1;
    stats.raw_bytes += raw_per_frame;
    stats.compressed_bytes += bytes.size();
  }
  return stats;
}

template <class T>
struct CloudDecodeResult {
  Tensor<T> reconstruction;  // [B_valid, D, S, T], record order
  std::vector<std::uint32_t> frame_ids;
  std::vector<int> predictions;  // per valid record when classifying
  std::size_t skipped_records = 0;
  std::optional<double> nmse_db_value;
};

// Reads fixed-size records until EOF.  Malformed records (bad magic,
// version, dtype or geometry) are skipped and counted; a digest mismatch on
// an otherwise well-formed record is a checkpoint pairing error.  When a
// reference batch is supplied the NMSE of the reconstruction against the
// rows matching the valid records is reported.
template <class T>
CloudDecodeResult<T> cloud_decode_stream(std::istream& source,
                                         const SwinModel<T>& model,
                                         bool classify = false,
                                         const Tensor<T>* reference = nullptr) {
  const ModelConfig& cfg = model.config();
  const std::size_t record_size = wire_record_bytes(cfg);
  auto [gs, gt] = cfg.final_grid();

  CloudDecodeResult<T> result;
  std::vector<FeatureImage> images;
  std::vector<std::size_t> record_rows;
  std::vector<std::uint8_t> buf(record_size);
  std::size_t record_index = 0;
  while (true) {
    source.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(record_size));
    const std::size_t got = static_cast<std::size_t>(source.gcount());
    if (got == 0) break;
    if (got < record_size) {
      result.skipped_records += 1;  // trailing truncated record
      break;
    }
    const std::size_t row = record_index++;
    FeatureImage fi;
    try {
      fi = deserialize_feature_image(buf.data(), record_size);
    } catch (const FormatError&) {
      result.skipped_records += 1;
      continue;
    }
    if (fi.dim != cfg.embed_dim || fi.grid_sub != gs || fi.grid_time != gt) {
      result.skipped_records += 1;
      continue;
    }
    if (fi.config_digest != model.digest())
      throw CheckpointError("stream records do not match this checkpoint");
    images.push_back(std::move(fi));
    record_rows.push_back(row);
  }

  if (images.empty()) {
    result.reconstruction = Tensor<T>::zeros(
        {0, cfg.in_channels, cfg.subcarriers, cfg.timeslots});
    return result;
  }

  result.reconstruction = model.decode(images);
  for (const auto& fi : images) result.frame_ids.push_back(fi.frame_id);
  if (classify) {
    auto logits = model.classify(images);
    const std::size_t K = cfg.n_classes;
    for (std::size_t b = 0; b < images.size(); ++b) {
      int best = 0;
      for (std::size_t k = 1; k < K; ++k)
        if (logits.values()[b * K + k] > logits.values()[b * K + best])
          best = static_cast<int>(k);
      result.predictions.push_back(best);
    }
  }
  if (reference != nullptr) {
    const auto& rsh = reference->shape();
    const std::size_t per = rsh[1] * rsh[2] * rsh[3];
    std::vector<T> ref(images.size() * per);
    for (std::size_t i = 0; i < record_rows.size(); ++i) {
      if (record_rows[i] >= rsh[0])
        throw ShapeError("reference batch shorter than the stream");
      std::copy_n(reference->values().data() + record_rows[i] * per, per,
                  ref.data() + i * per);
    }
    auto ref_t = Tensor<T>::from({images.size(), rsh[1], rsh[2], rsh[3]},
                                 std::move(ref));
    result.nmse_db_value = nmse_db(ref_t, result.reconstruction);
  }
  return result;
}

}  // namespace swinfi
