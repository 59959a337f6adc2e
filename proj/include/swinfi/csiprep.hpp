#pragma once

// Raw CSI capture container, phase sanitization (unwrap + linear fit),
// dB amplitude, subcarrier masking, framing, and batch assembly.

#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "swinfi/common.hpp"
#include "swinfi/tensor.hpp"

namespace swinfi {

// ---------------------------------------------------------------------------
// Capture container ("CSI0")
// ---------------------------------------------------------------------------

struct RawCsiCapture {
  std::uint8_t n_antennas = 4;
  std::uint16_t n_subcarriers = 256;
  std::uint32_t sample_rate_centihz = 10000;  // 100.00 Hz
  std::uint8_t label = 0;
  // packet-major, then antenna, then subcarrier
  std::vector<std::complex<float>> samples;

  std::size_t packet_count() const {
    const std::size_t per = static_cast<std::size_t>(n_antennas) * n_subcarriers;
    return per == 0 ? 0 : samples.size() / per;
  }

  double sample_rate_hz() const { return sample_rate_centihz / 100.0; }

  std::complex<float> at(std::size_t packet, std::size_t antenna,
                         std::size_t subcarrier) const {
    return samples[(packet * n_antennas + antenna) * n_subcarriers + subcarrier];
  }
};

inline constexpr char kCaptureMagic[4] = {'C', 'S', 'I', '0'};
inline constexpr std::uint8_t kCaptureVersion = 1;

inline void write_capture(std::ostream& os, const RawCsiCapture& c) {
  os.write(kCaptureMagic, 4);
  write_le<std::uint8_t>(os, kCaptureVersion);
  write_le<std::uint8_t>(os, c.n_antennas);
  write_le<std::uint16_t>(os, c.n_subcarriers);
  write_le<std::uint32_t>(os, c.sample_rate_centihz);
  write_le<std::uint8_t>(os, c.label);
  write_le<std::uint8_t>(os, 0);  // reserved
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.packet_count()));
  for (const auto& z : c.samples) {
    write_le<float>(os, z.real());
    write_le<float>(os, z.imag());
  }
  if (!os) throw IoError("capture write failed");
}

inline void write_capture(const std::filesystem::path& path,
                          const RawCsiCapture& c) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_capture(os, c);
}

inline RawCsiCapture parse_capture(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCaptureMagic, 4) != 0)
    throw FormatError("not a CSI0 capture (bad magic)");
  const auto version = read_le<std::uint8_t>(is);
  if (version != kCaptureVersion)
    throw FormatError("unsupported capture version " + std::to_string(version));
  RawCsiCapture c;
  c.n_antennas = read_le<std::uint8_t>(is);
  c.n_subcarriers = read_le<std::uint16_t>(is);
  c.sample_rate_centihz = read_le<std::uint32_t>(is);
  c.label = read_le<std::uint8_t>(is);
  read_le<std::uint8_t>(is);  // reserved
  const auto packets = read_le<std::uint32_t>(is);
  const std::size_t count = static_cast<std::size_t>(packets) * c.n_antennas *
                            c.n_subcarriers;
  c.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    float re, im;
    is.read(reinterpret_cast<char*>(&re), sizeof(float));
    is.read(reinterpret_cast<char*>(&im), sizeof(float));
    if (!is)
      throw FormatError("capture truncated: declared " +
                        std::to_string(packets) + " packets");
    c.samples[i] = {re, im};
  }
  return c;
}

inline RawCsiCapture parse_capture(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return parse_capture(is);
}

// ---------------------------------------------------------------------------
// Subcarrier masks
// ---------------------------------------------------------------------------

// Usable-subcarrier table.  Rows are stored in spectral order: row i holds
// subcarrier index k = i - fft_size/2, DC at i = fft_size/2.
struct SubcarrierMask {
  std::string version;
  std::vector<std::uint8_t> usable;  // length fft_size, 1 = usable

  std::size_t fft_size() const { return usable.size(); }

  std::size_t usable_count() const {
    std::size_t n = 0;
    for (auto u : usable) n += u;
    return n;
  }

  // Subcarrier indices k of the usable rows, strictly increasing.
  std::vector<int> usable_indices() const {
    std::vector<int> k;
    const int half = static_cast<int>(usable.size()) / 2;
    for (std::size_t i = 0; i < usable.size(); ++i)
      if (usable[i]) k.push_back(static_cast<int>(i) - half);
    return k;
  }

  static SubcarrierMask all_usable(std::size_t fft_size) {
    return {"all-v1", std::vector<std::uint8_t>(fft_size, 1)};
  }

  // 802.11ac 80 MHz layout: 256-point FFT, null DC block {-1,0,1}, edge
  // guards (-128..-123, 123..127) and 8 pilots at +/-{11,39,75,103}.
  // 234 usable rows remain.
  static SubcarrierMask wifi_80mhz() {
    SubcarrierMask m;
    m.version = "80mhz-v1";
    m.usable.assign(256, 0);
    auto set = [&m](int k, std::uint8_t v) { m.usable[k + 128] = v; };
    for (int k = -122; k <= 122; ++k)
      if (k < -1 || k > 1) set(k, 1);
    for (int p : {11, 39, 75, 103}) {
      set(p, 0);
      set(-p, 0);
    }
    return m;
  }

  // All rows except the lowest edge guard k = -N/2.  Keeps the usable index
  // set symmetric around DC, which the linear phase fit relies on.
  static SubcarrierMask symmetric(std::size_t fft_size) {
    SubcarrierMask m;
    m.version = "sym-v1";
    m.usable.assign(fft_size, 1);
    m.usable[0] = 0;
    return m;
  }

  // Default mask for a given FFT size: the versioned 80 MHz table at 256,
  // the symmetric variant otherwise (synthetic captures).
  static SubcarrierMask default_for(std::size_t fft_size) {
    return fft_size == 256 ? wifi_80mhz() : symmetric(fft_size);
  }
};

// Zeroes the non-usable rows of a subcarriers x columns matrix in place.
inline void mask_subcarriers(std::vector<double>& matrix,
                             std::size_t n_subcarriers, std::size_t n_cols,
                             const SubcarrierMask& mask) {
  if (mask.fft_size() != n_subcarriers)
    throw ShapeError("mask length " + std::to_string(mask.fft_size()) +
                     " != subcarrier count " + std::to_string(n_subcarriers));
  if (matrix.size() != n_subcarriers * n_cols)
    throw ShapeError("matrix size does not match subcarriers x cols");
  for (std::size_t s = 0; s < n_subcarriers; ++s)
    if (!mask.usable[s])
      std::fill_n(matrix.begin() + s * n_cols, n_cols, 0.0);
}

// ---------------------------------------------------------------------------
// Phase sanitization
// ---------------------------------------------------------------------------

// Cumulative 2*pi corrections along the subcarrier axis so every consecutive
// difference lands in (-pi, pi]; the first element is unchanged.
inline std::vector<double> unwrap_phase(std::span<const double> raw) {
  std::vector<double> out(raw.begin(), raw.end());
  constexpr double kPi = 3.14159265358979323846;
  constexpr double kTwoPi = 2.0 * kPi;
  double offset = 0.0;
  for (std::size_t m = 1; m < out.size(); ++m) {
    double d = raw[m] - raw[m - 1];
    while (d > kPi) {
      d -= kTwoPi;
      offset -= kTwoPi;
    }
    while (d <= -kPi) {
      d += kTwoPi;
      offset += kTwoPi;
    }
    out[m] = raw[m] + offset;
  }
  return out;
}

struct LinearFitParams {
  double delta = 0.0;  // timing-offset term; unobservable per packet
  double beta = 0.0;   // initial-phase term; unobservable per packet
  std::size_t n = 0;   // fitted subcarrier count
  std::size_t fft_size = 256;
};

struct PhaseRecord {
  std::vector<int> k;            // fitted subcarrier indices
  std::vector<double> phi_hat;   // unwrapped input phase
  std::vector<double> phi_tilde; // corrected phase
  double slope = 0.0;            // a
  double intercept = 0.0;        // b
};

// Endpoint-slope / mean linear fit:
//   a = (phi_n - phi_1)/(k_n - k_1) - 2*pi*delta/N
//   b = mean(phi) - (2*pi*delta/(n*N)) * sum(k) + beta
//   phi_tilde_j = phi_hat_j - (a*k_j + b)
inline PhaseRecord linear_fit_correct(std::span<const double> phi_hat,
                                      std::span<const int> k,
                                      const LinearFitParams& params) {
  const std::size_t n = phi_hat.size();
  if (n < 2 || k.size() != n || params.n != n)
    throw ShapeError("linear fit needs matching k/phase vectors, n >= 2");
  for (std::size_t j = 1; j < n; ++j)
    if (k[j] <= k[j - 1]) throw ShapeError("k must be strictly increasing");
  if (k[n - 1] == k[0]) throw NumericError("degenerate fit: k_n == k_1");

  constexpr double kTwoPi = 2.0 * 3.14159265358979323846;
  const double N = static_cast<double>(params.fft_size);
  double phase_mean = 0.0, k_sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    phase_mean += phi_hat[j];
    k_sum += k[j];
  }
  phase_mean /= static_cast<double>(n);

  PhaseRecord rec;
  rec.slope = (phi_hat[n - 1] - phi_hat[0]) /
                  static_cast<double>(k[n - 1] - k[0]) -
              kTwoPi * params.delta / N;
  rec.intercept = phase_mean -
                  kTwoPi * params.delta / (static_cast<double>(n) * N) * k_sum +
                  params.beta;
  rec.k.assign(k.begin(), k.end());
  rec.phi_hat.assign(phi_hat.begin(), phi_hat.end());
  rec.phi_tilde.resize(n);
  for (std::size_t j = 0; j < n; ++j)
    rec.phi_tilde[j] = phi_hat[j] - (rec.slope * k[j] + rec.intercept);
  return rec;
}

// ---------------------------------------------------------------------------
// Amplitude
// ---------------------------------------------------------------------------

inline constexpr double kAmplitudeFloor = 1e-12;

// 20*log10(|h| + floor); the floor keeps nulled carriers at -240 dB
// instead of -inf.
inline std::vector<double> amplitude_db(const RawCsiCapture& c) {
  std::vector<double> out(c.samples.size());
  for (std::size_t i = 0; i < c.samples.size(); ++i)
    out[i] = 20.0 * std::log10(std::abs(std::complex<double>(c.samples[i])) +
                               kAmplitudeFloor);
  return out;
}

// ---------------------------------------------------------------------------
// Sanitized capture and framing
// ---------------------------------------------------------------------------

enum class ChannelMode { kAmplitude, kPhase, kMixed };

inline std::size_t channel_count(ChannelMode mode, std::size_t n_antennas) {
  return mode == ChannelMode::kMixed ? 2 * n_antennas : n_antennas;
}

inline const char* channel_mode_name(ChannelMode m) {
  switch (m) {
    case ChannelMode::kAmplitude: return "amplitude";
    case ChannelMode::kPhase: return "phase";
    case ChannelMode::kMixed: return "mixed";
  }
  return "?";
}

inline ChannelMode channel_mode_from(const std::string& s) {
  if (s == "amplitude") return ChannelMode::kAmplitude;
  if (s == "phase") return ChannelMode::kPhase;
  if (s == "mixed") return ChannelMode::kMixed;
  throw ConfigError("unknown channel mode '" + s + "'");
}

// Per-packet sanitized planes, laid out [packet][antenna][subcarrier] with
// masked rows exactly zero.  Phase is unwrapped and fit-corrected per
// antenna per packet over the usable subcarriers.
struct SanitizedCapture {
  std::uint8_t n_antennas = 0;
  std::uint16_t n_subcarriers = 0;
  std::uint8_t label = 0;
  std::size_t packets = 0;
  SubcarrierMask mask;
  std::vector<double> amplitude;  // dB
  std::vector<double> phase;      // radians, corrected
};

inline SanitizedCapture sanitize_capture(const RawCsiCapture& c,
                                         const SubcarrierMask& mask) {
  if (mask.fft_size() != c.n_subcarriers)
    throw ShapeError("mask does not match capture subcarrier count");
  SanitizedCapture s;
  s.n_antennas = c.n_antennas;
  s.n_subcarriers = c.n_subcarriers;
  s.label = c.label;
  s.packets = c.packet_count();
  s.mask = mask;
  s.amplitude.assign(c.samples.size(), 0.0);
  s.phase.assign(c.samples.size(), 0.0);

  const auto kvec = mask.usable_indices();
  const std::size_t n_used = kvec.size();
  std::vector<std::size_t> rows;
  rows.reserve(n_used);
  for (std::size_t i = 0; i < mask.usable.size(); ++i)
    if (mask.usable[i]) rows.push_back(i);

  LinearFitParams fit;
  fit.n = n_used;
  fit.fft_size = c.n_subcarriers;

  std::vector<double> raw_phase(n_used);
  for (std::size_t p = 0; p < s.packets; ++p)
    for (std::size_t a = 0; a < c.n_antennas; ++a) {
      const std::size_t base = (p * c.n_antennas + a) * c.n_subcarriers;
      for (std::size_t j = 0; j < n_used; ++j) {
        const auto z = std::complex<double>(c.samples[base + rows[j]]);
        raw_phase[j] = std::arg(z);
        s.amplitude[base + rows[j]] =
            20.0 * std::log10(std::abs(z) + kAmplitudeFloor);
      }
      if (n_used >= 2) {
        const auto unwrapped = unwrap_phase(raw_phase);
        const auto rec = linear_fit_correct(unwrapped, kvec, fit);
        for (std::size_t j = 0; j < n_used; ++j)
          s.phase[base + rows[j]] = rec.phi_tilde[j];
      }
    }
  return s;
}

// One model-ready frame: channels x subcarriers x slots.
struct FrameTensor {
  std::size_t channels = 0, subcarriers = 0, slots = 0;
  std::uint8_t label = 0;
  std::vector<double> data;  // channel-major, then subcarrier, then slot
};

// Consecutive (possibly overlapping) windows of `slots` packets.  A capture
// shorter than one window yields an empty sequence.
inline std::vector<FrameTensor> frame_windows(const SanitizedCapture& c,
                                              ChannelMode mode,
                                              std::size_t slots,
                                              std::size_t stride) {
  if (stride == 0) throw ConfigError("frame stride must be >= 1");
  std::vector<FrameTensor> frames;
  if (c.packets < slots) return frames;
  const std::size_t n_frames = (c.packets - slots) / stride + 1;
  const std::size_t D = channel_count(mode, c.n_antennas);
  const std::size_t S = c.n_subcarriers;
  frames.reserve(n_frames);
  for (std::size_t f = 0; f < n_frames; ++f) {
    FrameTensor fr;
    fr.channels = D;
    fr.subcarriers = S;
    fr.slots = slots;
    fr.label = c.label;
    fr.data.assign(D * S * slots, 0.0);
    const std::size_t p0 = f * stride;
    auto fill = [&](const std::vector<double>& plane, std::size_t ch0) {
      for (std::size_t a = 0; a < c.n_antennas; ++a)
        for (std::size_t t = 0; t < slots; ++t) {
          const std::size_t src = ((p0 + t) * c.n_antennas + a) * S;
          double* dst = fr.data.data() + ((ch0 + a) * S) * slots;
          for (std::size_t srow = 0; srow < S; ++srow)
            dst[srow * slots + t] = plane[src + srow];
        }
    };
    if (mode == ChannelMode::kAmplitude) {
      fill(c.amplitude, 0);
    } else if (mode == ChannelMode::kPhase) {
      fill(c.phase, 0);
    } else {
      fill(c.amplitude, 0);
      fill(c.phase, c.n_antennas);
    }
    frames.push_back(std::move(fr));
  }
  return frames;
}

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

struct NormStats {
  std::vector<double> mean, stddev;  // per channel
};

template <class T>
struct CsiFrameBatch {
  Tensor<T> data;  // B x D x S x T
  std::vector<int> labels;
  NormStats stats;
  SubcarrierMask mask;
};

// Standardizes each channel over the usable subcarrier rows only; masked
// rows stay exactly zero.  When stats are not supplied they are computed
// from the given frames (training split).
template <class T>
CsiFrameBatch<T> assemble_batch(const std::vector<FrameTensor>& frames,
                                const SubcarrierMask& mask,
                                std::optional<NormStats> stats = std::nullopt) {
  if (frames.empty()) throw ConfigError("assemble_batch: no frames");
  const std::size_t D = frames[0].channels;
  const std::size_t S = frames[0].subcarriers;
  const std::size_t Ts = frames[0].slots;
  for (const auto& f : frames)
    if (f.channels != D || f.subcarriers != S || f.slots != Ts)
      throw ShapeError("assemble_batch: inconsistent frame shapes");
  if (mask.fft_size() != S)
    throw ShapeError("assemble_batch: mask does not match frames");

  const std::size_t usable_rows = mask.usable_count();
  NormStats st;
  if (stats) {
    st = *stats;
    if (st.mean.size() != D || st.stddev.size() != D)
      throw ShapeError("assemble_batch: stats channel count mismatch");
  } else {
    st.mean.assign(D, 0.0);
    st.stddev.assign(D, 0.0);
    const double count =
        static_cast<double>(frames.size() * usable_rows * Ts);
    for (std::size_t ch = 0; ch < D; ++ch) {
      double sum = 0.0, sq = 0.0;
      for (const auto& f : frames) {
        const double* plane = f.data.data() + ch * S * Ts;
        for (std::size_t s = 0; s < S; ++s) {
          if (!mask.usable[s]) continue;
          const double* row = plane + s * Ts;
          for (std::size_t t = 0; t < Ts; ++t) {
            sum += row[t];
            sq += row[t] * row[t];
          }
        }
      }
      const double m = sum / count;
      const double var = std::max(sq / count - m * m, 0.0);
      st.mean[ch] = m;
      st.stddev[ch] = std::sqrt(var);
      if (st.stddev[ch] == 0.0)
        throw NumericError("assemble_batch: channel " + std::to_string(ch) +
                           " has zero variance on usable rows");
    }
  }

  std::vector<T> data(frames.size() * D * S * Ts, T(0));
  std::vector<int> labels;
  labels.reserve(frames.size());
  for (std::size_t b = 0; b < frames.size(); ++b) {
    const auto& f = frames[b];
    labels.push_back(f.label);
    for (std::size_t ch = 0; ch < D; ++ch) {
      const double m = st.mean[ch];
      const double inv = 1.0 / st.stddev[ch];
      const double* plane = f.data.data() + ch * S * Ts;
      T* out = data.data() + (b * D + ch) * S * Ts;
      for (std::size_t s = 0; s < S; ++s) {
        if (!mask.usable[s]) continue;
        const double* row = plane + s * Ts;
        T* orow = out + s * Ts;
        for (std::size_t t = 0; t < Ts; ++t)
          orow[t] = static_cast<T>((row[t] - m) * inv);
      }
    }
  }

  CsiFrameBatch<T> batch;
  batch.data = Tensor<T>::from({frames.size(), D, S, Ts}, std::move(data));
  batch.labels = std::move(labels);
  batch.stats = st;
  batch.mask = mask;
  return batch;
}

// ---------------------------------------------------------------------------
// Bandwidth accounting
// ---------------------------------------------------------------------------

// Raw traffic of an uncompressed capture stream in bits per second:
// antennas x subcarriers x rate x 2 components x 4 bytes x 8 bits.
inline double raw_bandwidth_bps(const RawCsiCapture& c) {
  return static_cast<double>(c.n_antennas) * c.n_subcarriers *
         c.sample_rate_hz() * 2.0 * 4.0 * 8.0;
}

}  // namespace swinfi
