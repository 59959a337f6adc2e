#pragma once

// Deterministic synthetic CSI generator.  Each class is a set of
// Doppler-like time/frequency modulations riding on a shared static
// multipath profile; every packet then picks up a random linear-in-
// subcarrier phase corruption, the distortion family the sanitization
// chain removes.

#include <cmath>
#include <complex>
#include <cstdint>
#include <set>
#include <vector>

#include "swinfi/common.hpp"
#include "swinfi/csiprep.hpp"

namespace swinfi {

struct ClassSignature {
  double doppler_hz = 0.0;
  double subcarrier_center = 0.0;  // bump center, subcarrier row units
  double bandwidth = 1.0;          // bump width, subcarrier rows

  bool operator==(const ClassSignature&) const = default;
  auto operator<=>(const ClassSignature&) const = default;
};

struct PhaseErrorModel {
  double slope_min = -0.2, slope_max = 0.2;    // rad per subcarrier index
  double offset_min = -3.0, offset_max = 3.0;  // rad
  double noise_std = 0.0;                      // extra per-row phase noise
};

struct SynthSpec {
  std::uint64_t seed = 1;
  std::size_t n_classes = 8;
  std::size_t packets_per_class = 1024;
  std::uint8_t n_antennas = 4;
  std::uint16_t n_subcarriers = 64;
  double sample_rate_hz = 100.0;
  double snr_db = 30.0;  // +inf disables noise
  double amp_mod_depth = 0.4;
  double phase_mod_depth = 0.5;
  std::size_t multipath_components = 3;  // 0 = flat unit profile
  PhaseErrorModel phase_error;
  std::size_t frame_len = 64;
  std::size_t frame_stride = 64;
  // per-class modulation triples; filled from default_signatures when empty
  std::vector<std::vector<ClassSignature>> signatures;

  std::size_t frames_per_class() const {
    if (packets_per_class < frame_len) return 0;
    return (packets_per_class - frame_len) / frame_stride + 1;
  }

  std::vector<ClassSignature> class_signature(std::size_t class_id) const {
    if (!signatures.empty()) return signatures.at(class_id);
    return default_signatures(class_id, n_subcarriers);
  }

  // Two triples per class, distinct in frequency, position and width.
  static std::vector<ClassSignature> default_signatures(
      std::size_t class_id, std::size_t n_subcarriers) {
    const double S = static_cast<double>(n_subcarriers);
    const double c = static_cast<double>(class_id);
    return {
        {4.0 + 3.5 * c, S * (0.22 + 0.05 * c), S * (0.05 + 0.004 * c)},
        {7.5 + 3.5 * c, S * (0.82 - 0.04 * c), S * 0.09},
    };
  }

  void validate() const {
    if (n_classes == 0 || n_antennas == 0 || n_subcarriers == 0)
      throw ConfigError("synth spec needs classes, antennas, subcarriers");
    if (sample_rate_hz <= 0) throw ConfigError("sample rate must be positive");
    if (amp_mod_depth < 0 || amp_mod_depth >= 1)
      throw ConfigError("amplitude modulation depth must sit in [0, 1)");
    if (frame_stride == 0) throw ConfigError("frame stride must be >= 1");
    if (!signatures.empty() && signatures.size() != n_classes)
      throw ConfigError("signature table must cover every class");
    std::set<std::vector<ClassSignature>> seen;
    for (std::size_t c = 0; c < n_classes; ++c) {
      const auto sig = class_signature(c);
      if (sig.empty()) throw ConfigError("class signature must not be empty");
      for (const auto& s : sig) {
        if (s.doppler_hz <= 0 || s.doppler_hz >= sample_rate_hz / 2)
          throw ConfigError("doppler frequency must sit below Nyquist");
        if (s.bandwidth <= 0) throw ConfigError("bandwidth must be positive");
      }
      if (!seen.insert(sig).second)
        throw ConfigError("classes must carry distinct signatures");
    }
  }
};

// Complex CSI for one class: shared static multipath profile, the class's
// amplitude/phase bumps, AWGN at snr_db, then per-packet per-antenna linear
// phase corruption.  Output bytes are a pure function of (spec, class_id).
inline RawCsiCapture generate_capture(const SynthSpec& spec,
                                      std::size_t class_id) {
  spec.validate();
  if (class_id >= spec.n_classes)
    throw ConfigError("class id out of range");

  const std::size_t P = spec.packets_per_class;
  const std::size_t A = spec.n_antennas;
  const std::size_t S = spec.n_subcarriers;

  RawCsiCapture cap;
  cap.n_antennas = spec.n_antennas;
  cap.n_subcarriers = spec.n_subcarriers;
  cap.sample_rate_centihz =
      static_cast<std::uint32_t>(std::lround(spec.sample_rate_hz * 100.0));
  cap.label = static_cast<std::uint8_t>(class_id);
  cap.samples.resize(P * A * S);

  // Static multipath profile, shared by all classes.
  std::vector<std::complex<double>> profile(A * S,
                                            std::complex<double>(1.0, 0.0));
  Rng static_rng = Rng::seeded(spec.seed).fork(0x57a71c);
  if (spec.multipath_components > 0) {
    for (std::size_t a = 0; a < A; ++a) {
      std::vector<double> amp(spec.multipath_components);
      std::vector<double> cycles(spec.multipath_components);
      std::vector<double> theta(spec.multipath_components);
      for (std::size_t r = 0; r < spec.multipath_components; ++r) {
        amp[r] = std::pow(0.5, static_cast<double>(r));
        cycles[r] = static_rng.uniform(0.5, 3.0);
        theta[r] = static_rng.uniform(-3.0, 3.0);
      }
      for (std::size_t s = 0; s < S; ++s) {
        std::complex<double> g(0.0, 0.0);
        for (std::size_t r = 0; r < spec.multipath_components; ++r) {
          const double ph =
              2.0 * 3.14159265358979323846 * cycles[r] * s / S + theta[r];
          g += amp[r] * std::complex<double>(std::cos(ph), std::sin(ph));
        }
        profile[a * S + s] = g;
      }
    }
  }

  const auto sig = spec.class_signature(class_id);
  Rng rng = Rng::seeded(spec.seed).fork(0xc1a550 + class_id);
  std::vector<double> psi_amp(A * sig.size()), psi_phase(A * sig.size());
  for (auto& v : psi_amp) v = rng.uniform(-3.0, 3.0);
  for (auto& v : psi_phase) v = rng.uniform(-3.0, 3.0);

  // Precomputed subcarrier bumps per signature.
  std::vector<std::vector<double>> bump(sig.size(), std::vector<double>(S));
  for (std::size_t j = 0; j < sig.size(); ++j)
    for (std::size_t s = 0; s < S; ++s) {
      const double d = (static_cast<double>(s) - sig[j].subcarrier_center) /
                       sig[j].bandwidth;
      bump[j][s] = std::exp(-0.5 * d * d);
    }

  constexpr double kTwoPi = 2.0 * 3.14159265358979323846;
  std::vector<std::complex<double>> signal(P * A * S);
  double power_sum = 0.0;
  for (std::size_t p = 0; p < P; ++p) {
    const double t = static_cast<double>(p) / spec.sample_rate_hz;
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t s = 0; s < S; ++s) {
        double gain = 1.0, phase = 0.0;
        for (std::size_t j = 0; j < sig.size(); ++j) {
          const double osc = kTwoPi * sig[j].doppler_hz * t;
          gain *= 1.0 + spec.amp_mod_depth * bump[j][s] *
                            std::sin(osc + psi_amp[a * sig.size() + j]);
          phase += spec.phase_mod_depth * bump[j][s] *
                   std::cos(osc + psi_phase[a * sig.size() + j]);
        }
        const auto h = profile[a * S + s] * gain *
                       std::complex<double>(std::cos(phase), std::sin(phase));
        signal[(p * A + a) * S + s] = h;
        power_sum += std::norm(h);
      }
  }

  // AWGN sized against mean signal power.
  if (std::isfinite(spec.snr_db)) {
    const double mean_power = power_sum / static_cast<double>(signal.size());
    const double sigma =
        std::sqrt(mean_power / std::pow(10.0, spec.snr_db / 10.0) / 2.0);
    for (auto& h : signal)
      h += std::complex<double>(sigma * rng.normal(), sigma * rng.normal());
  }

  // Linear-in-subcarrier phase corruption (PDD/SFO/CFO stand-in), drawn per
  // packet per antenna.  k runs symmetric around DC: k = s - S/2.
  const auto& pe = spec.phase_error;
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t a = 0; a < A; ++a) {
      const double slope = rng.uniform(pe.slope_min, pe.slope_max);
      const double offset = rng.uniform(pe.offset_min, pe.offset_max);
      for (std::size_t s = 0; s < S; ++s) {
        const double k = static_cast<double>(s) - static_cast<double>(S) / 2.0;
        double ph = slope * k + offset;
        if (pe.noise_std > 0) ph += pe.noise_std * rng.normal();
        const auto rot = std::complex<double>(std::cos(ph), std::sin(ph));
        const auto h = signal[(p * A + a) * S + s] * rot;
        cap.samples[(p * A + a) * S + s] = {static_cast<float>(h.real()),
                                            static_cast<float>(h.imag())};
      }
    }
  return cap;
}

// ---------------------------------------------------------------------------
// Dataset with a per-class 70/15/15 frame split
// ---------------------------------------------------------------------------

struct FrameRef {
  std::size_t class_id = 0;
  std::size_t frame_index = 0;

  bool operator==(const FrameRef&) const = default;
  auto operator<=>(const FrameRef&) const = default;
};

struct SplitPlan {
  std::vector<FrameRef> train, val, test;
};

// Shuffles each class's frame indices with a seeded stream and slices
// 70/15/15.  Per-class counts are identical across classes.
inline SplitPlan split_frames(const SynthSpec& spec,
                              std::uint64_t split_seed) {
  SplitPlan plan;
  const std::size_t F = spec.frames_per_class();
  const std::size_t n_train = static_cast<std::size_t>(
      std::lround(0.70 * static_cast<double>(F)));
  const std::size_t n_val = static_cast<std::size_t>(
      std::lround(0.15 * static_cast<double>(F)));
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    std::vector<std::size_t> idx(F);
    for (std::size_t i = 0; i < F; ++i) idx[i] = i;
    Rng rng = Rng::seeded(split_seed).fork(0x5e11 + c);
    for (std::size_t i = F; i > 1; --i) {
      const std::size_t j = rng.next_u64() % i;
      std::swap(idx[i - 1], idx[j]);
    }
    for (std::size_t i = 0; i < F; ++i) {
      FrameRef ref{c, idx[i]};
      if (i < n_train)
        plan.train.push_back(ref);
      else if (i < n_train + n_val)
        plan.val.push_back(ref);
      else
        plan.test.push_back(ref);
    }
  }
  return plan;
}

struct SynthDataset {
  SynthSpec spec;
  std::vector<RawCsiCapture> captures;  // one per class
  SplitPlan split;
};

inline SynthDataset generate_dataset(const SynthSpec& spec,
                                     std::uint64_t split_seed) {
  spec.validate();
  SynthDataset ds;
  ds.spec = spec;
  ds.captures.reserve(spec.n_classes);
  for (std::size_t c = 0; c < spec.n_classes; ++c)
    ds.captures.push_back(generate_capture(spec, c));
  ds.split = split_frames(spec, split_seed);
  return ds;
}

}  // namespace swinfi
