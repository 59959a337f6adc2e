#pragma once

// Run orchestration: config file parsing, data preparation, autoencoder and
// classifier training, evaluation, and the experiment grid runner.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "swinfi/checkpoint.hpp"
#include "swinfi/csiprep.hpp"
#include "swinfi/model.hpp"
#include "swinfi/optim.hpp"
#include "swinfi/syndata.hpp"
#include "swinfi/wire.hpp"

namespace swinfi {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct TrainSettings {
  double lr = 1e-3;
  std::size_t batch_size = 8;
  std::size_t max_steps = 2000;
  std::size_t eval_every = 50;
  std::uint64_t seed = 42;
  std::uint64_t split_seed = 7;
  double clip_norm = 1.0;
  std::optional<double> target_nmse_db;  // early stop once val reaches this
  std::size_t cls_steps = 400;
  double cls_lr = 1e-2;
  bool deterministic = true;
};

struct DataSettings {
  ChannelMode mode = ChannelMode::kAmplitude;
  std::string mask = "default";  // default | 80mhz | symmetric | all
  bool overfit = false;          // train == val == test == all frames
  std::size_t frame_len = 64;
  std::size_t frame_stride = 64;
  bool use_synth = true;
  SynthSpec synth;
  std::vector<std::string> capture_paths;
};

struct IoSettings {
  std::string checkpoint = "out/ae.swck";
  std::string cls_checkpoint = "out/cls.swck";
  std::string metrics;  // JSONL path; empty = keep in memory only
  std::string output_dir = "out";
};

struct RunConfig {
  ModelConfig model;
  DataSettings data;
  TrainSettings train;
  IoSettings io;

  SubcarrierMask resolve_mask(std::size_t fft_size) const {
    if (data.mask == "default") return SubcarrierMask::default_for(fft_size);
    if (data.mask == "80mhz") return SubcarrierMask::wifi_80mhz();
    if (data.mask == "symmetric") return SubcarrierMask::symmetric(fft_size);
    if (data.mask == "all") return SubcarrierMask::all_usable(fft_size);
    throw ConfigError("unknown mask '" + data.mask + "'");
  }

  void validate() const {
    model.validate();
    if (data.use_synth) {
      data.synth.validate();
      if (model.subcarriers != data.synth.n_subcarriers)
        throw ConfigError("model subcarriers must match the synth spec");
      if (model.in_channels !=
          channel_count(data.mode, data.synth.n_antennas))
        throw ConfigError("model channel count does not match mode x antennas");
    } else if (data.capture_paths.empty()) {
      throw ConfigError("either a synth spec or capture paths are required");
    }
    if (model.timeslots != data.frame_len)
      throw ConfigError("model timeslots must equal the frame length");
    if (train.batch_size == 0 || train.max_steps == 0 ||
        train.eval_every == 0)
      throw ConfigError("batch size, steps and eval cadence must be positive");
  }
};

// --- JSON binding (config files mirror this structure) ---

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  if (j.contains("patch")) {
    cfg.patch_sub = j["patch"][0];
    cfg.patch_time = j["patch"][1];
  }
  if (j.contains("window")) {
    cfg.window_sub = j["window"][0];
    cfg.window_time = j["window"][1];
  }
  cfg.embed_dim = j.value("dim", cfg.embed_dim);
  if (j.contains("depths"))
    cfg.depths = j["depths"].get<std::vector<std::size_t>>();
  cfg.head_dim = j.value("head_dim", cfg.head_dim);
  cfg.mlp_ratio = j.value("mlp_ratio", cfg.mlp_ratio);
  cfg.n_classes = j.value("classes", cfg.n_classes);
  cfg.in_channels = j.value("channels", cfg.in_channels);
  cfg.subcarriers = j.value("subcarriers", cfg.subcarriers);
  cfg.timeslots = j.value("timeslots", cfg.timeslots);
  return cfg;
}

inline SynthSpec synth_spec_from_json(const json& j) {
  SynthSpec s;
  s.seed = j.value("seed", s.seed);
  s.n_classes = j.value("classes", s.n_classes);
  s.packets_per_class = j.value("packets_per_class", s.packets_per_class);
  s.n_antennas = j.value("antennas", s.n_antennas);
  s.n_subcarriers = j.value("subcarriers", s.n_subcarriers);
  s.sample_rate_hz = j.value("rate_hz", s.sample_rate_hz);
  s.snr_db = j.value("snr_db", s.snr_db);
  s.amp_mod_depth = j.value("amp_mod_depth", s.amp_mod_depth);
  s.phase_mod_depth = j.value("phase_mod_depth", s.phase_mod_depth);
  s.multipath_components = j.value("multipath", s.multipath_components);
  if (j.contains("slope_range")) {
    s.phase_error.slope_min = j["slope_range"][0];
    s.phase_error.slope_max = j["slope_range"][1];
  }
  if (j.contains("offset_range")) {
    s.phase_error.offset_min = j["offset_range"][0];
    s.phase_error.offset_max = j["offset_range"][1];
  }
  s.phase_error.noise_std = j.value("phase_noise_std", 0.0);
  return s;
}

inline RunConfig run_config_from_json(const json& j) {
  RunConfig cfg;
  if (j.contains("model")) cfg.model = model_config_from_json(j["model"]);
  if (j.contains("data")) {
    const auto& d = j["data"];
    cfg.data.mode = channel_mode_from(d.value("mode", "amplitude"));
    cfg.data.mask = d.value("mask", cfg.data.mask);
    cfg.data.overfit = d.value("overfit", false);
    cfg.data.frame_len = d.value("frame_len", cfg.data.frame_len);
    cfg.data.frame_stride = d.value("frame_stride", cfg.data.frame_stride);
    if (d.contains("captures")) {
      cfg.data.use_synth = false;
      cfg.data.capture_paths = d["captures"].get<std::vector<std::string>>();
    }
    if (d.contains("synth")) {
      cfg.data.use_synth = true;
      cfg.data.synth = synth_spec_from_json(d["synth"]);
    }
    cfg.data.synth.frame_len = cfg.data.frame_len;
    cfg.data.synth.frame_stride = cfg.data.frame_stride;
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    cfg.train.lr = t.value("lr", cfg.train.lr);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.max_steps = t.value("max_steps", cfg.train.max_steps);
    cfg.train.eval_every = t.value("eval_every", cfg.train.eval_every);
    cfg.train.seed = t.value("seed", cfg.train.seed);
    cfg.train.split_seed = t.value("split_seed", cfg.train.split_seed);
    cfg.train.clip_norm = t.value("clip_norm", cfg.train.clip_norm);
    if (t.contains("target_nmse_db") && !t["target_nmse_db"].is_null())
      cfg.train.target_nmse_db = t["target_nmse_db"].get<double>();
    cfg.train.cls_steps = t.value("cls_steps", cfg.train.cls_steps);
    cfg.train.cls_lr = t.value("cls_lr", cfg.train.cls_lr);
    cfg.train.deterministic =
        t.value("deterministic", cfg.train.deterministic);
  }
  if (j.contains("io")) {
    const auto& io = j["io"];
    cfg.io.checkpoint = io.value("checkpoint", cfg.io.checkpoint);
    cfg.io.cls_checkpoint =
        io.value("cls_checkpoint", cfg.io.cls_checkpoint);
    cfg.io.metrics = io.value("metrics", cfg.io.metrics);
    cfg.io.output_dir = io.value("output_dir", cfg.io.output_dir);
  }
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config parse error in " + path.string() + ": " +
                      e.what());
  }
  return run_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Data preparation
// ---------------------------------------------------------------------------

struct PreparedData {
  CsiFrameBatch<float> train, val, test;
  NormStats stats;
  SubcarrierMask mask;
};

namespace detail {

inline std::vector<FrameTensor> pick_frames(
    const std::vector<std::vector<FrameTensor>>& per_class,
    const std::vector<FrameRef>& refs) {
  std::vector<FrameTensor> out;
  out.reserve(refs.size());
  for (const auto& r : refs)
    out.push_back(per_class.at(r.class_id).at(r.frame_index));
  return out;
}

}  // namespace detail

// Builds the three split batches.  Standardization statistics come from the
// training split unless `fixed_stats` is supplied (e.g. from a checkpoint).
inline PreparedData prepare_data(const RunConfig& cfg,
                                 std::optional<NormStats> fixed_stats =
                                     std::nullopt) {
  cfg.validate();
  std::vector<RawCsiCapture> captures;
  if (cfg.data.use_synth) {
    for (std::size_t c = 0; c < cfg.data.synth.n_classes; ++c)
      captures.push_back(generate_capture(cfg.data.synth, c));
  } else {
    for (const auto& p : cfg.data.capture_paths)
      captures.push_back(parse_capture(std::filesystem::path(p)));
  }
  if (captures.empty()) throw ConfigError("no captures to prepare");

  const auto mask = cfg.resolve_mask(captures[0].n_subcarriers);
  std::vector<std::vector<FrameTensor>> per_class;
  per_class.reserve(captures.size());
  for (const auto& cap : captures) {
    auto sanitized = sanitize_capture(cap, mask);
    per_class.push_back(frame_windows(sanitized, cfg.data.mode,
                                      cfg.data.frame_len,
                                      cfg.data.frame_stride));
  }

  SplitPlan plan;
  if (cfg.data.overfit) {
    for (std::size_t c = 0; c < per_class.size(); ++c)
      for (std::size_t f = 0; f < per_class[c].size(); ++f)
        plan.train.push_back({c, f});
    plan.val = plan.train;
    plan.test = plan.train;
  } else if (cfg.data.use_synth) {
    plan = split_frames(cfg.data.synth, cfg.train.split_seed);
  } else {
    // per-capture 70/15/15, mirroring the synthetic split
    for (std::size_t c = 0; c < per_class.size(); ++c) {
      const std::size_t F = per_class[c].size();
      std::vector<std::size_t> idx(F);
      for (std::size_t i = 0; i < F; ++i) idx[i] = i;
      Rng rng = Rng::seeded(cfg.train.split_seed).fork(0x5e11 + c);
      for (std::size_t i = F; i > 1; --i)
        std::swap(idx[i - 1], idx[rng.next_u64() % i]);
      const auto n_train = static_cast<std::size_t>(std::lround(0.70 * F));
      const auto n_val = static_cast<std::size_t>(std::lround(0.15 * F));
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
  }
  if (plan.train.empty()) throw ConfigError("training split is empty");

  PreparedData out;
  out.mask = mask;
  auto train_frames = detail::pick_frames(per_class, plan.train);
  out.train = assemble_batch<float>(train_frames, mask, fixed_stats);
  out.stats = out.train.stats;
  auto val_frames = detail::pick_frames(per_class, plan.val);
  auto test_frames = detail::pick_frames(per_class, plan.test);
  out.val = plan.val.empty()
                ? out.train
                : assemble_batch<float>(val_frames, mask, out.stats);
  out.test = plan.test.empty()
                 ? out.val
                 : assemble_batch<float>(test_frames, mask, out.stats);
  return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct MetricsReport {
  double nmse_db_all = 0.0;     // primary: standardized tensors, all rows
  double nmse_db_usable = 0.0;  // usable subcarrier rows only
  double accuracy_pct = -1.0;   // negative = no classifier evaluated
  std::vector<std::size_t> confusion;  // n_classes^2, row = truth
  std::size_t step = 0;
  double wall_time_s = 0.0;

  json to_json() const {
    json j;
    j["nmse_db"] = nmse_db_all;
    j["nmse_db_usable"] = nmse_db_usable;
    if (accuracy_pct >= 0) j["accuracy_pct"] = accuracy_pct;
    if (!confusion.empty()) j["confusion"] = confusion;
    j["step"] = step;
    j["wall_time_s"] = wall_time_s;
    return j;
  }
};

inline double accuracy_from_confusion(const std::vector<std::size_t>& conf,
                                      std::size_t n_classes) {
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < n_classes; ++i)
    for (std::size_t j = 0; j < n_classes; ++j) {
      total += conf[i * n_classes + j];
      if (i == j) correct += conf[i * n_classes + j];
    }
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / total;
}

namespace detail {

// Copies selected frames out of a batch tensor into a new constant tensor.
inline Tensor<float> slice_frames(const Tensor<float>& data,
                                  const std::vector<std::size_t>& rows) {
  const auto& sh = data.shape();
  const std::size_t per = sh[1] * sh[2] * sh[3];
  std::vector<float> out(rows.size() * per);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(data.values().data() + rows[i] * per, per,
                out.data() + i * per);
  return Tensor<float>::from({rows.size(), sh[1], sh[2], sh[3]},
                             std::move(out));
}

struct EnergyPair {
  double err = 0.0, ref = 0.0, err_usable = 0.0, ref_usable = 0.0;
};

inline void accumulate_energy(const Tensor<float>& ref,
                              const Tensor<float>& recon,
                              const SubcarrierMask& mask, EnergyPair& acc) {
  const auto& sh = ref.shape();
  const std::size_t S = sh[2], Ts = sh[3];
  const std::size_t planes = sh[0] * sh[1];
  for (std::size_t pl = 0; pl < planes; ++pl)
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t base = (pl * S + s) * Ts;
      double err = 0.0, e = 0.0;
      for (std::size_t t = 0; t < Ts; ++t) {
        const double r = ref.values()[base + t];
        const double d = recon.values()[base + t] - r;
        err += d * d;
        e += r * r;
      }
      acc.err += err;
      acc.ref += e;
      if (mask.usable[s]) {
        acc.err_usable += err;
        acc.ref_usable += e;
      }
    }
}

}  // namespace detail

// Reconstruction metrics over a whole split, chunked to bound memory.
template <class ModelT>
MetricsReport evaluate_reconstruction(const ModelT& model,
                                      const CsiFrameBatch<float>& batch,
                                      std::size_t chunk = 8) {
  NoGradGuard ng;
  detail::EnergyPair acc;
  const std::size_t B = batch.data.shape()[0];
  for (std::size_t start = 0; start < B; start += chunk) {
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < std::min(B, start + chunk); ++i)
      rows.push_back(i);
    auto x = detail::slice_frames(batch.data, rows);
    auto recon = model.decode_tokens(model.encode_tokens(x));
    detail::accumulate_energy(x, recon, batch.mask, acc);
  }
  MetricsReport rep;
  rep.nmse_db_all = nmse_db_from_ratio(acc.err / acc.ref);
  rep.nmse_db_usable = nmse_db_from_ratio(acc.err_usable / acc.ref_usable);
  return rep;
}

// ---------------------------------------------------------------------------
// Autoencoder training
// ---------------------------------------------------------------------------

struct AeTrainResult {
  std::filesystem::path checkpoint;
  double best_val_nmse_db = std::numeric_limits<double>::infinity();
  std::size_t best_step = 0;
  std::size_t steps_run = 0;
  std::vector<std::string> records;  // deterministic JSONL lines
  MetricsReport final_report;
  NormStats stats;
};

// Adam on the encoder+decoder against the linear-ratio NMSE, cosine lr
// decay, global-norm clipping, periodic validation, best-val checkpointing.
inline AeTrainResult train_autoencoder(const RunConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  PreparedData data = prepare_data(cfg);
  SwinModel<float> model(cfg.model, cfg.train.seed);
  auto params = model.autoencoder_parameters();
  auto adam = AdamState<float>::init(params, cfg.train.lr);

  AeTrainResult result;
  result.stats = data.stats;
  result.checkpoint = cfg.io.checkpoint;

  const std::size_t n_train = data.train.data.shape()[0];
  const std::size_t batch_size = std::min(cfg.train.batch_size, n_train);
  Rng order_rng = Rng::seeded(cfg.train.seed).fork(0xba7c4);
  std::vector<std::size_t> order(n_train);
  for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
  std::size_t cursor = n_train;  // forces a shuffle on first use

  double initial_loss = -1.0;
  std::size_t divergent_streak = 0;
  bool stop = false;

  auto emit = [&](json j) {
    result.records.push_back(j.dump());
  };

  for (std::size_t step = 1; step <= cfg.train.max_steps && !stop; ++step) {
    // cosine decay to 1% of the base rate
    const double progress =
        static_cast<double>(step - 1) / cfg.train.max_steps;
    adam.lr = cfg.train.lr *
              (0.01 + 0.99 * 0.5 * (1.0 + std::cos(3.14159265358979 *
                                                   progress)));

    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < batch_size; ++i) {
      if (cursor >= n_train) {
        for (std::size_t k = n_train; k > 1; --k)
          std::swap(order[k - 1], order[order_rng.next_u64() % k]);
        cursor = 0;
      }
      rows.push_back(order[cursor++]);
    }
    auto x = detail::slice_frames(data.train.data, rows);

    double loss_value = 0.0;
    try {
      auto recon = model.decode_tokens(model.encode_tokens(x));
      auto loss = nmse_ratio(x, recon);
      loss_value = loss.item();
      loss.backward();
    } catch (const NumericError& e) {
      throw NumericError("training aborted at step " + std::to_string(step) +
                         ": " + e.what());
    }
    clip_grad_norm(params, cfg.train.clip_norm);
    adam_step(params, adam);
    zero_grads(params);
    result.steps_run = step;

    if (initial_loss < 0) initial_loss = loss_value;
    divergent_streak = loss_value > 10.0 * initial_loss
                           ? divergent_streak + 1
                           : 0;
    if (divergent_streak >= 100)
      throw NumericError("training diverged: loss held above 10x the "
                         "initial value for 100 steps");

    if (step % cfg.train.eval_every == 0 || step == cfg.train.max_steps) {
      auto rep = evaluate_reconstruction(model, data.val);
      json j{{"type", "ae_eval"},
             {"step", step},
             {"train_loss", loss_value},
             {"val_nmse_db", rep.nmse_db_all},
             {"val_nmse_db_usable", rep.nmse_db_usable},
             {"lr", adam.lr}};
      emit(j);
      if (rep.nmse_db_all < result.best_val_nmse_db) {
        result.best_val_nmse_db = rep.nmse_db_all;
        result.best_step = step;
        save_checkpoint(result.checkpoint, model, data.stats, false);
      }
      if (cfg.train.target_nmse_db &&
          rep.nmse_db_all <= *cfg.train.target_nmse_db)
        stop = true;
    }
  }

  result.final_report = evaluate_reconstruction(model, data.val);
  result.final_report.step = result.steps_run;
  result.final_report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  if (!cfg.io.metrics.empty()) {
    std::filesystem::path mp(cfg.io.metrics);
    if (mp.has_parent_path()) std::filesystem::create_directories(mp.parent_path());
    std::ofstream os(mp, std::ios::trunc);
    for (const auto& line : result.records) os << line << "\n";
  }
  return result;
}

// ---------------------------------------------------------------------------
// Classifier training (frozen encoder)
// ---------------------------------------------------------------------------

struct ClsTrainResult {
  std::filesystem::path checkpoint;
  double train_accuracy_pct = 0.0;
  double val_accuracy_pct = 0.0;
  double test_accuracy_pct = 0.0;
  std::vector<std::size_t> confusion;  // test split
  std::vector<std::string> records;
  MetricsReport final_report;
};

namespace detail {

// Mean-pooled latent features for every frame of a batch, frozen encoder.
inline Tensor<float> pooled_features(const SwinModel<float>& model,
                                     const CsiFrameBatch<float>& batch,
                                     std::size_t chunk = 8) {
  NoGradGuard ng;
  const std::size_t B = batch.data.shape()[0];
  const std::size_t C = model.config().embed_dim;
  std::vector<float> feats(B * C);
  for (std::size_t start = 0; start < B; start += chunk) {
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < std::min(B, start + chunk); ++i)
      rows.push_back(i);
    auto x = slice_frames(batch.data, rows);
    auto pooled = mean(model.encode_tokens(x), 1);  // [chunk, C]
    std::copy_n(pooled.values().data(), rows.size() * C,
                feats.data() + start * C);
  }
  return Tensor<float>::from({B, C}, std::move(feats));
}

inline std::vector<std::size_t> confusion_matrix(
    const Tensor<float>& logits, const std::vector<int>& labels,
    std::size_t n_classes) {
  std::vector<std::size_t> conf(n_classes * n_classes, 0);
  const std::size_t B = logits.shape()[0];
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < n_classes; ++k)
      if (logits.values()[b * n_classes + k] >
          logits.values()[b * n_classes + best])
        best = k;
    conf[static_cast<std::size_t>(labels[b]) * n_classes + best] += 1;
  }
  return conf;
}

}  // namespace detail

// Trains the linear head on frozen-encoder features with cross-entropy.
// The AE checkpoint's digest must match the configured model.
inline ClsTrainResult train_classifier(const RunConfig& cfg,
                                       const std::filesystem::path& ae_ckpt) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  SwinModel<float> model(cfg.model, cfg.train.seed);
  NormStats stats;
  load_checkpoint(ae_ckpt, model, stats);
  PreparedData data = prepare_data(cfg, stats);

  auto feats_train = detail::pooled_features(model, data.train);
  auto feats_val = detail::pooled_features(model, data.val);
  auto feats_test = detail::pooled_features(model, data.test);

  auto head_params = model.classifier_parameters();
  auto adam = AdamState<float>::init(head_params, cfg.train.cls_lr);
  const auto& head_w = head_params[0];
  const auto& head_b = head_params[1];

  ClsTrainResult result;
  result.checkpoint = cfg.io.cls_checkpoint;

  auto logits_of = [&](const Tensor<float>& f) {
    return add(matmul(f, head_w), head_b);
  };
  auto accuracy_of = [&](const Tensor<float>& f,
                         const std::vector<int>& labels) {
    NoGradGuard ng;
    auto conf = detail::confusion_matrix(logits_of(f), labels,
                                         cfg.model.n_classes);
    return accuracy_from_confusion(conf, cfg.model.n_classes);
  };

  for (std::size_t step = 1; step <= cfg.train.cls_steps; ++step) {
    auto loss = cross_entropy(logits_of(feats_train), data.train.labels);
    loss.backward();
    adam_step(head_params, adam);
    zero_grads(head_params);
    if (step % 50 == 0 || step == cfg.train.cls_steps) {
      json j{{"type", "cls_eval"},
             {"step", step},
             {"train_ce", loss.item()},
             {"val_accuracy_pct", accuracy_of(feats_val, data.val.labels)}};
      result.records.push_back(j.dump());
    }
  }

  result.train_accuracy_pct = accuracy_of(feats_train, data.train.labels);
  result.val_accuracy_pct = accuracy_of(feats_val, data.val.labels);
  {
    NoGradGuard ng;
    result.confusion = detail::confusion_matrix(
        logits_of(feats_test), data.test.labels, cfg.model.n_classes);
  }
  result.test_accuracy_pct =
      accuracy_from_confusion(result.confusion, cfg.model.n_classes);

  save_checkpoint(result.checkpoint, model, stats, true);

  result.final_report = evaluate_reconstruction(model, data.test);
  result.final_report.accuracy_pct = result.test_accuracy_pct;
  result.final_report.confusion = result.confusion;
  result.final_report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  if (!cfg.io.metrics.empty()) {
    std::ofstream os(cfg.io.metrics, std::ios::app);
    for (const auto& line : result.records) os << line << "\n";
  }
  return result;
}

// Full test-split evaluation from a checkpoint.
inline MetricsReport evaluate_checkpoint(const RunConfig& cfg,
                                         const std::filesystem::path& ckpt) {
  cfg.validate();
  SwinModel<float> model(cfg.model, cfg.train.seed);
  NormStats stats;
  const bool has_head = load_checkpoint(ckpt, model, stats);
  PreparedData data = prepare_data(cfg, stats);
  auto rep = evaluate_reconstruction(model, data.test);
  if (has_head) {
    auto feats = detail::pooled_features(model, data.test);
    NoGradGuard ng;
    auto logits = add(matmul(feats, model.classifier_parameters()[0]),
                      model.classifier_parameters()[1]);
    rep.confusion = detail::confusion_matrix(logits, data.test.labels,
                                             cfg.model.n_classes);
    rep.accuracy_pct =
        accuracy_from_confusion(rep.confusion, cfg.model.n_classes);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Experiment grid
// ---------------------------------------------------------------------------

struct GridEntry {
  std::string name;
  RunConfig run;
};

struct GridRow {
  std::string name;
  double gamma = 0.0;
  double nmse_db = 0.0;
  double accuracy_pct = -1.0;
  std::string error;  // non-empty when the cell failed
};

// Trains and evaluates every cell; per-cell failures are recorded and the
// grid continues.  Gamma is recomputed from the cell's config, never cached.
inline std::vector<GridRow> run_experiment_grid(
    const std::vector<GridEntry>& entries, std::ostream* log = nullptr) {
  std::vector<GridRow> rows;
  for (const auto& entry : entries) {
    GridRow row;
    row.name = entry.name;
    try {
      row.gamma = compression_ratio(entry.run.model).value();
      auto ae = train_autoencoder(entry.run);
      auto cls = train_classifier(entry.run, ae.checkpoint);
      auto rep = evaluate_checkpoint(entry.run, cls.checkpoint);
      row.nmse_db = rep.nmse_db_all;
      row.accuracy_pct = rep.accuracy_pct;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    if (log)
      (*log) << "[grid] " << row.name
             << (row.error.empty()
                     ? " done"
                     : " failed: " + row.error)
             << std::endl;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string grid_csv(const std::vector<GridRow>& rows) {
  std::ostringstream os;
  os << "name,gamma,nmse_db,accuracy_pct,error\n";
  for (const auto& r : rows) {
    os << r.name << "," << r.gamma << ",";
    if (r.error.empty()) {
      os << r.nmse_db << ",";
      if (r.accuracy_pct >= 0) os << r.accuracy_pct;
    } else {
      os << ",";
    }
    os << "," << r.error << "\n";
  }
  return os.str();
}

inline std::vector<GridEntry> grid_from_json(const json& j) {
  std::vector<GridEntry> entries;
  json base = j.value("base", json::object());
  for (const auto& cell : j.at("cells")) {
    json merged = base;
    merged.merge_patch(cell.value("patch", json::object()));
    GridEntry e;
    e.name = cell.value("name", "cell" + std::to_string(entries.size()));
    e.run = run_config_from_json(merged);
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace swinfi
