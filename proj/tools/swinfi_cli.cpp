// swinfi command line: synthetic data generation, preprocessing reports,
// autoencoder/classifier training, edge->cloud streaming and the experiment
// grid.  All subcommands read the same JSON config tree.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "swinfi/pipeline.hpp"

namespace fs = std::filesystem;
using namespace swinfi;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
};

RunConfig load_config(const GlobalArgs& g) {
  if (g.config_path.empty()) throw ConfigError("--config is required");
  RunConfig cfg = load_run_config(g.config_path);
  if (g.seed) cfg.train.seed = *g.seed;
  if (g.deterministic) cfg.train.deterministic = true;
  return cfg;
}

const CsiFrameBatch<float>& pick_split(const PreparedData& data,
                                       const std::string& split) {
  if (split == "train") return data.train;
  if (split == "val") return data.val;
  if (split == "test") return data.test;
  throw ConfigError("unknown split '" + split + "'");
}

int cmd_synth(const GlobalArgs& g) {
  RunConfig cfg = load_config(g);
  if (!cfg.data.use_synth)
    throw ConfigError("synth subcommand needs a data.synth section");
  fs::create_directories(cfg.io.output_dir);
  json manifest;
  for (std::size_t c = 0; c < cfg.data.synth.n_classes; ++c) {
    auto cap = generate_capture(cfg.data.synth, c);
    char name[32];
    std::snprintf(name, sizeof(name), "class_%02zu.csi0", c);
    fs::path path = fs::path(cfg.io.output_dir) / name;
    write_capture(path, cap);
    manifest["captures"].push_back(
        {{"path", path.string()}, {"label", c},
         {"packets", cap.packet_count()},
         {"raw_bandwidth_mbps", raw_bandwidth_bps(cap) / 1e6}});
    std::cerr << "wrote " << path << " (" << cap.packet_count()
              << " packets)\n";
  }
  std::cout << manifest.dump(2) << std::endl;
  return 0;
}

int cmd_prep(const GlobalArgs& g) {
  RunConfig cfg = load_config(g);
  PreparedData data = prepare_data(cfg);
  const auto& sh = data.train.data.shape();
  json report;
  report["mask"] = {{"version", data.mask.version},
                    {"usable", data.mask.usable_count()},
                    {"fft_size", data.mask.fft_size()}};
  report["frames"] = {{"train", data.train.data.shape()[0]},
                      {"val", data.val.data.shape()[0]},
                      {"test", data.test.data.shape()[0]}};
  report["frame_shape"] = {sh[1], sh[2], sh[3]};
  report["norm_stats"] = {{"mean", data.stats.mean},
                          {"stddev", data.stats.stddev}};
  if (cfg.data.use_synth) {
    auto cap = generate_capture(cfg.data.synth, 0);
    report["raw_bandwidth_mbps"] = raw_bandwidth_bps(cap) / 1e6;
  }
  std::cout << report.dump(2) << std::endl;
  return 0;
}

int cmd_train_ae(const GlobalArgs& g) {
  RunConfig cfg = load_config(g);
  auto result = train_autoencoder(cfg);
  for (const auto& line : result.records) std::cerr << line << "\n";
  json summary;
  summary["checkpoint"] = result.checkpoint.string();
  summary["best_val_nmse_db"] = result.best_val_nmse_db;
  summary["best_step"] = result.best_step;
  summary["steps_run"] = result.steps_run;
  summary["final"] = result.final_report.to_json();
  std::cout << summary.dump(2) << std::endl;
  return 0;
}

int cmd_train_cls(const GlobalArgs& g, const std::string& ae_ckpt) {
  RunConfig cfg = load_config(g);
  fs::path ckpt = ae_ckpt.empty() ? fs::path(cfg.io.checkpoint)
                                  : fs::path(ae_ckpt);
  auto result = train_classifier(cfg, ckpt);
  for (const auto& line : result.records) std::cerr << line << "\n";
  json summary;
  summary["checkpoint"] = result.checkpoint.string();
  summary["train_accuracy_pct"] = result.train_accuracy_pct;
  summary["val_accuracy_pct"] = result.val_accuracy_pct;
  summary["test_accuracy_pct"] = result.test_accuracy_pct;
  summary["final"] = result.final_report.to_json();
  std::cout << summary.dump(2) << std::endl;
  return 0;
}

int cmd_encode(const GlobalArgs& g, const std::string& ckpt_arg,
               const std::string& split, const std::string& out_path) {
  RunConfig cfg = load_config(g);
  fs::path ckpt = ckpt_arg.empty() ? fs::path(cfg.io.checkpoint)
                                   : fs::path(ckpt_arg);
  SwinModel<float> model(cfg.model, cfg.train.seed);
  NormStats stats;
  load_checkpoint(ckpt, model, stats);
  PreparedData data = prepare_data(cfg, stats);
  const auto& batch = pick_split(data, split);

  fs::path out = out_path.empty()
                     ? fs::path(cfg.io.output_dir) / (split + ".swfi")
                     : fs::path(out_path);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream sink(out, std::ios::binary | std::ios::trunc);
  if (!sink) throw IoError("cannot open " + out.string());
  auto stats_out = edge_encode_stream(model, batch.data, sink);
  json j;
  j["stream"] = out.string();
  j["frames_sent"] = stats_out.frames_sent;
  j["raw_bytes"] = stats_out.raw_bytes;
  j["compressed_bytes"] = stats_out.compressed_bytes;
  j["measured_ratio"] = stats_out.measured_ratio();
  j["gamma"] = stats_out.gamma;
  std::cout << j.dump(2) << std::endl;
  return 0;
}

int cmd_decode(const GlobalArgs& g, const std::string& ckpt_arg,
               const std::string& split, const std::string& in_path,
               bool no_reference) {
  RunConfig cfg = load_config(g);
  fs::path ckpt = ckpt_arg.empty() ? fs::path(cfg.io.cls_checkpoint)
                                   : fs::path(ckpt_arg);
  if (!fs::exists(ckpt)) ckpt = cfg.io.checkpoint;
  SwinModel<float> model(cfg.model, cfg.train.seed);
  NormStats stats;
  const bool has_head = load_checkpoint(ckpt, model, stats);

  fs::path in = in_path.empty()
                    ? fs::path(cfg.io.output_dir) / (split + ".swfi")
                    : fs::path(in_path);
  std::ifstream source(in, std::ios::binary);
  if (!source) throw IoError("cannot open stream " + in.string());

  json j;
  j["stream"] = in.string();
  if (no_reference) {
    auto result = cloud_decode_stream(source, model, has_head);
    j["frames_decoded"] = result.frame_ids.size();
    j["skipped_records"] = result.skipped_records;
    if (has_head) j["predictions"] = result.predictions;
  } else {
    PreparedData data = prepare_data(cfg, stats);
    const auto& batch = pick_split(data, split);
    auto result =
        cloud_decode_stream(source, model, has_head, &batch.data);
    j["frames_decoded"] = result.frame_ids.size();
    j["skipped_records"] = result.skipped_records;
    if (result.nmse_db_value) j["nmse_db"] = *result.nmse_db_value;
    if (has_head) {
      std::vector<std::size_t> conf(cfg.model.n_classes * cfg.model.n_classes,
                                    0);
      for (std::size_t i = 0; i < result.predictions.size(); ++i) {
        const auto truth =
            static_cast<std::size_t>(batch.labels[result.frame_ids[i]]);
        conf[truth * cfg.model.n_classes + result.predictions[i]] += 1;
      }
      j["accuracy_pct"] = accuracy_from_confusion(conf, cfg.model.n_classes);
    }
  }
  std::cout << j.dump(2) << std::endl;
  return 0;
}

int cmd_eval(const GlobalArgs& g, const std::string& ckpt_arg) {
  RunConfig cfg = load_config(g);
  fs::path ckpt = ckpt_arg.empty() ? fs::path(cfg.io.cls_checkpoint)
                                   : fs::path(ckpt_arg);
  if (!fs::exists(ckpt)) ckpt = cfg.io.checkpoint;
  auto rep = evaluate_checkpoint(cfg, ckpt);
  std::cout << rep.to_json().dump(2) << std::endl;
  return 0;
}

int cmd_grid(const GlobalArgs& g) {
  if (g.config_path.empty()) throw ConfigError("--config is required");
  std::ifstream is(g.config_path);
  if (!is) throw IoError("cannot open " + g.config_path);
  json spec;
  is >> spec;
  auto entries = grid_from_json(spec);
  if (g.seed)
    for (auto& e : entries) e.run.train.seed = *g.seed;
  auto rows = run_experiment_grid(entries, &std::cerr);

  const std::string out_dir =
      spec.value("output_dir", entries.empty()
                                   ? std::string("out")
                                   : entries[0].run.io.output_dir);
  fs::create_directories(out_dir);
  std::ofstream csv(fs::path(out_dir) / "grid.csv");
  csv << grid_csv(rows);
  json jrows = json::array();
  for (const auto& r : rows) {
    json jr{{"name", r.name}, {"gamma", r.gamma}};
    if (r.error.empty()) {
      jr["nmse_db"] = r.nmse_db;
      if (r.accuracy_pct >= 0) jr["accuracy_pct"] = r.accuracy_pct;
    } else {
      jr["error"] = r.error;
    }
    jrows.push_back(jr);
  }
  std::ofstream(fs::path(out_dir) / "grid.json") << jrows.dump(2);
  std::cout << grid_csv(rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SwinFi: windowed-attention CSI compression pipeline"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config_path, "JSON run configuration")
      ->envname("SWINFI_CONFIG");
  std::uint64_t seed_value = 0;
  auto* seed_opt =
      app.add_option("--seed", seed_value, "override train.seed");
  app.add_flag("--deterministic", g.deterministic,
               "single-threaded, fully seeded execution");

  auto* synth = app.add_subcommand("synth", "generate synthetic captures");
  auto* prep = app.add_subcommand("prep", "run preprocessing, report stats");
  auto* train_ae = app.add_subcommand("train-ae", "train the autoencoder");
  auto* train_cls =
      app.add_subcommand("train-cls", "train the classifier head");
  std::string ae_ckpt;
  train_cls->add_option("--ae-checkpoint", ae_ckpt,
                        "autoencoder checkpoint to freeze");
  auto* encode = app.add_subcommand("encode", "edge: frames -> SWFI stream");
  auto* decode = app.add_subcommand("decode", "cloud: SWFI stream -> frames");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* grid = app.add_subcommand("grid", "run an experiment grid");

  std::string enc_ckpt, enc_split = "test", enc_out;
  encode->add_option("--checkpoint", enc_ckpt, "model checkpoint");
  encode->add_option("--split", enc_split, "train|val|test");
  encode->add_option("--out", enc_out, "stream output path");

  std::string dec_ckpt, dec_split = "test", dec_in;
  bool dec_noref = false;
  decode->add_option("--checkpoint", dec_ckpt, "model checkpoint");
  decode->add_option("--split", dec_split, "reference split for NMSE");
  decode->add_option("--in", dec_in, "stream input path");
  decode->add_flag("--no-reference", dec_noref,
                   "decode without NMSE reference");

  std::string eval_ckpt;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint to evaluate");

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count() > 0) g.seed = seed_value;

  try {
    if (synth->parsed()) return cmd_synth(g);
    if (prep->parsed()) return cmd_prep(g);
    if (train_ae->parsed()) return cmd_train_ae(g);
    if (train_cls->parsed()) return cmd_train_cls(g, ae_ckpt);
    if (encode->parsed()) return cmd_encode(g, enc_ckpt, enc_split, enc_out);
    if (decode->parsed())
      return cmd_decode(g, dec_ckpt, dec_split, dec_in, dec_noref);
    if (eval->parsed()) return cmd_eval(g, eval_ckpt);
    if (grid->parsed()) return cmd_grid(g);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
