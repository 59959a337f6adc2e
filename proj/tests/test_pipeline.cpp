#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "swinfi/pipeline.hpp"

using namespace swinfi;
namespace fs = std::filesystem;

namespace {

// Desk-scale run: 2 classes, 16x16 frames, one stage.
RunConfig tiny_run(const std::string& tag) {
  RunConfig cfg;
  cfg.model.subcarriers = 16;
  cfg.model.timeslots = 16;
  cfg.model.patch_sub = 2;
  cfg.model.patch_time = 1;
  cfg.model.window_sub = 2;
  cfg.model.window_time = 4;
  cfg.model.embed_dim = 16;
  cfg.model.head_dim = 8;
  cfg.model.depths = {2};
  cfg.model.in_channels = 2;
  cfg.model.n_classes = 2;

  cfg.data.mode = ChannelMode::kAmplitude;
  cfg.data.frame_len = 16;
  cfg.data.frame_stride = 16;
  cfg.data.synth.seed = 5;
  cfg.data.synth.n_classes = 2;
  cfg.data.synth.packets_per_class = 128;
  cfg.data.synth.n_antennas = 2;
  cfg.data.synth.n_subcarriers = 16;
  cfg.data.synth.snr_db = 40.0;
  cfg.data.synth.frame_len = 16;
  cfg.data.synth.frame_stride = 16;
  cfg.data.overfit = true;

  cfg.train.batch_size = 8;
  cfg.train.max_steps = 12;
  cfg.train.eval_every = 4;
  cfg.train.cls_steps = 40;

  fs::path dir = fs::temp_directory_path() / ("swinfi_test_" + tag);
  fs::create_directories(dir);
  cfg.io.checkpoint = (dir / "ae.swck").string();
  cfg.io.cls_checkpoint = (dir / "cls.swck").string();
  cfg.io.output_dir = dir.string();
  cfg.io.metrics.clear();
  return cfg;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("checkpoint round trip restores every parameter") {
  auto cfg = tiny_run("ckpt");
  SwinModel<float> a(cfg.model, 1);
  NormStats stats{{0.5, -1.0}, {2.0, 3.0}};
  fs::path path = fs::path(cfg.io.output_dir) / "roundtrip.swck";
  save_checkpoint(path, a, stats, true);
  REQUIRE_FALSE(fs::exists(path.string() + ".tmp"));

  SwinModel<float> b(cfg.model, 2);  // different init
  NormStats loaded;
  const bool head = load_checkpoint(path, b, loaded);
  REQUIRE(head);
  REQUIRE(loaded.mean == stats.mean);
  REQUIRE(loaded.stddev == stats.stddev);
  auto pa = a.named_parameters(true);
  auto pb = b.named_parameters(true);
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].first == pb[i].first);
    REQUIRE(pa[i].second.values() == pb[i].second.values());
  }
}

TEST_CASE("checkpoint digest and truncation are enforced") {
  auto cfg = tiny_run("ckpt2");
  SwinModel<float> a(cfg.model, 1);
  fs::path path = fs::path(cfg.io.output_dir) / "guard.swck";
  save_checkpoint(path, a, NormStats{{0}, {1}}, false);

  auto other_cfg = cfg.model;
  other_cfg.embed_dim = 32;
  SwinModel<float> other(other_cfg, 1);
  NormStats st;
  REQUIRE_THROWS_AS(load_checkpoint(path, other, st), CheckpointError);

  auto bytes = file_bytes(path);
  fs::path cut = fs::path(cfg.io.output_dir) / "cut.swck";
  std::ofstream(cut, std::ios::binary)
      << bytes.substr(0, bytes.size() - 40);
  SwinModel<float> b(cfg.model, 3);
  REQUIRE_THROWS_AS(load_checkpoint(cut, b, st), FormatError);
}

TEST_CASE("checkpoint without a head reports head_loaded false") {
  auto cfg = tiny_run("ckpt3");
  SwinModel<float> a(cfg.model, 1);
  fs::path path = fs::path(cfg.io.output_dir) / "nohead.swck";
  save_checkpoint(path, a, NormStats{{0, 0}, {1, 1}}, false);
  SwinModel<float> b(cfg.model, 4);
  NormStats st;
  REQUIRE_FALSE(load_checkpoint(path, b, st));
}

TEST_CASE("feature image wire record round trips byte for byte") {
  FeatureImage fi;
  fi.grid_sub = 4;
  fi.grid_time = 32;
  fi.dim = 32;
  fi.frame_id = 7;
  fi.config_digest = 0x1234567890abcdefull;
  Rng rng = Rng::seeded(2);
  fi.feats.resize(fi.token_count() * fi.dim);
  for (auto& v : fi.feats) v = static_cast<float>(rng.normal());

  auto bytes = serialize_feature_image(fi);
  // the published gamma=64 layout: 128x32 floats + 24-byte header
  REQUIRE(bytes.size() == 24 + 16384);
  auto back = deserialize_feature_image(bytes);
  REQUIRE(serialize_feature_image(back) == bytes);
  REQUIRE(back.frame_id == 7);

  auto flipped = bytes;
  flipped[0] = 'X';
  REQUIRE_THROWS_AS(deserialize_feature_image(flipped), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 4);
  REQUIRE_THROWS_AS(deserialize_feature_image(truncated), FormatError);
}

TEST_CASE("edge stream accounting identities") {
  auto cfg = tiny_run("stream");
  SwinModel<float> model(cfg.model, 6);
  auto data = prepare_data(cfg);
  std::ostringstream sink;
  auto stats = edge_encode_stream(model, data.train.data, sink);
  const std::size_t B = data.train.data.shape()[0];
  REQUIRE(stats.frames_sent == B);
  REQUIRE(stats.raw_bytes == B * 2ull * 16 * 16 * 4);
  REQUIRE(stats.compressed_bytes ==
          B * wire_record_bytes(cfg.model));
  REQUIRE(stats.gamma == compression_ratio(cfg.model).value());
  REQUIRE(sink.str().size() == stats.compressed_bytes);

  // empty stream: zero stats, no error
  auto empty = Tensor<float>::zeros({0, 2, 16, 16});
  std::ostringstream empty_sink;
  auto zero = edge_encode_stream(model, empty, empty_sink);
  REQUIRE(zero.frames_sent == 0);
  REQUIRE(zero.compressed_bytes == 0);
}

TEST_CASE("transport transparency: wire decode equals in-process decode") {
  auto cfg = tiny_run("transparent");
  SwinModel<float> model(cfg.model, 8);
  auto data = prepare_data(cfg);
  std::ostringstream sink;
  edge_encode_stream(model, data.train.data, sink);

  std::istringstream source(sink.str());
  auto result = cloud_decode_stream(source, model, false, &data.train.data);
  REQUIRE(result.skipped_records == 0);
  REQUIRE(result.frame_ids.size() == data.train.data.shape()[0]);

  auto in_process = model.decode(model.encode(data.train.data));
  REQUIRE(result.reconstruction.values() == in_process.values());
  REQUIRE(result.nmse_db_value.has_value());
}

TEST_CASE("corrupt middle record is skipped and counted") {
  auto cfg = tiny_run("corrupt");
  SwinModel<float> model(cfg.model, 9);
  auto data = prepare_data(cfg);
  std::ostringstream sink;
  edge_encode_stream(model, data.train.data, sink);
  std::string bytes = sink.str();
  const std::size_t rec = wire_record_bytes(cfg.model);
  REQUIRE(bytes.size() >= 3 * rec);
  bytes[rec + 1] = 'x';  // wreck the second record's magic

  std::istringstream source(bytes);
  auto result = cloud_decode_stream(source, model, false);
  REQUIRE(result.skipped_records == 1);
  REQUIRE(result.frame_ids.size() == data.train.data.shape()[0] - 1);

  // digest mismatch on an intact record is a pairing error, not a skip
  std::string wrong = sink.str();
  wrong[16] ^= 0x40;  // inside the digest field
  std::istringstream bad(wrong);
  REQUIRE_THROWS_AS(cloud_decode_stream(bad, model, false), CheckpointError);
}

TEST_CASE("autoencoder training emits records and a checkpoint") {
  auto cfg = tiny_run("train");
  auto result = train_autoencoder(cfg);
  REQUIRE(result.steps_run == 12);
  REQUIRE(result.records.size() == 3);
  REQUIRE(fs::exists(result.checkpoint));
  REQUIRE(std::isfinite(result.best_val_nmse_db));

  SwinModel<float> model(cfg.model, 1);
  NormStats st;
  REQUIRE_FALSE(load_checkpoint(result.checkpoint, model, st));
  REQUIRE(st.mean == result.stats.mean);
}

TEST_CASE("zero learning rate leaves the loss unchanged") {
  auto cfg = tiny_run("lr0");
  cfg.train.lr = 0.0;
  cfg.train.eval_every = 1;
  cfg.train.max_steps = 6;
  cfg.train.batch_size = 64;  // clamps to the full training set
  auto result = train_autoencoder(cfg);
  std::vector<double> losses;
  for (const auto& line : result.records)
    losses.push_back(json::parse(line)["train_loss"].get<double>());
  REQUIRE(losses.size() == 6);
  for (double l : losses) REQUIRE(l == losses[0]);
}

TEST_CASE("identical seeds give identical records and checkpoints") {
  auto cfg = tiny_run("det");
  auto first = train_autoencoder(cfg);
  auto first_bytes = file_bytes(first.checkpoint);
  auto second = train_autoencoder(cfg);
  REQUIRE(first.records == second.records);
  REQUIRE(first_bytes == file_bytes(second.checkpoint));

  auto other = cfg;
  other.train.seed = 43;
  auto third = train_autoencoder(other);
  REQUIRE(first.records != third.records);
}

TEST_CASE("classifier training freezes the encoder") {
  auto cfg = tiny_run("cls");
  cfg.train.max_steps = 20;
  auto ae = train_autoencoder(cfg);

  SwinModel<float> before(cfg.model, cfg.train.seed);
  NormStats st;
  load_checkpoint(ae.checkpoint, before, st);

  auto cls = train_classifier(cfg, ae.checkpoint);
  REQUIRE(fs::exists(cls.checkpoint));

  SwinModel<float> after(cfg.model, 99);
  NormStats st2;
  REQUIRE(load_checkpoint(cls.checkpoint, after, st2));  // head present
  auto pa = before.named_parameters(false);
  auto pb = after.named_parameters(false);
  for (std::size_t i = 0; i < pa.size(); ++i)
    REQUIRE(pa[i].second.values() == pb[i].second.values());
}

TEST_CASE("single-class dataset classifies trivially") {
  auto cfg = tiny_run("onecls");
  cfg.model.n_classes = 1;
  cfg.data.synth.n_classes = 1;
  cfg.train.max_steps = 8;
  cfg.train.cls_steps = 10;
  auto ae = train_autoencoder(cfg);
  auto cls = train_classifier(cfg, ae.checkpoint);
  REQUIRE(cls.test_accuracy_pct == 100.0);
  REQUIRE(cls.confusion.size() == 1);
}

TEST_CASE("classifier rejects a checkpoint from another config") {
  auto cfg = tiny_run("clsbad");
  cfg.train.max_steps = 4;
  auto ae = train_autoencoder(cfg);
  auto other = cfg;
  other.model.embed_dim = 32;
  REQUIRE_THROWS_AS(train_classifier(other, ae.checkpoint), CheckpointError);
}

TEST_CASE("run config json round trip and validation") {
  json j = {
      {"model",
       {{"patch", {2, 1}},
        {"window", {2, 4}},
        {"dim", 16},
        {"head_dim", 8},
        {"depths", {2}},
        {"classes", 2},
        {"channels", 2},
        {"subcarriers", 16},
        {"timeslots", 16}}},
      {"data",
       {{"mode", "amplitude"},
        {"frame_len", 16},
        {"frame_stride", 16},
        {"synth",
         {{"classes", 2}, {"packets_per_class", 64}, {"antennas", 2},
          {"subcarriers", 16}}}}},
      {"train", {{"lr", 0.002}, {"max_steps", 5}}},
      {"io", {{"checkpoint", "x.swck"}}},
  };
  auto cfg = run_config_from_json(j);
  REQUIRE(cfg.model.patch_sub == 2);
  REQUIRE(cfg.train.lr == 0.002);
  REQUIRE(cfg.data.synth.n_classes == 2);
  REQUIRE(cfg.data.synth.frame_len == 16);
  REQUIRE_NOTHROW(cfg.validate());

  auto bad = cfg;
  bad.data.mode = ChannelMode::kMixed;  // needs 4 channels for 2 antennas
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("experiment grid records failures and continues") {
  REQUIRE(run_experiment_grid({}).empty());

  auto ok = tiny_run("grid_ok");
  ok.train.max_steps = 6;
  ok.train.cls_steps = 10;
  auto broken = ok;
  broken.model.embed_dim = 24;  // not a multiple of head_dim

  auto rows = run_experiment_grid({{"good", ok}, {"bad", broken}});
  REQUIRE(rows.size() == 2);
  REQUIRE(rows[0].error.empty());
  REQUIRE(rows[0].gamma == compression_ratio(ok.model).value());
  REQUIRE(rows[0].accuracy_pct >= 0.0);
  REQUIRE_FALSE(rows[1].error.empty());

  auto csv = grid_csv(rows);
  REQUIRE_THAT(csv, Catch::Matchers::ContainsSubstring("good"));
  REQUIRE_THAT(csv, Catch::Matchers::StartsWith(
                        "name,gamma,nmse_db,accuracy_pct,error"));
}

TEST_CASE("grid json uses merge patches over a base config") {
  json spec = {
      {"base",
       {{"model",
         {{"patch", {2, 1}}, {"window", {2, 4}}, {"dim", 16},
          {"head_dim", 8}, {"depths", {2}}, {"classes", 2},
          {"channels", 2}, {"subcarriers", 16}, {"timeslots", 16}}},
        {"data",
         {{"mode", "amplitude"}, {"frame_len", 16}, {"frame_stride", 16},
          {"synth",
           {{"classes", 2}, {"packets_per_class", 64}, {"antennas", 2},
            {"subcarriers", 16}}}}}}},
      {"cells",
       {{{"name", "narrow"}, {"patch", {{"model", {{"dim", 32}}}}}},
        {{"name", "base"}}}},
  };
  auto entries = grid_from_json(spec);
  REQUIRE(entries.size() == 2);
  REQUIRE(entries[0].name == "narrow");
  REQUIRE(entries[0].run.model.embed_dim == 32);
  REQUIRE(entries[1].run.model.embed_dim == 16);
}
