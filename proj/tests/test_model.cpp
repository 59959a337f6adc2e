#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "swinfi/gradcheck.hpp"
#include "swinfi/model.hpp"

using namespace swinfi;

namespace {

ModelConfig table1_config(std::size_t dim, std::size_t stages,
                          std::size_t channels) {
  ModelConfig cfg;
  cfg.embed_dim = dim;
  cfg.in_channels = channels;
  if (stages == 4)
    cfg.depths = {2, 2, 6, 2};
  else if (stages == 5)
    cfg.depths = {2, 2, 2, 6, 2};
  else
    cfg.depths = {2, 2, 2, 2, 6, 2};
  return cfg;
}

template <class T>
Tensor<T> random_input(const ModelConfig& cfg, std::size_t batch,
                       std::uint64_t seed) {
  Rng rng = Rng::seeded(seed);
  Shape sh{batch, cfg.in_channels, cfg.subcarriers, cfg.timeslots};
  std::vector<T> data(shape_numel(sh));
  for (auto& v : data) v = static_cast<T>(rng.normal());
  return Tensor<T>::from(std::move(sh), std::move(data));
}

template <class T>
void fill_const(Tensor<T>& t, T v) {
  std::fill(t.mutable_values().begin(), t.mutable_values().end(), v);
}

template <class T>
void set_identity(Tensor<T>& t) {
  const std::size_t n = t.shape()[1];
  fill_const(t, T(0));
  for (std::size_t i = 0; i < std::min(t.shape()[0], n); ++i)
    t.mutable_values()[i * n + i] = T(1);
}

}  // namespace

// ---------------------------------------------------------------------------
// Formulas
// ---------------------------------------------------------------------------

TEST_CASE("compression ratio reproduces the published configuration grid") {
  struct Row {
    std::size_t dim, stages, channels;
    std::uint64_t gamma;
  };
  const Row rows[] = {
      {32, 4, 4}, {16, 4, 4}, {32, 5, 4}, {16, 5, 4}, {32, 6, 4},
      {64, 4, 8}, {32, 4, 8}, {64, 5, 8}, {32, 5, 8}, {64, 6, 8},
  };
  const std::uint64_t expected[] = {64, 128, 256, 512, 1024,
                                    64, 128, 256, 512, 1024};
  for (std::size_t i = 0; i < 10; ++i) {
    auto cfg = table1_config(rows[i].dim, rows[i].stages, rows[i].channels);
    auto r = compression_ratio(cfg);
    REQUIRE(r.is_integer());
    REQUIRE(r.num == expected[i]);
  }
}

TEST_CASE("compression ratio for the square-patch ablation settings") {
  ModelConfig cfg;
  cfg.patch_sub = 3;
  cfg.patch_time = 3;
  cfg.window_sub = 4;
  cfg.window_time = 4;
  cfg.embed_dim = 32;
  cfg.in_channels = 4;
  cfg.depths = {2, 2, 6, 2};
  auto r = compression_ratio(cfg);
  REQUIRE(r.num == 72);
  REQUIRE(r.den == 1);
  cfg.depths = {2, 2, 2, 6, 2};
  REQUIRE(compression_ratio(cfg).num == 288);
}

TEST_CASE("attention complexity counts") {
  auto r = complexity_estimate(32, 256, 32, 16);
  REQUIRE(r.omega_wmsa == 41943040ull);
  REQUIRE(r.omega_msa == 4328521728ull);
  REQUIRE(static_cast<double>(r.omega_wmsa) / r.omega_msa < 0.01);

  auto degenerate = complexity_estimate(8, 8, 16, 64);
  REQUIRE(degenerate.omega_wmsa == degenerate.omega_msa);

  // halving C exactly quarters the projection term
  auto full = complexity_estimate(8, 8, 32, 4);
  auto half = complexity_estimate(8, 8, 16, 4);
  const std::uint64_t proj_full = 4ull * 64 * 32 * 32;
  const std::uint64_t proj_half = 4ull * 64 * 16 * 16;
  REQUIRE(proj_full == 4 * proj_half);
  REQUIRE(full.omega_wmsa - 2ull * 4 * 64 * 32 == proj_full);
  REQUIRE(half.omega_wmsa - 2ull * 4 * 64 * 16 == proj_half);
}

TEST_CASE("config validation rejects ill-formed settings") {
  ModelConfig bad;
  bad.patch_sub = 3;  // 256 % 3 != 0
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);

  ModelConfig odd;
  odd.depths = {2, 3, 2};
  REQUIRE_THROWS_AS(odd.validate(), ConfigError);

  ModelConfig heads;
  heads.embed_dim = 24;  // not a multiple of head_dim 16
  REQUIRE_THROWS_AS(heads.validate(), ConfigError);

  ModelConfig ok;
  REQUIRE_NOTHROW(ok.validate());
  REQUIRE(ok.digest() == ok.digest());
  ModelConfig other = ok;
  other.embed_dim = 16;
  REQUIRE(ok.digest() != other.digest());
}

// ---------------------------------------------------------------------------
// Window partition / attention
// ---------------------------------------------------------------------------

TEST_CASE("window partition geometry") {
  auto tokens = Tensor<float>::zeros({1, 32 * 256, 8});
  auto w = window_partition(tokens, 32, 256, 1, 16);
  REQUIRE(w.shape() == Shape{512, 16, 8});

  auto single = window_partition(tokens, 32, 256, 32, 256);
  REQUIRE(single.shape() == Shape{1, 32 * 256, 8});
}

TEST_CASE("window reverse inverts partition exactly") {
  Rng rng = Rng::seeded(77);
  std::vector<float> data(2 * 8 * 16 * 4);
  for (auto& v : data) v = static_cast<float>(rng.normal());
  auto tokens = Tensor<float>::from({2, 8 * 16, 4}, std::move(data));
  auto w = window_partition(tokens, 8, 16, 2, 4);
  auto back = window_reverse(w, 2, 8, 16, 2, 4);
  REQUIRE(back.values() == tokens.values());
}

TEST_CASE("relative bias lookup is displacement-Toeplitz") {
  auto plan = make_stage_plan<double>(
      [] {
        ModelConfig c;
        c.subcarriers = 16;
        c.timeslots = 16;
        c.patch_sub = 1;
        c.patch_time = 1;
        c.window_sub = 2;
        c.window_time = 4;
        c.embed_dim = 16;
        c.depths = {2};
        return c;
      }(),
      0);
  REQUIRE(plan.bias_rows() == 3 * 7);
  Rng rng = Rng::seeded(5);
  std::vector<double> tv(plan.bias_rows() * 2);
  for (auto& v : tv) v = rng.normal();
  auto table = Tensor<double>::from({plan.bias_rows(), 2}, std::move(tv));
  auto bias = relative_bias(table, plan.rel_index, plan.window_tokens());
  REQUIRE(bias.shape() == Shape{2, 8, 8});
  // equal displacement pairs share the bias value
  const std::size_t M = 8;
  auto at = [&](std::size_t h, std::size_t i, std::size_t j) {
    return bias.values()[(h * M + i) * M + j];
  };
  // (1,0) and (2,1) within the same window row: both dt = 1, ds = 0
  REQUIRE(at(0, 1, 0) == at(0, 2, 1));
  REQUIRE(at(1, 1, 0) == at(1, 2, 1));
  // (4,0): ds = 1, dt = 0 equals (5,1)
  REQUIRE(at(0, 4, 0) == at(0, 5, 1));
}

TEST_CASE("single-token window attention reduces to the value projection") {
  const std::size_t C = 4;
  AttentionWeights<double> w;
  Rng rng = Rng::seeded(31);
  std::vector<double> qkv(C * 3 * C), proj(C * C), x(C);
  for (auto& v : qkv) v = rng.normal();
  for (auto& v : proj) v = rng.normal();
  for (auto& v : x) v = rng.normal();
  w.qkv_weight = Tensor<double>::from({C, 3 * C}, qkv);
  w.qkv_bias = Tensor<double>::zeros({3 * C});
  w.proj_weight = Tensor<double>::from({C, C}, proj);
  w.proj_bias = Tensor<double>::zeros({C});
  w.rel_bias = Tensor<double>::zeros({1, 1});

  auto windows = Tensor<double>::from({1, 1, C}, x);
  auto bias = Tensor<double>::zeros({1, 1, 1});
  auto out = window_attention(windows, w, bias, C);

  // softmax over one token is 1, so out = proj(V) with V = x . Wv
  for (std::size_t o = 0; o < C; ++o) {
    double v_o = 0.0;
    for (std::size_t i = 0; i < C; ++i)
      v_o += x[i] * qkv[i * 3 * C + 2 * C + o];
    double expect = 0.0;
    for (std::size_t i = 0; i < C; ++i) {
      double v_i = 0.0;
      for (std::size_t k = 0; k < C; ++k)
        v_i += x[k] * qkv[k * 3 * C + 2 * C + i];
      expect += v_i * proj[i * C + o];
    }
    (void)v_o;
    REQUIRE_THAT(out.values()[o], Catch::Matchers::WithinAbs(expect, 1e-12));
  }
}

TEST_CASE("attention rows sum to one (all-ones value probe)") {
  // With V forced to all-ones and an identity output projection, every
  // context entry equals its attention row sum.
  const std::size_t C = 8, M = 4;
  AttentionWeights<double> w;
  w.qkv_weight = Tensor<double>::zeros({C, 3 * C});
  std::vector<double> qb(3 * C, 0.0);
  for (std::size_t i = 2 * C; i < 3 * C; ++i) qb[i] = 1.0;  // V bias = 1
  w.qkv_bias = Tensor<double>::from({3 * C}, qb);
  std::vector<double> eye(C * C, 0.0);
  for (std::size_t i = 0; i < C; ++i) eye[i * C + i] = 1.0;
  w.proj_weight = Tensor<double>::from({C, C}, eye);
  w.proj_bias = Tensor<double>::zeros({C});
  w.rel_bias = Tensor<double>::zeros({1, 1});

  Rng rng = Rng::seeded(3);
  std::vector<double> xv(2 * M * C);
  for (auto& v : xv) v = rng.normal();
  auto windows = Tensor<double>::from({2, M, C}, std::move(xv));
  std::vector<double> bv(C / 4 * 0 + 2 * M * M);
  for (auto& v : bv) v = rng.normal();
  auto bias = Tensor<double>::from({2, M, M}, std::move(bv));
  auto out = window_attention(windows, w, bias, 4);
  for (double v : out.values())
    REQUIRE_THAT(v, Catch::Matchers::WithinAbs(1.0, 1e-6));
}

TEST_CASE("window attention is permutation equivariant") {
  const std::size_t C = 8, M = 6;
  Rng rng = Rng::seeded(47);
  AttentionWeights<double> w;
  auto rnd = [&rng](Shape s) {
    std::vector<double> d(shape_numel(s));
    for (auto& v : d) v = rng.normal();
    return Tensor<double>::from(std::move(s), std::move(d));
  };
  w.qkv_weight = rnd({C, 3 * C});
  w.qkv_bias = rnd({3 * C});
  w.proj_weight = rnd({C, C});
  w.proj_bias = rnd({C});
  w.rel_bias = Tensor<double>::zeros({1, 1});

  auto x = rnd({1, M, C});
  const std::size_t heads = 2;
  auto bias = rnd({heads, M, M});
  auto out = window_attention(x, w, bias, C / heads);

  // swap tokens 1 and 4 plus the matching bias rows/columns
  std::vector<std::size_t> perm{0, 4, 2, 3, 1, 5};
  std::vector<double> px(M * C), pb(heads * M * M);
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t c = 0; c < C; ++c)
      px[i * C + c] = x.values()[perm[i] * C + c];
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < M; ++j)
        pb[(h * M + i) * M + j] =
            bias.values()[(h * M + perm[i]) * M + perm[j]];
  auto out_p = window_attention(Tensor<double>::from({1, M, C}, px), w,
                                Tensor<double>::from({heads, M, M}, pb),
                                C / heads);
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t c = 0; c < C; ++c)
      REQUIRE_THAT(out_p.values()[i * C + c],
                   Catch::Matchers::WithinAbs(
                       out.values()[perm[i] * C + c], 1e-9));
}

// ---------------------------------------------------------------------------
// Blocks
// ---------------------------------------------------------------------------

namespace {

ModelConfig tiny_block_config() {
  ModelConfig cfg;
  cfg.subcarriers = 4;
  cfg.timeslots = 8;
  cfg.patch_sub = 1;
  cfg.patch_time = 1;
  cfg.window_sub = 2;
  cfg.window_time = 4;
  cfg.embed_dim = 8;
  cfg.head_dim = 4;  // 2 heads
  cfg.depths = {2};
  cfg.in_channels = 1;
  cfg.n_classes = 4;
  return cfg;
}

BlockParams<double> random_block(const StagePlan<double>& plan,
                                 std::size_t C, std::size_t heads,
                                 std::size_t hidden, Rng& rng) {
  auto rnd = [&rng](Shape s, double sc = 0.2) {
    std::vector<double> d(shape_numel(s));
    for (auto& v : d) v = rng.normal() * sc;
    return Tensor<double>::from(std::move(s), std::move(d));
  };
  BlockParams<double> b;
  b.norm1_gain = Tensor<double>::full({C}, 1.0);
  b.norm1_bias = Tensor<double>::zeros({C});
  b.attn.qkv_weight = rnd({C, 3 * C});
  b.attn.qkv_bias = rnd({3 * C});
  b.attn.proj_weight = rnd({C, C});
  b.attn.proj_bias = rnd({C});
  b.attn.rel_bias = rnd({plan.bias_rows(), heads});
  b.norm2_gain = Tensor<double>::full({C}, 1.0);
  b.norm2_bias = Tensor<double>::zeros({C});
  b.fc1 = {rnd({C, hidden}), rnd({hidden})};
  b.fc2 = {rnd({hidden, C}), rnd({C})};
  return b;
}

}  // namespace

TEST_CASE("block with zeroed output projections is the identity") {
  auto cfg = tiny_block_config();
  auto plan = make_stage_plan<double>(cfg, 0);
  Rng rng = Rng::seeded(8);
  auto b = random_block(plan, 8, 2, 32, rng);
  fill_const(b.attn.proj_weight, 0.0);
  fill_const(b.attn.proj_bias, 0.0);
  fill_const(b.fc2.weight, 0.0);
  fill_const(b.fc2.bias, 0.0);

  std::vector<double> xv(2 * 32 * 8);
  for (auto& v : xv) v = rng.normal();
  auto x = Tensor<double>::from({2, 32, 8}, xv);
  auto y = swin_block(x, b, plan, false, cfg.head_dim);
  REQUIRE(y.values() == xv);
  auto ys = swin_block(x, b, plan, true, cfg.head_dim);
  REQUIRE(ys.values() == xv);
}

TEST_CASE("shifted block equals unshifted on pre-rolled input away from the seam") {
  auto cfg = tiny_block_config();
  cfg.subcarriers = 1;
  cfg.window_sub = 1;
  auto plan = make_stage_plan<double>(cfg, 0);
  REQUIRE(plan.shift_time == 2);
  Rng rng = Rng::seeded(9);
  auto b = random_block(plan, 8, 2, 32, rng);

  std::vector<double> xv(1 * 8 * 8);
  for (auto& v : xv) v = rng.normal();
  auto x = Tensor<double>::from({1, 8, 8}, xv);

  auto shifted_out = swin_block(x, b, plan, true, cfg.head_dim);
  auto rolled_in = roll(reshape(x, {1, 1, 8, 8}), 2, -2);
  auto plain_out = swin_block(reshape(rolled_in, {1, 8, 8}), b, plan, false,
                              cfg.head_dim);
  // window 0 of the shifted layout holds tokens 2..5 of the original, all
  // from the interior group; those must agree exactly.
  auto back = roll(reshape(shifted_out, {1, 1, 8, 8}), 2, -2);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t c = 0; c < 8; ++c)
      REQUIRE_THAT(back.values()[t * 8 + c],
                   Catch::Matchers::WithinAbs(
                       plain_out.values()[t * 8 + c], 1e-9));
}

TEST_CASE("masked attention entries contribute nothing after softmax") {
  auto cfg = tiny_block_config();
  cfg.subcarriers = 1;
  cfg.window_sub = 1;
  auto plan = make_stage_plan<double>(cfg, 0);
  REQUIRE(plan.shift_mask.defined());
  // -1e9 mask entries underflow to zero probability
  const auto& mv = plan.shift_mask.values();
  std::size_t masked = 0;
  for (double v : mv) masked += v != 0.0 ? 1 : 0;
  REQUIRE(masked > 0);
  auto probe = softmax(add(Tensor<double>::zeros({2, 1, 4, 4}),
                           plan.shift_mask),
                       3);
  for (std::size_t i = 0; i < mv.size(); ++i)
    if (mv[i] != 0.0) REQUIRE(probe.values()[i] < 1e-30);
}

TEST_CASE("full block gradient check at reduced dims") {
  auto cfg = tiny_block_config();
  auto plan = make_stage_plan<double>(cfg, 0);
  Rng rng = Rng::seeded(12);
  auto b = random_block(plan, 8, 2, 32, rng);

  std::vector<double> xv(1 * 32 * 8);
  for (auto& v : xv) v = rng.normal();
  auto x = Tensor<double>::from({1, 32, 8}, xv);

  auto loss = [&](Tensor<double>&) {
    return sum_squares(swin_block(x, b, plan, true, cfg.head_dim));
  };
  std::vector<Tensor<double>> checked{
      b.attn.qkv_weight, b.attn.qkv_bias, b.attn.proj_weight,
      b.attn.proj_bias, b.attn.rel_bias,  b.norm1_gain,
      b.norm1_bias,      b.fc1.weight,    b.fc2.weight,
  };
  for (auto& p : checked) {
    double err = grad_check(loss, p, 1e-5);
    INFO("param of size " << p.size());
    REQUIRE(err < 1e-4);
  }
  double ex = grad_check(
      [&](Tensor<double>& t) {
        return sum_squares(swin_block(t, b, plan, true, cfg.head_dim));
      },
      x, 1e-5);
  REQUIRE(ex < 1e-4);
}

// ---------------------------------------------------------------------------
// Patch ops
// ---------------------------------------------------------------------------

TEST_CASE("patch embedding shapes for the published inputs") {
  ModelConfig amp;  // 4 x 256 x 256, patch 8x1, C = 32
  SwinModel<float> m(amp, 1);
  auto x = random_input<float>(amp, 1, 2);
  auto tokens = patch_embed(x, amp, m.embed_layer());
  REQUIRE(tokens.shape() == Shape{1, 8192, 32});

  ModelConfig mixed = table1_config(64, 4, 8);
  SwinModel<float> m2(mixed, 1);
  auto x2 = random_input<float>(mixed, 1, 3);
  auto tokens2 = patch_embed(x2, mixed, m2.embed_layer());
  REQUIRE(tokens2.shape() == Shape{1, 8192, 64});
}

TEST_CASE("patch merge halves both grid extents at constant width") {
  Rng rng = Rng::seeded(14);
  std::vector<double> xv(1 * 8 * 16 * 4);
  for (auto& v : xv) v = rng.normal();
  auto tokens = Tensor<double>::from({1, 8 * 16, 4}, xv);
  Linear<double> proj{Tensor<double>::zeros({16, 4}),
                      Tensor<double>::zeros({4})};
  auto merged = patch_merge(tokens, 8, 16, proj);
  REQUIRE(merged.shape() == Shape{1, 4 * 8, 4});

  // selector projection: keep the top-left token of each 2x2 neighborhood
  auto& w = proj.weight.mutable_values();
  for (std::size_t c = 0; c < 4; ++c) w[c * 4 + c] = 1.0;
  auto selected = patch_merge(tokens, 8, 16, proj);
  for (std::size_t gs = 0; gs < 4; ++gs)
    for (std::size_t gt = 0; gt < 8; ++gt)
      for (std::size_t c = 0; c < 4; ++c) {
        const double expect = xv[((2 * gs) * 16 + 2 * gt) * 4 + c];
        REQUIRE(selected.values()[(gs * 8 + gt) * 4 + c] == expect);
      }

  REQUIRE_THROWS_AS(patch_merge(Tensor<double>::zeros({1, 3 * 4, 4}), 3, 4,
                                proj),
                    ConfigError);
}

TEST_CASE("patch split is the shape inverse of merge") {
  Rng rng = Rng::seeded(15);
  std::vector<double> xv(2 * 4 * 32 * 8);
  for (auto& v : xv) v = rng.normal();
  auto tokens = Tensor<double>::from({2, 4 * 32, 8}, xv);
  Linear<double> up{Tensor<double>::zeros({8, 32}),
                    Tensor<double>::zeros({32})};
  // chunk-copy: all four chunks replicate the source token
  auto& w = up.weight.mutable_values();
  for (std::size_t c = 0; c < 8; ++c)
    for (std::size_t chunk = 0; chunk < 4; ++chunk)
      w[c * 32 + chunk * 8 + c] = 1.0;
  auto split = patch_split(tokens, 4, 32, up);
  REQUIRE(split.shape() == Shape{2, 8 * 64, 8});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t gs = 0; gs < 8; ++gs)
      for (std::size_t gt = 0; gt < 64; ++gt)
        for (std::size_t c = 0; c < 8; ++c) {
          const double src =
              xv[(b * 128 + (gs / 2) * 32 + gt / 2) * 8 + c];
          REQUIRE(split.values()[(b * 512 + gs * 64 + gt) * 8 + c] == src);
        }

  Linear<double> down{Tensor<double>::zeros({32, 8}),
                      Tensor<double>::zeros({8})};
  auto back = patch_merge(split, 8, 64, down);
  REQUIRE(back.shape() == tokens.shape());
}

// ---------------------------------------------------------------------------
// Encoder / decoder / classifier
// ---------------------------------------------------------------------------

TEST_CASE("encode produces the published latent geometry at full size") {
  ModelConfig cfg;  // 4 x 256 x 256, C van 32, depths [2,2,6,2]
  SwinModel<float> model(cfg, 3);
  auto x = random_input<float>(cfg, 1, 5);
  auto images = model.encode(x);
  REQUIRE(images.size() == 1);
  REQUIRE(images[0].grid_sub == 4);
  REQUIRE(images[0].grid_time == 32);
  REQUIRE(images[0].dim == 32);
  REQUIRE(images[0].feats.size() == 128 * 32);
  // gamma accounting from actual shapes
  REQUIRE(cfg.raw_elements() / images[0].feats.size() == 64);

  auto again = model.encode(x);
  REQUIRE(again[0].feats == images[0].feats);  // determinism
}

TEST_CASE("deep config reaches a 1x8 grid (gamma 1024)") {
  ModelConfig cfg = table1_config(32, 6, 4);
  cfg.timeslots = 256;
  SwinModel<float> model(cfg, 4);
  auto x = random_input<float>(cfg, 1, 6);
  auto images = model.encode(x);
  REQUIRE(images[0].grid_sub == 1);
  REQUIRE(images[0].grid_time == 8);
  REQUIRE(images[0].feats.size() == 8 * 32);
  REQUIRE(compression_ratio(cfg).num == 1024);
  REQUIRE(cfg.raw_elements() / images[0].feats.size() == 1024);
}

TEST_CASE("decoder mirrors the encoder shape for every grid configuration") {
  // Reduced input extents keep the walk fast; the latent/raw element ratio
  // is size-invariant so it must still equal gamma exactly.
  struct Row {
    std::size_t dim, stages, channels;
  };
  const Row rows[] = {{32, 4, 4}, {16, 4, 4}, {32, 5, 4}, {16, 5, 4},
                      {32, 6, 4}, {64, 4, 8}, {32, 4, 8}, {64, 5, 8},
                      {32, 5, 8}, {64, 6, 8}};
  for (const auto& row : rows) {
    ModelConfig cfg = table1_config(row.dim, row.stages, row.channels);
    const std::size_t scale = std::size_t{1} << cfg.merge_count();
    cfg.subcarriers = cfg.patch_sub * scale;
    cfg.timeslots = cfg.patch_time * scale * 2;
    SwinModel<float> model(cfg, 7);
    auto x = random_input<float>(cfg, 2, 8);
    auto images = model.encode(x);
    const auto recon = model.decode(images);
    REQUIRE(recon.shape() == x.shape());
    const auto gamma = compression_ratio(cfg);
    REQUIRE(cfg.raw_elements() % cfg.latent_elements() == 0);
    REQUIRE(cfg.raw_elements() / cfg.latent_elements() == gamma.num);
  }
}

TEST_CASE("decode rejects feature images from another configuration") {
  ModelConfig small;
  small.subcarriers = 64;
  small.timeslots = 64;
  small.embed_dim = 16;
  small.depths = {2, 2};
  SwinModel<float> model(small, 9);
  auto x = random_input<float>(small, 1, 10);
  auto images = model.encode(x);
  images[0].config_digest ^= 0xdeadbeef;
  REQUIRE_THROWS_AS(model.decode(images), CheckpointError);
}

TEST_CASE("encoder with zeroed projections reduces to embed plus merges") {
  ModelConfig cfg;
  cfg.subcarriers = 32;
  cfg.timeslots = 32;
  cfg.embed_dim = 16;
  cfg.depths = {2, 2};
  cfg.in_channels = 2;
  SwinModel<double> model(cfg, 21);
  for (auto& stage : model.encoder_blocks())
    for (auto& b : stage) {
      fill_const(b.attn.proj_weight, 0.0);
      fill_const(b.attn.proj_bias, 0.0);
      fill_const(b.fc2.weight, 0.0);
      fill_const(b.fc2.bias, 0.0);
    }
  auto x = random_input<double>(cfg, 1, 22);
  auto tokens = model.encode_tokens(x);

  auto manual = patch_embed(x, cfg, model.embed_layer());
  auto [gs, gt] = cfg.base_grid();
  manual = patch_merge(manual, gs, gt, model.merge_layers()[0]);
  REQUIRE(tokens.values() == manual.values());
}

TEST_CASE("classifier is a mean-pool linear head") {
  ModelConfig cfg;
  cfg.subcarriers = 64;
  cfg.timeslots = 64;
  cfg.embed_dim = 16;
  cfg.depths = {2, 2};
  cfg.n_classes = 21;
  SwinModel<double> model(cfg, 33);
  auto x = random_input<double>(cfg, 3, 34);
  auto images = model.encode(x);
  auto logits = model.classify(images);
  REQUIRE(logits.shape() == Shape{3, 21});

  // zero head weights: uniform logits, CE = ln 21
  fill_const(model.head_layer().weight, 0.0);
  fill_const(model.head_layer().bias, 0.0);
  auto uniform = model.classify(images);
  auto ce = cross_entropy(uniform, std::vector<int>{1, 5, 20});
  REQUIRE_THAT(ce.item(), Catch::Matchers::WithinAbs(std::log(21.0), 1e-9));
}

TEST_CASE("classifier logits are invariant to token permutation") {
  ModelConfig cfg;
  cfg.subcarriers = 8;
  cfg.timeslots = 8;
  cfg.patch_sub = 1;
  cfg.patch_time = 1;
  cfg.embed_dim = 16;
  cfg.depths = {2};
  cfg.in_channels = 1;
  SwinModel<double> model(cfg, 41);
  Rng rng = Rng::seeded(42);
  std::vector<double> lv(1 * 64 * 16);
  for (auto& v : lv) v = rng.normal();
  auto latent = Tensor<double>::from({1, 64, 16}, lv);
  auto logits = model.classify_tokens(latent);

  std::vector<std::size_t> perm(64);
  for (std::size_t i = 0; i < 64; ++i) perm[i] = (i * 7 + 3) % 64;
  auto permuted = model.classify_tokens(index_select(latent, 1, perm));
  for (std::size_t i = 0; i < logits.size(); ++i)
    REQUIRE_THAT(permuted.values()[i],
                 Catch::Matchers::WithinAbs(logits.values()[i], 1e-9));
}

// ---------------------------------------------------------------------------
// Gradient suite over learnable components at reduced dims
// ---------------------------------------------------------------------------

TEST_CASE("autoencoder path gradient check on a tiny model") {
  ModelConfig cfg;
  cfg.subcarriers = 8;
  cfg.timeslots = 16;
  cfg.patch_sub = 2;
  cfg.patch_time = 2;
  cfg.window_sub = 2;
  cfg.window_time = 4;
  cfg.embed_dim = 8;
  cfg.head_dim = 4;
  cfg.depths = {2, 2};
  cfg.in_channels = 2;
  cfg.n_classes = 3;
  SwinModel<double> model(cfg, 55);
  // reinflate the 0.02-std init so deep-parameter gradients stay well above
  // finite-difference noise
  Rng rng = Rng::seeded(57);
  for (auto& [name, t] : model.named_parameters(true)) {
    if (name.find("gain") != std::string::npos) continue;
    auto h = t;
    for (auto& v : h.mutable_values()) v = rng.normal() * 0.15;
  }
  auto x = random_input<double>(cfg, 1, 56);

  auto recon_loss = [&](Tensor<double>&) {
    auto z = model.encode_tokens(x);
    auto recon = model.decode_tokens(z);
    return nmse_ratio(x, recon);
  };
  // representative parameters across every learnable component family
  auto params = model.named_parameters(false);
  std::vector<std::string> picked{
      "embed.weight",
      "enc.stage0.block0.attn.qkv.weight",
      "enc.stage0.block1.attn.rel_bias",
      "enc.stage1.block0.mlp.fc1.weight",
      "enc.merge0.weight",
      "dec.split0.weight",
      "dec.stage0.block1.attn.proj.weight",
      "dec.stage1.block0.norm1.gain",
      "unembed.weight",
      "unembed.bias",
  };
  for (const auto& name : picked) {
    bool found = false;
    for (auto& [n, t] : params) {
      if (n != name) continue;
      found = true;
      auto tensor = t;
      double err = grad_check(recon_loss, tensor, 1e-4);
      INFO(name);
      REQUIRE(err < 1e-4);
    }
    REQUIRE(found);
  }

  auto ce_loss = [&](Tensor<double>&) {
    auto z = model.encode_tokens(x);
    return cross_entropy(model.classify_tokens(z), std::vector<int>{1});
  };
  auto head_w = model.classifier_parameters()[0];
  double err = grad_check(ce_loss, head_w, 1e-5);
  REQUIRE(err < 1e-4);
}

// ---------------------------------------------------------------------------
// NMSE metric
// ---------------------------------------------------------------------------

TEST_CASE("nmse reference points") {
  Rng rng = Rng::seeded(66);
  std::vector<double> xv(64);
  for (auto& v : xv) v = rng.normal();
  auto x = Tensor<double>::from({8, 8}, xv);

  REQUIRE(nmse_db(x, x) == -std::numeric_limits<double>::infinity());
  REQUIRE_THAT(nmse_db(x, Tensor<double>::zeros({8, 8})),
               Catch::Matchers::WithinAbs(0.0, 1e-12));

  // error energy at 1% of signal energy reads -20 dB
  double energy = 0.0;
  for (double v : xv) energy += v * v;
  std::vector<double> yv = xv;
  const double bump = std::sqrt(0.01 * energy);
  yv[0] += bump;
  auto y = Tensor<double>::from({8, 8}, std::move(yv));
  REQUIRE_THAT(nmse_db(x, y), Catch::Matchers::WithinAbs(-20.0, 1e-9));

  REQUIRE_THROWS_AS(nmse_ratio(Tensor<double>::zeros({2, 2}),
                               Tensor<double>::zeros({2, 2})),
                    NumericError);
}
