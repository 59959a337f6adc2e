#pragma once

// The SwinFi autoencoder: rectangular patch embedding, windowed multi-head
// attention blocks with learned relative position bias and alternating
// cyclic shifts, patch merge/split between stages, a linear unembedding,
// and a mean-pool linear classifier head.  Plus the compression-ratio and
// attention-complexity accounting and the NMSE metric.

#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "swinfi/common.hpp"
#include "swinfi/tensor.hpp"

namespace swinfi {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ModelConfig {
  std::size_t patch_sub = 8;    // patch extent along subcarriers
  std::size_t patch_time = 1;   // patch extent along time slots
  std::size_t window_sub = 1;   // window extent in patches (subcarrier axis)
  std::size_t window_time = 16; // window extent in patches (time axis)
  std::size_t embed_dim = 32;   // feature width C, constant across stages
  std::vector<std::size_t> depths{2, 2, 6, 2};
  std::size_t head_dim = 16;
  std::size_t mlp_ratio = 4;
  std::size_t n_classes = 21;
  std::size_t in_channels = 4;  // D
  std::size_t subcarriers = 256;
  std::size_t timeslots = 256;

  std::size_t stage_count() const { return depths.size(); }
  std::size_t merge_count() const { return depths.size() - 1; }

  std::pair<std::size_t, std::size_t> base_grid() const {
    return {subcarriers / patch_sub, timeslots / patch_time};
  }

  std::pair<std::size_t, std::size_t> grid_at(std::size_t level) const {
    auto [gs, gt] = base_grid();
    return {gs >> level, gt >> level};
  }

  std::pair<std::size_t, std::size_t> final_grid() const {
    return grid_at(merge_count());
  }

  std::size_t latent_elements() const {
    auto [gs, gt] = final_grid();
    return gs * gt * embed_dim;
  }

  std::size_t raw_elements() const {
    return in_channels * subcarriers * timeslots;
  }

  void validate() const {
    if (depths.empty()) throw ConfigError("depths must not be empty");
    for (auto d : depths) {
      if (d == 0 || d % 2 != 0)
        throw ConfigError("stage depths must be positive and even");
    }
    if (patch_sub == 0 || patch_time == 0 || window_sub == 0 ||
        window_time == 0)
      throw ConfigError("patch and window extents must be positive");
    const std::size_t scale = std::size_t{1} << merge_count();
    if (subcarriers % (patch_sub * scale) != 0)
      throw ConfigError("subcarriers (" + std::to_string(subcarriers) +
                        ") must divide by patch_sub * 2^merges = " +
                        std::to_string(patch_sub * scale));
    if (timeslots % (patch_time * scale) != 0)
      throw ConfigError("timeslots (" + std::to_string(timeslots) +
                        ") must divide by patch_time * 2^merges = " +
                        std::to_string(patch_time * scale));
    if (embed_dim == 0 || head_dim == 0 || embed_dim % head_dim != 0)
      throw ConfigError("embed_dim must be a positive multiple of head_dim");
    if (in_channels == 0 || n_classes == 0 || mlp_ratio == 0)
      throw ConfigError("channels, classes and mlp_ratio must be positive");
    // every stage grid must tile by the (clamped) window
    for (std::size_t level = 0; level < stage_count(); ++level) {
      auto [gs, gt] = grid_at(level);
      const std::size_t ws = std::min(window_sub, gs);
      const std::size_t wt = std::min(window_time, gt);
      if (gs % ws != 0 || gt % wt != 0)
        throw ConfigError("stage " + std::to_string(level) + " grid " +
                          std::to_string(gs) + "x" + std::to_string(gt) +
                          " does not tile by window");
    }
  }

  std::string canonical_string() const {
    std::ostringstream os;
    os << "swinfi-cfg-v1|pS=" << patch_sub << "|pT=" << patch_time
       << "|wS=" << window_sub << "|wT=" << window_time << "|C=" << embed_dim
       << "|depths=";
    for (std::size_t i = 0; i < depths.size(); ++i)
      os << (i ? "," : "") << depths[i];
    os << "|hd=" << head_dim << "|mlp=" << mlp_ratio << "|cls=" << n_classes
       << "|D=" << in_channels << "|S=" << subcarriers << "|T=" << timeslots;
    return os.str();
  }

  std::uint64_t digest() const { return fnv1a64(canonical_string()); }
};

// Exact rational value of the compression ratio
// gamma = pS * pT * D * 4^(stages-1) / C.
struct Ratio {
  std::uint64_t num = 0, den = 1;
  double value() const { return static_cast<double>(num) / den; }
  bool is_integer() const { return den == 1; }
};

inline Ratio compression_ratio(const ModelConfig& cfg) {
  std::uint64_t num = static_cast<std::uint64_t>(cfg.patch_sub) *
                      cfg.patch_time * cfg.in_channels;
  for (std::size_t i = 0; i + 1 < cfg.depths.size(); ++i) num *= 4;
  std::uint64_t den = cfg.embed_dim;
  const std::uint64_t g = std::gcd(num, den);
  return {num / g, den / g};
}

// Operation counts of global MSA vs windowed MSA on an h x w patch grid of
// width C with M_eff patches per window:
//   omega_msa  = 4hwC^2 + 2(hw)^2 C
//   omega_wmsa = 4hwC^2 + 2 M_eff hw C
struct ComplexityReport {
  std::uint64_t grid_sub = 0, grid_time = 0;  // h, w
  std::uint64_t dim = 0;                      // C
  std::uint64_t window_tokens = 0;            // M_eff
  std::uint64_t omega_msa = 0, omega_wmsa = 0;
};

inline ComplexityReport complexity_estimate(std::uint64_t h, std::uint64_t w,
                                            std::uint64_t dim,
                                            std::uint64_t window_tokens) {
  if (h == 0 || w == 0 || dim == 0 || window_tokens == 0)
    throw ConfigError("complexity_estimate needs positive extents");
  ComplexityReport r;
  r.grid_sub = h;
  r.grid_time = w;
  r.dim = dim;
  r.window_tokens = window_tokens;
  const std::uint64_t hw = h * w;
  const std::uint64_t shared = 4 * hw * dim * dim;
  r.omega_msa = shared + 2 * hw * hw * dim;
  r.omega_wmsa = shared + 2 * window_tokens * hw * dim;
  return r;
}

// ---------------------------------------------------------------------------
// Feature image (the compressed latent shipped edge -> cloud)
// ---------------------------------------------------------------------------

struct FeatureImage {
  std::uint16_t grid_sub = 0, grid_time = 0;
  std::uint16_t dim = 0;
  std::uint32_t frame_id = 0;
  std::uint64_t config_digest = 0;
  std::vector<float> feats;  // (grid_sub*grid_time) x dim, row-major

  std::size_t token_count() const {
    return static_cast<std::size_t>(grid_sub) * grid_time;
  }
};

// ---------------------------------------------------------------------------
// Window partition / reverse
// ---------------------------------------------------------------------------

// tokens [B, gS*gT, C] laid out subcarrier-major -> [B*nW, ws*wt, C].
// Window index runs subcarrier-major as well.
template <class T>
Tensor<T> window_partition(const Tensor<T>& tokens, std::size_t grid_sub,
                           std::size_t grid_time, std::size_t win_sub,
                           std::size_t win_time) {
  const auto& sh = tokens.shape();
  if (sh.size() != 3 || sh[1] != grid_sub * grid_time)
    throw ShapeError("window_partition expects [B, gS*gT, C]");
  if (grid_sub % win_sub != 0 || grid_time % win_time != 0)
    throw ShapeError("grid does not tile by window");
  const std::size_t B = sh[0], C = sh[2];
  auto x = reshape(tokens, {B, grid_sub / win_sub, win_sub,
                            grid_time / win_time, win_time, C});
  x = permute(x, {0, 1, 3, 2, 4, 5});
  const std::size_t n_windows =
      (grid_sub / win_sub) * (grid_time / win_time);
  return reshape(x, {B * n_windows, win_sub * win_time, C});
}

template <class T>
Tensor<T> window_reverse(const Tensor<T>& windows, std::size_t batch,
                         std::size_t grid_sub, std::size_t grid_time,
                         std::size_t win_sub, std::size_t win_time) {
  const std::size_t C = windows.shape()[2];
  auto x = reshape(windows, {batch, grid_sub / win_sub, grid_time / win_time,
                             win_sub, win_time, C});
  x = permute(x, {0, 1, 3, 2, 4, 5});
  return reshape(x, {batch, grid_sub * grid_time, C});
}

// ---------------------------------------------------------------------------
// Stage plan: grid geometry, clamped window, shift, bias indexing, mask
// ---------------------------------------------------------------------------

template <class T>
struct StagePlan {
  std::size_t grid_sub = 0, grid_time = 0;
  std::size_t win_sub = 0, win_time = 0;  // clamped to the grid
  std::size_t shift_time = 0;             // 0 disables the shifted variant
  std::size_t n_windows = 0;
  std::vector<std::size_t> rel_index;     // (ws*wt)^2 table rows
  Tensor<T> shift_mask;                   // [nW, 1, M, M]; defined iff shift

  std::size_t window_tokens() const { return win_sub * win_time; }
  std::size_t bias_rows() const {
    return (2 * win_sub - 1) * (2 * win_time - 1);
  }
};

template <class T>
StagePlan<T> make_stage_plan(const ModelConfig& cfg, std::size_t level) {
  StagePlan<T> plan;
  auto [gs, gt] = cfg.grid_at(level);
  plan.grid_sub = gs;
  plan.grid_time = gt;
  // Windows larger than the grid clamp to it; once a single window covers
  // the time axis the cyclic shift adds nothing and is disabled.
  plan.win_sub = std::min(cfg.window_sub, gs);
  plan.win_time = std::min(cfg.window_time, gt);
  plan.shift_time = gt > cfg.window_time ? plan.win_time / 2 : 0;
  plan.n_windows = (gs / plan.win_sub) * (gt / plan.win_time);

  const std::size_t ws = plan.win_sub, wt = plan.win_time;
  const std::size_t M = ws * wt;
  plan.rel_index.resize(M * M);
  for (std::size_t i = 0; i < M; ++i) {
    const std::ptrdiff_t si = i / wt, ti = i % wt;
    for (std::size_t j = 0; j < M; ++j) {
      const std::ptrdiff_t sj = j / wt, tj = j % wt;
      const std::size_t ds = static_cast<std::size_t>(si - sj + (ws - 1));
      const std::size_t dt = static_cast<std::size_t>(ti - tj + (wt - 1));
      plan.rel_index[i * M + j] = ds * (2 * wt - 1) + dt;
    }
  }

  if (plan.shift_time > 0) {
    // Group ids along time in shifted coordinates; tokens from different
    // groups within one window must not attend to each other.
    const std::size_t s = plan.shift_time;
    std::vector<int> group(gt);
    for (std::size_t t = 0; t < gt; ++t) {
      if (t < gt - wt)
        group[t] = 0;
      else if (t < gt - s)
        group[t] = 1;
      else
        group[t] = 2;
    }
    std::vector<T> mask(plan.n_windows * M * M, T(0));
    const std::size_t wins_t = gt / wt;
    for (std::size_t wb = 0; wb < plan.n_windows; ++wb) {
      const std::size_t tb = wb % wins_t;
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < M; ++j) {
          const std::size_t gi = tb * wt + (i % wt);
          const std::size_t gj = tb * wt + (j % wt);
          if (group[gi] != group[gj])
            mask[(wb * M + i) * M + j] = T(-1e9);
        }
    }
    plan.shift_mask =
        Tensor<T>::from({plan.n_windows, 1, M, M}, std::move(mask));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <class T>
struct Linear {
  Tensor<T> weight, bias;  // weight [in, out], bias [out]

  Tensor<T> operator()(const Tensor<T>& x) const {
    return add(matmul(x, weight), bias);
  }
};

template <class T>
struct AttentionWeights {
  Tensor<T> qkv_weight, qkv_bias;    // [C, 3C], [3C]
  Tensor<T> proj_weight, proj_bias;  // [C, C], [C]
  Tensor<T> rel_bias;                // [bias_rows, heads]
};

template <class T>
struct BlockParams {
  Tensor<T> norm1_gain, norm1_bias;
  AttentionWeights<T> attn;
  Tensor<T> norm2_gain, norm2_bias;
  Linear<T> fc1, fc2;
};

// ---------------------------------------------------------------------------
// Attention and block forward
// ---------------------------------------------------------------------------

// Relative position bias matrix [heads, M, M] gathered from the table.
template <class T>
Tensor<T> relative_bias(const Tensor<T>& table,
                        const std::vector<std::size_t>& rel_index,
                        std::size_t window_tokens) {
  const std::size_t heads = table.shape()[1];
  auto rows = index_select(table, 0, rel_index);  // [M*M, heads]
  auto cube = reshape(rows, {window_tokens, window_tokens, heads});
  return permute(cube, {2, 0, 1});
}

// Multi-head attention inside each window.
//   windows [B*nW, M, C], bias [heads, M, M], mask [nW, 1, M, M] or null.
template <class T>
Tensor<T> window_attention(const Tensor<T>& windows,
                           const AttentionWeights<T>& w, const Tensor<T>& bias,
                           std::size_t head_dim,
                           const Tensor<T>* mask = nullptr,
                           std::size_t batch = 1) {
  const auto& sh = windows.shape();
  if (sh.size() != 3) throw ShapeError("window_attention expects [W, M, C]");
  const std::size_t W = sh[0], M = sh[1], C = sh[2];
  if (C % head_dim != 0) throw ConfigError("C must divide by head_dim");
  const std::size_t heads = C / head_dim;

  auto qkv = add(matmul(windows, w.qkv_weight), w.qkv_bias);
  auto packed = reshape(qkv, {W, M, 3, heads, head_dim});
  auto take = [&](std::size_t which) {
    return reshape(index_select(packed, 2, {which}), {W, M, heads, head_dim});
  };
  auto q = permute(take(0), {0, 2, 1, 3});  // [W, h, M, d]
  auto kT = permute(take(1), {0, 2, 3, 1}); // [W, h, d, M]
  auto v = permute(take(2), {0, 2, 1, 3});  // [W, h, M, d]

  auto attn = scale(matmul(q, kT), 1.0 / std::sqrt(double(head_dim)));
  attn = add(attn, bias);  // broadcast over windows
  if (mask != nullptr) {
    const std::size_t n_windows = W / batch;
    attn = reshape(attn, {batch, n_windows, heads, M, M});
    attn = add(attn, *mask);
    attn = reshape(attn, {W, heads, M, M});
  }
  attn = softmax(attn, 3);

  auto ctx = matmul(attn, v);               // [W, h, M, d]
  ctx = reshape(permute(ctx, {0, 2, 1, 3}), {W, M, C});
  return add(matmul(ctx, w.proj_weight), w.proj_bias);
}

// Pre-norm residual block: x += W-MSA(LN(x)) with optional cyclic temporal
// shift, then x += MLP(LN(x)).
template <class T>
Tensor<T> swin_block(const Tensor<T>& x, const BlockParams<T>& p,
                     const StagePlan<T>& plan, bool shifted,
                     std::size_t head_dim) {
  const std::size_t B = x.shape()[0];
  const std::size_t C = x.shape()[2];
  const bool do_shift = shifted && plan.shift_time > 0;

  auto h = layer_norm(x, p.norm1_gain, p.norm1_bias);
  if (do_shift) {
    auto grid = reshape(h, {B, plan.grid_sub, plan.grid_time, C});
    grid = roll(grid, 2, -static_cast<std::ptrdiff_t>(plan.shift_time));
    h = reshape(grid, {B, plan.grid_sub * plan.grid_time, C});
  }
  auto windows = window_partition(h, plan.grid_sub, plan.grid_time,
                                  plan.win_sub, plan.win_time);
  auto bias =
      relative_bias(p.attn.rel_bias, plan.rel_index, plan.window_tokens());
  auto attn_out =
      window_attention(windows, p.attn, bias, head_dim,
                       do_shift ? &plan.shift_mask : nullptr, B);
  h = window_reverse(attn_out, B, plan.grid_sub, plan.grid_time, plan.win_sub,
                     plan.win_time);
  if (do_shift) {
    auto grid = reshape(h, {B, plan.grid_sub, plan.grid_time, C});
    grid = roll(grid, 2, static_cast<std::ptrdiff_t>(plan.shift_time));
    h = reshape(grid, {B, plan.grid_sub * plan.grid_time, C});
  }
  auto y = add(x, h);

  auto m = layer_norm(y, p.norm2_gain, p.norm2_bias);
  m = p.fc2(gelu(p.fc1(m)));
  return add(y, m);
}

// ---------------------------------------------------------------------------
// Patch embedding / merge / split / unembedding
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> patch_embed(const Tensor<T>& x, const ModelConfig& cfg,
                      const Linear<T>& proj) {
  const auto& sh = x.shape();
  if (sh.size() != 4 || sh[1] != cfg.in_channels ||
      sh[2] != cfg.subcarriers || sh[3] != cfg.timeslots)
    throw ShapeError("patch_embed expects [B, D, S, T] matching the config");
  if (cfg.subcarriers % cfg.patch_sub != 0 ||
      cfg.timeslots % cfg.patch_time != 0)
    throw ConfigError("input extents must divide by the patch size");
  const std::size_t B = sh[0];
  auto [gs, gt] = cfg.base_grid();
  auto t = reshape(x, {B, cfg.in_channels, gs, cfg.patch_sub, gt,
                       cfg.patch_time});
  t = permute(t, {0, 2, 4, 3, 5, 1});  // [B, gS, gT, pS, pT, D]
  t = reshape(t, {B, gs * gt, cfg.patch_sub * cfg.patch_time *
                                  cfg.in_channels});
  return proj(t);
}

template <class T>
Tensor<T> patch_unembed(const Tensor<T>& tokens, const ModelConfig& cfg,
                        const Linear<T>& proj) {
  const std::size_t B = tokens.shape()[0];
  auto [gs, gt] = cfg.base_grid();
  auto t = proj(tokens);  // [B, N, pS*pT*D]
  t = reshape(t, {B, gs, gt, cfg.patch_sub, cfg.patch_time, cfg.in_channels});
  t = permute(t, {0, 5, 1, 3, 2, 4});  // [B, D, gS, pS, gT, pT]
  return reshape(t, {B, cfg.in_channels, cfg.subcarriers, cfg.timeslots});
}

// Concatenates each 2x2 token neighborhood (4C) and projects back to C, so
// the token count drops 4x while the width stays constant.
template <class T>
Tensor<T> patch_merge(const Tensor<T>& tokens, std::size_t grid_sub,
                      std::size_t grid_time, const Linear<T>& proj) {
  const auto& sh = tokens.shape();
  if (sh.size() != 3 || sh[1] != grid_sub * grid_time)
    throw ShapeError("patch_merge expects [B, gS*gT, C]");
  if (grid_sub % 2 != 0 || grid_time % 2 != 0)
    throw ConfigError("patch_merge needs even grid extents");
  const std::size_t B = sh[0], C = sh[2];
  auto t = reshape(tokens, {B, grid_sub / 2, 2, grid_time / 2, 2, C});
  t = permute(t, {0, 1, 3, 2, 4, 5});
  t = reshape(t, {B, (grid_sub / 2) * (grid_time / 2), 4 * C});
  return proj(t);
}

// Exact shape-inverse of patch_merge: C -> 4C, then the four chunks fan out
// onto the 2x2 upsampled neighborhood.
template <class T>
Tensor<T> patch_split(const Tensor<T>& tokens, std::size_t grid_sub,
                      std::size_t grid_time, const Linear<T>& proj) {
  const auto& sh = tokens.shape();
  if (sh.size() != 3 || sh[1] != grid_sub * grid_time)
    throw ShapeError("patch_split expects [B, gS*gT, C]");
  const std::size_t B = sh[0];
  auto t = proj(tokens);  // [B, N, 4C]
  const std::size_t C = t.shape()[2] / 4;
  t = reshape(t, {B, grid_sub, grid_time, 2, 2, C});
  t = permute(t, {0, 1, 3, 2, 4, 5});
  return reshape(t, {B, 4 * grid_sub * grid_time, C});
}

// ---------------------------------------------------------------------------
// The model
// ---------------------------------------------------------------------------

template <class T>
class SwinModel {
 public:
  explicit SwinModel(ModelConfig config, std::uint64_t seed = 1)
      : cfg_(std::move(config)) {
    cfg_.validate();
    digest_ = cfg_.digest();
    for (std::size_t level = 0; level < cfg_.stage_count(); ++level)
      plans_.push_back(make_stage_plan<T>(cfg_, level));

    Rng rng = Rng::seeded(seed);
    const std::size_t C = cfg_.embed_dim;
    const std::size_t patch_elems =
        cfg_.patch_sub * cfg_.patch_time * cfg_.in_channels;
    const std::size_t hidden = cfg_.mlp_ratio * C;

    embed_ = make_linear(rng, patch_elems, C);
    for (std::size_t level = 0; level < cfg_.stage_count(); ++level) {
      std::vector<BlockParams<T>> blocks;
      for (std::size_t b = 0; b < cfg_.depths[level]; ++b)
        blocks.push_back(make_block(rng, level, C, hidden));
      enc_blocks_.push_back(std::move(blocks));
      if (level + 1 < cfg_.stage_count())
        merges_.push_back(make_linear(rng, 4 * C, C));
    }
    for (std::size_t level = 0; level < cfg_.stage_count(); ++level) {
      std::vector<BlockParams<T>> blocks;
      for (std::size_t b = 0; b < cfg_.depths[level]; ++b)
        blocks.push_back(make_block(rng, level, C, hidden));
      dec_blocks_.push_back(std::move(blocks));
      if (level + 1 < cfg_.stage_count())
        splits_.push_back(make_linear(rng, C, 4 * C));
    }
    unembed_ = make_linear(rng, C, patch_elems);
    head_ = make_linear(rng, C, cfg_.n_classes);
  }

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t digest() const { return digest_; }
  const std::vector<StagePlan<T>>& plans() const { return plans_; }

  // --- forward graph paths (differentiable) ---

  Tensor<T> encode_tokens(const Tensor<T>& x) const {
    auto tokens = patch_embed(x, cfg_, embed_);
    for (std::size_t level = 0; level < cfg_.stage_count(); ++level) {
      const auto& plan = plans_[level];
      for (std::size_t b = 0; b < cfg_.depths[level]; ++b)
        tokens = swin_block(tokens, enc_blocks_[level][b], plan, b % 2 == 1,
                            cfg_.head_dim);
      if (level + 1 < cfg_.stage_count())
        tokens =
            patch_merge(tokens, plan.grid_sub, plan.grid_time, merges_[level]);
    }
    return tokens;
  }

  Tensor<T> decode_tokens(const Tensor<T>& latent) const {
    auto tokens = latent;
    for (std::size_t level = cfg_.stage_count(); level-- > 0;) {
      const auto& plan = plans_[level];
      for (std::size_t b = 0; b < cfg_.depths[level]; ++b)
        tokens = swin_block(tokens, dec_blocks_[level][b], plan, b % 2 == 1,
                            cfg_.head_dim);
      if (level > 0) {
        tokens = patch_split(tokens, plan.grid_sub, plan.grid_time,
                             splits_[level - 1]);
      }
    }
    return patch_unembed(tokens, cfg_, unembed_);
  }

  // Mean-pool over latent tokens, then one linear map to class logits.
  Tensor<T> classify_tokens(const Tensor<T>& latent) const {
    return head_(mean(latent, 1));
  }

  // --- inference API over feature images ---

  std::vector<FeatureImage> encode(const Tensor<T>& x,
                                   std::uint32_t first_frame_id = 0) const {
    if (x.shape().at(0) == 0) return {};
    NoGradGuard ng;
    auto tokens = encode_tokens(x);
    return to_feature_images(tokens, first_frame_id);
  }

  std::vector<FeatureImage> to_feature_images(
      const Tensor<T>& latent, std::uint32_t first_frame_id = 0) const {
    auto [gs, gt] = cfg_.final_grid();
    const std::size_t B = latent.shape()[0];
    const std::size_t per = gs * gt * cfg_.embed_dim;
    std::vector<FeatureImage> out(B);
    for (std::size_t b = 0; b < B; ++b) {
      FeatureImage& fi = out[b];
      fi.grid_sub = static_cast<std::uint16_t>(gs);
      fi.grid_time = static_cast<std::uint16_t>(gt);
      fi.dim = static_cast<std::uint16_t>(cfg_.embed_dim);
      fi.frame_id = first_frame_id + static_cast<std::uint32_t>(b);
      fi.config_digest = digest_;
      fi.feats.resize(per);
      for (std::size_t i = 0; i < per; ++i)
        fi.feats[i] = static_cast<float>(latent.values()[b * per + i]);
    }
    return out;
  }

  Tensor<T> latent_from(const std::vector<FeatureImage>& images) const {
    if (images.empty()) throw ShapeError("no feature images");
    auto [gs, gt] = cfg_.final_grid();
    const std::size_t per = gs * gt * cfg_.embed_dim;
    std::vector<T> data(images.size() * per);
    for (std::size_t b = 0; b < images.size(); ++b) {
      const FeatureImage& fi = images[b];
      if (fi.config_digest != digest_)
        throw CheckpointError("feature image digest does not match the model");
      if (fi.grid_sub != gs || fi.grid_time != gt || fi.dim != cfg_.embed_dim)
        throw ShapeError("feature image grid does not match the model");
      for (std::size_t i = 0; i < per; ++i)
        data[b * per + i] = static_cast<T>(fi.feats[i]);
    }
    return Tensor<T>::from({images.size(), gs * gt, cfg_.embed_dim},
                           std::move(data));
  }

  Tensor<T> decode(const std::vector<FeatureImage>& images) const {
    NoGradGuard ng;
    return decode_tokens(latent_from(images));
  }

  Tensor<T> classify(const std::vector<FeatureImage>& images) const {
    NoGradGuard ng;
    return classify_tokens(latent_from(images));
  }

  // --- parameter access ---

  std::vector<std::pair<std::string, Tensor<T>>> named_parameters(
      bool include_head = true) const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    auto lin = [&out](const std::string& name, const Linear<T>& l) {
      out.emplace_back(name + ".weight", l.weight);
      out.emplace_back(name + ".bias", l.bias);
    };
    auto block = [&out, &lin](const std::string& name,
                              const BlockParams<T>& b) {
      out.emplace_back(name + ".norm1.gain", b.norm1_gain);
      out.emplace_back(name + ".norm1.bias", b.norm1_bias);
      out.emplace_back(name + ".attn.qkv.weight", b.attn.qkv_weight);
      out.emplace_back(name + ".attn.qkv.bias", b.attn.qkv_bias);
      out.emplace_back(name + ".attn.proj.weight", b.attn.proj_weight);
      out.emplace_back(name + ".attn.proj.bias", b.attn.proj_bias);
      out.emplace_back(name + ".attn.rel_bias", b.attn.rel_bias);
      out.emplace_back(name + ".norm2.gain", b.norm2_gain);
      out.emplace_back(name + ".norm2.bias", b.norm2_bias);
      lin(name + ".mlp.fc1", b.fc1);
      lin(name + ".mlp.fc2", b.fc2);
    };
    lin("embed", embed_);
    for (std::size_t level = 0; level < cfg_.stage_count(); ++level) {
      for (std::size_t b = 0; b < cfg_.depths[level]; ++b)
        block("enc.stage" + std::to_string(level) + ".block" +
                  std::to_string(b),
              enc_blocks_[level][b]);
      if (level + 1 < cfg_.stage_count())
        lin("enc.merge" + std::to_string(level), merges_[level]);
    }
    for (std::size_t level = cfg_.stage_count(); level-- > 0;) {
      for (std::size_t b = 0; b < cfg_.depths[level]; ++b)
        block("dec.stage" + std::to_string(level) + ".block" +
                  std::to_string(b),
              dec_blocks_[level][b]);
      if (level > 0)
        lin("dec.split" + std::to_string(level - 1), splits_[level - 1]);
    }
    lin("unembed", unembed_);
    if (include_head) lin("head", head_);
    return out;
  }

  std::vector<Tensor<T>> autoencoder_parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named_parameters(false)) out.push_back(t);
    return out;
  }

  std::vector<Tensor<T>> classifier_parameters() const {
    return {head_.weight, head_.bias};
  }

  // Direct handles for tests that construct specific weights.
  Linear<T>& embed_layer() { return embed_; }
  Linear<T>& unembed_layer() { return unembed_; }
  Linear<T>& head_layer() { return head_; }
  std::vector<Linear<T>>& merge_layers() { return merges_; }
  std::vector<Linear<T>>& split_layers() { return splits_; }
  std::vector<std::vector<BlockParams<T>>>& encoder_blocks() {
    return enc_blocks_;
  }
  std::vector<std::vector<BlockParams<T>>>& decoder_blocks() {
    return dec_blocks_;
  }

 private:
  Tensor<T> make_weight(Rng& rng, Shape shape) {
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(rng.truncated_normal(0.02));
    auto t = Tensor<T>::from(std::move(shape), std::move(data));
    t.set_requires_grad(true);
    return t;
  }

  Tensor<T> make_zeros(Shape shape) {
    auto t = Tensor<T>::zeros(std::move(shape));
    t.set_requires_grad(true);
    return t;
  }

  Tensor<T> make_ones(Shape shape) {
    auto t = Tensor<T>::full(std::move(shape), T(1));
    t.set_requires_grad(true);
    return t;
  }

  Linear<T> make_linear(Rng& rng, std::size_t in, std::size_t out) {
    return {make_weight(rng, {in, out}), make_zeros({out})};
  }

  BlockParams<T> make_block(Rng& rng, std::size_t level, std::size_t C,
                            std::size_t hidden) {
    const auto& plan = plans_[level];
    BlockParams<T> b;
    b.norm1_gain = make_ones({C});
    b.norm1_bias = make_zeros({C});
    b.attn.qkv_weight = make_weight(rng, {C, 3 * C});
    b.attn.qkv_bias = make_zeros({3 * C});
    b.attn.proj_weight = make_weight(rng, {C, C});
    b.attn.proj_bias = make_zeros({C});
    b.attn.rel_bias =
        make_weight(rng, {plan.bias_rows(), C / cfg_.head_dim});
    b.norm2_gain = make_ones({C});
    b.norm2_bias = make_zeros({C});
    b.fc1 = make_linear(rng, C, hidden);
    b.fc2 = make_linear(rng, hidden, C);
    return b;
  }

  ModelConfig cfg_;
  std::uint64_t digest_ = 0;
  std::vector<StagePlan<T>> plans_;
  Linear<T> embed_;
  std::vector<std::vector<BlockParams<T>>> enc_blocks_;
  std::vector<Linear<T>> merges_;
  std::vector<std::vector<BlockParams<T>>> dec_blocks_;
  std::vector<Linear<T>> splits_;
  Linear<T> unembed_;
  Linear<T> head_;
};

// ---------------------------------------------------------------------------
// Losses / metrics
// ---------------------------------------------------------------------------

// Linear-ratio NMSE: sum||x - x_hat||^2 / sum||x||^2.  The reference is
// treated as data, so gradients flow only through the reconstruction.
template <class T>
Tensor<T> nmse_ratio(const Tensor<T>& reference, const Tensor<T>& recon) {
  if (reference.shape() != recon.shape())
    throw ShapeError("nmse: shapes differ");
  double energy = 0.0;
  for (const T& v : reference.values())
    energy += static_cast<double>(v) * static_cast<double>(v);
  if (energy <= 0.0)
    throw NumericError("nmse: zero-energy reference");
  return scale(sum_squares(sub(recon, reference)), 1.0 / energy);
}

inline double nmse_db_from_ratio(double ratio) {
  if (ratio <= 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(ratio);
}

template <class T>
double nmse_db(const Tensor<T>& reference, const Tensor<T>& recon) {
  NoGradGuard ng;
  return nmse_db_from_ratio(
      static_cast<double>(nmse_ratio(reference, recon).item()));
}

}  // namespace swinfi
