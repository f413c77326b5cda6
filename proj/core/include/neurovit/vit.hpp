#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "neurovit/ops.hpp"
#include "neurovit/rng.hpp"
#include "neurovit/tensor.hpp"
#include "neurovit/volume.hpp"

namespace neurovit {

enum class ModelKind { TwoD, ThreeD };

/// Hyperparameters of the 2D and 3D ViT segmenters. The 3D model embeds a
/// whole block of `depth` slices per spatial patch, so both kinds share the
/// same token grid and encoder shapes.
struct VitConfig {
  ModelKind kind = ModelKind::ThreeD;
  int img_h = 100;
  int img_w = 100;
  int patch = 10;
  int depth = 5;  // block depth D; ignored (treated as 1) for TwoD
  int in_channels = 1;
  int embed_dim = 192;
  int layers = 4;
  int heads = 3;
  int mlp_ratio = 4;

  int input_depth() const noexcept { return kind == ModelKind::TwoD ? 1 : depth; }
  int grid_h() const noexcept { return img_h / patch; }
  int grid_w() const noexcept { return img_w / patch; }
  int tokens() const noexcept { return grid_h() * grid_w(); }
  int patch_len() const noexcept { return in_channels * input_depth() * patch * patch; }
  int decoder_len() const noexcept { return patch * patch * input_depth(); }
  int mlp_dim() const noexcept { return embed_dim * mlp_ratio; }
  /// Block geometry the model consumes (x, y, z).
  Dims3 block_dims() const noexcept { return {img_w, img_h, input_depth()}; }
  /// [e, C, p, p] for TwoD, [e, C, D, p, p] for ThreeD.
  Shape patch_embed_shape() const;

  /// Throws BadConfig / BadHeadCount on inconsistent settings.
  void validate() const;

  friend bool operator==(const VitConfig&, const VitConfig&) = default;
};

template <class T>
struct BasicLayerParams {
  BasicTensor<T> ln1_g, ln1_b;
  BasicTensor<T> wqkv, bqkv, wo, bo;
  BasicTensor<T> ln2_g, ln2_b;
  BasicTensor<T> w1, b1, w2, b2;
};

/// Full parameter set. `for_each` visits tensors with their canonical names
/// in a fixed order; archives, optimizers and gradient checks rely on it.
template <class T>
struct BasicVitParams {
  BasicTensor<T> patch_w, patch_b;
  BasicTensor<T> cls, pos;
  std::vector<BasicLayerParams<T>> blocks;
  BasicTensor<T> final_g, final_b;
  BasicTensor<T> dec_w, dec_b;

  template <class F>
  void for_each(F&& fn) {
    visit(*this, fn);
  }
  template <class F>
  void for_each(F&& fn) const {
    visit(*this, fn);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const BasicTensor<T>& t) { n += t.size(); });
    return n;
  }

  template <class U>
  BasicVitParams<U> cast() const {
    BasicVitParams<U> out;
    out.blocks.resize(blocks.size());
    auto dst = out.flat_tensors();
    std::size_t i = 0;
    for_each([&](const std::string&, const BasicTensor<T>& t) { *dst[i++] = t.template cast<U>(); });
    return out;
  }

  /// Pointers to every tensor in visiting order.
  std::vector<BasicTensor<T>*> flat_tensors() {
    std::vector<BasicTensor<T>*> out;
    for_each([&](const std::string&, BasicTensor<T>& t) { out.push_back(&t); });
    return out;
  }

  /// Same shapes, all zeros (gradient accumulators).
  BasicVitParams zeros_like() const {
    BasicVitParams out = *this;
    out.for_each([](const std::string&, BasicTensor<T>& t) { std::fill(t.values().begin(), t.values().end(), T(0)); });
    return out;
  }

  friend bool operator==(const BasicVitParams& a, const BasicVitParams& b) {
    if (a.blocks.size() != b.blocks.size()) return false;
    std::vector<const BasicTensor<T>*> ta, tb;
    a.for_each([&](const std::string&, const BasicTensor<T>& t) { ta.push_back(&t); });
    b.for_each([&](const std::string&, const BasicTensor<T>& t) { tb.push_back(&t); });
    for (std::size_t i = 0; i < ta.size(); ++i)
      if (!(*ta[i] == *tb[i])) return false;
    return true;
  }

 private:
  template <class Self, class F>
  static void visit(Self& p, F& fn) {
    fn(std::string("patch_embed.w"), p.patch_w);
    fn(std::string("patch_embed.b"), p.patch_b);
    fn(std::string("cls"), p.cls);
    fn(std::string("pos"), p.pos);
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
      const std::string pre = "blocks." + std::to_string(i) + ".";
      auto& b = p.blocks[i];
      fn(pre + "ln1.g", b.ln1_g);
      fn(pre + "ln1.b", b.ln1_b);
      fn(pre + "attn.wqkv", b.wqkv);
      fn(pre + "attn.bqkv", b.bqkv);
      fn(pre + "attn.wo", b.wo);
      fn(pre + "attn.bo", b.bo);
      fn(pre + "ln2.g", b.ln2_g);
      fn(pre + "ln2.b", b.ln2_b);
      fn(pre + "mlp.w1", b.w1);
      fn(pre + "mlp.b1", b.b1);
      fn(pre + "mlp.w2", b.w2);
      fn(pre + "mlp.b2", b.b2);
    }
    fn(std::string("final_ln.g"), p.final_g);
    fn(std::string("final_ln.b"), p.final_b);
    fn(std::string("decoder.w"), p.dec_w);
    fn(std::string("decoder.b"), p.dec_b);
  }
};

using LayerParams = BasicLayerParams<float>;
using VitParams = BasicVitParams<float>;

/// Canonical tensor names and shapes a config expects, in visiting order.
std::vector<std::pair<std::string, Shape>> expected_tensors(const VitConfig& cfg);

/// ViT-style initialization: truncated normal (sigma 0.02) weights, cls and
/// pos; zero biases; unit layer-norm gains.
VitParams init_params(const VitConfig& cfg, Rng& rng);

/// Throws ShapeMismatch if any tensor disagrees with `cfg`.
template <class T>
void check_params(const BasicVitParams<T>& params, const VitConfig& cfg);

// ---- forward pieces --------------------------------------------------------

/// Non-overlapping patch convolution, stride p: image [C, H, W],
/// w [e, C, p, p], b [e] -> tokens [N, e], N = (H/p)(W/p).
template <class T>
BasicTensor<T> patch_embed_2d(const BasicTensor<T>& image, const BasicTensor<T>& w, const BasicTensor<T>& b);

/// Block [C, D, H, W] with kernel depth D: w [e, C, D, p, p] -> [N, e].
template <class T>
BasicTensor<T> patch_embed_3d(const BasicTensor<T>& block, const BasicTensor<T>& w, const BasicTensor<T>& b);

/// Patches of a [C, D, H, W] input as rows of length C*D*p*p; row order is
/// the token grid (row-major), column order (c, d, i, j).
template <class T>
BasicTensor<T> unfold_patches(std::span<const T> input, int channels, int depth, int height, int width, int patch);

/// Prepends cls, adds pos, runs the pre-LN encoder blocks and the final LN.
template <class T>
BasicTensor<T> encode(const BasicTensor<T>& tokens, const BasicVitParams<T>& params, const VitConfig& cfg);

/// Drops the cls row and maps each token to its (D, p, p) output patch.
template <class T>
BasicTensor<T> decode_linear(const BasicTensor<T>& encoded, const BasicVitParams<T>& params, const VitConfig& cfg);

/// image [C, H, W] -> logits [1, H, W]. Sigmoid is left to callers.
template <class T>
BasicTensor<T> forward_2d(const BasicVitParams<T>& params, const VitConfig& cfg, const BasicTensor<T>& image);

/// block [C, D, H, W] -> logits [D, H, W].
template <class T>
BasicTensor<T> forward_3d(const BasicVitParams<T>& params, const VitConfig& cfg, const BasicTensor<T>& block);

/// Dispatches on cfg.kind; `input` holds C * input_depth * H * W values.
template <class T>
BasicTensor<T> forward(const BasicVitParams<T>& params, const VitConfig& cfg, std::span<const T> input);

// ---- training path -----------------------------------------------------------

template <class T>
struct LayerTrace {
  BasicTensor<T> x_in;
  LayerNormCache<T> ln1;
  BasicTensor<T> a;  // LN1 output
  AttentionCache<T> attn;
  BasicTensor<T> x_mid;
  LayerNormCache<T> ln2;
  BasicTensor<T> b;       // LN2 output
  BasicTensor<T> h_pre;   // before GELU
  BasicTensor<T> h_act;   // after GELU
};

/// Activations kept by the training forward pass for backward.
template <class T>
struct ForwardTrace {
  BasicTensor<T> patches;
  std::vector<LayerTrace<T>> layers;
  LayerNormCache<T> final_ln;
  BasicTensor<T> token_features;  // encoded rows 1..N
};

template <class T>
BasicTensor<T> forward_train(const BasicVitParams<T>& params, const VitConfig& cfg, std::span<const T> input,
                             ForwardTrace<T>& trace);

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits).
template <class T>
void backward(const BasicVitParams<T>& params, const VitConfig& cfg, const ForwardTrace<T>& trace,
              const BasicTensor<T>& dlogits, BasicVitParams<T>& grads);

// ---- positional embedding resampling ---------------------------------------

/// Bilinear (half-pixel centers, edge clamped) resampling of the spatial
/// rows of a [1 + g*g, e] positional table to a new square grid; the cls
/// row is copied. Throws NonSquareGrid if the row count is not 1 + g*g.
Tensor interpolate_pos_embed(const Tensor& pos, int old_grid, int new_grid);

}  // namespace neurovit
