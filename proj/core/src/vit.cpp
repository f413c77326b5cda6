#include "neurovit/vit.hpp"

#include <algorithm>
#include <cmath>

namespace neurovit {

namespace {

template <class T>
void require_shape(const BasicTensor<T>& t, const Shape& want, const std::string& name) {
  if (t.shape() != want) {
    throw Error(Errc::ShapeMismatch, name + " has shape " + shape_string(t.shape()) + ", expected " + shape_string(want));
  }
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// tokens[n][o] = (sum_k patches[n][k] * w[o][k]) + b[o], k ascending.
template <class T>
BasicTensor<T> embed_patches(const BasicTensor<T>& patches, std::span<const T> w, std::span<const T> b, int embed) {
  const int n = patches.dim(0), k = patches.dim(1);
  BasicTensor<T> out({n, embed});
  for (int t = 0; t < n; ++t) {
    const T* row = patches.data().data() + static_cast<std::size_t>(t) * k;
    for (int o = 0; o < embed; ++o) {
      const T* wrow = w.data() + static_cast<std::size_t>(o) * k;
      T acc = T(0);
      for (int c = 0; c < k; ++c) acc += row[c] * wrow[c];
      out.at(t, o) = acc + b[static_cast<std::size_t>(o)];
    }
  }
  return out;
}

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  BasicTensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

template <class T>
void accumulate(BasicTensor<T>& dst, const BasicTensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <class T>
BasicTensor<T> encode_impl(const BasicTensor<T>& tokens, const BasicVitParams<T>& p, const VitConfig& cfg,
                           ForwardTrace<T>* trace) {
  const int n = tokens.dim(0), e = cfg.embed_dim;
  if (tokens.rank() != 2 || tokens.dim(1) != e || n + 1 != p.pos.dim(0)) {
    throw Error(Errc::ShapeMismatch, "encode: tokens " + shape_string(tokens.shape()) + " do not fit pos table " +
                                         shape_string(p.pos.shape()));
  }
  BasicTensor<T> x({n + 1, e});
  for (int j = 0; j < e; ++j) x.at(0, j) = p.cls[static_cast<std::size_t>(j)] + p.pos.at(0, j);
  for (int t = 0; t < n; ++t)
    for (int j = 0; j < e; ++j) x.at(t + 1, j) = tokens.at(t, j) + p.pos.at(t + 1, j);

  if (trace) trace->layers.resize(p.blocks.size());
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    const auto& blk = p.blocks[l];
    auto ln1 = layer_norm(x, blk.ln1_g, blk.ln1_b);
    auto attn = multi_head_attention(ln1.y, AttentionWeights<T>{blk.wqkv, blk.bqkv, blk.wo, blk.bo}, cfg.heads);
    BasicTensor<T> x_mid = add(x, attn.y);
    auto ln2 = layer_norm(x_mid, blk.ln2_g, blk.ln2_b);
    BasicTensor<T> h_pre = linear(ln2.y, blk.w1, blk.b1);
    BasicTensor<T> h_act = gelu(h_pre);
    BasicTensor<T> x_out = add(x_mid, linear(h_act, blk.w2, blk.b2));
    if (trace) {
      auto& lt = trace->layers[l];
      lt.x_in = std::move(x);
      lt.ln1 = std::move(ln1.cache);
      lt.a = std::move(ln1.y);
      lt.attn = std::move(attn.cache);
      lt.x_mid = std::move(x_mid);
      lt.ln2 = std::move(ln2.cache);
      lt.b = std::move(ln2.y);
      lt.h_pre = std::move(h_pre);
      lt.h_act = std::move(h_act);
    }
    x = std::move(x_out);
  }
  auto fin = layer_norm(x, p.final_g, p.final_b);
  if (trace) trace->final_ln = std::move(fin.cache);
  debug_check_finite(fin.y, "encoder output");
  return std::move(fin.y);
}

template <class T>
BasicTensor<T> decode_features(const BasicTensor<T>& features, const BasicVitParams<T>& p, const VitConfig& cfg) {
  const int P = cfg.patch, D = cfg.input_depth();
  const BasicTensor<T> y = linear(features, p.dec_w, p.dec_b);  // [N, D*p*p]
  BasicTensor<T> logits({D, cfg.img_h, cfg.img_w});
  const int gw = cfg.grid_w();
  for (int t = 0; t < features.dim(0); ++t) {
    const int gi = t / gw, gj = t % gw;
    for (int d = 0; d < D; ++d)
      for (int i = 0; i < P; ++i)
        for (int j = 0; j < P; ++j) {
          const std::size_t dst =
              (static_cast<std::size_t>(d) * cfg.img_h + gi * P + i) * cfg.img_w + static_cast<std::size_t>(gj * P + j);
          logits[dst] = y.at(t, (d * P + i) * P + j);
        }
  }
  return logits;
}

template <class T>
BasicTensor<T> drop_cls(const BasicTensor<T>& encoded) {
  const int n = encoded.dim(0) - 1, e = encoded.dim(1);
  std::vector<T> rows(encoded.data().begin() + e, encoded.data().end());
  return BasicTensor<T>({n, e}, std::move(rows));
}

template <class T>
void check_input_len(std::span<const T> input, const VitConfig& cfg) {
  const std::size_t want = static_cast<std::size_t>(cfg.in_channels) * cfg.input_depth() * cfg.img_h * cfg.img_w;
  if (input.size() != want) {
    throw Error(Errc::ShapeMismatch,
                "model input has " + std::to_string(input.size()) + " values, expected " + std::to_string(want));
  }
}

}  // namespace

// ---- config ------------------------------------------------------------------

Shape VitConfig::patch_embed_shape() const {
  if (kind == ModelKind::TwoD) return {embed_dim, in_channels, patch, patch};
  return {embed_dim, in_channels, depth, patch, patch};
}

void VitConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(Errc::BadConfig, "vit config: " + what); };
  if (img_h <= 0 || img_w <= 0 || patch <= 0) bad("image and patch sizes must be positive");
  if (img_h % patch != 0 || img_w % patch != 0) bad("image size must be divisible by the patch size");
  if (depth < 1) bad("block depth must be >= 1");
  if (in_channels < 1) bad("in_channels must be >= 1");
  if (embed_dim < 1 || layers < 0 || mlp_ratio < 1) bad("embed_dim, layers and mlp_ratio must be positive");
  if (heads < 1 || embed_dim % heads != 0) {
    throw Error(Errc::BadHeadCount, "embed_dim " + std::to_string(embed_dim) + " is not divisible by " +
                                        std::to_string(heads) + " heads");
  }
}

std::vector<std::pair<std::string, Shape>> expected_tensors(const VitConfig& cfg) {
  const int e = cfg.embed_dim;
  std::vector<std::pair<std::string, Shape>> out{
      {"patch_embed.w", cfg.patch_embed_shape()},
      {"patch_embed.b", {e}},
      {"cls", {1, e}},
      {"pos", {1 + cfg.tokens(), e}},
  };
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string pre = "blocks." + std::to_string(l) + ".";
    out.push_back({pre + "ln1.g", {e}});
    out.push_back({pre + "ln1.b", {e}});
    out.push_back({pre + "attn.wqkv", {e, 3 * e}});
    out.push_back({pre + "attn.bqkv", {3 * e}});
    out.push_back({pre + "attn.wo", {e, e}});
    out.push_back({pre + "attn.bo", {e}});
    out.push_back({pre + "ln2.g", {e}});
    out.push_back({pre + "ln2.b", {e}});
    out.push_back({pre + "mlp.w1", {e, cfg.mlp_dim()}});
    out.push_back({pre + "mlp.b1", {cfg.mlp_dim()}});
    out.push_back({pre + "mlp.w2", {cfg.mlp_dim(), e}});
    out.push_back({pre + "mlp.b2", {e}});
  }
  out.push_back({"final_ln.g", {e}});
  out.push_back({"final_ln.b", {e}});
  out.push_back({"decoder.w", {e, cfg.decoder_len()}});
  out.push_back({"decoder.b", {cfg.decoder_len()}});
  return out;
}

VitParams init_params(const VitConfig& cfg, Rng& rng) {
  cfg.validate();
  VitParams p;
  p.blocks.resize(static_cast<std::size_t>(cfg.layers));
  const auto expected = expected_tensors(cfg);
  auto tensors = p.flat_tensors();
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& [name, shape] = expected[i];
    Tensor t(shape, 0.0f);
    if (ends_with(name, "ln1.g") || ends_with(name, "ln2.g") || name == "final_ln.g") {
      std::fill(t.values().begin(), t.values().end(), 1.0f);
    } else if (shape.size() >= 2) {  // weights, cls and pos; biases stay zero
      for (auto& v : t.values()) v = static_cast<float>(rng.truncated_normal(0.02));
    }
    *tensors[i] = std::move(t);
  }
  return p;
}

template <class T>
void check_params(const BasicVitParams<T>& params, const VitConfig& cfg) {
  if (static_cast<int>(params.blocks.size()) != cfg.layers) {
    throw Error(Errc::ShapeMismatch, "params have " + std::to_string(params.blocks.size()) + " layers, config expects " +
                                         std::to_string(cfg.layers));
  }
  const auto expected = expected_tensors(cfg);
  std::size_t i = 0;
  params.for_each([&](const std::string& name, const BasicTensor<T>& t) { require_shape(t, expected[i++].second, name); });
}

// ---- forward pieces --------------------------------------------------------

template <class T>
BasicTensor<T> unfold_patches(std::span<const T> input, int channels, int depth, int height, int width, int patch) {
  if (patch <= 0 || height % patch != 0 || width % patch != 0) {
    throw Error(Errc::ShapeMismatch, "input " + std::to_string(height) + "x" + std::to_string(width) +
                                         " is not divisible by patch " + std::to_string(patch));
  }
  if (input.size() != static_cast<std::size_t>(channels) * depth * height * width) {
    throw Error(Errc::ShapeMismatch, "unfold: input length does not match its dimensions");
  }
  const int gh = height / patch, gw = width / patch;
  const int k = channels * depth * patch * patch;
  BasicTensor<T> out({gh * gw, k});
  T* dst = out.data().data();
  for (int gi = 0; gi < gh; ++gi)
    for (int gj = 0; gj < gw; ++gj)
      for (int c = 0; c < channels; ++c)
        for (int d = 0; d < depth; ++d)
          for (int i = 0; i < patch; ++i) {
            const std::size_t src = ((static_cast<std::size_t>(c) * depth + d) * height + gi * patch + i) * width +
                                    static_cast<std::size_t>(gj) * patch;
            for (int j = 0; j < patch; ++j) *dst++ = input[src + static_cast<std::size_t>(j)];
          }
  return out;
}

template <class T>
BasicTensor<T> patch_embed_2d(const BasicTensor<T>& image, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  if (image.rank() != 3 || w.rank() != 4 || w.dim(1) != image.dim(0) || w.dim(2) != w.dim(3) ||
      static_cast<int>(b.size()) != w.dim(0)) {
    throw Error(Errc::ShapeMismatch, "patch_embed_2d: image " + shape_string(image.shape()) + " vs kernel " +
                                         shape_string(w.shape()));
  }
  const auto patches = unfold_patches<T>(image.data(), image.dim(0), 1, image.dim(1), image.dim(2), w.dim(2));
  return embed_patches(patches, w.data(), b.data(), w.dim(0));
}

template <class T>
BasicTensor<T> patch_embed_3d(const BasicTensor<T>& block, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  if (block.rank() != 4 || w.rank() != 5 || w.dim(1) != block.dim(0) || w.dim(2) != block.dim(1) ||
      w.dim(3) != w.dim(4) || static_cast<int>(b.size()) != w.dim(0)) {
    throw Error(Errc::ShapeMismatch, "patch_embed_3d: block " + shape_string(block.shape()) + " vs kernel " +
                                         shape_string(w.shape()));
  }
  const auto patches =
      unfold_patches<T>(block.data(), block.dim(0), block.dim(1), block.dim(2), block.dim(3), w.dim(3));
  return embed_patches(patches, w.data(), b.data(), w.dim(0));
}

template <class T>
BasicTensor<T> encode(const BasicTensor<T>& tokens, const BasicVitParams<T>& params, const VitConfig& cfg) {
  return encode_impl<T>(tokens, params, cfg, nullptr);
}

template <class T>
BasicTensor<T> decode_linear(const BasicTensor<T>& encoded, const BasicVitParams<T>& params, const VitConfig& cfg) {
  if (encoded.rank() != 2 || encoded.dim(0) != cfg.tokens() + 1 || encoded.dim(1) != cfg.embed_dim) {
    throw Error(Errc::ShapeMismatch, "decode: encoded shape " + shape_string(encoded.shape()) + " does not match config");
  }
  return decode_features(drop_cls(encoded), params, cfg);
}

template <class T>
BasicTensor<T> forward(const BasicVitParams<T>& params, const VitConfig& cfg, std::span<const T> input) {
  check_input_len(input, cfg);
  const auto patches = unfold_patches<T>(input, cfg.in_channels, cfg.input_depth(), cfg.img_h, cfg.img_w, cfg.patch);
  const auto tokens = embed_patches(patches, params.patch_w.data(), params.patch_b.data(), cfg.embed_dim);
  return decode_linear(encode_impl<T>(tokens, params, cfg, nullptr), params, cfg);
}

template <class T>
BasicTensor<T> forward_2d(const BasicVitParams<T>& params, const VitConfig& cfg, const BasicTensor<T>& image) {
  if (cfg.kind != ModelKind::TwoD) throw Error(Errc::ShapeMismatch, "forward_2d needs a 2D config");
  check_params(params, cfg);
  require_shape(image, {cfg.in_channels, cfg.img_h, cfg.img_w}, "forward_2d input");
  return forward<T>(params, cfg, image.data());
}

template <class T>
BasicTensor<T> forward_3d(const BasicVitParams<T>& params, const VitConfig& cfg, const BasicTensor<T>& block) {
  if (cfg.kind != ModelKind::ThreeD) throw Error(Errc::ShapeMismatch, "forward_3d needs a 3D config");
  check_params(params, cfg);
  require_shape(block, {cfg.in_channels, cfg.depth, cfg.img_h, cfg.img_w}, "forward_3d input");
  return forward<T>(params, cfg, block.data());
}

// ---- training path -----------------------------------------------------------

template <class T>
BasicTensor<T> forward_train(const BasicVitParams<T>& params, const VitConfig& cfg, std::span<const T> input,
                             ForwardTrace<T>& trace) {
  check_input_len(input, cfg);
  trace.patches = unfold_patches<T>(input, cfg.in_channels, cfg.input_depth(), cfg.img_h, cfg.img_w, cfg.patch);
  const auto tokens = embed_patches(trace.patches, params.patch_w.data(), params.patch_b.data(), cfg.embed_dim);
  trace.token_features = drop_cls(encode_impl<T>(tokens, params, cfg, &trace));
  return decode_features(trace.token_features, params, cfg);
}

template <class T>
void backward(const BasicVitParams<T>& p, const VitConfig& cfg, const ForwardTrace<T>& trace,
              const BasicTensor<T>& dlogits, BasicVitParams<T>& g) {
  const int P = cfg.patch, D = cfg.input_depth(), e = cfg.embed_dim;
  const int n = cfg.tokens(), gw = cfg.grid_w();
  if (dlogits.size() != static_cast<std::size_t>(D) * cfg.img_h * cfg.img_w) {
    throw Error(Errc::ShapeMismatch, "backward: logit gradient has the wrong size");
  }

  // Decoder: gather the per-token output gradient.
  BasicTensor<T> dy({n, cfg.decoder_len()});
  for (int t = 0; t < n; ++t) {
    const int gi = t / gw, gj = t % gw;
    for (int d = 0; d < D; ++d)
      for (int i = 0; i < P; ++i)
        for (int j = 0; j < P; ++j) {
          const std::size_t src =
              (static_cast<std::size_t>(d) * cfg.img_h + gi * P + i) * cfg.img_w + static_cast<std::size_t>(gj * P + j);
          dy.at(t, (d * P + i) * P + j) = dlogits[src];
        }
  }
  auto dec = linear_backward(trace.token_features, p.dec_w, dy);
  accumulate(g.dec_w, dec.dw);
  accumulate(g.dec_b, dec.db);

  BasicTensor<T> dx({n + 1, e});
  for (int t = 0; t < n; ++t)
    for (int j = 0; j < e; ++j) dx.at(t + 1, j) = dec.dx.at(t, j);

  auto fin = layer_norm_backward(trace.final_ln, p.final_g, dx);
  accumulate(g.final_g, fin.dgamma);
  accumulate(g.final_b, fin.dbeta);
  dx = std::move(fin.dx);

  for (std::size_t l = p.blocks.size(); l-- > 0;) {
    const auto& blk = p.blocks[l];
    auto& gb = g.blocks[l];
    const auto& lt = trace.layers[l];

    // x_out = x_mid + W2 gelu(W1 LN2(x_mid) + b1) + b2
    auto mlp2 = linear_backward(lt.h_act, blk.w2, dx);
    accumulate(gb.w2, mlp2.dw);
    accumulate(gb.b2, mlp2.db);
    const auto dh = gelu_backward(lt.h_pre, mlp2.dx);
    auto mlp1 = linear_backward(lt.b, blk.w1, dh);
    accumulate(gb.w1, mlp1.dw);
    accumulate(gb.b1, mlp1.db);
    auto ln2 = layer_norm_backward(lt.ln2, blk.ln2_g, mlp1.dx);
    accumulate(gb.ln2_g, ln2.dgamma);
    accumulate(gb.ln2_b, ln2.dbeta);
    accumulate(dx, ln2.dx);  // dx is now d(loss)/d(x_mid)

    // x_mid = x_in + MHSA(LN1(x_in))
    const AttentionWeights<T> aw{blk.wqkv, blk.bqkv, blk.wo, blk.bo};
    auto at = multi_head_attention_backward(lt.a, aw, cfg.heads, lt.attn, dx);
    accumulate(gb.wqkv, at.dwqkv);
    accumulate(gb.bqkv, at.dbqkv);
    accumulate(gb.wo, at.dwo);
    accumulate(gb.bo, at.dbo);
    auto ln1 = layer_norm_backward(lt.ln1, blk.ln1_g, at.dx);
    accumulate(gb.ln1_g, ln1.dgamma);
    accumulate(gb.ln1_b, ln1.dbeta);
    accumulate(dx, ln1.dx);
  }

  accumulate(g.pos, dx);
  for (int j = 0; j < e; ++j) g.cls[static_cast<std::size_t>(j)] += dx.at(0, j);

  // Patch embedding: dW[o][k] += sum_t dtok[t][o] * patches[t][k].
  const int k = trace.patches.dim(1);
  for (int t = 0; t < n; ++t) {
    const T* prow = trace.patches.data().data() + static_cast<std::size_t>(t) * k;
    for (int o = 0; o < e; ++o) {
      const T d = dx.at(t + 1, o);
      g.patch_b[static_cast<std::size_t>(o)] += d;
      T* wrow = g.patch_w.data().data() + static_cast<std::size_t>(o) * k;
      for (int c = 0; c < k; ++c) wrow[c] += d * prow[c];
    }
  }
}

// ---- positional embedding resampling ---------------------------------------

Tensor interpolate_pos_embed(const Tensor& pos, int old_grid, int new_grid) {
  if (pos.rank() != 2 || old_grid < 1 || new_grid < 1 || pos.dim(0) != 1 + old_grid * old_grid) {
    throw Error(Errc::NonSquareGrid, "pos table " + shape_string(pos.shape()) + " is not 1 + " +
                                         std::to_string(old_grid) + "^2 rows");
  }
  const int e = pos.dim(1);
  if (old_grid == new_grid) return pos;
  Tensor out({1 + new_grid * new_grid, e});
  for (int j = 0; j < e; ++j) out.at(0, j) = pos.at(0, j);
  const double scale = static_cast<double>(old_grid) / new_grid;
  auto src_coord = [&](int i, int& i0, int& i1, float& frac) {
    const double s = std::clamp((i + 0.5) * scale - 0.5, 0.0, static_cast<double>(old_grid - 1));
    i0 = static_cast<int>(std::floor(s));
    i1 = std::min(i0 + 1, old_grid - 1);
    frac = static_cast<float>(s - i0);
  };
  for (int y = 0; y < new_grid; ++y) {
    int y0, y1;
    float fy;
    src_coord(y, y0, y1, fy);
    for (int x = 0; x < new_grid; ++x) {
      int x0, x1;
      float fx;
      src_coord(x, x0, x1, fx);
      for (int j = 0; j < e; ++j) {
        const float v00 = pos.at(1 + y0 * old_grid + x0, j), v01 = pos.at(1 + y0 * old_grid + x1, j);
        const float v10 = pos.at(1 + y1 * old_grid + x0, j), v11 = pos.at(1 + y1 * old_grid + x1, j);
        const float top = v00 + fx * (v01 - v00);
        const float bot = v10 + fx * (v11 - v10);
        out.at(1 + y * new_grid + x, j) = top + fy * (bot - top);
      }
    }
  }
  return out;
}

// ---- explicit instantiations ------------------------------------------------

#define NEUROVIT_INSTANTIATE(T)                                                                                       \
  template void check_params<T>(const BasicVitParams<T>&, const VitConfig&);                                        \
  template BasicTensor<T> unfold_patches<T>(std::span<const T>, int, int, int, int, int);                           \
  template BasicTensor<T> patch_embed_2d<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);  \
  template BasicTensor<T> patch_embed_3d<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);  \
  template BasicTensor<T> encode<T>(const BasicTensor<T>&, const BasicVitParams<T>&, const VitConfig&);             \
  template BasicTensor<T> decode_linear<T>(const BasicTensor<T>&, const BasicVitParams<T>&, const VitConfig&);      \
  template BasicTensor<T> forward<T>(const BasicVitParams<T>&, const VitConfig&, std::span<const T>);               \
  template BasicTensor<T> forward_2d<T>(const BasicVitParams<T>&, const VitConfig&, const BasicTensor<T>&);         \
  template BasicTensor<T> forward_3d<T>(const BasicVitParams<T>&, const VitConfig&, const BasicTensor<T>&);         \
  template BasicTensor<T> forward_train<T>(const BasicVitParams<T>&, const VitConfig&, std::span<const T>,          \
                                           ForwardTrace<T>&);                                                       \
  template void backward<T>(const BasicVitParams<T>&, const VitConfig&, const ForwardTrace<T>&,                     \
                            const BasicTensor<T>&, BasicVitParams<T>&);

NEUROVIT_INSTANTIATE(float)
NEUROVIT_INSTANTIATE(double)

#undef NEUROVIT_INSTANTIATE

}  // namespace neurovit
