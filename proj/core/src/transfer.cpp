#include "neurovit/transfer.hpp"

#include <cmath>

namespace neurovit {
namespace {

const Tensor& fetch(const WeightArchive& src, const std::string& name, const Shape& want) {
  const Tensor& t = src.get(name);
  if (t.shape() != want) {
    throw Error(Errc::DimMismatch,
                "source tensor '" + name + "' has shape " + shape_string(t.shape()) + ", target needs " + shape_string(want));
  }
  return t;
}

int count_layers(const WeightArchive& src) {
  int n = 0;
  while (src.contains("blocks." + std::to_string(n) + ".ln1.g")) ++n;
  return n;
}

int exact_sqrt(int n) {
  const int r = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  return r * r == n ? r : -1;
}

}  // namespace

std::string_view strategy_name(TransferStrategy s) noexcept {
  return s == TransferStrategy::Average ? "average" : "center";
}

TransferStrategy parse_strategy(std::string_view name) {
  if (name == "average") return TransferStrategy::Average;
  if (name == "center") return TransferStrategy::Center;
  throw Error(Errc::BadConfig, "unknown transfer strategy '" + std::string(name) + "' (expected average|center)");
}

std::string_view provenance_name(Provenance p) noexcept {
  switch (p) {
    case Provenance::Copied: return "copied";
    case Provenance::ChannelReduced: return "channel-reduced";
    case Provenance::Inflated: return "inflated";
    case Provenance::Interpolated: return "interpolated";
    case Provenance::Reinitialized: return "re-initialized";
  }
  return "?";
}

Tensor inflate_patch_embed(const Tensor& w2, int depth, TransferStrategy strategy) {
  if (depth < 1) throw Error(Errc::BadDepth, "inflation depth must be >= 1, got " + std::to_string(depth));
  if (w2.rank() != 4) throw Error(Errc::ShapeMismatch, "2D patch kernel must be [e, C, p, p], got " + shape_string(w2.shape()));
  const int e = w2.dim(0), c = w2.dim(1), p = w2.dim(2), q = w2.dim(3);
  const std::size_t slice = static_cast<std::size_t>(p) * q;
  Tensor w3({e, c, depth, p, q}, 0.0f);
  const int center = depth / 2;
  const float denom = static_cast<float>(depth);
  for (int o = 0; o < e; ++o) {
    for (int ch = 0; ch < c; ++ch) {
      const float* src = w2.data().data() + (static_cast<std::size_t>(o) * c + ch) * slice;
      for (int d = 0; d < depth; ++d) {
        if (strategy == TransferStrategy::Center && d != center) continue;
        float* dst = w3.data().data() + ((static_cast<std::size_t>(o) * c + ch) * depth + d) * slice;
        for (std::size_t k = 0; k < slice; ++k) {
          dst[k] = strategy == TransferStrategy::Average ? src[k] / denom : src[k];
        }
      }
    }
  }
  return w3;
}

Tensor reduce_input_channels(const Tensor& w) {
  if (w.rank() != 4 || w.dim(1) != 3) {
    throw Error(Errc::BadChannels, "channel reduction needs a [e, 3, p, p] kernel, got " + shape_string(w.shape()));
  }
  const int e = w.dim(0);
  const std::size_t slice = static_cast<std::size_t>(w.dim(2)) * w.dim(3);
  Tensor out({e, 1, w.dim(2), w.dim(3)});
  for (int o = 0; o < e; ++o) {
    const float* src = w.data().data() + static_cast<std::size_t>(o) * 3 * slice;
    float* dst = out.data().data() + static_cast<std::size_t>(o) * slice;
    for (std::size_t k = 0; k < slice; ++k) dst[k] = (src[k] + src[slice + k]) + src[2 * slice + k];
  }
  return out;
}

VitParams transfer_weights(const WeightArchive& source, const VitConfig& target, TransferStrategy strategy, Rng& rng,
                           std::vector<TransferEntry>* report) {
  target.validate();
  const int e = target.embed_dim;
  auto note = [&](const std::string& name, Provenance how, Shape from, Shape to) {
    if (report) report->push_back({name, how, std::move(from), std::move(to)});
  };

  VitParams out;
  out.blocks.resize(static_cast<std::size_t>(target.layers));

  // Patch embedding.
  const Tensor& w_src = source.get("patch_embed.w");
  if (w_src.rank() != 4) {
    throw Error(Errc::DimMismatch, "source patch_embed.w " + shape_string(w_src.shape()) + " is not a 2D kernel");
  }
  if (w_src.dim(0) != e || w_src.dim(2) != target.patch || w_src.dim(3) != target.patch) {
    throw Error(Errc::DimMismatch, "source patch_embed.w " + shape_string(w_src.shape()) +
                                       " does not match embed_dim/patch of the target");
  }
  Tensor w2 = w_src;
  Provenance how = Provenance::Copied;
  if (w2.dim(1) != target.in_channels) {
    if (w2.dim(1) == 3 && target.in_channels == 1) {
      w2 = reduce_input_channels(w2);
      how = Provenance::ChannelReduced;
    } else {
      throw Error(Errc::DimMismatch, "cannot map " + std::to_string(w2.dim(1)) + " source channels to " +
                                         std::to_string(target.in_channels));
    }
  }
  if (target.kind == ModelKind::ThreeD) {
    out.patch_w = inflate_patch_embed(w2, target.depth, strategy);
    how = Provenance::Inflated;
  } else {
    out.patch_w = std::move(w2);
  }
  note("patch_embed.w", how, w_src.shape(), out.patch_w.shape());

  out.patch_b = fetch(source, "patch_embed.b", {e});
  note("patch_embed.b", Provenance::Copied, {e}, {e});
  out.cls = fetch(source, "cls", {1, e});
  note("cls", Provenance::Copied, {1, e}, {1, e});

  // Positional table.
  const Tensor& pos = source.get("pos");
  if (pos.rank() != 2 || pos.dim(1) != e) {
    throw Error(Errc::DimMismatch, "source pos " + shape_string(pos.shape()) + " does not match embed_dim");
  }
  const int g_src = exact_sqrt(pos.dim(0) - 1);
  if (g_src < 1) throw Error(Errc::NonSquareGrid, "source pos table does not describe a square token grid");
  if (target.grid_h() == g_src && target.grid_w() == g_src) {
    out.pos = pos;
    note("pos", Provenance::Copied, pos.shape(), pos.shape());
  } else {
    if (target.grid_h() != target.grid_w()) {
      throw Error(Errc::NonSquareGrid, "target token grid " + std::to_string(target.grid_h()) + "x" +
                                           std::to_string(target.grid_w()) + " is not square");
    }
    out.pos = interpolate_pos_embed(pos, g_src, target.grid_h());
    note("pos", Provenance::Interpolated, pos.shape(), out.pos.shape());
  }

  // Encoder blocks copy verbatim.
  const int src_layers = count_layers(source);
  if (src_layers != target.layers) {
    throw Error(Errc::DimMismatch, "source has " + std::to_string(src_layers) + " encoder layers, target needs " +
                                       std::to_string(target.layers));
  }
  const auto expected = expected_tensors(target);
  auto tensors = out.flat_tensors();
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& [name, shape] = expected[i];
    if (name.rfind("blocks.", 0) == 0 || name.rfind("final_ln.", 0) == 0) {
      *tensors[i] = fetch(source, name, shape);
      note(name, Provenance::Copied, shape, shape);
    }
  }

  // No 2D counterpart for the segmentation head.
  out.dec_w = Tensor({e, target.decoder_len()});
  for (auto& v : out.dec_w.values()) v = static_cast<float>(rng.truncated_normal(0.02));
  out.dec_b = Tensor({target.decoder_len()}, 0.0f);
  note("decoder.w", Provenance::Reinitialized, {}, out.dec_w.shape());
  note("decoder.b", Provenance::Reinitialized, {}, out.dec_b.shape());

  check_params(out, target);
  return out;
}

WeightArchive to_archive(const VitParams& params) {
  WeightArchive a;
  params.for_each([&](const std::string& name, const Tensor& t) { a.add(name, t); });
  return a;
}

VitParams from_archive(const WeightArchive& archive, const VitConfig& cfg) {
  cfg.validate();
  VitParams p;
  p.blocks.resize(static_cast<std::size_t>(cfg.layers));
  const auto expected = expected_tensors(cfg);
  auto tensors = p.flat_tensors();
  for (std::size_t i = 0; i < expected.size(); ++i) *tensors[i] = fetch(archive, expected[i].first, expected[i].second);
  return p;
}

}  // namespace neurovit
