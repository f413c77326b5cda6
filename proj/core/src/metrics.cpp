#include "neurovit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "neurovit/error.hpp"

namespace neurovit {
namespace {

constexpr std::int64_t kFar = std::numeric_limits<std::int64_t>::max();

void require_same_dims(const BinaryMask& a, const BinaryMask& b) {
  if (a.dims != b.dims) throw Error(Errc::DimMismatch, "masks have different dimensions");
}

// Lower envelope of parabolas (q - v)^2 + f[v] over finite sites, written
// back into f. Integer inputs stay exact; the breakpoints only pick which
// parabola wins, and ties give equal values.
void squared_edt_1d(std::vector<std::int64_t>& f, std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  v.resize(static_cast<std::size_t>(n));
  z.resize(static_cast<std::size_t>(n) + 1);
  int k = -1;
  auto intersect = [&](int q, int p) {
    const double fq = static_cast<double>(f[static_cast<std::size_t>(q)]) + static_cast<double>(q) * q;
    const double fp = static_cast<double>(f[static_cast<std::size_t>(p)]) + static_cast<double>(p) * p;
    return (fq - fp) / (2.0 * (q - p));
  };
  for (int q = 0; q < n; ++q) {
    if (f[static_cast<std::size_t>(q)] == kFar) continue;
    double s = -std::numeric_limits<double>::infinity();
    while (k >= 0) {
      s = intersect(q, v[static_cast<std::size_t>(k)]);
      if (s <= z[static_cast<std::size_t>(k)]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = k == 0 ? -std::numeric_limits<double>::infinity() : s;
    z[static_cast<std::size_t>(k) + 1] = std::numeric_limits<double>::infinity();
  }
  if (k < 0) return;  // no sites on this line
  std::vector<std::int64_t> out(static_cast<std::size_t>(n));
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(j) + 1] < q) ++j;
    const std::int64_t dv = q - v[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(q)] = dv * dv + f[static_cast<std::size_t>(v[static_cast<std::size_t>(j)])];
  }
  f = std::move(out);
}

float sqrt_distance(std::int64_t sq) { return static_cast<float>(std::sqrt(static_cast<double>(sq))); }

}  // namespace

BinaryMask BinaryMask::from_volume(const Volume3D& v, float threshold) {
  BinaryMask m(v.dims());
  auto vox = v.voxels();
  for (std::size_t i = 0; i < vox.size(); ++i) m.bits[i] = vox[i] >= threshold ? 1 : 0;
  return m;
}

std::size_t BinaryMask::count() const noexcept {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

float dice(const BinaryMask& a, const BinaryMask& b) {
  require_same_dims(a, b);
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    inter += a.bits[i] & b.bits[i];
    na += a.bits[i];
    nb += b.bits[i];
  }
  if (na + nb == 0) return 1.0f;
  return static_cast<float>(2.0 * static_cast<double>(inter) / static_cast<double>(na + nb));
}

std::vector<Index3> surface_voxels(const BinaryMask& mask) {
  const Dims3& d = mask.dims;
  auto fg = [&](int x, int y, int z) {
    return x >= 0 && y >= 0 && z >= 0 && x < d.w && y < d.h && z < d.d && mask.at(x, y, z);
  };
  std::vector<Index3> out;
  for (int z = 0; z < d.d; ++z)
    for (int y = 0; y < d.h; ++y)
      for (int x = 0; x < d.w; ++x) {
        if (!mask.at(x, y, z)) continue;
        if (!fg(x - 1, y, z) || !fg(x + 1, y, z) || !fg(x, y - 1, z) || !fg(x, y + 1, z) || !fg(x, y, z - 1) ||
            !fg(x, y, z + 1)) {
          out.push_back({x, y, z});
        }
      }
  return out;
}

std::vector<std::int64_t> squared_distance_map(const BinaryMask& sites) {
  const Dims3& d = sites.dims;
  std::vector<std::int64_t> dist(d.count(), kFar);
  bool any = false;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (sites.bits[i]) {
      dist[i] = 0;
      any = true;
    }
  }
  if (!any) {
    std::fill(dist.begin(), dist.end(), -1);
    return dist;
  }
  std::vector<std::int64_t> line;
  std::vector<int> v;
  std::vector<double> z;
  const int extent[3] = {d.w, d.h, d.d};
  for (int axis = 0; axis < 3; ++axis) {
    const int n = extent[axis];
    const int o1 = axis == 0 ? 1 : 0;  // the two axes spanning each line set
    const int o2 = axis == 2 ? 1 : 2;
    for (int b = 0; b < extent[o2]; ++b) {
      for (int a = 0; a < extent[o1]; ++a) {
        line.assign(static_cast<std::size_t>(n), kFar);
        int p[3];
        p[o1] = a;
        p[o2] = b;
        for (int i = 0; i < n; ++i) {
          p[axis] = i;
          line[static_cast<std::size_t>(i)] = dist[linear_index(d, p[0], p[1], p[2])];
        }
        squared_edt_1d(line, v, z);
        for (int i = 0; i < n; ++i) {
          p[axis] = i;
          dist[linear_index(d, p[0], p[1], p[2])] = line[static_cast<std::size_t>(i)];
        }
      }
    }
  }
  return dist;
}

float hd95(const BinaryMask& a, const BinaryMask& b) {
  require_same_dims(a, b);
  if (a.empty()) throw Error(Errc::EmptyMask, "hd95: first mask is empty");
  if (b.empty()) throw Error(Errc::EmptyMask, "hd95: second mask is empty");

  auto surface_mask = [](const BinaryMask& m, const std::vector<Index3>& s) {
    BinaryMask out(m.dims);
    for (const auto& p : s) out.set(p.x, p.y, p.z);
    return out;
  };
  const auto sa = surface_voxels(a);
  const auto sb = surface_voxels(b);
  const auto da = squared_distance_map(surface_mask(a, sa));
  const auto db = squared_distance_map(surface_mask(b, sb));

  std::vector<std::int64_t> pooled;
  pooled.reserve(sa.size() + sb.size());
  for (const auto& p : sa) pooled.push_back(db[linear_index(a.dims, p.x, p.y, p.z)]);
  for (const auto& p : sb) pooled.push_back(da[linear_index(a.dims, p.x, p.y, p.z)]);
  std::sort(pooled.begin(), pooled.end());
  const std::size_t n = pooled.size();
  const std::size_t rank = (95 * n + 99) / 100;  // ceil(0.95 n)
  return sqrt_distance(pooled[rank - 1]);
}

nlohmann::ordered_json EvalResult::to_json() const {
  nlohmann::ordered_json j;
  j["dice"] = dice;
  j["hd95"] = hd95 ? nlohmann::ordered_json(*hd95) : nlohmann::ordered_json(nullptr);
  j["hd95_failures"] = hd95_failures;
  auto& vols = j["per_volume"] = nlohmann::ordered_json::array();
  for (const auto& v : per_volume) {
    nlohmann::ordered_json e;
    e["dice"] = v.dice;
    e["hd95"] = v.hd95 ? nlohmann::ordered_json(*v.hd95) : nlohmann::ordered_json(nullptr);
    if (!v.failure.empty()) e["failure"] = v.failure;
    vols.push_back(std::move(e));
  }
  return j;
}

VolumeEval evaluate_masks(const BinaryMask& pred, const BinaryMask& truth) {
  VolumeEval r;
  r.dice = dice(pred, truth);
  try {
    r.hd95 = hd95(pred, truth);
  } catch (const Error& e) {
    if (e.code() != Errc::EmptyMask) throw;
    r.failure = std::string(errc_name(e.code())) + ": " + e.what();
  }
  return r;
}

EvalResult aggregate(std::vector<VolumeEval> per_volume) {
  EvalResult r;
  double dice_sum = 0.0, hd_sum = 0.0;
  int hd_n = 0;
  for (const auto& v : per_volume) {
    dice_sum += v.dice;
    if (v.hd95) {
      hd_sum += *v.hd95;
      ++hd_n;
    } else {
      ++r.hd95_failures;
    }
  }
  if (!per_volume.empty()) r.dice = static_cast<float>(dice_sum / static_cast<double>(per_volume.size()));
  if (hd_n > 0) r.hd95 = static_cast<float>(hd_sum / hd_n);
  r.per_volume = std::move(per_volume);
  return r;
}

Volume3D predict_volume(const VitParams& params, const VitConfig& cfg, const Volume3D& image,
                        std::optional<Dims3> stride) {
  check_params(params, cfg);
  if (cfg.in_channels != 1) throw Error(Errc::ShapeMismatch, "volume inference supports single-channel models");
  BlockGridSpec spec = BlockGridSpec::tiling(cfg.block_dims());
  if (stride) spec.stride = *stride;
  auto blocks = blockify(image, spec);
  for (auto& b : blocks) {
    const Tensor logits = forward<float>(params, cfg, b.data);
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const float z = logits[i];
      b.data[i] = z >= 0.0f ? 1.0f / (1.0f + std::exp(-z)) : std::exp(z) / (1.0f + std::exp(z));
    }
  }
  return stitch(blocks, image.dims());
}

EvalResult evaluate(const VitParams& params, const VitConfig& cfg, const Volume3D& image, const BinaryMask& truth,
                    float prob_threshold) {
  const Volume3D prob = predict_volume(params, cfg, image);
  return aggregate({evaluate_masks(BinaryMask::from_volume(prob, prob_threshold), truth)});
}

}  // namespace neurovit
