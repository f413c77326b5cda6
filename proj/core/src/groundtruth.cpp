#include "neurovit/groundtruth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "neurovit/error.hpp"
#include "neurovit/rng.hpp"

namespace neurovit {
namespace {

float dot(const Vec3& a, const Vec3& b) noexcept { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 sub(const Vec3& a, const Vec3& b) noexcept { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
float norm(const Vec3& a) noexcept { return std::sqrt(dot(a, a)); }

Vec3 normalized(Vec3 v) noexcept {
  const float n = norm(v);
  if (n == 0.0f) return {1.0f, 0.0f, 0.0f};
  return {v.x / n, v.y / n, v.z / n};
}

int reflect_index(int i, int n) noexcept {
  // Half-sample symmetric: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
  for (;;) {
    if (i < 0) {
      i = -i - 1;
    } else if (i >= n) {
      i = 2 * n - i - 1;
    } else {
      return i;
    }
  }
}

struct Tip {
  std::size_t node;
  Vec3 heading;
  int depth;
};

}  // namespace

CapsuleDistance distance_to_capsule(const Vec3& p, const CapsuleSegment& seg) noexcept {
  const Vec3 axis = sub(seg.p1, seg.p0);
  const float len2 = dot(axis, axis);
  if (len2 == 0.0f) return {norm(sub(p, seg.p0)), std::max(seg.r0, seg.r1)};
  const float t = std::clamp(dot(sub(p, seg.p0), axis) / len2, 0.0f, 1.0f);
  const Vec3 closest{seg.p0.x + t * axis.x, seg.p0.y + t * axis.y, seg.p0.z + t * axis.z};
  return {norm(sub(p, closest)), seg.r0 + t * (seg.r1 - seg.r0)};
}

std::vector<CapsuleSegment> label_primitives(const SwcMorphology& morphology) {
  auto prims = segments(morphology);
  for (const auto& n : morphology.nodes) {
    if (n.is_root()) prims.push_back({n.position(), n.position(), n.radius, n.radius});
  }
  return prims;
}

Volume3D rasterize_labels(const SwcMorphology& morphology, const Dims3& dims, LabelMode mode) {
  if (morphology.empty()) throw Error(Errc::EmptyMorphology, "cannot rasterize an empty morphology");
  if (!dims.positive()) throw Error(Errc::SizeMismatch, "label dimensions must be positive");

  // Smallest scaled distance per voxel; only values <= 1 matter, so each
  // primitive visits just the voxels inside its bounding box.
  std::vector<float> s_min(dims.count(), std::numeric_limits<float>::infinity());
  for (const auto& seg : label_primitives(morphology)) {
    const float lo[3] = {std::min(seg.p0.x - seg.r0, seg.p1.x - seg.r1), std::min(seg.p0.y - seg.r0, seg.p1.y - seg.r1),
                         std::min(seg.p0.z - seg.r0, seg.p1.z - seg.r1)};
    const float hi[3] = {std::max(seg.p0.x + seg.r0, seg.p1.x + seg.r1), std::max(seg.p0.y + seg.r0, seg.p1.y + seg.r1),
                         std::max(seg.p0.z + seg.r0, seg.p1.z + seg.r1)};
    const int extent[3] = {dims.w, dims.h, dims.d};
    int b0[3];
    int b1[3];
    bool outside = false;
    for (int a = 0; a < 3; ++a) {
      b0[a] = std::max(0, static_cast<int>(std::floor(lo[a])) - 1);
      b1[a] = std::min(extent[a] - 1, static_cast<int>(std::ceil(hi[a])) + 1);
      outside = outside || b0[a] > b1[a];
    }
    if (outside) continue;
    for (int z = b0[2]; z <= b1[2]; ++z) {
      for (int y = b0[1]; y <= b1[1]; ++y) {
        for (int x = b0[0]; x <= b1[0]; ++x) {
          const float s = scaled_distance({static_cast<float>(x), static_cast<float>(y), static_cast<float>(z)}, seg);
          float& cur = s_min[linear_index(dims, x, y, z)];
          cur = std::min(cur, s);
        }
      }
    }
  }

  Volume3D out(dims, 0.0f);
  auto v = out.voxels();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (mode == LabelMode::Binary) {
      v[i] = s_min[i] <= 1.0f ? 1.0f : 0.0f;
    } else {
      v[i] = std::clamp(1.0f - s_min[i], 0.0f, 1.0f);
    }
  }
  return out;
}

void SynthParams::validate() const {
  if (!dims.positive()) throw Error(Errc::BadConfig, "synth dims must be positive");
  if (n_trees < 1) throw Error(Errc::BadConfig, "synth n_trees must be >= 1");
  if (steps < 0) throw Error(Errc::BadConfig, "synth steps must be >= 0");
  if (!(step_len > 0.0f)) throw Error(Errc::BadConfig, "synth step_len must be positive");
  if (!(branch_prob >= 0.0f && branch_prob <= 1.0f)) throw Error(Errc::BadConfig, "synth branch_prob must be in [0,1]");
  if (!(radius_range.first > 0.0f && radius_range.second >= radius_range.first)) {
    throw Error(Errc::BadConfig, "synth radius_range must be positive and ordered");
  }
  if (noise_sigma < 0.0f || psf_sigma < 0.0f) throw Error(Errc::BadConfig, "synth sigmas must be >= 0");
}

SwcMorphology generate_random_tree(const SynthParams& params, int tree_index) {
  Rng rng(derive_seed(params.seed, static_cast<std::uint64_t>(tree_index)));
  const float W = static_cast<float>(params.dims.w - 1);
  const float H = static_cast<float>(params.dims.h - 1);
  const float D = static_cast<float>(params.dims.d - 1);
  const float r_hi = params.radius_range.second;
  const float r_lo = params.radius_range.first;
  const float zs = params.z_heading_scale;

  auto random_heading = [&] {
    const double theta = rng.uniform(0.0, 2.0 * M_PI);
    const double dz = rng.uniform(-1.0, 1.0) * zs;
    return normalized({static_cast<float>(std::cos(theta)), static_cast<float>(std::sin(theta)),
                       static_cast<float>(dz)});
  };
  auto turn = [&](const Vec3& h, float amount) {
    const Vec3 kick{static_cast<float>(rng.uniform(-1.0, 1.0)) * amount,
                    static_cast<float>(rng.uniform(-1.0, 1.0)) * amount,
                    static_cast<float>(rng.uniform(-1.0, 1.0)) * amount * zs};
    return normalized({h.x + kick.x, h.y + kick.y, h.z + kick.z});
  };

  SwcMorphology m;
  SwcNode root;
  root.id = 1;
  root.type_code = 3;
  root.x = static_cast<float>(rng.uniform(0.2, 0.8)) * W;
  root.y = static_cast<float>(rng.uniform(0.2, 0.8)) * H;
  root.z = static_cast<float>(rng.uniform(0.3, 0.7)) * D;
  root.radius = r_hi;
  root.parent_id = -1;
  m.nodes.push_back(root);

  std::vector<Tip> tips{{0, random_heading(), 0}};
  for (int step = 0; step < params.steps; ++step) {
    Tip& tip = tips[static_cast<std::size_t>(step) % tips.size()];
    const SwcNode& from = m.nodes[tip.node];
    Vec3 h = turn(tip.heading, params.max_turn);
    Vec3 p{from.x + h.x * params.step_len, from.y + h.y * params.step_len, from.z + h.z * params.step_len};
    // Bounce off the volume walls.
    if (p.x < 0.0f || p.x > W) h.x = -h.x;
    if (p.y < 0.0f || p.y > H) h.y = -h.y;
    if (p.z < 0.0f || p.z > D) h.z = -h.z;
    p.x = std::clamp(p.x, 0.0f, W);
    p.y = std::clamp(p.y, 0.0f, H);
    p.z = std::clamp(p.z, 0.0f, D);

    const int depth = tip.depth + 1;
    const float frac = params.steps > 0 ? static_cast<float>(depth) / static_cast<float>(params.steps) : 0.0f;
    SwcNode n;
    n.id = static_cast<std::int64_t>(m.nodes.size()) + 1;
    n.type_code = 3;
    n.x = p.x;
    n.y = p.y;
    n.z = p.z;
    n.radius = std::max(r_lo, r_hi - (r_hi - r_lo) * frac);
    n.parent_id = from.id;
    m.nodes.push_back(n);

    tip.node = m.nodes.size() - 1;
    tip.heading = h;
    tip.depth = depth;
    if (rng.uniform() < params.branch_prob) {
      tips.push_back({m.nodes.size() - 1, turn(h, 1.2f), depth});
    }
  }
  return m;
}

std::vector<float> gaussian_kernel(float sigma) {
  if (!(sigma > 0.0f)) return {1.0f};
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    w[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (static_cast<double>(sigma) * sigma));
    sum += w[static_cast<std::size_t>(i + radius)];
  }
  std::vector<float> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = static_cast<float>(w[i] / sum);
  return out;
}

Volume3D gaussian_blur(const Volume3D& volume, float sigma) {
  if (!(sigma > 0.0f)) return volume;
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  const Dims3 d = volume.dims();
  Volume3D a = volume;
  Volume3D b(d, 0.0f);
  const int extent[3] = {d.w, d.h, d.d};
  for (int axis = 0; axis < 3; ++axis) {
    const int n = extent[axis];
    for (int z = 0; z < d.d; ++z) {
      for (int y = 0; y < d.h; ++y) {
        for (int x = 0; x < d.w; ++x) {
          const int pos[3] = {x, y, z};
          float acc = 0.0f;
          for (int t = -radius; t <= radius; ++t) {
            int q[3] = {x, y, z};
            q[axis] = reflect_index(pos[axis] + t, n);
            acc += k[static_cast<std::size_t>(t + radius)] * a.at(q[0], q[1], q[2]);
          }
          b.at(x, y, z) = acc;
        }
      }
    }
    std::swap(a, b);
  }
  return a;
}

Volume3D render_image(const SwcMorphology& morphology, const SynthParams& params) {
  Volume3D img = rasterize_labels(morphology, params.dims, LabelMode::Binary);
  const float fg = params.foreground_intensity;
  const float bg = params.background_intensity;
  for (float& v : img.voxels()) v = bg + v * (fg - bg);
  img = gaussian_blur(img, params.psf_sigma);
  if (params.noise_sigma > 0.0f) {
    Rng rng(derive_seed(params.seed, 0x6e6f697365ULL));
    for (float& v : img.voxels()) v += static_cast<float>(rng.normal()) * params.noise_sigma;
  }
  for (float& v : img.voxels()) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

SyntheticSample synthesize_sample(const SynthParams& params, int sample_index, LabelMode mode) {
  params.validate();
  SynthParams local = params;
  local.seed = derive_seed(params.seed, 0x1000000ULL + static_cast<std::uint64_t>(sample_index));

  SwcMorphology merged;
  for (int t = 0; t < params.n_trees; ++t) {
    const auto tree = generate_random_tree(local, t);
    const std::int64_t offset = static_cast<std::int64_t>(merged.nodes.size());
    for (auto n : tree.nodes) {
      n.id += offset;
      if (!n.is_root()) n.parent_id += offset;
      merged.nodes.push_back(n);
    }
  }
  SyntheticSample s{merged, render_image(merged, local), rasterize_labels(merged, params.dims, mode)};
  return s;
}

}  // namespace neurovit
