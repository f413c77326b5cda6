#pragma once

#include <cstdint>
#include <utility>

#include "neurovit/swc.hpp"
#include "neurovit/volume.hpp"

namespace neurovit {

enum class LabelMode { Binary, Soft };

struct CapsuleDistance {
  float dist = 0.0f;  // distance to the closest axis point
  float r_at = 0.0f;  // interpolated radius at that point
};

/// Distance from `p` to the capsule axis and the tapered radius at the
/// closest axis point. A zero-length axis degrades to a sphere of radius
/// max(r0, r1).
CapsuleDistance distance_to_capsule(const Vec3& p, const CapsuleSegment& seg) noexcept;

/// Scale-normalized distance dist / r_at.
inline float scaled_distance(const Vec3& p, const CapsuleSegment& seg) noexcept {
  const auto d = distance_to_capsule(p, seg);
  return d.dist / d.r_at;
}

/// Capsules and root spheres (degenerate capsules) the rasterizer tests
/// each voxel against.
std::vector<CapsuleSegment> label_primitives(const SwcMorphology& morphology);

/// Labels voxel centers (integer coordinates) by the smallest scaled
/// distance s over all primitives. Binary: s <= 1. Soft: clamp(1 - s, 0, 1).
Volume3D rasterize_labels(const SwcMorphology& morphology, const Dims3& dims, LabelMode mode);

/// Knobs of the synthetic neuron generator.
struct SynthParams {
  std::uint64_t seed = 1;
  Dims3 dims{64, 64, 15};
  int n_trees = 2;
  int steps = 60;
  float step_len = 1.5f;
  float branch_prob = 0.06f;
  std::pair<float, float> radius_range{0.9f, 2.2f};
  float noise_sigma = 0.08f;
  float psf_sigma = 0.8f;
  float foreground_intensity = 0.85f;
  float background_intensity = 0.15f;
  /// Largest heading change per step, in radians.
  float max_turn = 0.35f;
  /// Scale applied to the z component of headings; volumes are thin in z.
  float z_heading_scale = 0.35f;

  void validate() const;
};

/// Seeded random-walk neuron with tapering radius and occasional forks.
/// Deterministic in (params.seed, tree_index); produces steps + 1 nodes,
/// all clamped inside params.dims.
SwcMorphology generate_random_tree(const SynthParams& params, int tree_index);

/// Fluorescence-like image of a morphology: binary mask scaled between the
/// background and foreground intensities, Gaussian PSF blur, additive
/// Gaussian noise seeded by params.seed, clamped to [0, 1].
Volume3D render_image(const SwcMorphology& morphology, const SynthParams& params);

/// Separable normalized Gaussian blur, kernel truncated at 3 sigma,
/// half-sample symmetric borders. sigma <= 0 returns the input.
Volume3D gaussian_blur(const Volume3D& volume, float sigma);

/// Normalized 1-D Gaussian taps for offsets -radius..radius.
std::vector<float> gaussian_kernel(float sigma);

struct SyntheticSample {
  SwcMorphology morphology;
  Volume3D image;
  Volume3D label;
};

/// One synthetic (morphology, image, label) triple. `sample_index` selects
/// an independent stream so samples never share trees or noise.
SyntheticSample synthesize_sample(const SynthParams& params, int sample_index,
                                  LabelMode mode = LabelMode::Binary);

}  // namespace neurovit
