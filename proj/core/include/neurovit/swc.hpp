#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace neurovit {

struct Vec3 {
  float x = 0.0f;
  float y = 0.0f;
  float z = 0.0f;

  friend bool operator==(const Vec3&, const Vec3&) = default;
};

/// One line of an SWC file. Coordinates and radius are in voxel units.
struct SwcNode {
  std::int64_t id = 1;
  std::int32_t type_code = 0;  // preserved verbatim, never interpreted
  float x = 0.0f;
  float y = 0.0f;
  float z = 0.0f;
  float radius = 1.0f;
  std::int64_t parent_id = -1;  // -1 marks a root

  Vec3 position() const noexcept { return {x, y, z}; }
  bool is_root() const noexcept { return parent_id == -1; }

  friend bool operator==(const SwcNode&, const SwcNode&) = default;
};

/// A neuron forest in file order. Parents may follow their children.
struct SwcMorphology {
  std::vector<SwcNode> nodes;

  bool empty() const noexcept { return nodes.empty(); }
  std::size_t root_count() const noexcept;

  friend bool operator==(const SwcMorphology&, const SwcMorphology&) = default;
};

/// Tapered capsule between a node and its parent.
struct CapsuleSegment {
  Vec3 p0;
  Vec3 p1;
  float r0 = 1.0f;
  float r1 = 1.0f;
};

struct BoundingBox {
  Vec3 min;
  Vec3 max;
};

/// Parses SWC text ('#' comments, 7 whitespace-separated fields per line,
/// '\n' or '\r\n'). Throws Error with MalformedLine, NonPositiveRadius or
/// DuplicateId (carrying the line number), then DanglingParent or
/// CycleDetected once the whole file has been read.
SwcMorphology parse_swc(std::string_view text);

/// Checks the forest invariants of an in-memory morphology.
void validate(const SwcMorphology& morphology);

/// One line per node, shortest round-trip float formatting.
std::string write_swc(const SwcMorphology& morphology);

SwcMorphology load_swc(const std::filesystem::path& path);
void save_swc(const SwcMorphology& morphology, const std::filesystem::path& path);

/// One capsule per non-root node, running from the parent (p0, r0) to the
/// node (p1, r1).
std::vector<CapsuleSegment> segments(const SwcMorphology& morphology);

/// Box covering every node sphere, grown by `margin` on each side.
BoundingBox bounding_box(const SwcMorphology& morphology, float margin = 0.0f);

}  // namespace neurovit
