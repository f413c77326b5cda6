#include "neurovit/swc.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "neurovit/error.hpp"
#include "neurovit/io.hpp"

namespace neurovit {
namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\v' || c == '\f'; }

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    const std::size_t start = i;
    while (i < line.size() && !is_space(line[i])) ++i;
    if (i > start) fields.push_back(line.substr(start, i - start));
  }
  return fields;
}

template <class T>
bool parse_number(std::string_view token, T& out) {
  // from_chars rejects a leading '+', which some writers emit.
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  const char* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, out);
  return ec == std::errc() && ptr == end;
}

[[noreturn]] void malformed(std::int64_t line, const std::string& what) {
  throw Error(Errc::MalformedLine, "line " + std::to_string(line) + ": " + what, line);
}

// Post-parse checks shared by parse_swc and validate. `lines` maps node
// index to source line (empty when validating an in-memory morphology).
void check_forest(const SwcMorphology& m, const std::vector<std::int64_t>& lines) {
  auto line_of = [&](std::size_t i) -> std::int64_t { return lines.empty() ? 0 : lines[i]; };
  std::unordered_map<std::int64_t, std::size_t> index_of;
  index_of.reserve(m.nodes.size());
  for (std::size_t i = 0; i < m.nodes.size(); ++i) {
    const auto& n = m.nodes[i];
    if (n.id < 1) throw Error(Errc::MalformedLine, "node id must be >= 1", line_of(i));
    if (!(n.radius > 0.0f) || !std::isfinite(n.radius)) {
      throw Error(Errc::NonPositiveRadius, "node " + std::to_string(n.id) + " has radius <= 0",
                  line_of(i));
    }
    if (!index_of.emplace(n.id, i).second) {
      throw Error(Errc::DuplicateId, "duplicate node id " + std::to_string(n.id), line_of(i));
    }
  }
  for (std::size_t i = 0; i < m.nodes.size(); ++i) {
    const auto& n = m.nodes[i];
    if (!n.is_root() && !index_of.contains(n.parent_id)) {
      throw Error(Errc::DanglingParent,
                  "node " + std::to_string(n.id) + " references missing parent " +
                      std::to_string(n.parent_id),
                  line_of(i));
    }
  }
  // 0 = unvisited, 1 = on the current parent walk, 2 = known to reach a root.
  std::vector<std::uint8_t> state(m.nodes.size(), 0);
  std::vector<std::size_t> walk;
  for (std::size_t start = 0; start < m.nodes.size(); ++start) {
    walk.clear();
    std::size_t cur = start;
    while (state[cur] == 0) {
      state[cur] = 1;
      walk.push_back(cur);
      const auto& n = m.nodes[cur];
      if (n.is_root()) break;
      cur = index_of.at(n.parent_id);
      if (state[cur] == 1) {
        throw Error(Errc::CycleDetected,
                    "parent cycle through node " + std::to_string(m.nodes[cur].id),
                    line_of(cur));
      }
    }
    for (std::size_t i : walk) state[i] = 2;
  }
}

void append_float(std::string& out, float v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

}  // namespace

std::size_t SwcMorphology::root_count() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const SwcNode& n) { return n.is_root(); }));
}

SwcMorphology parse_swc(std::string_view text) {
  SwcMorphology m;
  std::vector<std::int64_t> lines;
  std::int64_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    std::size_t first = 0;
    while (first < line.size() && is_space(line[first])) ++first;
    if (first == line.size() || line[first] == '#') {
      if (eol == text.size()) break;
      continue;
    }

    const auto fields = split_fields(line);
    if (fields.size() != 7) {
      malformed(line_no, "expected 7 fields, found " + std::to_string(fields.size()));
    }
    SwcNode n;
    if (!parse_number(fields[0], n.id) || n.id < 1) malformed(line_no, "bad node id");
    if (!parse_number(fields[1], n.type_code)) malformed(line_no, "bad type code");
    if (!parse_number(fields[2], n.x) || !parse_number(fields[3], n.y) ||
        !parse_number(fields[4], n.z) || !std::isfinite(n.x) || !std::isfinite(n.y) ||
        !std::isfinite(n.z)) {
      malformed(line_no, "bad coordinate");
    }
    if (!parse_number(fields[5], n.radius) || std::isnan(n.radius)) malformed(line_no, "bad radius");
    if (!parse_number(fields[6], n.parent_id)) malformed(line_no, "bad parent id");
    if (!(n.radius > 0.0f) || !std::isfinite(n.radius)) {
      throw Error(Errc::NonPositiveRadius,
                  "line " + std::to_string(line_no) + ": radius must be positive", line_no);
    }
    m.nodes.push_back(n);
    lines.push_back(line_no);
    if (eol == text.size()) break;
  }
  check_forest(m, lines);
  return m;
}

void validate(const SwcMorphology& morphology) { check_forest(morphology, {}); }

std::string write_swc(const SwcMorphology& morphology) {
  std::string out = "# id type x y z radius parent\n";
  for (const auto& n : morphology.nodes) {
    out += std::to_string(n.id);
    out += ' ';
    out += std::to_string(n.type_code);
    for (float v : {n.x, n.y, n.z, n.radius}) {
      out += ' ';
      append_float(out, v);
    }
    out += ' ';
    out += std::to_string(n.parent_id);
    out += '\n';
  }
  return out;
}

SwcMorphology load_swc(const std::filesystem::path& path) { return parse_swc(read_text_file(path)); }

void save_swc(const SwcMorphology& morphology, const std::filesystem::path& path) {
  write_file_atomic(path, write_swc(morphology));
}

std::vector<CapsuleSegment> segments(const SwcMorphology& morphology) {
  std::unordered_map<std::int64_t, std::size_t> index_of;
  index_of.reserve(morphology.nodes.size());
  for (std::size_t i = 0; i < morphology.nodes.size(); ++i) index_of.emplace(morphology.nodes[i].id, i);

  std::vector<CapsuleSegment> out;
  out.reserve(morphology.nodes.size());
  for (const auto& n : morphology.nodes) {
    if (n.is_root()) continue;
    const auto& parent = morphology.nodes[index_of.at(n.parent_id)];
    out.push_back({parent.position(), n.position(), parent.radius, n.radius});
  }
  return out;
}

BoundingBox bounding_box(const SwcMorphology& morphology, float margin) {
  if (morphology.empty()) throw Error(Errc::EmptyMorphology, "bounding box of an empty morphology");
  constexpr float inf = std::numeric_limits<float>::infinity();
  BoundingBox box{{inf, inf, inf}, {-inf, -inf, -inf}};
  for (const auto& n : morphology.nodes) {
    const float r = n.radius + margin;
    box.min.x = std::min(box.min.x, n.x - r);
    box.min.y = std::min(box.min.y, n.y - r);
    box.min.z = std::min(box.min.z, n.z - r);
    box.max.x = std::max(box.max.x, n.x + r);
    box.max.y = std::max(box.max.y, n.y + r);
    box.max.z = std::max(box.max.z, n.z + r);
  }
  return box;
}

}  // namespace neurovit
