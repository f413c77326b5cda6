#include "neurovit/archive.hpp"

#include <bit>
#include <cstring>

#include "neurovit/error.hpp"
#include "neurovit/io.hpp"

namespace neurovit {
namespace {

constexpr char kMagic[4] = {'N', 'W', 'A', '1'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    out_.insert(out_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int b = 0; b < 2; ++b) u8(static_cast<std::uint8_t>(v >> (8 * b)));
  }
  void u32(std::uint32_t v) {
    for (int b = 0; b < 4; ++b) u8(static_cast<std::uint8_t>(v >> (8 * b)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  std::vector<char> take() { return std::move(out_); }

 private:
  std::vector<char> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const char> in) : in_(in) {}

  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw Error(Errc::Truncated, std::string("archive truncated while reading ") + what + " at byte " +
                                       std::to_string(pos_));
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = 0;
    for (int b = 0; b < 2; ++b) v |= static_cast<std::uint16_t>(static_cast<unsigned char>(in_[pos_++]) << (8 * b));
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in_[pos_++])) << (8 * b);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(in_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const noexcept { return pos_ == in_.size(); }
  std::size_t remaining() const noexcept { return in_.size() - pos_; }

 private:
  std::span<const char> in_;
  std::size_t pos_ = 0;
};

}  // namespace

void WeightArchive::add(const std::string& name, Tensor tensor) {
  if (tensors_.contains(name)) throw Error(Errc::DuplicateName, "duplicate tensor name '" + name + "'");
  tensor.drop_grad();
  tensors_.emplace(name, std::move(tensor));
}

void WeightArchive::set(const std::string& name, Tensor tensor) {
  tensor.drop_grad();
  tensors_.insert_or_assign(name, std::move(tensor));
}

const Tensor& WeightArchive::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error(Errc::MissingTensor, "archive has no tensor '" + name + "'");
  return it->second;
}

std::vector<std::string> WeightArchive::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [name, t] : tensors_) out.push_back(name);
  return out;
}

bool operator==(const WeightArchive& a, const WeightArchive& b) {
  if (a.tensors_.size() != b.tensors_.size()) return false;
  auto ib = b.tensors_.begin();
  for (const auto& [name, t] : a.tensors_) {
    if (name != ib->first || t.shape() != ib->second.shape()) return false;
    if (t.size() && std::memcmp(t.data().data(), ib->second.data().data(), t.size() * sizeof(float)) != 0) return false;
    ++ib;
  }
  return true;
}

std::vector<char> serialize_archive(const WeightArchive& archive) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(WeightArchive::kVersion);
  w.u32(static_cast<std::uint32_t>(archive.size()));
  for (const auto& [name, t] : archive) {
    if (name.size() > 0xffff) throw Error(Errc::BadConfig, "tensor name longer than 65535 bytes");
    if (t.rank() > 255) throw Error(Errc::BadConfig, "tensor rank above 255");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (int d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.u8(0);
    for (float v : t.data()) w.f32(v);
  }
  return w.take();
}

WeightArchive deserialize_archive(std::span<const char> bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  const std::string magic = r.str(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw Error(Errc::BadMagic, "not an NWA1 weight archive");
  const std::uint32_t version = r.u32("version");
  if (version != WeightArchive::kVersion) {
    throw Error(Errc::UnsupportedVersion, "archive version " + std::to_string(version) + " is not supported");
  }
  const std::uint32_t count = r.u32("tensor count");
  WeightArchive archive;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16("name length");
    std::string name = r.str(name_len, "name");
    const std::uint8_t rank = r.u8("rank");
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      const std::uint32_t v = r.u32("dims");
      if (v == 0 || v > 0x7fffffffu) throw Error(Errc::ShapeMismatch, "tensor '" + name + "' has an invalid dimension");
      d = static_cast<int>(v);
      numel *= v;
    }
    const std::uint8_t dtype = r.u8("dtype");
    if (dtype != 0) throw Error(Errc::UnsupportedDtype, "tensor '" + name + "' has dtype " + std::to_string(dtype));
    if (numel > r.remaining() / 4) throw Error(Errc::Truncated, "archive truncated inside tensor '" + name + "'");
    std::vector<float> data(numel);
    for (auto& v : data) v = std::bit_cast<float>(r.u32("payload"));
    archive.add(name, Tensor(std::move(shape), std::move(data)));
  }
  if (!r.at_end()) throw Error(Errc::Truncated, "archive has " + std::to_string(r.remaining()) + " trailing bytes");
  return archive;
}

void write_archive(const WeightArchive& archive, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_archive(archive));
}

WeightArchive read_archive(const std::filesystem::path& path) { return deserialize_archive(read_binary_file(path)); }

}  // namespace neurovit
