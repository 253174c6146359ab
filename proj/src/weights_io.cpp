#include "uit/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <stdexcept>

namespace uit {

namespace {

constexpr char kMagic[4] = {'U', 'I', 'T', 'W'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) u8(static_cast<std::uint8_t>(v >> s));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> in, const std::string& origin) : in_(in), origin_(origin) {}

  const std::uint8_t* take(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n) {
      throw std::runtime_error(origin_ + ": truncated weight file while reading " + what +
                               " at byte " + std::to_string(pos_));
    }
    const std::uint8_t* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint8_t u8(const char* what) { return *take(1, what); }
  std::uint16_t u16(const char* what) {
    const auto* p = take(2, what);
    return static_cast<std::uint16_t>(p[0] | p[1] << 8);
  }
  std::uint32_t u32(const char* what) {
    const auto* p = take(4, what);
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
           std::uint32_t(p[3]) << 24;
  }
  bool done() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  const std::string& origin_;
};

}  // namespace

std::vector<std::uint8_t> encode_weights(const WeightStore& w) {
  Writer out;
  out.bytes(kMagic, 4);
  out.u32(kWeightFileVersion);
  out.u32(static_cast<std::uint32_t>(w.size()));
  for (const auto& [name, t] : w) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw std::invalid_argument("weights: tensor name too long: " + name.substr(0, 32) + "...");
    }
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) {
      throw std::invalid_argument("weights: tensor '" + name + "' rank too large");
    }
    out.u16(static_cast<std::uint16_t>(name.size()));
    out.bytes(name.data(), name.size());
    out.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) {
      if (d > std::numeric_limits<std::uint32_t>::max()) {
        throw std::invalid_argument("weights: tensor '" + name + "' dimension too large");
      }
      out.u32(static_cast<std::uint32_t>(d));
    }
    for (float v : t.data()) out.f32(v);
  }
  return out.take();
}

WeightStore decode_weights(std::span<const std::uint8_t> bytes, const std::string& origin) {
  Reader in(bytes, origin);
  const auto* magic = in.take(4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error(origin + ": bad magic, not a UITW file");
  const std::uint32_t version = in.u32("version");
  if (version != kWeightFileVersion) {
    throw std::runtime_error(origin + ": unsupported weight file version " + std::to_string(version));
  }
  const std::uint32_t count = in.u32("tensor count");
  WeightStore w;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = in.u16("name length");
    const auto* name_bytes = in.take(len, "tensor name");
    std::string name(reinterpret_cast<const char*>(name_bytes), len);
    if (w.contains(name)) throw std::runtime_error(origin + ": duplicate tensor '" + name + "'");
    const std::uint8_t rank = in.u8("rank");
    Shape shape(rank);
    std::uint64_t numel = 1;
    for (auto& d : shape) {
      d = in.u32("dims");
      numel *= d;
    }
    if (numel * 4 > in.remaining()) {
      throw std::runtime_error(origin + ": truncated weight file, tensor '" + name + "' declares " +
                               std::to_string(numel) + " values but only " +
                               std::to_string(in.remaining()) + " bytes remain");
    }
    std::vector<float> data(numel);
    for (auto& v : data) v = std::bit_cast<float>(in.u32("payload"));
    w.insert(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!in.done()) {
    throw std::runtime_error(origin + ": " + std::to_string(in.remaining()) +
                             " trailing bytes after last tensor");
  }
  return w;
}

void save_weights(const std::string& path, const WeightStore& w) {
  const auto bytes = encode_weights(w);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error(path + ": write failed");
}

WeightStore load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open file");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_weights(bytes, path);
}

void save_tensor(const std::string& path, const std::string& name, const Tensor& t) {
  WeightStore w;
  w.insert(name, t);
  save_weights(path, w);
}

Tensor load_first_tensor(const std::string& path) {
  const WeightStore w = load_weights(path);
  if (w.size() == 0) throw std::runtime_error(path + ": file holds no tensors");
  return w.begin()->second;
}

}  // namespace uit
