#pragma once

// Binary checkpoint: "GRAF", u32 version, 32-byte config hash, u64 iteration, then a
// name-sorted tensor table {u32 name length, name, u8 dtype, u8 rank, u64 dims[rank], raw
// little-endian data} read until end of file.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "graf/diffcore/tensor.hpp"

namespace graf::train {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { kF32 = 1, kF64 = 2, kU8 = 3, kU64 = 4 };

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kU8: return 1;
    case DType::kU64: return 8;
  }
  throw CheckpointError("unknown dtype tag " + std::to_string(static_cast<int>(t)));
}

template <typename T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) return DType::kF32;
  else if constexpr (std::is_same_v<T, double>) return DType::kF64;
  else if constexpr (std::is_same_v<T, std::uint8_t>) return DType::kU8;
  else if constexpr (std::is_same_v<T, std::uint64_t>) return DType::kU64;
  else static_assert(sizeof(T) == 0, "unsupported checkpoint dtype");
}

struct TensorRecord {
  DType dtype = DType::kF32;
  std::vector<std::uint64_t> dims;
  std::vector<std::uint8_t> bytes;

  template <typename T>
  static TensorRecord from(const ad::Tensor<T>& t) {
    TensorRecord r;
    r.dtype = dtype_of<T>();
    for (std::size_t d : t.shape()) r.dims.push_back(d);
    r.bytes.resize(t.size() * sizeof(T));
    if (!r.bytes.empty()) std::memcpy(r.bytes.data(), t.data(), r.bytes.size());
    return r;
  }

  template <typename T>
  static TensorRecord from_values(const std::vector<T>& v) {
    return from(ad::Tensor<T>(ad::Shape{v.size()}, v));
  }

  template <typename T>
  ad::Tensor<T> as(const std::string& name) const {
    if (dtype != dtype_of<T>()) throw CheckpointError("tensor '" + name + "' has dtype tag " + std::to_string(static_cast<int>(dtype)) +
                                                      ", expected " + std::to_string(static_cast<int>(dtype_of<T>())));
    ad::Shape shape(dims.begin(), dims.end());
    ad::Tensor<T> t(shape);
    if (bytes.size() != t.size() * sizeof(T)) throw CheckpointError("tensor '" + name + "' payload size mismatch");
    if (!bytes.empty()) std::memcpy(t.data(), bytes.data(), bytes.size());
    return t;
  }
};

struct Checkpoint {
  std::array<std::uint8_t, 32> config_hash{};
  std::uint64_t iteration = 0;
  std::map<std::string, TensorRecord> tensors;

  const TensorRecord& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError("checkpoint has no tensor '" + name + "'");
    return it->second;
  }
};

namespace detail {

template <typename U>
void put(std::vector<std::uint8_t>& out, U v) {
  std::uint8_t b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  out.insert(out.end(), b, b + sizeof(U));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& d, std::string path) : d_(d), path_(std::move(path)) {}
  bool done() const { return pos_ == d_.size(); }
  std::size_t pos() const { return pos_; }

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, d_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  void bytes(void* dst, std::size_t n, const char* what) {
    need(n, what);
    if (n) std::memcpy(dst, d_.data() + pos_, n);
    pos_ += n;
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (d_.size() - pos_ < n) {
      throw CheckpointError(path_ + ": truncated while reading " + what + " at byte " + std::to_string(pos_));
    }
  }
  const std::vector<std::uint8_t>& d_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  std::vector<std::uint8_t> out{'G', 'R', 'A', 'F'};
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  out.insert(out.end(), c.config_hash.begin(), c.config_hash.end());
  detail::put<std::uint64_t>(out, c.iteration);
  for (const auto& [name, rec] : c.tensors) {
    if (rec.dims.size() > 255) throw CheckpointError("tensor '" + name + "' rank exceeds 255");
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<std::uint8_t>(rec.dtype));
    out.push_back(static_cast<std::uint8_t>(rec.dims.size()));
    for (auto d : rec.dims) detail::put<std::uint64_t>(out, d);
    out.insert(out.end(), rec.bytes.begin(), rec.bytes.end());
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& data, const std::string& path = "<memory>") {
  detail::Reader r(data, path);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, "GRAF", 4) != 0) throw CheckpointError(path + ": bad magic bytes (not a checkpoint)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(path + ": unsupported format version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  r.bytes(c.config_hash.data(), 32, "config hash");
  c.iteration = r.get<std::uint64_t>("iteration");
  std::string prev;
  while (!r.done()) {
    const auto len = r.get<std::uint32_t>("name length");
    if (len > data.size() - r.pos()) throw CheckpointError(path + ": truncated tensor name at byte " + std::to_string(r.pos()));
    std::string name(len, '\0');
    r.bytes(name.data(), len, "tensor name");
    if (!c.tensors.empty() && !(prev < name)) throw CheckpointError(path + ": tensor table not sorted at '" + name + "'");
    TensorRecord rec;
    const auto tag = r.get<std::uint8_t>("dtype");
    rec.dtype = static_cast<DType>(tag);
    const std::size_t es = dtype_size(rec.dtype);
    const auto rank = r.get<std::uint8_t>("rank");
    std::uint64_t n = 1;
    for (int i = 0; i < rank; ++i) {
      rec.dims.push_back(r.get<std::uint64_t>("dims"));
      if (__builtin_mul_overflow(n, rec.dims.back(), &n)) throw CheckpointError(path + ": tensor '" + name + "' dims overflow");
    }
    if (n > data.size() / es) throw CheckpointError(path + ": tensor '" + name + "' larger than the file");
    rec.bytes.resize(n * es);
    r.bytes(rec.bytes.data(), rec.bytes.size(), "tensor data");
    prev = name;
    c.tensors.emplace(std::move(name), std::move(rec));
  }
  return c;
}

// Written to a sibling temporary first, then renamed into place.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const auto bytes = encode_checkpoint(c);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(data, path.string());
}

// Rejects a checkpoint whose tensor names differ from `expected`.
inline void require_names(const Checkpoint& c, const std::set<std::string>& expected) {
  std::string missing, extra;
  for (const auto& n : expected)
    if (!c.tensors.count(n)) missing += " " + n;
  for (const auto& [n, r] : c.tensors)
    if (!expected.count(n)) extra += " " + n;
  if (!missing.empty() || !extra.empty()) {
    throw CheckpointError("checkpoint tensor names do not match the model;" + (missing.empty() ? std::string() : " missing:" + missing) +
                          (extra.empty() ? std::string() : " unexpected:" + extra));
  }
}

}  // namespace graf::train
