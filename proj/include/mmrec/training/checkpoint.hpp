#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mmrec/error.hpp"
#include "mmrec/numerics/tensor.hpp"

namespace mmrec {

/// On disk, all integers little-endian:
///   "UM2R" | u32 version | u32 record count
///   per record: u32 name length | name | u32 rank (= 2) | u64 rows | u64 cols
///               | rows*cols IEEE-754 binary32 values, row-major
///   u64 echo length | echo (UTF-8 JSON text)
inline constexpr std::array<char, 4> kCheckpointMagic = {'U', 'M', '2', 'R'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
  std::vector<float> values;

  bool operator==(const TensorRecord&) const = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::vector<TensorRecord> tensors;
  std::string config_echo;

  const TensorRecord* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  bool operator==(const Checkpoint&) const = default;
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint64_t get_uint(std::istream& in, int bytes, const char* what) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what);
    }
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

inline std::string get_bytes(std::istream& in, std::uint64_t n, const char* what) {
  std::string s(static_cast<std::size_t>(n), '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }
  return s;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kCheckpointMagic.data(), 4);
  detail::put_u32(out, ckpt.version);
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.values.size() != t.rows * t.cols) {
      throw ShapeError("checkpoint tensor '" + t.name + "' has inconsistent shape");
    }
    detail::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::put_u32(out, 2);
    detail::put_u64(out, t.rows);
    detail::put_u64(out, t.cols);
    for (float v : t.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  detail::put_u64(out, ckpt.config_echo.size());
  out.write(ckpt.config_echo.data(), static_cast<std::streamsize>(ckpt.config_echo.size()));
  if (!out) throw IoError("failed writing checkpoint");
}

inline Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kCheckpointMagic) {
    throw FormatError("not a checkpoint: bad magic bytes");
  }
  Checkpoint ckpt;
  ckpt.version = static_cast<std::uint32_t>(detail::get_uint(in, 4, "version"));
  if (ckpt.version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  const auto count = detail::get_uint(in, 4, "record count");
  for (std::uint64_t r = 0; r < count; ++r) {
    TensorRecord t;
    t.name = detail::get_bytes(in, detail::get_uint(in, 4, "name length"), "name");
    const auto rank = detail::get_uint(in, 4, "rank");
    if (rank != 2) throw FormatError("tensor '" + t.name + "' has unsupported rank " + std::to_string(rank));
    t.rows = detail::get_uint(in, 8, "rows");
    t.cols = detail::get_uint(in, 8, "cols");
    t.values.resize(static_cast<std::size_t>(t.rows * t.cols));
    for (auto& v : t.values) {
      v = std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_uint(in, 4, "values")));
    }
    ckpt.tensors.push_back(std::move(t));
  }
  ckpt.config_echo = detail::get_bytes(in, detail::get_uint(in, 8, "echo length"), "config echo");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint");
  return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_checkpoint(out, ckpt);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

template <class T>
TensorRecord to_record(const Tensor<T>& t) {
  TensorRecord r;
  r.name = t.name;
  r.rows = static_cast<std::uint64_t>(t.rows());
  r.cols = static_cast<std::uint64_t>(t.cols());
  r.values.resize(static_cast<std::size_t>(t.size()));
  for (Eigen::Index i = 0; i < t.size(); ++i) r.values[static_cast<std::size_t>(i)] = static_cast<float>(t.data.data()[i]);
  return r;
}

/// Every tensor visited by `model.for_each`, in visiting order.
template <class T, class Model>
Checkpoint collect_checkpoint(Model& model, std::string config_echo) {
  Checkpoint ckpt;
  model.for_each([&](Tensor<T>& t) { ckpt.tensors.push_back(to_record(t)); });
  ckpt.config_echo = std::move(config_echo);
  return ckpt;
}

/// Loads every tensor of `model` from `ckpt` by name; each must exist with
/// the declared shape.
template <class T, class Model>
void restore_checkpoint(Model& model, const Checkpoint& ckpt) {
  model.for_each([&](Tensor<T>& t) {
    const TensorRecord* r = ckpt.find(t.name);
    if (r == nullptr) throw FormatError("checkpoint lacks tensor '" + t.name + "'");
    if (r->rows != static_cast<std::uint64_t>(t.rows()) || r->cols != static_cast<std::uint64_t>(t.cols())) {
      throw ShapeError("checkpoint tensor '" + t.name + "' is " + std::to_string(r->rows) + "x" +
                       std::to_string(r->cols) + ", model expects " + std::to_string(t.rows()) + "x" +
                       std::to_string(t.cols()));
    }
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data.data()[i] = static_cast<T>(r->values[static_cast<std::size_t>(i)]);
  });
}

/// Serializes an RNG engine's state as text.
template <class Rng>
std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

}  // namespace mmrec
