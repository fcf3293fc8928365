#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "rfnet/common.hpp"
#include "rfnet/tensor.hpp"

namespace rfnet {

// Length-prefixed named records in a flat binary file:
//   "RFN1" magic, then per record [u32 name_len][name][u64 size][payload].
// All integers little-endian. Every file this library writes (datasets,
// checkpoints) shares this container; the record names carry the semantics.

namespace detail {

template <typename T>
void append_raw(std::vector<std::uint8_t>& buf, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::uint8_t tmp[sizeof(T)];
  std::memcpy(tmp, &v, sizeof(T));
  buf.insert(buf.end(), tmp, tmp + sizeof(T));
}

template <typename T>
T read_raw(const std::vector<std::uint8_t>& buf, std::size_t& off) {
  if (off + sizeof(T) > buf.size()) throw IoError("record payload truncated");
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace detail

class RecordWriter {
 public:
  explicit RecordWriter(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open '" + path + "' for writing");
    out_.write("RFN1", 4);
    path_ = path;
  }

  void record(const std::string& name, const std::vector<std::uint8_t>& payload) {
    std::uint32_t nl = static_cast<std::uint32_t>(name.size());
    std::uint64_t pl = payload.size();
    out_.write(reinterpret_cast<const char*>(&nl), sizeof(nl));
    out_.write(name.data(), nl);
    out_.write(reinterpret_cast<const char*>(&pl), sizeof(pl));
    if (pl) out_.write(reinterpret_cast<const char*>(payload.data()), pl);
    if (!out_) throw IoError("write failed on '" + path_ + "'");
  }

  void u64(const std::string& name, std::uint64_t v) {
    std::vector<std::uint8_t> b;
    detail::append_raw(b, v);
    record(name, b);
  }

  void f64(const std::string& name, double v) {
    std::vector<std::uint8_t> b;
    detail::append_raw(b, v);
    record(name, b);
  }

  void str(const std::string& name, const std::string& s) {
    record(name, std::vector<std::uint8_t>(s.begin(), s.end()));
  }

  void u64s(const std::string& name, const std::vector<std::uint64_t>& v) {
    std::vector<std::uint8_t> b;
    for (auto x : v) detail::append_raw(b, x);
    record(name, b);
  }

  void f64s(const std::string& name, const std::vector<double>& v) {
    std::vector<std::uint8_t> b;
    for (auto x : v) detail::append_raw(b, x);
    record(name, b);
  }

  // Shape then values, so the tensor round-trips exactly.
  void tensor(const std::string& name, const Tensor& t) {
    std::vector<std::uint8_t> b;
    detail::append_raw(b, static_cast<std::uint64_t>(t.ndim()));
    for (std::size_t d : t.shape()) detail::append_raw(b, static_cast<std::uint64_t>(d));
    for (std::size_t i = 0; i < t.size(); ++i) detail::append_raw(b, t.at(i));
    record(name, b);
  }

  void close() { out_.close(); }

 private:
  std::ofstream out_;
  std::string path_;
};

class RecordReader {
 public:
  explicit RecordReader(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "RFN1", 4) != 0)
      throw IoError("'" + path + "' is not a record file (bad magic)");
    while (true) {
      std::uint32_t nl;
      in.read(reinterpret_cast<char*>(&nl), sizeof(nl));
      if (in.gcount() == 0) break;  // clean EOF
      if (in.gcount() != sizeof(nl)) throw IoError("truncated record header");
      std::string name(nl, '\0');
      in.read(name.data(), nl);
      std::uint64_t pl;
      in.read(reinterpret_cast<char*>(&pl), sizeof(pl));
      if (!in) throw IoError("truncated record header for '" + name + "'");
      std::vector<std::uint8_t> payload(pl);
      if (pl) in.read(reinterpret_cast<char*>(payload.data()), pl);
      if (!in) throw IoError("truncated payload for '" + name + "'");
      records_[name] = std::move(payload);
    }
  }

  bool has(const std::string& name) const { return records_.count(name) > 0; }

  const std::vector<std::uint8_t>& raw(const std::string& name) const {
    auto it = records_.find(name);
    if (it == records_.end()) throw IoError("missing record '" + name + "'");
    return it->second;
  }

  std::uint64_t u64(const std::string& name) const {
    std::size_t off = 0;
    return detail::read_raw<std::uint64_t>(raw(name), off);
  }

  double f64(const std::string& name) const {
    std::size_t off = 0;
    return detail::read_raw<double>(raw(name), off);
  }

  std::string str(const std::string& name) const {
    const auto& b = raw(name);
    return std::string(b.begin(), b.end());
  }

  std::vector<std::uint64_t> u64s(const std::string& name) const {
    const auto& b = raw(name);
    if (b.size() % 8) throw IoError("record '" + name + "' not a u64 array");
    std::vector<std::uint64_t> v(b.size() / 8);
    std::size_t off = 0;
    for (auto& x : v) x = detail::read_raw<std::uint64_t>(b, off);
    return v;
  }

  std::vector<double> f64s(const std::string& name) const {
    const auto& b = raw(name);
    if (b.size() % 8) throw IoError("record '" + name + "' not a f64 array");
    std::vector<double> v(b.size() / 8);
    std::size_t off = 0;
    for (auto& x : v) x = detail::read_raw<double>(b, off);
    return v;
  }

  Tensor tensor(const std::string& name) const {
    const auto& b = raw(name);
    std::size_t off = 0;
    auto ndim = detail::read_raw<std::uint64_t>(b, off);
    Shape shape;
    for (std::uint64_t i = 0; i < ndim; ++i)
      shape.push_back(static_cast<std::size_t>(detail::read_raw<std::uint64_t>(b, off)));
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = detail::read_raw<double>(b, off);
    if (off != b.size()) throw IoError("record '" + name + "' has trailing bytes");
    return t;
  }

  std::size_t count() const { return records_.size(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(records_.size());
    for (const auto& [name, payload] : records_) out.push_back(name);
    return out;
  }

 private:
  std::map<std::string, std::vector<std::uint8_t>> records_;
};

}  // namespace rfnet
