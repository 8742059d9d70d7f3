#pragma once

// Little-endian binary readers/writers for the versioned file containers.
// Internal to the library; not installed.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "fsban/errors.hpp"

namespace fsban::detail {

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path)
      : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw SchemaError("cannot open file for writing: " + path);
  }

  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i32(std::int32_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }

  void doubles(std::span<const double> vs) {
    u64(vs.size());
    raw(vs.data(), vs.size() * sizeof(double));
  }

  void ints(std::span<const int> vs) {
    u64(vs.size());
    for (int v : vs) i32(v);
  }

  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }

  void close() {
    out_.close();
    if (!out_) throw SchemaError("write failed while closing file");
  }

 private:
  void raw(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw SchemaError("write failed");
  }

  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw SchemaError("cannot open file: " + path);
  }

  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  std::int32_t i32() { return get<std::int32_t>(); }
  double f64() { return get<double>(); }

  std::vector<double> doubles(std::uint64_t max_count = 1u << 28) {
    const std::uint64_t n = u64();
    if (n > max_count) throw SchemaError(path_ + ": implausible array length");
    std::vector<double> out(n);
    raw(out.data(), n * sizeof(double));
    return out;
  }

  std::vector<int> ints(std::uint64_t max_count = 1u << 28) {
    const std::uint64_t n = u64();
    if (n > max_count) throw SchemaError(path_ + ": implausible array length");
    std::vector<int> out(n);
    for (auto& v : out) v = i32();
    return out;
  }

  std::string str(std::uint64_t max_len = 1u << 24) {
    const std::uint64_t n = u64();
    if (n > max_len) throw SchemaError(path_ + ": implausible string length");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }

  void expect_magic(std::uint32_t magic, std::uint32_t version, const char* what) {
    if (u32() != magic) throw SchemaError(path_ + ": not a " + what + " file (bad magic)");
    const std::uint32_t v = u32();
    if (v != version) {
      throw SchemaError(path_ + ": unsupported " + std::string(what) + " schema version " +
                        std::to_string(v));
    }
  }

  void expect_eof(const char* what) {
    char c;
    in_.read(&c, 1);
    if (!in_.eof()) throw SchemaError(path_ + ": trailing bytes in " + what + " file");
  }

 private:
  template <typename T>
  T get() {
    T v;
    raw(&v, sizeof v);
    return v;
  }

  void raw(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw SchemaError(path_ + ": truncated file");
    }
  }

  std::ifstream in_;
  std::string path_;
};

}  // namespace fsban::detail
