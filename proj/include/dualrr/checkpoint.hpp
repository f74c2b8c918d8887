#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace dualrr {

// Versioned binary state file. Layout (all integers little-endian):
//   magic "DRRCKPT\1" (8 bytes)
//   u32 version
//   u32 meta count, then per entry: u32 key len, key bytes, u32 val len, val bytes
//   u32 array count, then per array: u32 name len, name bytes,
//     u64 rows, u64 cols, rows*cols f64 values
// Meta entries and arrays keep their insertion order, so writing the same
// state twice produces byte-identical files.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  struct Array {
    std::string name;
    std::uint64_t rows = 0;
    std::uint64_t cols = 0;
    std::vector<double> data;
  };

  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<Array> arrays;

  void set_meta(const std::string& key, const std::string& value);
  // Missing key -> UserError (checkpoint from an incompatible run).
  const std::string& meta_at(const std::string& key) const;
  bool has_meta(const std::string& key) const;

  void add_array(const std::string& name, std::uint64_t rows, std::uint64_t cols,
                 std::vector<double> data);
  // Missing name -> UserError.
  const Array& array_at(const std::string& name) const;
  bool has_array(const std::string& name) const;

  void save(const std::string& path) const;      // I/O failure -> Error
  static Checkpoint load(const std::string& path);  // bad file -> UserError
};

}  // namespace dualrr
