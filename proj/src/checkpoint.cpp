#include "dualrr/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <memory>

#include "dualrr/tensor.hpp"

static_assert(std::endian::native == std::endian::little,
              "state files are little-endian; this build targets a little-endian host");
static_assert(sizeof(double) == 8);

namespace dualrr {

namespace {

constexpr char kMagic[8] = {'D', 'R', 'R', 'C', 'K', 'P', 'T', '\1'};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

void write_bytes(std::FILE* f, const void* p, std::size_t n) {
  if (std::fwrite(p, 1, n, f) != n) throw Error("checkpoint: write failed");
}

void write_u32(std::FILE* f, std::uint32_t v) { write_bytes(f, &v, 4); }
void write_u64(std::FILE* f, std::uint64_t v) { write_bytes(f, &v, 8); }

void write_str(std::FILE* f, const std::string& s) {
  if (s.size() > 0xffffffffu) throw Error("checkpoint: string too long");
  write_u32(f, static_cast<std::uint32_t>(s.size()));
  write_bytes(f, s.data(), s.size());
}

void read_bytes(std::FILE* f, void* p, std::size_t n) {
  if (std::fread(p, 1, n, f) != n)
    throw UserError("checkpoint: file truncated or unreadable");
}

std::uint32_t read_u32(std::FILE* f) {
  std::uint32_t v;
  read_bytes(f, &v, 4);
  return v;
}

std::uint64_t read_u64(std::FILE* f) {
  std::uint64_t v;
  read_bytes(f, &v, 8);
  return v;
}

std::string read_str(std::FILE* f) {
  const std::uint32_t n = read_u32(f);
  if (n > (1u << 20)) throw UserError("checkpoint: implausible string length");
  std::string s(n, '\0');
  read_bytes(f, s.data(), n);
  return s;
}

}  // namespace

void Checkpoint::set_meta(const std::string& key, const std::string& value) {
  for (auto& kv : meta)
    if (kv.first == key) {
      kv.second = value;
      return;
    }
  meta.emplace_back(key, value);
}

const std::string& Checkpoint::meta_at(const std::string& key) const {
  for (const auto& kv : meta)
    if (kv.first == key) return kv.second;
  throw UserError("checkpoint: missing meta key '" + key + "'");
}

bool Checkpoint::has_meta(const std::string& key) const {
  for (const auto& kv : meta)
    if (kv.first == key) return true;
  return false;
}

void Checkpoint::add_array(const std::string& name, std::uint64_t rows,
                           std::uint64_t cols, std::vector<double> data) {
  if (data.size() != rows * cols)
    throw Error("checkpoint: array '" + name + "' size mismatch");
  arrays.push_back({name, rows, cols, std::move(data)});
}

const Checkpoint::Array& Checkpoint::array_at(const std::string& name) const {
  for (const Array& a : arrays)
    if (a.name == name) return a;
  throw UserError("checkpoint: missing array '" + name + "'");
}

bool Checkpoint::has_array(const std::string& name) const {
  for (const Array& a : arrays)
    if (a.name == name) return true;
  return false;
}

void Checkpoint::save(const std::string& path) const {
  File f(std::fopen(path.c_str(), "wb"));
  if (!f) throw Error("checkpoint: cannot open '" + path + "' for writing");
  write_bytes(f.get(), kMagic, 8);
  write_u32(f.get(), kVersion);
  write_u32(f.get(), static_cast<std::uint32_t>(meta.size()));
  for (const auto& kv : meta) {
    write_str(f.get(), kv.first);
    write_str(f.get(), kv.second);
  }
  write_u32(f.get(), static_cast<std::uint32_t>(arrays.size()));
  for (const Array& a : arrays) {
    write_str(f.get(), a.name);
    write_u64(f.get(), a.rows);
    write_u64(f.get(), a.cols);
    write_bytes(f.get(), a.data.data(), a.data.size() * sizeof(double));
  }
  if (std::fflush(f.get()) != 0) throw Error("checkpoint: flush failed");
}

Checkpoint Checkpoint::load(const std::string& path) {
  File f(std::fopen(path.c_str(), "rb"));
  if (!f) throw UserError("checkpoint: cannot open '" + path + "'");
  char magic[8];
  read_bytes(f.get(), magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw UserError("checkpoint: bad magic (not a state file)");
  const std::uint32_t version = read_u32(f.get());
  if (version != kVersion)
    throw UserError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  const std::uint32_t n_meta = read_u32(f.get());
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = read_str(f.get());
    std::string v = read_str(f.get());
    ck.meta.emplace_back(std::move(k), std::move(v));
  }
  const std::uint32_t n_arrays = read_u32(f.get());
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    Array a;
    a.name = read_str(f.get());
    a.rows = read_u64(f.get());
    a.cols = read_u64(f.get());
    const std::uint64_t n = a.rows * a.cols;
    if (a.rows != 0 && n / a.rows != a.cols)
      throw UserError("checkpoint: array size overflow");
    if (n > (1ull << 32)) throw UserError("checkpoint: implausible array size");
    a.data.resize(n);
    read_bytes(f.get(), a.data.data(), n * sizeof(double));
    ck.arrays.push_back(std::move(a));
  }
  // Trailing garbage means the file is not what it claims to be.
  char extra;
  if (std::fread(&extra, 1, 1, f.get()) != 0)
    throw UserError("checkpoint: trailing bytes after payload");
  return ck;
}

}  // namespace dualrr
