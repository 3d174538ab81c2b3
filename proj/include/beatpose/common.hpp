// Shared plumbing: error type, seeded RNG, hashing, little-endian codecs, file I/O.
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>

namespace beatpose {

enum class ErrorKind {
  Parse,       // malformed input syntax
  Schema,      // missing/mistyped required field
  Validation,  // value out of its allowed range
  Format,      // structural rule broken (e.g. non-monotonic timestamps)
  Data,        // content unusable (e.g. quaternion drift past tolerance)
  Domain,      // argument outside an operation's domain
  Shape,       // dimension mismatch
  Capacity,    // input too small for the request
  Window,      // not enough frames around a query time
  Manifest,    // dataset manifest inconsistent
  Rollout,     // generation failure
  Coverage,    // trace does not cover a scored event
  Training,    // non-finite loss or gradient
  Config,      // bad configuration key or value
  Io,          // filesystem failure
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Schema: return "schema";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Format: return "format";
    case ErrorKind::Data: return "data";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Capacity: return "capacity";
    case ErrorKind::Window: return "window";
    case ErrorKind::Manifest: return "manifest";
    case ErrorKind::Rollout: return "rollout";
    case ErrorKind::Coverage: return "coverage";
    case ErrorKind::Training: return "training";
    case ErrorKind::Config: return "config";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

// Single exception type for the whole library. `detail` carries structured
// context (field names, row numbers, ...) so the CLI can emit a machine
// readable envelope without string scraping.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message,
        std::map<std::string, std::string> detail = {})
      : std::runtime_error(std::move(message)),
        kind_(kind),
        detail_(std::move(detail)) {}

  ErrorKind kind() const { return kind_; }
  const std::map<std::string, std::string>& detail() const { return detail_; }

 private:
  ErrorKind kind_;
  std::map<std::string, std::string> detail_;
};

// ---------------------------------------------------------------------------
// Seeded randomness. All sampling goes through Rng so results do not depend
// on the standard library's distribution implementations.

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stage-local seed: hash the label, then mix with the root seed.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a 64
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t state = root ^ h;
  std::uint64_t out = splitmix64(state);
  out ^= splitmix64(state);
  return out;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw Error(ErrorKind::Domain, "Rng::below: n must be positive");
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  int below_int(int n) { return static_cast<int>(below(static_cast<std::uint64_t>(n))); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices from [0, n), ascending.
  std::vector<std::size_t> sample_sorted(std::size_t k, std::size_t n) {
    if (k > n)
      throw Error(ErrorKind::Capacity, "sample_sorted: k exceeds population");
    // Floyd's algorithm; set semantics, then sort.
    std::vector<std::size_t> picked;
    picked.reserve(k);
    for (std::size_t j = n - k; j < n; ++j) {
      std::size_t t = static_cast<std::size_t>(below(j + 1));
      bool seen = false;
      for (std::size_t p : picked)
        if (p == t) { seen = true; break; }
      picked.push_back(seen ? j : t);
    }
    std::sort(picked.begin(), picked.end());
    return picked;
  }

 private:
  std::mt19937_64 gen_;
};

// ---------------------------------------------------------------------------
// SHA-256 (libcrypto).

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error(ErrorKind::Io, "sha256 digest failed");
  }
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// File I/O.

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(ErrorKind::Io, "cannot open file: " + path.string(),
                {{"path", path.string()}});
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad())
    throw Error(ErrorKind::Io, "read failed: " + path.string(),
                {{"path", path.string()}});
  return std::move(buf).str();
}

inline void write_text_file(const std::filesystem::path& path,
                            std::string_view content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw Error(ErrorKind::Io, "cannot open file for write: " + path.string(),
                {{"path", path.string()}});
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out)
    throw Error(ErrorKind::Io, "write failed: " + path.string(),
                {{"path", path.string()}});
}

inline std::string sha256_hex_file(const std::filesystem::path& path) {
  return sha256_hex(read_text_file(path));
}

// ---------------------------------------------------------------------------
// Little-endian codecs. Append to a string buffer / read from a cursor.

inline void put_u32(std::string& buf, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  buf.append(b, 4);
}

inline void put_u64(std::string& buf, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  buf.append(b, 8);
}

inline void put_f32(std::string& buf, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(buf, bits);
}

inline void put_f64(std::string& buf, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(buf, bits);
}

// Bounds-checked reader over an in-memory buffer.
class Cursor {
 public:
  explicit Cursor(std::string_view data) : data_(data) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  std::string_view take(std::size_t n) {
    if (remaining() < n)
      throw Error(ErrorKind::Parse, "unexpected end of binary data",
                  {{"offset", std::to_string(pos_)}});
    std::string_view out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint32_t u32() {
    std::string_view b = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i)
      v = (v << 8) | static_cast<unsigned char>(b[static_cast<std::size_t>(i)]);
    return v;
  }

  std::uint64_t u64() {
    std::string_view b = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i)
      v = (v << 8) | static_cast<unsigned char>(b[static_cast<std::size_t>(i)]);
    return v;
  }

  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace beatpose
