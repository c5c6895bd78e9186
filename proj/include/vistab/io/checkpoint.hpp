#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vistab/numerics/nn.hpp"

namespace vistab {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bumped whenever the set, names or shapes of parameter records change.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ParamRecord {
  std::string name;
  Shape shape;
  std::vector<float> data;

  friend bool operator==(const ParamRecord&, const ParamRecord&) = default;
};

/// On disk, all integers and floats little-endian:
///   "VSTB" | u32 version | u32 n_records |
///   n x (u32 name_len, name, u32 rank, rank x u64 dim, prod(dims) x f32) |
///   u32 config_len, config text | u32 rng_len, rng state text
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::vector<ParamRecord> records;
  std::string config;
  std::string rng_state;

  const ParamRecord* find(const std::string& name) const {
    for (const auto& r : records)
      if (r.name == name) return &r;
    return nullptr;
  }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint io assumes a little-endian host");

template <class U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class U>
U get(std::istream& is, const char* what) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError(std::string("truncated checkpoint: ") + what);
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, std::uint32_t(s.size()));
  os.write(s.data(), std::streamsize(s.size()));
}

inline std::string get_string(std::istream& is, const char* what) {
  const auto n = get<std::uint32_t>(is, what);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw CheckpointError(std::string("truncated checkpoint: ") + what);
  return s;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& c) {
  os.write("VSTB", 4);
  detail::put<std::uint32_t>(os, c.version);
  detail::put<std::uint32_t>(os, std::uint32_t(c.records.size()));
  for (const auto& r : c.records) {
    detail::put_string(os, r.name);
    detail::put<std::uint32_t>(os, std::uint32_t(r.shape.size()));
    for (auto d : r.shape) detail::put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(r.data.data()), std::streamsize(r.data.size() * sizeof(float)));
  }
  detail::put_string(os, c.config);
  detail::put_string(os, c.rng_state);
}

inline Checkpoint read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "VSTB", 4) != 0) throw CheckpointError("not a checkpoint (bad magic)");
  Checkpoint c;
  c.version = detail::get<std::uint32_t>(is, "version");
  if (c.version != kCheckpointVersion)
    throw CheckpointError("checkpoint schema version " + std::to_string(c.version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  const auto n = detail::get<std::uint32_t>(is, "record count");
  for (std::uint32_t i = 0; i < n; ++i) {
    ParamRecord r;
    r.name = detail::get_string(is, "record name");
    const auto rank = detail::get<std::uint32_t>(is, "rank");
    std::size_t count = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      r.shape.push_back(std::size_t(detail::get<std::uint64_t>(is, "dims")));
      count *= r.shape.back();
    }
    r.data.resize(count);
    if (count && !is.read(reinterpret_cast<char*>(r.data.data()), std::streamsize(count * sizeof(float))))
      throw CheckpointError("truncated checkpoint: data of " + r.name);
    c.records.push_back(std::move(r));
  }
  c.config = detail::get_string(is, "config");
  c.rng_state = detail::get_string(is, "rng state");
  if (is.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes after checkpoint");
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot write checkpoint '" + path + "'");
  write_checkpoint(os, c);
  if (!os) throw CheckpointError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("missing checkpoint '" + path + "'");
  return read_checkpoint(is);
}

/// Appends float32 copies of every parameter.
template <std::floating_point T>
void append_records(Checkpoint& c, const ParamList<T>& params) {
  for (const auto* p : params) {
    ParamRecord r{p->name(), p->value().shape(), {}};
    for (T v : p->value().data()) r.data.push_back(float(v));
    c.records.push_back(std::move(r));
  }
}

/// Copies records into parameters by name; every parameter must be present
/// with a matching shape.
template <std::floating_point T>
void restore_records(const Checkpoint& c, const ParamList<T>& params) {
  for (auto* p : params) {
    const auto* r = c.find(p->name());
    if (!r) throw CheckpointError("checkpoint has no record '" + p->name() + "'");
    if (r->shape != p->value().shape()) throw CheckpointError("shape mismatch for '" + p->name() + "'");
    auto& v = p->value();
    for (std::size_t k = 0; k < r->data.size(); ++k) v[k] = T(r->data[k]);
  }
}

/// FNV-1a over "name:d0xd1...;" of each parameter, in order. Pins the
/// record layout that a given checkpoint version promises.
template <std::floating_point T>
std::uint64_t schema_fingerprint(const ParamList<T>& params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const std::string& s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 1099511628211ull;
    }
  };
  for (const auto* p : params) {
    std::string s = p->name() + ":";
    for (auto d : p->value().shape()) s += std::to_string(d) + "x";
    mix(s + ";");
  }
  return h;
}

}  // namespace vistab
