#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "scribe/tensor.hpp"

namespace scribe {

/// Seedable generator. Draws are built from raw 64-bit words so streams are
/// identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi].
  long long integer(long long lo, long long hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<long long>(engine_() % span);
  }

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      const auto j = static_cast<std::size_t>(engine_() % i);
      std::swap(idx[i - 1], idx[j]);
    }
    return idx;
  }

 private:
  std::mt19937_64 engine_;
};

/// Mixes a base seed with a stream tag (phase, epoch, sample index, ...).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// A trainable tensor. Its gradient slot is the accumulator; optimizer state
/// lives beside it under named entries of the same shape.
struct Parameter {
  std::string name;
  TensorPtr value;
  std::map<std::string, Tensor> state;

  Tensor& state_entry(const std::string& key) {
    auto it = state.find(key);
    if (it == state.end()) it = state.emplace(key, Tensor(value->shape())).first;
    return it->second;
  }
};

/// Ordered, name-addressable collection of parameters.
class ParameterSet {
 public:
  /// Registers a zero-filled parameter with a gradient accumulator.
  TensorPtr add(const std::string& name, Shape shape) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
    auto t = make_tensor(std::move(shape));
    t->ensure_grad();
    index_[name] = params_.size();
    params_.push_back(Parameter{name, t, {}});
    return t;
  }

  std::size_t size() const { return params_.size(); }
  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }

  Parameter* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  const Parameter* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  void zero_grad() {
    for (auto& p : params_) p.value->zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value->size();
    return n;
  }

  /// FNV-1a over names and raw value bits, optionally restricted to names
  /// with the given prefix.
  std::uint64_t checksum(const std::string& prefix = "") const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* bytes, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(bytes);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& p : params_) {
      if (p.name.rfind(prefix, 0) != 0) continue;
      mix(p.name.data(), p.name.size());
      mix(p.value->data().data(), p.value->size() * sizeof(double));
    }
    return h;
  }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
inline void init_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double r = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (auto& v : t.data()) v = rng.uniform(-r, r);
}

// ---------------------------------------------------------------------------
// checkpoint file
//
//   magic "SCRIBEPM" | u32 version | u64 count |
//   count x ( u32 name-bytes | name | u32 rank | rank x u64 extent | f64 data... )
//
// All integers and floats little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'S', 'C', 'R', 'I', 'B', 'E', 'P', 'M'};

namespace detail {

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const std::string& path) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw IoError("truncated checkpoint " + path);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace detail

struct NamedTensor {
  std::string name;
  Tensor value;
};

inline void save_tensors(const std::filesystem::path& path,
                         const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_le<std::uint32_t>(os, kCheckpointVersion);
  detail::write_le<std::uint64_t>(os, tensors.size());
  for (const auto& t : tensors) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.value.rank()));
    for (auto e : t.value.shape()) detail::write_le<std::uint64_t>(os, e);
    for (double v : t.value.data()) detail::write_le<double>(os, v);
  }
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

inline std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + p);
  char magic[sizeof(kCheckpointMagic)];
  if (!is.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw IoError("not a parameter checkpoint: " + p);
  }
  const auto version = detail::read_le<std::uint32_t>(is, p);
  if (version != kCheckpointVersion) {
    throw IoError(detail::concat("unsupported checkpoint version ", version, " in ", p));
  }
  const auto count = detail::read_le<std::uint64_t>(is, p);
  std::vector<NamedTensor> out;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto len = detail::read_le<std::uint32_t>(is, p);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw IoError("truncated checkpoint " + p);
    const auto rank = detail::read_le<std::uint32_t>(is, p);
    Shape shape(rank);
    for (auto& e : shape) e = detail::read_le<std::uint64_t>(is, p);
    std::vector<double> data(shape_size(shape));
    for (auto& v : data) v = detail::read_le<double>(is, p);
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return out;
}

inline void save_parameters(const std::filesystem::path& path, const ParameterSet& params) {
  std::vector<NamedTensor> tensors;
  for (const auto& p : params.all()) {
    Tensor copy(p.value->shape(), p.value->values());
    tensors.push_back({p.name, std::move(copy)});
  }
  save_tensors(path, tensors);
}

/// Overwrites values of `params` from a checkpoint. Every parameter in the set
/// must be present with a matching shape.
inline void load_parameters(const std::filesystem::path& path, ParameterSet& params) {
  auto tensors = load_tensors(path);
  std::map<std::string, Tensor*> by_name;
  for (auto& t : tensors) by_name[t.name] = &t.value;
  for (auto& p : params.all()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      throw IoError("checkpoint " + path.string() + " lacks parameter " + p.name);
    }
    if (it->second->shape() != p.value->shape()) {
      throw DimensionError("checkpoint parameter " + p.name + " has shape " +
                           shape_str(it->second->shape()) + ", model expects " +
                           shape_str(p.value->shape()));
    }
    std::copy(it->second->data().begin(), it->second->data().end(),
              p.value->data().begin());
  }
}

}  // namespace scribe
