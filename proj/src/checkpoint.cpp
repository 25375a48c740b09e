#include "cider/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace cider {

namespace {

constexpr char kMagic[8] = {'C', 'I', 'D', 'E', 'R', 'C', 'K', 'P'};

template <typename U>
void put(std::ostream& os, U value) {
  static_assert(std::is_trivially_copyable_v<U>);
  unsigned char bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get(std::istream& is) {
  unsigned char bytes[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
    throw std::runtime_error("checkpoint truncated");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  U value;
  std::memcpy(&value, bytes, sizeof(U));
  return value;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, arrays.size());
  for (const auto& a : arrays) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(a.name.size()));
    os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    put<std::uint8_t>(os, static_cast<std::uint8_t>(a.dtype));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(a.shape.size()));
    for (auto e : a.shape) put<std::uint64_t>(os, static_cast<std::uint64_t>(e));
    const auto n = static_cast<std::size_t>(a.numel());
    if (a.dtype == DType::Float32) {
      if (a.f32.size() != n) throw std::invalid_argument("checkpoint array size mismatch: " + a.name);
      for (float v : a.f32) put<float>(os, v);
    } else {
      if (a.f64.size() != n) throw std::invalid_argument("checkpoint array size mismatch: " + a.name);
      for (double v : a.f64) put<double>(os, v);
    }
  }
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path.string());
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get<std::uint64_t>(is);
  std::vector<NamedArray> arrays;
  arrays.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray a;
    const auto len = get<std::uint32_t>(is);
    a.name.resize(len);
    if (!is.read(a.name.data(), len)) throw std::runtime_error("checkpoint truncated");
    const auto tag = get<std::uint8_t>(is);
    if (tag > 1) throw std::runtime_error("unknown dtype tag in checkpoint for " + a.name);
    a.dtype = static_cast<DType>(tag);
    const auto rank = get<std::uint32_t>(is);
    for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(static_cast<std::int64_t>(get<std::uint64_t>(is)));
    const auto n = static_cast<std::size_t>(a.numel());
    if (a.dtype == DType::Float32) {
      a.f32.resize(n);
      for (auto& v : a.f32) v = get<float>(is);
    } else {
      a.f64.resize(n);
      for (auto& v : a.f64) v = get<double>(is);
    }
    arrays.push_back(std::move(a));
  }
  return arrays;
}

const NamedArray* find_array(const std::vector<NamedArray>& arrays, const std::string& name) {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

template <typename T>
std::vector<NamedArray> to_arrays(const ParameterSet<T>& params, const std::string& prefix) {
  std::vector<NamedArray> out;
  for (const auto& e : params.entries()) {
    NamedArray a;
    a.name = prefix + e.name;
    a.shape = e.tensor.shape();
    const auto d = e.tensor.data();
    if constexpr (std::is_same_v<T, float>) {
      a.dtype = DType::Float32;
      a.f32.assign(d.begin(), d.end());
    } else {
      a.dtype = DType::Float64;
      a.f64.assign(d.begin(), d.end());
    }
    out.push_back(std::move(a));
  }
  return out;
}

template <typename T>
void load_arrays(ParameterSet<T>& params, const std::vector<NamedArray>& arrays,
                 const std::string& prefix) {
  constexpr DType expected = std::is_same_v<T, float> ? DType::Float32 : DType::Float64;
  for (auto& e : params.entries()) {
    const NamedArray* a = find_array(arrays, prefix + e.name);
    if (a == nullptr) throw std::runtime_error("checkpoint is missing " + prefix + e.name);
    if (a->shape != e.tensor.shape()) {
      throw std::runtime_error("checkpoint shape mismatch for " + e.name + ": " +
                               shape_string(a->shape) + " vs " + shape_string(e.tensor.shape()));
    }
    if (a->dtype != expected) throw std::runtime_error("checkpoint dtype mismatch for " + e.name);
    auto dst = e.tensor.mutable_data();
    if constexpr (std::is_same_v<T, float>) {
      std::copy(a->f32.begin(), a->f32.end(), dst.begin());
    } else {
      std::copy(a->f64.begin(), a->f64.end(), dst.begin());
    }
  }
}

template std::vector<NamedArray> to_arrays(const ParameterSet<float>&, const std::string&);
template std::vector<NamedArray> to_arrays(const ParameterSet<double>&, const std::string&);
template void load_arrays(ParameterSet<float>&, const std::vector<NamedArray>&, const std::string&);
template void load_arrays(ParameterSet<double>&, const std::vector<NamedArray>&,
                          const std::string&);

}  // namespace cider
