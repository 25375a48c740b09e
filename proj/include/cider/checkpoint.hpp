#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cider/layers.hpp"

namespace cider {

enum class DType : std::uint8_t { Float32 = 0, Float64 = 1 };

/// One named array in a checkpoint. Exactly one of f32/f64 is populated,
/// according to dtype.
struct NamedArray {
  std::string name;
  DType dtype = DType::Float32;
  Shape shape;
  std::vector<float> f32;
  std::vector<double> f64;

  std::int64_t numel() const { return shape_numel(shape); }
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, all integers little-endian:
///   "CIDERCKP" u32 version, u64 count, then per array:
///   u32 name_len, name bytes, u8 dtype, u32 rank, u64 extents[rank],
///   payload (little-endian IEEE-754, numel elements).
void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path);

template <typename T>
std::vector<NamedArray> to_arrays(const ParameterSet<T>& params, const std::string& prefix = "");

/// Copies every entry of `params` from the matching array (name prefixed by
/// `prefix`). Throws on missing names, shape or dtype mismatch.
template <typename T>
void load_arrays(ParameterSet<T>& params, const std::vector<NamedArray>& arrays,
                 const std::string& prefix = "");

const NamedArray* find_array(const std::vector<NamedArray>& arrays, const std::string& name);

}  // namespace cider
