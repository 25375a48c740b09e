#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cider/image.hpp"

namespace cider {

struct CloudPoint {
  float x = 0, y = 0, z = 0;
  std::uint8_t r = 0, g = 0, b = 0;
  // Number of views (reference included) that agreed on the point.
  int support = 0;
};

struct PointCloud {
  std::vector<CloudPoint> points;
};

/// Single-channel PFM ("Pf"), scale -1 (little-endian), rows stored
/// bottom-to-top. Reading also accepts big-endian (positive scale) files.
void write_pfm(const std::filesystem::path& path, const Map2D& map);
Map2D read_pfm(const std::filesystem::path& path);

/// 8-bit RGB PNG. Reading converts any PNG to RGB floats in [0, 1].
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

/// PLY with vertex{x,y,z float, red,green,blue uchar}, binary little-endian
/// by default or ASCII. Reading accepts either encoding and ignores extra
/// vertex properties of standard scalar types.
void write_ply(const std::filesystem::path& path, const PointCloud& cloud, bool binary = true);
PointCloud read_ply(const std::filesystem::path& path);

}  // namespace cider
