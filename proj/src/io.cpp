#include "cider/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>

namespace cider {

namespace {

template <typename U>
U byteswap_if(U v, bool swap) {
  if (!swap) return v;
  unsigned char b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(b[i], b[sizeof(U) - 1 - i]);
  std::memcpy(&v, b, sizeof(U));
  return v;
}

constexpr bool kHostLittle = std::endian::native == std::endian::little;

std::string read_token(std::istream& is) {
  std::string tok;
  if (!(is >> tok)) throw std::runtime_error("unexpected end of header");
  return tok;
}

}  // namespace

void write_pfm(const std::filesystem::path& path, const Map2D& map) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "Pf\n" << map.width << ' ' << map.height << "\n-1.0\n";
  for (int y = map.height - 1; y >= 0; --y) {
    for (int x = 0; x < map.width; ++x) {
      const float v = byteswap_if(map.at(x, y), !kHostLittle);
      os.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

Map2D read_pfm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  try {
    const std::string magic = read_token(is);
    if (magic == "PF") throw std::runtime_error("three-channel PFM is not a depth map");
    if (magic != "Pf") throw std::runtime_error("bad PFM magic '" + magic + "'");
    const int width = std::stoi(read_token(is));
    const int height = std::stoi(read_token(is));
    const double scale = std::stod(read_token(is));
    is.get();
    if (width <= 0 || height <= 0 || scale == 0.0) throw std::runtime_error("bad PFM header");
    const bool swap = (scale < 0) != kHostLittle;
    Map2D map(width, height);
    for (int y = height - 1; y >= 0; --y) {
      for (int x = 0; x < width; ++x) {
        float v;
        if (!is.read(reinterpret_cast<char*>(&v), sizeof(v))) throw std::runtime_error("truncated data");
        map.at(x, y) = byteswap_if(v, swap);
      }
    }
    return map;
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// libpng reports through these instead of printing to stderr; the message is
// kept for the exception thrown after longjmp.
struct PngMessage {
  char text[256] = "";
};

void png_error_to_buffer(png_structp png, png_const_charp message) {
  auto* out = static_cast<PngMessage*>(png_get_error_ptr(png));
  std::snprintf(out->text, sizeof(out->text), "%s", message);
  png_longjmp(png, 1);
}

void png_ignore_warning(png_structp, png_const_charp) {}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 3 || image.empty()) throw std::invalid_argument("write_png expects RGB");
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot write " + path.string());
  PngMessage message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_error_to_buffer,
                                            png_ignore_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialization failed");
  }
  std::vector<png_byte> rows(static_cast<std::size_t>(image.width) * image.height * 3);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const float v = std::clamp(image.pixels[i], 0.0f, 1.0f);
    rows[i] = static_cast<png_byte>(std::lround(v * 255.0f));
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng error writing " + path.string() + ": " + message.text);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    png_write_row(png, rows.data() + static_cast<std::size_t>(y) * image.width * 3);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open " + path.string());
  PngMessage message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_error_to_buffer,
                                           png_ignore_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("libpng initialization failed");
  }
  Image image;
  std::vector<png_byte> rows;
  std::vector<png_bytep> ptrs;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng error reading " + path.string() + ": " + message.text);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  rows.resize(static_cast<std::size_t>(width) * height * 3);
  ptrs.resize(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) ptrs[y] = rows.data() + static_cast<std::size_t>(y) * width * 3;
  png_read_image(png, ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  image = Image(width, height, 3);
  for (std::size_t i = 0; i < rows.size(); ++i) image.pixels[i] = rows[i] / 255.0f;
  return image;
}

void write_ply(const std::filesystem::path& path, const PointCloud& cloud, bool binary) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n"
     << "element vertex " << cloud.points.size() << "\n"
     << "property float x\nproperty float y\nproperty float z\n"
     << "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  if (binary) {
    std::vector<char> buf(cloud.points.size() * 15);
    char* p = buf.data();
    for (const auto& pt : cloud.points) {
      for (float v : {pt.x, pt.y, pt.z}) {
        v = byteswap_if(v, !kHostLittle);
        std::memcpy(p, &v, 4);
        p += 4;
      }
      *p++ = static_cast<char>(pt.r);
      *p++ = static_cast<char>(pt.g);
      *p++ = static_cast<char>(pt.b);
    }
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  } else {
    char line[160];
    for (const auto& pt : cloud.points) {
      std::snprintf(line, sizeof(line), "%.9g %.9g %.9g %u %u %u\n", pt.x, pt.y, pt.z, pt.r, pt.g,
                    pt.b);
      os << line;
    }
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

namespace {

struct PlyProperty {
  std::string name;
  std::string type;
};

int ply_type_size(const std::string& type) {
  if (type == "char" || type == "uchar" || type == "int8" || type == "uint8") return 1;
  if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") return 2;
  if (type == "int" || type == "uint" || type == "float" || type == "int32" || type == "uint32" ||
      type == "float32")
    return 4;
  if (type == "double" || type == "float64") return 8;
  throw std::runtime_error("unsupported PLY property type '" + type + "'");
}

double decode_scalar(const char* p, const std::string& type, bool swap) {
  auto get = [&](auto tag) {
    decltype(tag) v;
    std::memcpy(&v, p, sizeof(v));
    return static_cast<double>(byteswap_if(v, swap));
  };
  if (type == "char" || type == "int8") return get(std::int8_t{});
  if (type == "uchar" || type == "uint8") return get(std::uint8_t{});
  if (type == "short" || type == "int16") return get(std::int16_t{});
  if (type == "ushort" || type == "uint16") return get(std::uint16_t{});
  if (type == "int" || type == "int32") return get(std::int32_t{});
  if (type == "uint" || type == "uint32") return get(std::uint32_t{});
  if (type == "float" || type == "float32") return get(float{});
  return get(double{});
}

}  // namespace

PointCloud read_ply(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != "ply") throw std::runtime_error(path.string() + ": not a PLY file");
  std::string format;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
  bool in_vertex = false, seen_vertex = false;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      ls >> format;
    } else if (key == "element") {
      std::string name;
      std::size_t n = 0;
      ls >> name >> n;
      if (seen_vertex && name != "vertex") {
        in_vertex = false;
        continue;
      }
      if (name != "vertex") throw std::runtime_error(path.string() + ": vertex must be the first element");
      in_vertex = seen_vertex = true;
      count = n;
    } else if (key == "property" && in_vertex) {
      std::string type, name;
      ls >> type;
      if (type == "list") throw std::runtime_error(path.string() + ": list vertex properties unsupported");
      ls >> name;
      props.push_back({name, type});
    } else if (key == "end_header") {
      break;
    }
  }
  if (format != "binary_little_endian" && format != "binary_big_endian" && format != "ascii") {
    throw std::runtime_error(path.string() + ": unsupported PLY format '" + format + "'");
  }
  auto index_of = [&](const std::string& name) -> int {
    for (std::size_t i = 0; i < props.size(); ++i)
      if (props[i].name == name) return static_cast<int>(i);
    return -1;
  };
  const int ix = index_of("x"), iy = index_of("y"), iz = index_of("z");
  const int ir = index_of("red"), ig = index_of("green"), ib = index_of("blue");
  if (ix < 0 || iy < 0 || iz < 0) throw std::runtime_error(path.string() + ": missing x/y/z");

  PointCloud cloud;
  cloud.points.resize(count);
  std::vector<double> values(props.size());
  std::size_t stride = 0;
  for (const auto& p : props) stride += static_cast<std::size_t>(ply_type_size(p.type));
  std::vector<char> record(stride);
  const bool swap = (format == "binary_big_endian") == kHostLittle;
  for (std::size_t n = 0; n < count; ++n) {
    if (format == "ascii") {
      for (auto& v : values)
        if (!(is >> v)) throw std::runtime_error(path.string() + ": truncated vertex data");
    } else {
      if (!is.read(record.data(), static_cast<std::streamsize>(stride))) {
        throw std::runtime_error(path.string() + ": truncated vertex data");
      }
      std::size_t off = 0;
      for (std::size_t i = 0; i < props.size(); ++i) {
        values[i] = decode_scalar(record.data() + off, props[i].type, swap);
        off += static_cast<std::size_t>(ply_type_size(props[i].type));
      }
    }
    CloudPoint& pt = cloud.points[n];
    pt.x = static_cast<float>(values[ix]);
    pt.y = static_cast<float>(values[iy]);
    pt.z = static_cast<float>(values[iz]);
    if (ir >= 0 && ig >= 0 && ib >= 0) {
      pt.r = static_cast<std::uint8_t>(values[ir]);
      pt.g = static_cast<std::uint8_t>(values[ig]);
      pt.b = static_cast<std::uint8_t>(values[ib]);
    }
  }
  return cloud;
}

}  // namespace cider
