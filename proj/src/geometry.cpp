#include "cider/geometry.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cider {

namespace {
std::atomic<std::uint64_t> g_clamped{0};

void check_range(double d_min, double d_max, int count) {
  if (count < 2) throw std::invalid_argument("depth sampling needs at least 2 hypotheses");
  if (!(d_min > 0.0) || !(d_min < d_max)) {
    throw std::invalid_argument("depth range must satisfy 0 < d_min < d_max, got [" +
                                std::to_string(d_min) + ", " + std::to_string(d_max) + "]");
  }
}

double clamp_ordinal(double k, int count) {
  const double hi = count - 1;
  if (k < 0.0 || k > hi) {
    g_clamped.fetch_add(1, std::memory_order_relaxed);
    return std::clamp(k, 0.0, hi);
  }
  return k;
}
}  // namespace

void CameraView::validate() const {
  const Eigen::Matrix3d residual = R.transpose() * R - Eigen::Matrix3d::Identity();
  if (residual.cwiseAbs().maxCoeff() >= 1e-6 || R.determinant() <= 0.0) {
    throw std::invalid_argument("camera rotation is not orthonormal with det 1");
  }
  if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0 || K(2, 2) != 1.0) {
    throw std::invalid_argument("camera intrinsics must be upper triangular with K(2,2) = 1");
  }
  if (!(K(0, 0) > 0.0) || !(K(1, 1) > 0.0)) {
    throw std::invalid_argument("camera focal lengths must be positive");
  }
  if (!(d_min > 0.0) || !(d_min < d_max)) {
    throw std::invalid_argument("camera depth range must satisfy 0 < d_min < d_max");
  }
}

Eigen::Vector3d CameraView::unproject(double u, double v, double depth) const {
  const Eigen::Vector3d ray = K.inverse() * Eigen::Vector3d(u, v, 1.0);
  return camera_to_world(ray * depth);
}

CameraView CameraView::scaled(double scale) const {
  CameraView out = *this;
  out.image = Image();
  out.K.row(0) *= scale;
  out.K.row(1) *= scale;
  return out;
}

bool CameraView::same_camera(const CameraView& other, double tol) const {
  return (K - other.K).cwiseAbs().maxCoeff() <= tol && (R - other.R).cwiseAbs().maxCoeff() <= tol &&
         (t - other.t).cwiseAbs().maxCoeff() <= tol;
}

RelativePose relative_pose(const CameraView& ref, const CameraView& src) {
  RelativePose pose;
  pose.R = src.R * ref.R.transpose();
  pose.t = src.t - pose.R * ref.t;
  return pose;
}

PixelProjector::PixelProjector(const CameraView& ref, const CameraView& src) {
  const RelativePose pose = relative_pose(ref, src);
  M_ = src.K * pose.R * ref.K.inverse();
  b_ = src.K * pose.t;
}

ProjectedPoint project(const Eigen::Vector2d& pixel, double depth, const CameraView& ref,
                       const CameraView& src) {
  if (!(depth > 0.0)) throw std::invalid_argument("project: depth must be positive");
  return PixelProjector(ref, src).project(pixel.x(), pixel.y(), depth);
}

double ordinal_to_depth(double k, double d_min, double d_max, int count) {
  check_range(d_min, d_max, count);
  k = clamp_ordinal(k, count);
  if (k == 0.0) return d_max;
  if (k == count - 1) return d_min;
  const double inv = (1.0 / d_min - 1.0 / d_max) * k / (count - 1) + 1.0 / d_max;
  return 1.0 / inv;
}

double depth_to_ordinal(double depth, double d_min, double d_max, int count) {
  check_range(d_min, d_max, count);
  return (1.0 / depth - 1.0 / d_max) / (1.0 / d_min - 1.0 / d_max) * (count - 1);
}

double ordinal_to_depth_uniform(double k, double d_min, double d_max, int count) {
  check_range(d_min, d_max, count);
  k = clamp_ordinal(k, count);
  if (k == 0.0) return d_max;
  if (k == count - 1) return d_min;
  return d_max + (d_min - d_max) * k / (count - 1);
}

double depth_to_ordinal_uniform(double depth, double d_min, double d_max, int count) {
  check_range(d_min, d_max, count);
  return (d_max - depth) / (d_max - d_min) * (count - 1);
}

std::uint64_t ordinal_clamp_count() { return g_clamped.load(); }

DepthHypothesisSet::DepthHypothesisSet(double d_min, double d_max, int count,
                                       DepthSampling sampling)
    : d_min_(d_min), d_max_(d_max), sampling_(sampling) {
  check_range(d_min, d_max, count);
  depths_.resize(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j) depths_[static_cast<std::size_t>(j)] = ordinal_to_depth(j);
}

double DepthHypothesisSet::ordinal_to_depth(double k) const {
  const int count = static_cast<int>(depths_.size());
  return sampling_ == DepthSampling::InverseDepth
             ? cider::ordinal_to_depth(k, d_min_, d_max_, count)
             : ordinal_to_depth_uniform(k, d_min_, d_max_, count);
}

double DepthHypothesisSet::depth_to_ordinal(double depth) const {
  const int count = static_cast<int>(depths_.size());
  return sampling_ == DepthSampling::InverseDepth
             ? cider::depth_to_ordinal(depth, d_min_, d_max_, count)
             : depth_to_ordinal_uniform(depth, d_min_, d_max_, count);
}

DepthHypothesisSet sample_inverse_depths(double d_min, double d_max, int count) {
  return DepthHypothesisSet(d_min, d_max, count, DepthSampling::InverseDepth);
}

DepthHypothesisSet sample_uniform_depths(double d_min, double d_max, int count) {
  return DepthHypothesisSet(d_min, d_max, count, DepthSampling::UniformDepth);
}

namespace {

double parse_number(const std::string& token) {
  double value = 0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw std::invalid_argument("camera file: expected a number, got '" + token + "'");
  }
  return value;
}

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

CameraView parse_camera_text(const std::string& text) {
  std::istringstream is(text);
  std::vector<std::string> tokens;
  for (std::string tok; is >> tok;) tokens.push_back(tok);
  std::size_t pos = 0;
  auto next = [&]() -> const std::string& {
    if (pos >= tokens.size()) throw std::invalid_argument("camera file: unexpected end of input");
    return tokens[pos++];
  };
  if (next() != "extrinsic") throw std::invalid_argument("camera file: missing 'extrinsic'");
  Eigen::Matrix4d E;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) E(r, c) = parse_number(next());
  if (next() != "intrinsic") throw std::invalid_argument("camera file: missing 'intrinsic'");
  CameraView view;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) view.K(r, c) = parse_number(next());
  view.R = E.block<3, 3>(0, 0);
  view.t = E.block<3, 1>(0, 3);
  view.d_min = parse_number(next());
  view.d_max = parse_number(next());
  const double count = parse_number(next());
  if (count != std::floor(count) || count < 0) {
    throw std::invalid_argument("camera file: hypothesis count must be a non-negative integer");
  }
  view.num_depth = static_cast<int>(count);
  if (pos != tokens.size()) throw std::invalid_argument("camera file: trailing content");
  view.validate();
  return view;
}

std::string format_camera_text(const CameraView& view) {
  std::ostringstream os;
  os << "extrinsic\n";
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) os << format_number(view.R(r, c)) << ' ';
    os << format_number(view.t(r)) << '\n';
  }
  os << "0 0 0 1\n\nintrinsic\n";
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) os << format_number(view.K(r, c)) << (c < 2 ? " " : "\n");
  }
  os << '\n'
     << format_number(view.d_min) << ' ' << format_number(view.d_max) << ' ' << view.num_depth
     << '\n';
  return os.str();
}

CameraView read_camera_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open camera file " + path.string());
  std::stringstream buf;
  buf << is.rdbuf();
  try {
    return parse_camera_text(buf.str());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

void write_camera_file(const std::filesystem::path& path, const CameraView& view) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write camera file " + path.string());
  os << format_camera_text(view);
}

}  // namespace cider
