#include "cider/scenes.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

#include "cider/io.hpp"

namespace cider {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kPi = std::numbers::pi;
}  // namespace

std::string surface_name(SurfaceKind kind) {
  switch (kind) {
    case SurfaceKind::Plane:
      return "plane";
    case SurfaceKind::TiltedPlane:
      return "tilted";
    case SurfaceKind::Sphere:
      return "sphere";
    case SurfaceKind::Step:
      return "step";
  }
  return "?";
}

SurfaceKind parse_surface(const std::string& name) {
  for (auto k : {SurfaceKind::Plane, SurfaceKind::TiltedPlane, SurfaceKind::Sphere, SurfaceKind::Step}) {
    if (surface_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown surface kind '" + name + "'");
}

double Primitive::intersect(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) const {
  if (type == Type::Plane) {
    const double denom = normal.dot(dir);
    if (denom == 0.0) return kInf;
    const double t = (offset - normal.dot(origin)) / denom;
    if (!(t > 0)) return kInf;
    const Eigen::Vector3d X = origin + t * dir;
    for (const auto& [b, c] : bounds) {
      if (b.dot(X) > c + 1e-12) return kInf;
    }
    return t;
  }
  const Eigen::Vector3d oc = origin - center;
  const double a = dir.squaredNorm();
  const double b = oc.dot(dir);
  const double c = oc.squaredNorm() - radius * radius;
  const double disc = b * b - a * c;
  if (disc < 0) return kInf;
  const double root = std::sqrt(disc);
  // Numerically stable pair of roots.
  const double q = b > 0 ? -(b + root) : -(b - root);
  double t0 = q / a;
  double t1 = q != 0.0 ? c / q : t0;
  if (t0 > t1) std::swap(t0, t1);
  if (t0 > 0) return t0;
  if (t1 > 0) return t1;
  return kInf;
}

Eigen::Vector3d Texture::lookup(double s, double t) const {
  const double fs = s - std::floor(s / size) * size;
  const double ft = t - std::floor(t / size) * size;
  const int x0 = static_cast<int>(fs) % size;
  const int y0 = static_cast<int>(ft) % size;
  const int x1 = (x0 + 1) % size;
  const int y1 = (y0 + 1) % size;
  const double ax = fs - std::floor(fs);
  const double ay = ft - std::floor(ft);
  auto texel = [&](int x, int y) {
    const float* p = rgb.data() + (static_cast<std::size_t>(y) * size + x) * 3;
    return Eigen::Vector3d(p[0], p[1], p[2]);
  };
  return (1 - ax) * (1 - ay) * texel(x0, y0) + ax * (1 - ay) * texel(x1, y0) +
         (1 - ax) * ay * texel(x0, y1) + ax * ay * texel(x1, y1);
}

Eigen::Vector3d Texture::at_world(const Eigen::Vector3d& X) const {
  return lookup((X.x() + 0.37 * X.z()) * texels_per_unit, (X.y() + 0.61 * X.z()) * texels_per_unit);
}

double Scene::cast(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) const {
  double best = kInf;
  for (const auto& p : surface) best = std::min(best, p.intersect(origin, dir));
  return best;
}

namespace {

struct Wave {
  double fx, fy, amp, phase;
};

std::vector<Wave> draw_waves(std::mt19937_64& rng, int count, double f_lo, double f_hi) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<Wave> waves;
  while (static_cast<int>(waves.size()) < count) {
    const double mag = f_lo + (f_hi - f_lo) * uni(rng);
    const double ang = 2 * kPi * uni(rng);
    const double fx = std::round(mag * std::cos(ang));
    const double fy = std::round(mag * std::sin(ang));
    const double amp = 0.5 + 0.5 * uni(rng);
    const double phase = 2 * kPi * uni(rng);
    if (fx == 0 && fy == 0) continue;
    waves.push_back({fx, fy, amp, phase});
  }
  return waves;
}

Texture make_texture(std::mt19937_64& rng, double contrast) {
  Texture tex;
  const int n = tex.size;
  // Integer frequencies keep the pattern tileable; the band spans wavelengths
  // of roughly 0.3 to 2 scene units.
  const auto shared = draw_waves(rng, 16, 4.0, 24.0);
  std::vector<std::vector<Wave>> own;
  for (int c = 0; c < 3; ++c) own.push_back(draw_waves(rng, 6, 4.0, 24.0));
  const auto gradient = draw_waves(rng, 1, 1.0, 1.0);
  std::vector<double> pattern(static_cast<std::size_t>(n) * n * 3);
  std::vector<double> peak(3, 0.0);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      auto eval = [&](const std::vector<Wave>& ws, double scale) {
        double v = 0;
        for (const auto& w : ws) v += scale * w.amp * std::sin(2 * kPi * (w.fx * x + w.fy * y) / n + w.phase);
        return v;
      };
      const double base = eval(shared, 1.0) + eval(gradient, 1.5);
      for (int c = 0; c < 3; ++c) {
        const double v = base + eval(own[static_cast<std::size_t>(c)], 0.5);
        pattern[(static_cast<std::size_t>(y) * n + x) * 3 + c] = v;
        peak[c] = std::max(peak[c], std::abs(v));
      }
    }
  tex.rgb.resize(pattern.size());
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    tex.rgb[i] = static_cast<float>(0.5 + 0.5 * contrast * pattern[i] / peak[i % 3]);
  }
  return tex;
}

Eigen::Matrix3d rotation_y(double angle) {
  return Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitY()).toRotationMatrix();
}

std::vector<CameraView> make_cameras(const SceneSpec& spec) {
  const double dc = 2.0 / (1.0 / spec.d_min + 1.0 / spec.d_max);
  const Eigen::Vector3d target(0, 0, dc);
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  K(0, 0) = K(1, 1) = spec.focal;
  K(0, 2) = (spec.width - 1) / 2.0;
  K(1, 2) = (spec.height - 1) / 2.0;
  const int sides = spec.views / 2;
  std::vector<CameraView> views;
  for (int i = 0; i < spec.views; ++i) {
    double angle = 0;
    if (i > 0) {
      const int ring = (i + 1) / 2;
      const double sign = i % 2 == 1 ? -1.0 : 1.0;
      angle = sign * spec.arc_degrees * kPi / 180.0 * ring / std::max(1, sides);
    }
    CameraView v;
    v.K = K;
    const Eigen::Matrix3d cam_to_world = rotation_y(angle);
    const Eigen::Vector3d center = target - cam_to_world * Eigen::Vector3d(0, 0, dc);
    v.R = cam_to_world.transpose();
    v.t = -v.R * center;
    v.d_min = spec.d_min;
    v.d_max = spec.d_max;
    v.num_depth = spec.num_depth;
    views.push_back(v);
  }
  views.front().R = Eigen::Matrix3d::Identity();
  views.front().t = Eigen::Vector3d::Zero();
  return views;
}

Primitive plane(const Eigen::Vector3d& normal, const Eigen::Vector3d& point) {
  Primitive p;
  p.normal = normal.normalized();
  p.offset = p.normal.dot(point);
  return p;
}

std::vector<Primitive> draw_surface(const SceneSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  auto log_uniform = [&](double lo, double hi) { return lo * std::pow(hi / lo, uni(rng)); };
  const double lo = spec.d_min, hi = spec.d_max;
  std::vector<Primitive> s;
  switch (spec.kind) {
    case SurfaceKind::Plane: {
      const double z = spec.plane_depth > 0 ? spec.plane_depth : log_uniform(lo * 1.15, hi * 0.9);
      s.push_back(plane(Eigen::Vector3d::UnitZ(), {0, 0, z}));
      break;
    }
    case SurfaceKind::TiltedPlane: {
      const double z = log_uniform(lo * 1.5, hi * 0.7);
      const double ax = (uni(rng) - 0.5) * 70.0 * kPi / 180.0;
      const double ay = (uni(rng) - 0.5) * 70.0 * kPi / 180.0;
      const Eigen::Vector3d n = Eigen::AngleAxisd(ax, Eigen::Vector3d::UnitX()) *
                                Eigen::AngleAxisd(ay, Eigen::Vector3d::UnitY()) * Eigen::Vector3d::UnitZ();
      s.push_back(plane(n, {0, 0, z}));
      break;
    }
    case SurfaceKind::Sphere: {
      const double back = hi * (0.8 + 0.1 * uni(rng));
      s.push_back(plane(Eigen::Vector3d::UnitZ(), {0, 0, back}));
      Primitive ball;
      ball.type = Primitive::Type::Sphere;
      ball.radius = 0.15 * (hi - lo) + 0.1 * (hi - lo) * uni(rng);
      const double cz = lo * 1.2 + ball.radius + (back - lo * 1.2 - 2 * ball.radius) * uni(rng);
      ball.center = {(uni(rng) - 0.5) * 0.2 * cz, (uni(rng) - 0.5) * 0.2 * cz, cz};
      s.push_back(ball);
      break;
    }
    case SurfaceKind::Step: {
      const double near = log_uniform(lo * 1.2, std::sqrt(lo * hi));
      const double far = log_uniform(std::sqrt(lo * hi) * 1.1, hi * 0.9);
      const double column = spec.width * (0.3 + 0.4 * uni(rng));
      const double x0 = (column - (spec.width - 1) / 2.0) / spec.focal * near;
      const double side = uni(rng) < 0.5 ? 1.0 : -1.0;
      Primitive a = plane(Eigen::Vector3d::UnitZ(), {0, 0, near});
      a.bounds.emplace_back(Eigen::Vector3d(side, 0, 0), side * x0);
      Primitive b = plane(Eigen::Vector3d::UnitZ(), {0, 0, far});
      b.bounds.emplace_back(Eigen::Vector3d(-side, 0, 0), -side * x0);
      Primitive wall = plane(Eigen::Vector3d::UnitX(), {x0, 0, 0});
      wall.bounds.emplace_back(Eigen::Vector3d::UnitZ(), far);
      wall.bounds.emplace_back(-Eigen::Vector3d::UnitZ(), -near);
      s.push_back(a);
      s.push_back(b);
      s.push_back(wall);
      break;
    }
  }
  return s;
}

void render_view(const Scene& scene, CameraView& view, Map2D& depth) {
  const SceneSpec& spec = scene.spec;
  const Eigen::Matrix3d Kinv = view.K.inverse();
  const Eigen::Matrix3d Rt = view.R.transpose();
  const Eigen::Vector3d origin = view.center();
  view.image = Image(spec.width, spec.height, 3);
  depth = Map2D(spec.width, spec.height);
  auto ray = [&](double u, double v) -> Eigen::Vector3d { return Rt * (Kinv * Eigen::Vector3d(u, v, 1)); };
  const double offsets[2] = {-0.25, 0.25};
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x) {
      const Eigen::Vector3d center_dir = ray(x, y);
      const double t = scene.cast(origin, center_dir);
      depth.at(x, y) = std::isfinite(t) ? static_cast<float>(t) : 0.0f;
      Eigen::Vector3d color = Eigen::Vector3d::Zero();
      for (double oy : offsets)
        for (double ox : offsets) {
          const Eigen::Vector3d dir = ray(x + ox, y + oy);
          const double ts = scene.cast(origin, dir);
          if (std::isfinite(ts)) color += scene.texture.at_world(origin + ts * dir);
        }
      color /= 4.0;
      for (int c = 0; c < 3; ++c) view.image.at(x, y, c) = static_cast<float>(color[c]);
    }
}

}  // namespace

Scene render_scene(const SceneSpec& spec) {
  if (spec.width <= 0 || spec.height <= 0 || spec.views < 1 || !(spec.focal > 0) ||
      !(spec.d_min > 0) || !(spec.d_min < spec.d_max) || spec.arc_degrees < 0 ||
      !(spec.texture_contrast > 0) || spec.texture_contrast > 1) {
    throw std::invalid_argument("invalid scene specification");
  }
  if (spec.plane_depth > 0 && (spec.plane_depth < spec.d_min || spec.plane_depth > spec.d_max)) {
    throw std::invalid_argument("plane depth outside the scene depth range");
  }
  std::mt19937_64 rng(spec.seed);
  Scene scene;
  scene.spec = spec;
  scene.texture = make_texture(rng, spec.texture_contrast);
  for (int attempt = 0; attempt < 64; ++attempt) {
    scene.surface = draw_surface(spec, rng);
    scene.views = make_cameras(spec);
    bool ok = true;
    for (const auto& p : scene.surface) {
      if (p.type != Primitive::Type::Sphere) continue;
      for (const auto& v : scene.views) {
        if ((v.center() - p.center).norm() <= p.radius) {
          if (spec.kind == SurfaceKind::Sphere) ok = false;
        }
      }
    }
    if (!ok) continue;
    scene.depth.assign(scene.views.size(), Map2D());
    for (std::size_t i = 0; i < scene.views.size(); ++i) render_view(scene, scene.views[i], scene.depth[i]);
    for (float d : scene.depth.front().values) {
      if (!(d >= spec.d_min && d <= spec.d_max)) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    for (std::size_t i = 1; i < scene.views.size(); ++i) {
      float lo = std::numeric_limits<float>::max(), hi = 0;
      for (float d : scene.depth[i].values) {
        if (d > 0) {
          lo = std::min(lo, d);
          hi = std::max(hi, d);
        }
      }
      if (hi > 0) {
        scene.views[i].d_min = std::min(spec.d_min, 0.95 * lo);
        scene.views[i].d_max = std::max(spec.d_max, 1.05 * hi);
      }
    }
    return scene;
  }
  throw std::invalid_argument("could not draw an admissible " + surface_name(spec.kind) +
                              " surface for seed " + std::to_string(spec.seed));
}

Map2D subsample_depth(const Map2D& depth, int factor) {
  if (factor <= 0 || depth.width % factor != 0 || depth.height % factor != 0) {
    throw std::invalid_argument("depth map size is not divisible by the subsampling factor");
  }
  Map2D out(depth.width / factor, depth.height / factor);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.at(x, y) = depth.at(x * factor, y * factor);
  return out;
}

TrainingSample make_training_sample(const std::vector<CameraView>& views,
                                    const std::vector<Map2D>& depth, int ref) {
  if (ref < 0 || ref >= static_cast<int>(views.size()) || depth.size() != views.size()) {
    throw std::invalid_argument("make_training_sample: bad reference index or missing depth");
  }
  TrainingSample s;
  s.views.push_back(views[ref]);
  for (int i = 0; i < static_cast<int>(views.size()); ++i)
    if (i != ref) s.views.push_back(views[i]);
  s.gt_depth = subsample_depth(depth[ref], 4);
  const CameraView& r = views[ref];
  for (auto& d : s.gt_depth.values) {
    if (!(d >= r.d_min && d <= r.d_max)) d = 0.0f;
  }
  return s;
}

namespace {
std::string indexed(const char* stem, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%02zu.%s", stem, i, ext);
  return buf;
}
}  // namespace

void write_scene(const std::filesystem::path& dir, const Scene& scene) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < scene.views.size(); ++i) {
    write_camera_file(dir / indexed("cam", i, "txt"), scene.views[i]);
    write_png(dir / indexed("image", i, "png"), scene.views[i].image);
    write_pfm(dir / indexed("depth", i, "pfm"), scene.depth[i]);
  }
  std::ofstream os(dir / "scene.txt", std::ios::trunc);
  os << "kind=" << surface_name(scene.spec.kind) << "\nseed=" << scene.spec.seed
     << "\nviews=" << scene.spec.views << "\n";
}

SceneData read_scene(const std::filesystem::path& dir) {
  SceneData data;
  for (std::size_t i = 0;; ++i) {
    const auto cam = dir / indexed("cam", i, "txt");
    if (!std::filesystem::exists(cam)) break;
    CameraView v = read_camera_file(cam);
    v.image = read_png(dir / indexed("image", i, "png"));
    data.views.push_back(std::move(v));
    const auto depth = dir / indexed("depth", i, "pfm");
    if (std::filesystem::exists(depth)) data.depth.push_back(read_pfm(depth));
  }
  if (data.views.empty()) throw std::runtime_error(dir.string() + ": no cam_00.txt found");
  if (!data.depth.empty() && data.depth.size() != data.views.size()) {
    throw std::runtime_error(dir.string() + ": ground-truth depth missing for some views");
  }
  return data;
}

std::vector<Eigen::Vector3d> ground_truth_points(const SceneData& scene, int stride) {
  std::vector<Eigen::Vector3d> pts;
  for (std::size_t i = 0; i < scene.depth.size(); ++i) {
    const Map2D& d = scene.depth[i];
    for (int y = 0; y < d.height; y += stride)
      for (int x = 0; x < d.width; x += stride)
        if (d.at(x, y) > 0) pts.push_back(scene.views[i].unproject(x, y, d.at(x, y)));
  }
  return pts;
}

}  // namespace cider
