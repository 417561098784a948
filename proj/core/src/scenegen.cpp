#include "depthref/scenegen.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>

#include "depthref/io_formats.hpp"
#include "depthref/parallel.hpp"
#include "depthref/rng.hpp"

namespace depthref {

void SceneSpec::validate() const {
  rig.validate();
  if (width == 0 || height == 0) throw std::invalid_argument("scene: dimensions must be positive");
  if (object_count < 1) throw std::invalid_argument("scene: object_count must be at least 1");
  if (!(z_min >= 1.0 && z_min < z_max && z_max <= 100.0)) {
    throw std::invalid_argument("scene: depth range must satisfy 1 <= z_min < z_max <= 100");
  }
  if (!(texture_scale > 0.0)) throw std::invalid_argument("scene: texture_scale must be positive");
}

namespace {

Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
Vec3 normalized(Vec3 a) { return (1.0 / std::sqrt(dot(a, a))) * a; }

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  const Primitive* prim = nullptr;
};

// Rays have dir.z == 1, so for a camera at z == 0 the parameter t is the depth.
std::optional<double> intersect(const Primitive& p, Vec3 origin, Vec3 dir) {
  switch (p.kind) {
    case Primitive::Kind::plane:
    case Primitive::Kind::rectangle: {
      const double denom = dot(p.normal, dir);
      if (denom == 0.0) return std::nullopt;
      const double t = (p.offset - dot(p.normal, origin)) / denom;
      if (!(t > 0.0)) return std::nullopt;
      if (p.kind == Primitive::Kind::rectangle) {
        const Vec3 local = origin + t * dir - p.center;
        if (std::abs(dot(local, p.axis_u)) > p.half_u || std::abs(dot(local, p.axis_v)) > p.half_v) {
          return std::nullopt;
        }
      }
      return t;
    }
    case Primitive::Kind::sphere: {
      const Vec3 oc = origin - p.center;
      const double a = dot(dir, dir);
      const double b = dot(oc, dir);
      const double c = dot(oc, oc) - p.radius * p.radius;
      const double disc = b * b - a * c;
      if (disc < 0.0) return std::nullopt;
      const double root = std::sqrt(disc);
      const double t0 = (-b - root) / a;
      if (t0 > 0.0) return t0;
      const double t1 = (-b + root) / a;
      if (t1 > 0.0) return t1;
      return std::nullopt;
    }
  }
  return std::nullopt;
}

Hit cast(const Scene& scene, Vec3 origin, Vec3 dir) {
  Hit best;
  for (const auto& prim : scene.primitives) {
    if (auto t = intersect(prim, origin, dir); t && *t < best.t) {
      best.t = *t;
      best.prim = &prim;
    }
  }
  return best;
}

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

double lattice(std::uint64_t seed, std::int64_t i, std::int64_t j) {
  const std::uint64_t h = mix64(seed ^ mix64(static_cast<std::uint64_t>(i) * 0x9E3779B97F4A7C15ULL ^
                                             static_cast<std::uint64_t>(j)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double value_noise(std::uint64_t seed, double u, double v) {
  const double fu = std::floor(u);
  const double fv = std::floor(v);
  const auto i = static_cast<std::int64_t>(fu);
  const auto j = static_cast<std::int64_t>(fv);
  const double su = fade(u - fu);
  const double sv = fade(v - fv);
  const double a = lattice(seed, i, j);
  const double b = lattice(seed, i + 1, j);
  const double c = lattice(seed, i, j + 1);
  const double d = lattice(seed, i + 1, j + 1);
  return (a + (b - a) * su) * (1.0 - sv) + (c + (d - c) * su) * sv;
}

// Surface coordinates in meters for texture lookup.
std::pair<double, double> surface_uv(const Primitive& p, Vec3 point) {
  if (p.kind == Primitive::Kind::sphere) {
    const Vec3 r = point - p.center;
    const double theta = std::atan2(r.x, -r.z);
    const double phi = std::acos(std::clamp(r.y / p.radius, -1.0, 1.0));
    return {theta * p.radius, phi * p.radius};
  }
  const Vec3 local = point - p.center;
  return {dot(local, p.axis_u), dot(local, p.axis_v)};
}

Vec3 surface_normal(const Primitive& p, Vec3 point) {
  if (p.kind == Primitive::Kind::sphere) return normalized(point - p.center);
  return normalized(p.normal);
}

// View-independent (Lambertian, two-sided) appearance so both cameras agree.
std::array<double, 3> shade(const Scene& scene, const Primitive& p, Vec3 point) {
  const auto [u, v] = surface_uv(p, point);
  const SurfaceTexture& tex = p.texture;
  const double noise = value_noise(tex.seed, u / tex.cell_m, v / tex.cell_m);
  const double checker =
      0.5 + 0.5 * std::tanh(3.0 * std::sin(std::numbers::pi * u / tex.checker_m) *
                            std::sin(std::numbers::pi * v / tex.checker_m));
  const double pattern = 0.6 * noise + 0.4 * checker;
  const double lambert = std::abs(dot(surface_normal(p, point), normalized(scene.light_dir)));
  const double light = 0.55 + 0.45 * lambert;
  std::array<double, 3> rgb{};
  for (std::size_t c = 0; c < 3; ++c) {
    rgb[c] = std::clamp(tex.albedo[c] * light * (0.15 + 0.85 * pattern), 0.0, 1.0);
  }
  return rgb;
}

SurfaceTexture random_texture(Rng& rng, double far_depth, const SceneSpec& spec) {
  SurfaceTexture tex;
  tex.seed = rng.next_u64();
  const double min_feature_m = spec.texture_scale * far_depth / spec.rig.focal_x_px;
  tex.cell_m = min_feature_m * rng.uniform(1.0, 1.6);
  tex.checker_m = tex.cell_m * rng.uniform(2.0, 4.0);
  for (auto& a : tex.albedo) a = rng.uniform(0.55, 1.0);
  return tex;
}

void set_plane_axes(Primitive& p) {
  const Vec3 n = normalized(p.normal);
  const Vec3 up{0.0, 1.0, 0.0};
  p.axis_u = normalized(cross(up, n));
  p.axis_v = normalized(cross(n, p.axis_u));
}

}  // namespace

Primitive fronto_plane(double z, const SurfaceTexture& texture) {
  Primitive p;
  p.kind = Primitive::Kind::plane;
  p.normal = {0.0, 0.0, 1.0};
  p.offset = z;
  p.center = {0.0, 0.0, z};
  p.texture = texture;
  set_plane_axes(p);
  return p;
}

Scene build_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(mix64(spec.seed ^ 0x5CE7E5EEDULL));
  Scene scene;
  const double f = spec.rig.focal_x_px;
  const double cx = 0.5 * static_cast<double>(spec.width - 1);
  const double cy = 0.5 * static_cast<double>(spec.height - 1);
  const double w = static_cast<double>(spec.width);
  const double h = static_cast<double>(spec.height);

  // Background: inverse depth is affine in pixel coordinates for any plane,
  // 1/Z = a (x - cx) + b (y - cy) + g, which is the plane (a f, b f, g) . P = 1.
  const double bg_near = std::max(spec.z_min, 0.45 * spec.z_max);
  double inv_tl = 0.0, inv_tr = 0.0, inv_bl = 0.0, inv_br = 0.0;
  for (;;) {
    inv_tl = 1.0 / rng.uniform(bg_near, spec.z_max);
    inv_tr = 1.0 / rng.uniform(bg_near, spec.z_max);
    inv_bl = 1.0 / rng.uniform(bg_near, spec.z_max);
    inv_br = inv_tr + inv_bl - inv_tl;
    if (inv_br >= 1.0 / spec.z_max && inv_br <= 1.0 / bg_near) break;
  }
  {
    const double a = (inv_tr - inv_tl) / (w - 1.0 > 0.0 ? w - 1.0 : 1.0);
    const double b = (inv_bl - inv_tl) / (h - 1.0 > 0.0 ? h - 1.0 : 1.0);
    const double g = inv_tl + a * cx + b * cy;
    Primitive bg;
    bg.kind = Primitive::Kind::plane;
    bg.normal = {a * f, b * f, g};
    bg.offset = 1.0;
    bg.center = {0.0, 0.0, 1.0 / g};
    set_plane_axes(bg);
    bg.texture = random_texture(rng, spec.z_max, spec);
    scene.primitives.push_back(bg);
  }

  const double obj_far = std::max(spec.z_min * 1.05, 0.85 * bg_near);
  for (std::size_t k = 0; k < spec.object_count; ++k) {
    // Log-uniform depth spreads objects over both the near and far regimes.
    const double z = spec.z_min * std::pow(obj_far / spec.z_min, rng.uniform());
    const double px = rng.uniform(0.05 * w, 0.95 * w);
    const double py = rng.uniform(0.1 * h, 0.9 * h);
    const double size_px = rng.uniform(0.18, 0.55) * h;
    const double kind_draw = rng.uniform();

    Primitive p;
    if (kind_draw < 0.3) {
      p.kind = Primitive::Kind::sphere;
      p.radius = 0.5 * size_px * z / f;
      const double zc = std::max(z, spec.z_min) + p.radius;
      p.center = {(px - cx) * zc / f, (py - cy) * zc / f, zc};
      p.texture = random_texture(rng, zc, spec);
    } else {
      p.kind = Primitive::Kind::rectangle;
      const bool slanted = kind_draw >= 0.65;
      const double yaw = slanted ? rng.uniform(-1.0, 1.0) : 0.0;    // about the vertical axis
      const double pitch = slanted ? rng.uniform(-0.5, 0.5) : 0.0;  // about the horizontal axis
      const double aspect = rng.uniform(0.6, 1.6);
      p.half_u = 0.5 * size_px * z / f * aspect;
      p.half_v = 0.5 * size_px * z / f / aspect;
      const Vec3 n{std::sin(yaw) * std::cos(pitch), std::sin(pitch), -std::cos(yaw) * std::cos(pitch)};
      p.normal = normalized(n);
      set_plane_axes(p);
      // Depth is affine over the rectangle, so the extremes sit at corners.
      const double dz = std::abs(p.axis_u.z) * p.half_u + std::abs(p.axis_v.z) * p.half_v;
      const double zc = std::clamp(z, spec.z_min + dz, std::max(spec.z_min + dz, spec.z_max - dz));
      p.center = {(px - cx) * zc / f, (py - cy) * zc / f, zc};
      p.offset = dot(p.normal, p.center);
      p.texture = random_texture(rng, zc + dz, spec);
    }
    scene.primitives.push_back(p);
  }
  scene.light_dir = normalized(Vec3{rng.uniform(-0.6, 0.6), rng.uniform(-0.8, -0.2), -1.0});
  return scene;
}

namespace {
constexpr double kDisparityGrid = 4096.0;
}  // namespace

StereoSample render_scene(const Scene& scene, const CameraRig& rig, std::size_t width,
                          std::size_t height) {
  rig.validate();
  if (width == 0 || height == 0) throw std::invalid_argument("render_scene: empty image");
  const double f = rig.focal_x_px;
  const double cx = 0.5 * static_cast<double>(width - 1);
  const double cy = 0.5 * static_cast<double>(height - 1);
  const Vec3 left_origin{0.0, 0.0, 0.0};
  const Vec3 right_origin{rig.baseline_m, 0.0, 0.0};

  StereoSample s;
  s.rig = rig;
  s.left = Image(width, height, 3);
  s.right = Image(width, height, 3);
  s.z_gt = ScalarField(width, height, FieldRole::depth);
  s.d_gt = ScalarField(width, height, FieldRole::disparity);
  s.valid.assign(width * height, 0);
  s.visible_both.assign(width * height, 0);

  parallel_for(height, [&](std::size_t y) {
    const double ray_y = (static_cast<double>(y) - cy) / f;
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t i = y * width + x;
      const Vec3 dir{(static_cast<double>(x) - cx) / f, ray_y, 1.0};

      if (const Hit hit = cast(scene, left_origin, dir); hit.prim) {
        const Vec3 point = left_origin + hit.t * dir;
        const auto rgb = shade(scene, *hit.prim, point);
        for (std::size_t c = 0; c < 3; ++c) s.left.set(x, y, c, rgb[c]);
        // Disparity on a 1/4096 px grid: it and d + k for small integers k
        // are exact in 32-bit files. Depth follows from the stored disparity.
        const double d = std::round(rig.bf() / point.z * kDisparityGrid) / kDisparityGrid;
        s.d_gt.set(i, d);
        s.z_gt.set(i, rig.bf() / d);
        s.valid[i] = 1;

        const double xr = static_cast<double>(x) - rig.bf() / point.z;
        if (xr >= 0.0 && xr <= static_cast<double>(width - 1)) {
          const Vec3 back = (1.0 / point.z) * (point - right_origin);
          const Hit blocker = cast(scene, right_origin, back);
          if (!(blocker.t < point.z * (1.0 - 1e-9))) s.visible_both[i] = 1;
        }
      }

      if (const Hit hit = cast(scene, right_origin, dir); hit.prim) {
        const auto rgb = shade(scene, *hit.prim, right_origin + hit.t * dir);
        for (std::size_t c = 0; c < 3; ++c) s.right.set(x, y, c, rgb[c]);
      }
    }
  });
  return s;
}

StereoSample generate_scene(const SceneSpec& spec) {
  StereoSample s = render_scene(build_scene(spec), spec.rig, spec.width, spec.height);
  // Grid rounding may step a hair outside the depth range; pull it back in.
  const double d_lo = std::ceil(spec.rig.bf() / spec.z_max * kDisparityGrid) / kDisparityGrid;
  const double d_hi = std::floor(spec.rig.bf() / spec.z_min * kDisparityGrid) / kDisparityGrid;
  for (std::size_t i = 0; i < s.d_gt.size(); ++i) {
    if (!s.d_gt.valid(i)) continue;
    const double d = std::clamp(s.d_gt[i], d_lo, d_hi);
    s.d_gt.set(i, d);
    s.z_gt.set(i, spec.rig.bf() / d);
  }
  return s;
}

Manifest generate_dataset(const SceneSpec& spec_base, std::size_t count,
                          const std::filesystem::path& out_dir) {
  if (count == 0) throw std::invalid_argument("generate_dataset: count must be at least 1");
  spec_base.validate();
  std::filesystem::create_directories(out_dir);

  Manifest manifest;
  manifest.root = out_dir;
  manifest.rig = spec_base.rig;
  manifest.entries.resize(count);

  parallel_for(count, [&](std::size_t k) {
    SceneSpec spec = spec_base;
    spec.seed = spec_base.seed + k;
    const StereoSample sample = generate_scene(spec);
    const std::string name = fmt::format("sample_{:04d}", k);
    const auto dir = out_dir / name;
    std::filesystem::create_directories(dir);
    write_pnm(sample.left, dir / "left.ppm");
    write_pnm(sample.right, dir / "right.ppm");
    write_pfm(sample.z_gt, dir / "z_gt.pfm");
    write_pfm(sample.d_gt, dir / "d_gt.pfm");
    write_mask_pgm(sample.valid, spec.width, spec.height, dir / "valid.pgm");
    manifest.entries[k] = DatasetEntry{name + "/left.ppm", name + "/right.ppm",
                                       name + "/z_gt.pfm", name + "/d_gt.pfm",
                                       name + "/valid.pgm", std::nullopt};
  });
  write_manifest(manifest);
  return manifest;
}

}  // namespace depthref
