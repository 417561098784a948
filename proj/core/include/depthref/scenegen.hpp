#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "depthref/geometry.hpp"
#include "depthref/imaging.hpp"

namespace depthref {

struct Manifest;

struct SceneSpec {
  std::uint64_t seed = 0;
  std::size_t width = 192;
  std::size_t height = 96;
  CameraRig rig{};
  std::size_t object_count = 6;
  double z_min = 2.0;
  double z_max = 90.0;
  /// Smallest texture feature, in pixels at the surface's farthest depth.
  double texture_scale = 6.0;

  /// Throws std::invalid_argument: needs 1 <= z_min < z_max <= 100,
  /// object_count >= 1, positive dimensions and texture scale, valid rig.
  void validate() const;
};

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

struct SurfaceTexture {
  std::uint64_t seed = 0;
  double cell_m = 0.1;     // value-noise lattice spacing
  double checker_m = 0.3;  // checkerboard half-period
  std::array<double, 3> albedo{1.0, 1.0, 1.0};
};

/// Scene primitive. Planes satisfy normal . P = offset and are unbounded;
/// rectangles are the part of such a plane within |u|<=half_u, |v|<=half_v
/// around center; spheres use center and radius.
struct Primitive {
  enum class Kind : std::uint8_t { plane, rectangle, sphere };
  Kind kind = Kind::plane;
  Vec3 center{};
  Vec3 normal{0.0, 0.0, 1.0};
  double offset = 0.0;
  Vec3 axis_u{1.0, 0.0, 0.0};
  Vec3 axis_v{0.0, 1.0, 0.0};
  double half_u = 0.0;
  double half_v = 0.0;
  double radius = 0.0;
  SurfaceTexture texture{};
};

struct Scene {
  std::vector<Primitive> primitives;
  Vec3 light_dir{0.3, -0.5, -0.8};
};

/// Fronto-parallel, unbounded plane at depth z.
Primitive fronto_plane(double z, const SurfaceTexture& texture);

struct StereoSample {
  Image left;
  Image right;
  ScalarField z_gt;
  ScalarField d_gt;
  std::vector<std::uint8_t> valid;         // ground truth defined
  std::vector<std::uint8_t> visible_both;  // also seen by the right camera, inside its frame
  CameraRig rig{};
};

/// Random scene for a spec: a slanted far background plane plus object_count
/// textured rectangles (fronto-parallel or slanted) and spheres.
Scene build_scene(const SceneSpec& spec);

/// Ray-casts both pinhole cameras (left at the origin, right at +baseline on x).
StereoSample render_scene(const Scene& scene, const CameraRig& rig, std::size_t width,
                          std::size_t height);

/// build_scene followed by render_scene. Bit-identical for identical specs.
StereoSample generate_scene(const SceneSpec& spec);

/// Writes count samples with seeds seed .. seed+count-1 into out_dir using the
/// dataset layout, plus manifest.tsv. Throws std::invalid_argument if
/// count == 0 and std::runtime_error on I/O failure.
Manifest generate_dataset(const SceneSpec& spec_base, std::size_t count,
                          const std::filesystem::path& out_dir);

}  // namespace depthref
