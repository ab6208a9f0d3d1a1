#pragma once

#include "mvdet/camera.hpp"
#include "mvdet/raster.hpp"

#include <cstdint>
#include <vector>

namespace mvdet {

struct Aabb
{
  Eigen::Vector3d min = Eigen::Vector3d::Zero();
  Eigen::Vector3d max = Eigen::Vector3d::Zero();

  Eigen::Vector3d center() const { return 0.5 * (min + max); }
  Eigen::Vector3d size() const { return max - min; }
  bool contains(const Eigen::Vector3d& p) const;
  bool strictly_contains(const Eigen::Vector3d& p) const;
  bool intersects(const Aabb& o) const;
  double volume() const;
};

struct SceneBox
{
  Aabb bounds;
  std::uint64_t texture_seed = 0;
  Eigen::Vector3d base_color = Eigen::Vector3d::Ones();
};

struct SceneSpec
{
  Aabb room;
  bool walls = true;  // false leaves the room open: rays escape to the background
  std::uint64_t room_texture_seed = 0;
  Eigen::Vector3d room_color = Eigen::Vector3d::Constant(0.8);
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
  double texture_cell = 0.1;  // value-noise lattice spacing, meters
  std::vector<SceneBox> boxes;

  // Throws if a box is degenerate or not strictly inside the room.
  void validate() const;
};

struct GroundTruth
{
  Raster depth;  // camera-frame z, 0 where nothing is hit
  Raster image;  // RGB albedo in [0, 1]
  std::vector<Aabb> boxes;
};

// Intrinsics and resolution used for generated trajectories.
struct CameraSetup
{
  int width = 320;
  int height = 240;
  double focal = 280.0;
  double radius = 2.4;  // horizontal distance of the arc from the room center
  double height_m = 1.6;
  double spacing = 0.1;  // arc distance between neighbouring cameras, meters
};

SceneSpec generate_scene(std::uint64_t seed, int n_boxes);

// Pure albedo of a surface point; `surface` is -1 for the room shell, else a box index.
Eigen::Vector3d surface_albedo(const SceneSpec& scene, int surface, const Eigen::Vector3d& p);

struct RayHit
{
  double t = 0.0;
  int surface = -2;  // -2: miss, -1: room shell, >= 0: box index
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
};

// Nearest intersection of a ray with the scene.
RayHit intersect(const SceneSpec& scene, const Ray& ray);

GroundTruth raycast(const SceneSpec& scene, const CameraView& view);

std::vector<CameraView> make_trajectory(const SceneSpec& scene, int n, std::uint64_t seed,
                                        const CameraSetup& setup = {});

} // namespace mvdet
