#pragma once

#include <Eigen/Core>

namespace mvdet {

// Depth at or below which a point is treated as behind the image plane.
inline constexpr double kMinDepth = 1e-6;

struct Intrinsics
{
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  Eigen::Matrix3d matrix() const;
  Eigen::Matrix3d inverse() const;
};

// World-to-camera rigid transform: x_cam = R * x_world + t.
struct Pose
{
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return R * p + t; }
  Eigen::Vector3d center() const { return -R.transpose() * t; }
  bool is_rotation(double tol = 1e-9) const;

  // Camera looking from `eye` toward `target`, image y-axis pointing along
  // -`up` (x right, y down, z forward).
  static Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                      const Eigen::Vector3d& up);
};

struct CameraView
{
  Intrinsics intrinsics;
  Pose pose;
  int width = 0;
  int height = 0;

  // Throws if the view violates its invariants for the given downsampling.
  void validate(int downsample = 4) const;
};

struct Ray
{
  Eigen::Vector3d origin;
  Eigen::Vector3d direction;
};

struct Projection
{
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
  bool valid = false;
};

struct Warp
{
  Eigen::Vector2d q = Eigen::Vector2d::Zero();
  bool valid = false;
};

// Pixel-center convention: integer (u, v) is the center of a cell, so scaling
// maps (c + 0.5) -> (c + 0.5) * factor.
Intrinsics scale_intrinsics(const Intrinsics& K, double factor);

// Grid size of `view` downsampled by `scale`.
int scaled_width(const CameraView& view, double scale);
int scaled_height(const CameraView& view, double scale);

// The same camera expressed at 1/scale resolution.
CameraView scaled_view(const CameraView& view, double scale);

// True when (u, v) lies inside a cols x rows grid under the pixel-center
// convention, i.e. its nearest cell exists.
bool in_bounds(double u, double v, int cols, int rows);

Projection project(const Eigen::Vector3d& p, const CameraView& view, double scale = 1.0);

// Ray through the center of pixel (u, v) at 1/scale resolution. Throws
// std::out_of_range for pixels outside the grid.
Ray backproject_ray(double u, double v, const CameraView& view, double scale = 1.0);

// Distance along `ray` reaching camera-frame depth `z` of `view`.
double ray_distance(const Ray& ray, const CameraView& view, double z);

// Pose of camera j relative to camera i: x_j = R_ij * x_i + t_ij.
Pose relative_pose(const Pose& pi, const Pose& pj);

// Maps reference pixel q through the fronto-parallel plane at depth d into
// the source grid of size cols x rows.
Warp homography_warp(const Eigen::Vector2d& q, double plane_depth, const Intrinsics& Ki,
                     const Intrinsics& Kj, const Pose& rel, int cols, int rows);

} // namespace mvdet
