#include "mvdet/camera.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <stdexcept>
#include <string>

namespace mvdet {

Eigen::Matrix3d Intrinsics::matrix() const
{
  Eigen::Matrix3d K;
  K << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return K;
}

Eigen::Matrix3d Intrinsics::inverse() const
{
  Eigen::Matrix3d Kinv;
  Kinv << 1.0 / fx, 0.0, -cx / fx, 0.0, 1.0 / fy, -cy / fy, 0.0, 0.0, 1.0;
  return Kinv;
}

bool Pose::is_rotation(double tol) const
{
  const double ortho = (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(R.determinant() - 1.0) <= tol;
}

Pose Pose::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                   const Eigen::Vector3d& up)
{
  const Eigen::Vector3d z = (target - eye).normalized();
  Eigen::Vector3d x = z.cross(up);
  if (x.norm() < 1e-12)
    throw std::invalid_argument("look_at: viewing direction parallel to up vector");
  x.normalize();
  const Eigen::Vector3d y = z.cross(x);
  Pose pose;
  pose.R.row(0) = x.transpose();
  pose.R.row(1) = y.transpose();
  pose.R.row(2) = z.transpose();
  pose.t = -pose.R * eye;
  return pose;
}

void CameraView::validate(int downsample) const
{
  if (!(intrinsics.fx > 0.0) || !(intrinsics.fy > 0.0))
    throw std::invalid_argument("camera: focal lengths must be positive");
  if (width < 4 || height < 4 || width % downsample != 0 || height % downsample != 0)
    throw std::invalid_argument("camera: image size " + std::to_string(width) + "x" +
                                std::to_string(height) + " must be >= 4 and divisible by " +
                                std::to_string(downsample));
  if (!pose.is_rotation(1e-6))
    throw std::invalid_argument("camera: rotation is not orthonormal");
}

Intrinsics scale_intrinsics(const Intrinsics& K, double factor)
{
  if (!(factor > 0.0))
    throw std::invalid_argument("scale_intrinsics: factor must be positive");
  return {K.fx * factor, K.fy * factor, (K.cx + 0.5) * factor - 0.5,
          (K.cy + 0.5) * factor - 0.5};
}

int scaled_width(const CameraView& view, double scale)
{
  return static_cast<int>(std::lround(view.width / scale));
}

int scaled_height(const CameraView& view, double scale)
{
  return static_cast<int>(std::lround(view.height / scale));
}

CameraView scaled_view(const CameraView& view, double scale)
{
  CameraView out = view;
  out.intrinsics = scale_intrinsics(view.intrinsics, 1.0 / scale);
  out.width = scaled_width(view, scale);
  out.height = scaled_height(view, scale);
  return out;
}

bool in_bounds(double u, double v, int cols, int rows)
{
  return u >= -0.5 && u < cols - 0.5 && v >= -0.5 && v < rows - 0.5;
}

Projection project(const Eigen::Vector3d& p, const CameraView& view, double scale)
{
  if (!(scale >= 1.0))
    throw std::invalid_argument("project: scale must be >= 1");
  const Intrinsics K = scale_intrinsics(view.intrinsics, 1.0 / scale);
  const Eigen::Vector3d x = view.pose.apply(p);
  Projection out;
  out.depth = x.z();
  if (x.z() <= kMinDepth)
    return out;
  out.u = (K.fx * x.x() + K.cx * x.z()) / x.z();
  out.v = (K.fy * x.y() + K.cy * x.z()) / x.z();
  out.valid = in_bounds(out.u, out.v, scaled_width(view, scale), scaled_height(view, scale));
  return out;
}

Ray backproject_ray(double u, double v, const CameraView& view, double scale)
{
  if (!in_bounds(u, v, scaled_width(view, scale), scaled_height(view, scale)))
    throw std::out_of_range("backproject_ray: pixel (" + std::to_string(u) + ", " +
                            std::to_string(v) + ") outside image");
  const Intrinsics K = scale_intrinsics(view.intrinsics, 1.0 / scale);
  const Eigen::Vector3d cam((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
  return {view.pose.center(), (view.pose.R.transpose() * cam).normalized()};
}

double ray_distance(const Ray& ray, const CameraView& view, double z)
{
  return z / view.pose.R.row(2).dot(ray.direction);
}

Pose relative_pose(const Pose& pi, const Pose& pj)
{
  Pose rel;
  rel.R = pj.R * pi.R.transpose();
  rel.t = pj.t - rel.R * pi.t;
  return rel;
}

Warp homography_warp(const Eigen::Vector2d& q, double plane_depth, const Intrinsics& Ki,
                     const Intrinsics& Kj, const Pose& rel, int cols, int rows)
{
  if (!(plane_depth > 0.0))
    throw std::invalid_argument("homography_warp: plane depth must be positive");
  const Eigen::Vector3d ray((q.x() - Ki.cx) / Ki.fx, (q.y() - Ki.cy) / Ki.fy, 1.0);
  const Eigen::Vector3d xj = rel.R * (plane_depth * ray) + rel.t;
  Warp out;
  if (xj.z() <= kMinDepth)
    return out;
  out.q = {Kj.fx * xj.x() / xj.z() + Kj.cx, Kj.fy * xj.y() / xj.z() + Kj.cy};
  out.valid = in_bounds(out.q.x(), out.q.y(), cols, rows);
  return out;
}

} // namespace mvdet
