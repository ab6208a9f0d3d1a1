#include "mvdet/scenegen.hpp"

#include "mvdet/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace mvdet {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::uint64_t splitmix64(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double lattice_value(std::int64_t ix, std::int64_t iy, std::int64_t iz, std::uint64_t seed)
{
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(ix));
  h = splitmix64(h ^ static_cast<std::uint64_t>(iy));
  h = splitmix64(h ^ static_cast<std::uint64_t>(iz));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

// Trilinearly interpolated lattice noise in [0, 1).
double value_noise(const Eigen::Vector3d& p, double cell, std::uint64_t seed)
{
  const Eigen::Vector3d s = p / cell;
  const double fx = std::floor(s.x()), fy = std::floor(s.y()), fz = std::floor(s.z());
  const auto ix = static_cast<std::int64_t>(fx);
  const auto iy = static_cast<std::int64_t>(fy);
  const auto iz = static_cast<std::int64_t>(fz);
  const double tx = smooth(s.x() - fx), ty = smooth(s.y() - fy), tz = smooth(s.z() - fz);
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dx ? tx : 1.0 - tx) * (dy ? ty : 1.0 - ty) * (dz ? tz : 1.0 - tz);
        acc += w * lattice_value(ix + dx, iy + dy, iz + dz, seed);
      }
  return acc;
}

// Contrast-stretched value noise.
double texture(const Eigen::Vector3d& p, double cell, std::uint64_t seed)
{
  const double n = value_noise(p, cell, splitmix64(seed));
  return std::clamp(0.5 + 2.0 * (n - 0.5), 0.0, 1.0);
}

struct SlabHit
{
  double t = kInf;
  int axis = -1;
  int side = 0;  // 0: min face, 1: max face
};

// Entry point of a ray starting outside the box.
SlabHit enter_box(const Aabb& box, const Ray& ray)
{
  double t_near = -kInf, t_far = kInf;
  int axis = -1, side = 0;
  for (int a = 0; a < 3; ++a) {
    const double o = ray.origin[a], d = ray.direction[a];
    if (d == 0.0) {
      if (o < box.min[a] || o > box.max[a])
        return {};
      continue;
    }
    double t0 = (box.min[a] - o) / d, t1 = (box.max[a] - o) / d;
    int s0 = 0;
    if (t0 > t1) {
      std::swap(t0, t1);
      s0 = 1;
    }
    if (t0 > t_near) {
      t_near = t0;
      axis = a;
      side = s0;
    }
    t_far = std::min(t_far, t1);
  }
  if (axis < 0 || t_near > t_far || t_near <= 0.0)
    return {};
  return {t_near, axis, side};
}

// Exit point of a ray starting inside the box.
SlabHit exit_box(const Aabb& box, const Ray& ray)
{
  SlabHit hit;
  for (int a = 0; a < 3; ++a) {
    const double d = ray.direction[a];
    if (d == 0.0)
      continue;
    const int side = d > 0.0 ? 1 : 0;
    const double t = ((side ? box.max[a] : box.min[a]) - ray.origin[a]) / d;
    if (t < hit.t)
      hit = {t, a, side};
  }
  return hit;
}

Eigen::Vector3d face_point(const Aabb& box, const Ray& ray, const SlabHit& hit)
{
  Eigen::Vector3d p = ray.origin + hit.t * ray.direction;
  p[hit.axis] = hit.side ? box.max[hit.axis] : box.min[hit.axis];
  return p;
}

} // namespace

bool Aabb::contains(const Eigen::Vector3d& p) const
{
  return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
}

bool Aabb::strictly_contains(const Eigen::Vector3d& p) const
{
  return (p.array() > min.array()).all() && (p.array() < max.array()).all();
}

bool Aabb::intersects(const Aabb& o) const
{
  return (min.array() < o.max.array()).all() && (o.min.array() < max.array()).all();
}

double Aabb::volume() const
{
  const Eigen::Vector3d s = size().cwiseMax(0.0);
  return s.x() * s.y() * s.z();
}

void SceneSpec::validate() const
{
  if (!(room.min.array() < room.max.array()).all())
    throw std::invalid_argument("scene: degenerate room bounds");
  if (!(texture_cell > 0.0))
    throw std::invalid_argument("scene: texture cell must be positive");
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const Aabb& b = boxes[i].bounds;
    if (!(b.min.array() < b.max.array()).all())
      throw std::invalid_argument("scene: box " + std::to_string(i) + " is degenerate");
    if (!room.strictly_contains(b.min) || !room.strictly_contains(b.max))
      throw std::invalid_argument("scene: box " + std::to_string(i) + " not inside room");
  }
}

SceneSpec generate_scene(std::uint64_t seed, int n_boxes)
{
  if (n_boxes < 0)
    throw std::invalid_argument("generate_scene: negative box count");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  SceneSpec scene;
  scene.room.min = {-3.5, -3.5, 0.0};
  scene.room.max = {3.5, 3.5, 3.6};
  scene.room_texture_seed = rng();
  scene.room_color = {uniform(0.6, 0.9), uniform(0.6, 0.9), uniform(0.6, 0.9)};
  scene.background = {0.0, 0.0, 0.0};

  // Boxes rest on the floor inside a disc around the room axis so that trajectories on
  // the camera arc never start inside one. Neighbours keep a clearance that
  // shrinks only if placement keeps failing.
  const double placement_radius = 1.2;
  const double reach = 1.8;  // horizontal distance of any box corner from the room axis
  double clearance = 0.8;
  for (int i = 0; i < n_boxes; ++i) {
    bool placed = false;
    for (int attempt = 0; !placed; ++attempt) {
      if (attempt > 0 && attempt % 500 == 0) {
        if (clearance > 0.05)
          clearance *= 0.5;
        if (attempt > 20000)
          throw std::runtime_error("generate_scene: cannot place " + std::to_string(n_boxes) +
                                   " disjoint boxes");
      }
      const Eigen::Vector3d size(uniform(0.9, 1.4), uniform(0.9, 1.4), uniform(0.7, 1.1));
      const double r = placement_radius * std::sqrt(unit(rng));
      const double phi = 2.0 * std::numbers::pi * unit(rng);
      const Eigen::Vector3d c(r * std::cos(phi), r * std::sin(phi), 0.0);
      SceneBox box;
      box.bounds.min = {c.x() - 0.5 * size.x(), c.y() - 0.5 * size.y(), 0.01};
      box.bounds.max = box.bounds.min + size;
      box.texture_seed = rng();
      box.base_color = {uniform(0.35, 1.0), uniform(0.35, 1.0), uniform(0.35, 1.0)};

      Aabb padded = box.bounds;
      padded.min.array() -= clearance;
      padded.max.array() += clearance;
      const Eigen::Vector2d corner(std::abs(c.x()) + 0.5 * size.x(), std::abs(c.y()) + 0.5 * size.y());
      placed = corner.norm() <= reach &&
               std::none_of(scene.boxes.begin(), scene.boxes.end(),
                            [&](const SceneBox& o) { return padded.intersects(o.bounds); });
      if (placed)
        scene.boxes.push_back(box);
    }
  }
  return scene;
}

Eigen::Vector3d surface_albedo(const SceneSpec& scene, int surface, const Eigen::Vector3d& p)
{
  std::uint64_t seed = scene.room_texture_seed;
  Eigen::Vector3d base = scene.room_color;
  if (surface >= 0) {
    seed = scene.boxes.at(static_cast<std::size_t>(surface)).texture_seed;
    base = scene.boxes[static_cast<std::size_t>(surface)].base_color;
  }
  Eigen::Vector3d c;
  for (int ch = 0; ch < 3; ++ch)
    c[ch] = base[ch] * (0.15 + 0.85 * texture(p, scene.texture_cell, splitmix64(seed + 17 * (ch + 1))));
  return c;
}

RayHit intersect(const SceneSpec& scene, const Ray& ray)
{
  RayHit best;
  best.t = kInf;
  for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
    const SlabHit h = enter_box(scene.boxes[i].bounds, ray);
    if (h.t < best.t) {
      best.t = h.t;
      best.surface = static_cast<int>(i);
      best.point = face_point(scene.boxes[i].bounds, ray, h);
    }
  }
  if (scene.walls) {
    const SlabHit h = exit_box(scene.room, ray);
    if (h.axis >= 0 && h.t < best.t) {
      best.t = h.t;
      best.surface = -1;
      best.point = face_point(scene.room, ray, h);
    }
  }
  if (best.surface == -2)
    best.t = 0.0;
  return best;
}

GroundTruth raycast(const SceneSpec& scene, const CameraView& view)
{
  const Eigen::Vector3d eye = view.pose.center();
  if (scene.walls && !scene.room.strictly_contains(eye))
    throw std::invalid_argument("raycast: camera outside the room");
  for (std::size_t i = 0; i < scene.boxes.size(); ++i)
    if (scene.boxes[i].bounds.contains(eye))
      throw std::invalid_argument("raycast: camera inside box " + std::to_string(i));

  GroundTruth gt;
  gt.depth = Raster(view.height, view.width, 1);
  gt.image = Raster(view.height, view.width, 3);
  for (const SceneBox& b : scene.boxes)
    gt.boxes.push_back(b.bounds);

  const Eigen::Vector3d axis = view.pose.R.row(2).transpose();
  parallel_for(static_cast<std::size_t>(view.height) * view.width, [&](std::size_t idx) {
    const int r = static_cast<int>(idx / view.width);
    const int c = static_cast<int>(idx % view.width);
    const Ray ray = backproject_ray(c, r, view);
    const RayHit hit = intersect(scene, ray);
    Eigen::Vector3d color = scene.background;
    if (hit.surface != -2) {
      gt.depth(r, c) = (hit.point - ray.origin).dot(axis);
      color = surface_albedo(scene, hit.surface, hit.point);
    }
    for (int ch = 0; ch < 3; ++ch)
      gt.image(r, c, ch) = color[ch];
  });
  return gt;
}

std::vector<CameraView> make_trajectory(const SceneSpec& scene, int n, std::uint64_t seed,
                                        const CameraSetup& setup)
{
  if (n < 2)
    throw std::invalid_argument("make_trajectory: need at least 2 views");
  // Neighbouring views sit `spacing` apart along the arc; the arc length is
  // capped so that every pairwise baseline stays within [0.05, 1] m.
  const double spacing = std::min(setup.spacing, 0.95 / (n - 1));
  if (spacing < 0.06)
    throw std::invalid_argument("make_trajectory: " + std::to_string(n) +
                                " views do not fit on an arc with baselines in [0.05, 1] m");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double offset = 2.0 * std::numbers::pi * unit(rng);
  const double tilt = 0.1 * (unit(rng) - 0.5);

  const Eigen::Vector3d room_center = scene.room.center();
  double target_z = 1.0;
  if (!scene.boxes.empty()) {
    target_z = 0.0;
    for (const SceneBox& b : scene.boxes)
      target_z += b.bounds.center().z();
    target_z /= static_cast<double>(scene.boxes.size());
  }
  const Eigen::Vector3d target(room_center.x(), room_center.y(), target_z);

  // Arc direction: among evenly spaced candidates, the one from which box
  // centers are best separated in bearing, so boxes do not hide each other.
  constexpr int kCandidates = 16;
  double start = offset, best = -1.0;
  for (int j = 0; j < kCandidates; ++j) {
    const double a = offset + 2.0 * std::numbers::pi * j / kCandidates;
    const Eigen::Vector2d eye(target.x() + setup.radius * std::cos(a), target.y() + setup.radius * std::sin(a));
    double separation = std::numbers::pi;
    for (std::size_t p = 0; p < scene.boxes.size(); ++p)
      for (std::size_t q = p + 1; q < scene.boxes.size(); ++q) {
        const Eigen::Vector2d u = scene.boxes[p].bounds.center().head<2>() - eye;
        const Eigen::Vector2d v = scene.boxes[q].bounds.center().head<2>() - eye;
        separation = std::min(separation, std::acos(std::clamp(u.normalized().dot(v.normalized()), -1.0, 1.0)));
      }
    if (separation > best) {
      best = separation;
      start = a;
    }
  }

  const double step = spacing / setup.radius;
  const double first = start - 0.5 * step * (n - 1);
  std::vector<CameraView> views;
  for (int i = 0; i < n; ++i) {
    const double a = first + step * i;
    const Eigen::Vector3d eye(target.x() + setup.radius * std::cos(a),
                              target.y() + setup.radius * std::sin(a),
                              setup.height_m + tilt * (i - 0.5 * (n - 1)) / n);
    Aabb inner = scene.room;
    inner.min.array() += 0.2;
    inner.max.array() -= 0.2;
    if (!inner.strictly_contains(eye))
      throw std::invalid_argument("make_trajectory: room too small for the camera arc");
    for (const SceneBox& b : scene.boxes) {
      Aabb padded = b.bounds;
      padded.min.array() -= 0.3;
      padded.max.array() += 0.3;
      if (padded.contains(eye))
        throw std::invalid_argument("make_trajectory: camera arc passes through a box");
    }
    CameraView view;
    view.width = setup.width;
    view.height = setup.height;
    view.intrinsics = {setup.focal, setup.focal, 0.5 * setup.width - 0.5,
                       0.5 * setup.height - 0.5};
    view.pose = Pose::look_at(eye, target, Eigen::Vector3d::UnitZ());
    views.push_back(view);
  }
  return views;
}

} // namespace mvdet
