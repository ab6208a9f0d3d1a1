#include "mvdet/boxes.hpp"

#include <algorithm>
#include <stdexcept>

namespace mvdet {

std::vector<Box3D> extract_boxes(const VoxelGrid& grid, const BoxOptions& options)
{
  if (!(options.ratio > 0.0 && options.ratio <= 1.0))
    throw std::invalid_argument("extract_boxes: ratio must lie in (0, 1]");
  const GridSpec& g = grid.spec;
  if (grid.surface.size() != g.voxel_count())
    throw std::invalid_argument("extract_boxes: surface scores do not match the grid");
  const double top = grid.surface.empty() ? 0.0 : *std::max_element(grid.surface.begin(), grid.surface.end());
  if (!(top > 0.0))
    return {};
  const double threshold = options.ratio * top;

  struct Component
  {
    std::size_t seed;
    Box3D box;
  };
  std::vector<Component> found;
  std::vector<char> visited(g.voxel_count(), 0);
  std::vector<std::size_t> stack;
  for (int z = 0; z < g.nz; ++z)
    for (int y = 0; y < g.ny; ++y)
      for (int x = 0; x < g.nx; ++x) {
        const std::size_t seed = g.linear(x, y, z);
        if (visited[seed] || grid.surface[seed] < threshold)
          continue;
        visited[seed] = 1;
        stack.assign(1, seed);
        Eigen::Vector3d lo = Eigen::Vector3d::Constant(1e300), hi = -lo;
        double sum = 0.0;
        int count = 0;
        while (!stack.empty()) {
          const std::size_t v = stack.back();
          stack.pop_back();
          const int vx = static_cast<int>(v % g.nx);
          const int vy = static_cast<int>((v / g.nx) % g.ny);
          const int vz = static_cast<int>(v / (static_cast<std::size_t>(g.nx) * g.ny));
          const Eigen::Vector3d c = g.center(vx, vy, vz);
          lo = lo.cwiseMin(c);
          hi = hi.cwiseMax(c);
          sum += grid.surface[v];
          ++count;
          for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const int nx = vx + dx, ny = vy + dy, nz = vz + dz;
                if (nx < 0 || ny < 0 || nz < 0 || nx >= g.nx || ny >= g.ny || nz >= g.nz)
                  continue;
                const std::size_t n = g.linear(nx, ny, nz);
                if (!visited[n] && grid.surface[n] >= threshold) {
                  visited[n] = 1;
                  stack.push_back(n);
                }
              }
        }
        if (count < options.min_voxels)
          continue;
        Box3D box;
        lo -= 0.5 * g.pitch;
        hi += 0.5 * g.pitch;
        box.center = 0.5 * (lo + hi);
        box.size = hi - lo;
        box.score = sum / count;
        found.push_back({seed, box});
      }

  std::stable_sort(found.begin(), found.end(), [](const Component& a, const Component& b) {
    if (a.box.score != b.box.score)
      return a.box.score > b.box.score;
    return a.seed < b.seed;
  });
  std::vector<Box3D> boxes;
  for (const Component& c : found)
    boxes.push_back(c.box);
  return boxes;
}

double iou3d(const Box3D& a, const Box3D& b)
{
  if (a.yaw != 0.0 || b.yaw != 0.0)
    throw std::invalid_argument("iou3d: rotated boxes are not supported");
  const Eigen::Vector3d lo = a.min().cwiseMax(b.min());
  const Eigen::Vector3d hi = a.max().cwiseMin(b.max());
  const Eigen::Vector3d overlap = (hi - lo).cwiseMax(0.0);
  const double inter = overlap.prod();
  const double uni = a.size.prod() + b.size.prod() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

} // namespace mvdet
