#pragma once

#include "mvdet/sampling.hpp"

#include <vector>

namespace mvdet {

struct Box3D
{
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d size = Eigen::Vector3d::Ones();  // extent along x, y, z
  double yaw = 0.0;
  double score = 0.0;

  Eigen::Vector3d min() const { return center - 0.5 * size; }
  Eigen::Vector3d max() const { return center + 0.5 * size; }
};

struct BoxOptions
{
  double ratio = 0.5;    // keep voxels with s >= ratio * max s
  int min_voxels = 4;
};

// Connected components (26-neighbourhood) of high-scoring voxels, each
// reported as the bounds of its voxel centers grown by half a pitch. Sorted by
// descending mean score, then by the component's first voxel in scan order.
std::vector<Box3D> extract_boxes(const VoxelGrid& grid, const BoxOptions& options = {});

// Axis-aligned IoU; both boxes must have zero yaw.
double iou3d(const Box3D& a, const Box3D& b);

} // namespace mvdet
