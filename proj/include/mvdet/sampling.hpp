#pragma once

#include "mvdet/costvol.hpp"

#include <span>
#include <vector>

namespace mvdet {

// Per-pixel top-k depth hypotheses with renormalized confidences, stored in
// rank order (highest probability first).
struct DepthProposalSet
{
  int rows = 0;
  int cols = 0;
  int k = 0;
  std::vector<int> index;      // plane index
  std::vector<double> depth;   // meters
  std::vector<double> score;   // renormalized, sums to 1 per pixel

  std::size_t offset(int r, int c) const
  {
    return (static_cast<std::size_t>(r) * cols + c) * k;
  }
};

struct ProposalMatch
{
  double weight = 0.0;  // matched score; 0 when gated out
  int slot = -1;        // rank of the matched proposal
  bool gated = false;
};

struct GridSpec
{
  int nx = 40;
  int ny = 40;
  int nz = 16;
  Eigen::Vector3d origin{-3.2, -3.2, 0.2};
  Eigen::Vector3d pitch{0.16, 0.16, 0.2};

  std::size_t voxel_count() const { return static_cast<std::size_t>(nx) * ny * nz; }
  std::size_t linear(int x, int y, int z) const
  {
    return (static_cast<std::size_t>(z) * ny + y) * nx + x;
  }
  Eigen::Vector3d center(int x, int y, int z) const
  {
    return origin + (Eigen::Vector3d(x, y, z) + Eigen::Vector3d::Constant(0.5)).cwiseProduct(pitch);
  }
};

struct VoxelGrid
{
  GridSpec spec;
  int channels = 0;
  std::vector<double> aggregated;  // v-hat, [voxel][channel]
  std::vector<double> surface;     // s in [0, 1]
  std::vector<double> feature;     // v = s * v-hat, [voxel][channel]
  std::vector<int> matched;        // number of contributing projections
};

struct SamplingOptions
{
  double window = 0.2;  // gating half-width around a proposal, meters (inclusive)
};

// One view's contribution to the volume. `id` fixes the accumulation order so
// that permuting the input list leaves results unchanged.
struct VolumeView
{
  int id = 0;
  const FeatureMap& features;
  const CameraView& camera;
  const DepthProposalSet* proposals = nullptr;  // unused by the vanilla volume
};

DepthProposalSet sample_topk(const ProbabilityVolume& prob, const DepthPlanes& planes, int k);

// Matches a voxel depth against one pixel's proposals. Nearest proposal within
// the window wins; ties prefer the higher score, then the lower rank.
ProposalMatch gate_and_weight(double voxel_depth, std::span<const double> depths,
                              std::span<const double> scores, double window);

VoxelGrid build_volume(std::span<const VolumeView> views, const GridSpec& grid,
                       const SamplingOptions& options = {});

// Plain average of all valid back-projected features, surface score 1
// wherever any projection is valid.
VoxelGrid build_volume_vanilla(std::span<const VolumeView> views, const GridSpec& grid);

} // namespace mvdet
