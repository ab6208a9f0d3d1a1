#pragma once

#include "mvdet/camera.hpp"
#include "mvdet/raster.hpp"

#include <span>
#include <vector>

namespace mvdet {

// Descriptor grid at 1/kDownsample resolution, kFeatureChannels per cell.
using FeatureMap = Raster;
// Per-pixel categorical distribution over depth planes (channels = planes).
using ProbabilityVolume = Raster;
// Single-channel depth in meters; 0 marks "no depth".
using DepthMap = Raster;

inline constexpr int kDownsample = 4;
inline constexpr int kFeatureChannels = 6;

struct DepthPlanes
{
  std::vector<double> depths;

  // M planes uniformly spaced over [near, far].
  static DepthPlanes uniform(int count, double near, double far);
  int size() const { return static_cast<int>(depths.size()); }
  double spacing() const;
  // Index of the plane closest to `depth`; ties go to the lower index.
  int nearest(double depth) const;
};

struct CostVolume
{
  int rows = 0;
  int cols = 0;
  int planes = 0;
  int channels = 0;
  std::vector<double> cost;        // [row][col][plane][channel]
  std::vector<int> valid_views;    // [row][col][plane]

  double& at(int r, int c, int m, int ch)
  {
    return cost[((static_cast<std::size_t>(r) * cols + c) * planes + m) * channels + ch];
  }
  double at(int r, int c, int m, int ch) const
  {
    return cost[((static_cast<std::size_t>(r) * cols + c) * planes + m) * channels + ch];
  }
  int& views(int r, int c, int m)
  {
    return valid_views[(static_cast<std::size_t>(r) * cols + c) * planes + m];
  }
  int views(int r, int c, int m) const
  {
    return valid_views[(static_cast<std::size_t>(r) * cols + c) * planes + m];
  }
};

struct FeatureView
{
  const FeatureMap& features;
  const CameraView& camera;
};

inline constexpr double kDefaultTemperature = 1.2e-4;

struct CostOptions
{
  double penalty = 10.0;  // cost when fewer than two views observe a (pixel, plane)
};

struct DepthMetrics
{
  double rmse = 0.0;
  double abs_rel = 0.0;
  std::size_t count = 0;
};

// Channels: mean R, G, B of the 4x4 patch; Sobel x and y of the patch
// luminance (stencil divided by 8); luminance standard deviation over the 3x3
// neighbourhood.
FeatureMap extract_features(const Raster& image);

// Block average of an image down to feature resolution.
Raster downsample_image(const Raster& image, int factor = kDownsample);

// The n views closest to view i by camera-center distance (ties: lower index).
std::vector<int> select_source_views(std::span<const CameraView> views, int reference, int n);

// Bilinear lookup with edge clamping; writes `channels` values to out.
void sample_bilinear(const Raster& grid, double u, double v, double* out);

CostVolume build_cost_volume(const FeatureView& reference, std::span<const FeatureView> sources,
                             const DepthPlanes& planes, const CostOptions& options = {});

// Negated channel-mean cost, 3x3 binomial smoothing per plane (optional),
// then a temperature softmax over planes.
ProbabilityVolume cost_to_probability(const CostVolume& volume, double temperature,
                                      bool smooth = true);

// Full-resolution depth reduced to feature resolution. A cell is kept only
// if all of its samples lie in [near, far] and span at most `spread` of the
// nearest one; its value is the harmonic mean (exact for planar patches).
// Rejected cells are 0.
DepthMap downsample_depth(const DepthMap& depth, double near, double far, double spread = 0.1);

DepthMap regress_depth(const ProbabilityVolume& prob, const DepthPlanes& planes);

DepthMetrics eval_depth(const DepthMap& depth, const DepthMap& truth, const Raster& mask);
// Mask derived from truth > 0.
DepthMetrics eval_depth(const DepthMap& depth, const DepthMap& truth);

} // namespace mvdet
