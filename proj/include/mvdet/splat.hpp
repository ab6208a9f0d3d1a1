#pragma once

#include "mvdet/costvol.hpp"

#include <span>
#include <vector>

namespace mvdet {

struct Gaussian
{
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  double opacity = 0.0;
  Eigen::Vector4d rotation{1.0, 0.0, 0.0, 0.0};  // unit quaternion (w, x, y, z)
  Eigen::Vector3d scale = Eigen::Vector3d::Ones();
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  int view = 0;
  int row = 0;
  int col = 0;

  Eigen::Matrix3d covariance() const;
};

using GaussianSplatSet = std::vector<Gaussian>;

struct RenderTarget
{
  Raster color;  // RGB
  Raster depth;  // meters, 0 where coverage is below kMinCoverage
  Raster alpha;  // accumulated opacity
};

inline constexpr double kMinCoverage = 1e-4;
inline constexpr double kMaxAlpha = 0.999;
inline constexpr double kLowPass = 0.3;  // px^2 added to the projected covariance

struct SplatOptions
{
  double footprint = 1.0;  // isotropic scale = footprint * depth / mean focal
};

// One primitive per feature-resolution pixel of `view`, placed at the depth
// regressed from `prob` along the pixel ray.
GaussianSplatSet build_splats(const CameraView& view, const ProbabilityVolume& prob,
                              const DepthPlanes& planes, const Raster& image,
                              const SplatOptions& options = {}, int view_id = 0);

// Front-to-back alpha compositing at feature resolution of `target`.
RenderTarget rasterize(std::span<const Gaussian> splats, const CameraView& target);

// Mean squared difference over pixels and channels.
double rendering_loss(const RenderTarget& rendered, const Raster& target);

std::vector<int> select_novel_sources(std::span<const CameraView> views, const CameraView& novel,
                                      int n);

// Gradient of the loss with respect to per-primitive parameters.
struct SplatGradient
{
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  double opacity = 0.0;
  double scale = 0.0;  // isotropic scale
};

// Renders into `target`, returns the loss against `target_image` (feature
// resolution) and accumulates d(loss)/d(params) into `grad` when non-empty.
// Analytic gradients assume isotropic primitives.
double render_loss_and_gradient(std::span<const Gaussian> splats, const CameraView& target,
                                const Raster& target_image, std::span<SplatGradient> grad);

struct RefineOptions
{
  int steps = 20;
  double step_size = 0.5;    // largest per-pixel logit change of a full step
  double pixel_floor = 1e-2; // gradient norm floor, relative to the largest pixel gradient
  int max_halvings = 8;
  SplatOptions splat;
};

struct RefineResult
{
  std::vector<ProbabilityVolume> volumes;
  std::vector<double> loss_trace;  // initial loss, then one entry per step
  int accepted_steps = 0;
};

struct RefineProblem
{
  DepthPlanes planes;
  std::vector<CameraView> sources;
  std::vector<Raster> source_images;  // full resolution
  std::vector<CameraView> novel;
  std::vector<Raster> novel_images;   // full resolution
  SplatOptions splat;
};

// Summed rendering loss over all novel views for per-source logit volumes;
// fills d(loss)/d(logits) when `grad` is non-null.
double refinement_objective(const RefineProblem& problem, std::span<const Raster> logits,
                            std::vector<Raster>* grad);

std::vector<Raster> logits_from_probabilities(std::span<const ProbabilityVolume> volumes);
ProbabilityVolume softmax_planes(const Raster& logits);

RefineResult refine_probability_volume(const RefineProblem& problem,
                                       std::span<const ProbabilityVolume> initial,
                                       const RefineOptions& options = {});

} // namespace mvdet
