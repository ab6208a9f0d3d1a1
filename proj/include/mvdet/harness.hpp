#pragma once

#include "mvdet/boxes.hpp"
#include "mvdet/io.hpp"
#include "mvdet/scenegen.hpp"
#include "mvdet/splat.hpp"

#include <string>
#include <vector>

namespace mvdet {

struct PipelineConfig
{
  int planes = 12;
  double depth_min = 0.2;
  double depth_max = 5.0;
  int topk = 3;
  double window = 0.2;
  double temperature = kDefaultTemperature;
  double penalty = 10.0;
  int source_views = 2;
  GridSpec grid;
  double splat_footprint = 1.0;
  bool refine = false;
  int refine_steps = 20;
  double refine_step_size = 0.5;
  int refine_novel_views = 2;
  int refine_sources = 3;
  double box_ratio = 0.5;
  int box_min_voxels = 4;

  void validate() const;
  DepthPlanes depth_planes() const { return DepthPlanes::uniform(planes, depth_min, depth_max); }
};

// Flat "key = value" text; '#' starts a comment. Unknown or repeated keys and
// malformed values are errors naming the source and line.
PipelineConfig parse_config(const std::string& text, const std::string& source = "config");
PipelineConfig load_config(const fs::path& path);
std::string format_config(const PipelineConfig& config);

// Scene directory: cameras.txt, images/view_NNN.ppm, and optionally
// depth/view_NNN.mvsr (full-resolution ground-truth depth) and boxes.txt.
struct SceneData
{
  std::vector<CameraView> cameras;
  std::vector<Raster> images;
  std::vector<DepthMap> depths;  // empty when no ground truth is available
  std::vector<Box3D> boxes;
  bool has_boxes = false;
};

SceneData synthesize_scene(std::uint64_t seed, int n_boxes, int n_views,
                           const CameraSetup& setup = {});
std::vector<Box3D> ground_truth_boxes(const SceneSpec& scene);
void save_scene(const fs::path& dir, const SceneData& scene);
SceneData load_scene(const fs::path& dir);
std::string view_file(int index, const std::string& extension);

struct ViewDepthMetrics
{
  int view = 0;
  DepthMetrics depth;
};

struct BoxMatch
{
  int gt = 0;
  int match = -1;  // index of the best extracted box, -1 if none overlaps
  double iou = 0.0;
};

struct Metrics
{
  std::vector<ViewDepthMetrics> depth;
  std::vector<BoxMatch> boxes;
  int predicted_boxes = 0;
  std::vector<double> refine_loss;
};

std::string format_metrics(const Metrics& metrics);

struct PipelineResult
{
  std::vector<ProbabilityVolume> probabilities;
  std::vector<DepthMap> depths;
  std::vector<DepthProposalSet> proposals;
  VoxelGrid volume;
  std::vector<Box3D> boxes;
  GaussianSplatSet splats;   // filled when refinement runs
  Metrics metrics;
};

// Per-view probability volumes and regressed depth, before any refinement.
void estimate_depth(const SceneData& scene, const PipelineConfig& config,
                    std::vector<ProbabilityVolume>& probabilities, std::vector<DepthMap>& depths);

// Held-out views used as refinement targets, spread evenly over the sequence.
std::vector<int> novel_view_indices(int n_views, int n_novel);

PipelineResult run_pipeline(const SceneData& scene, const PipelineConfig& config);
void write_outputs(const fs::path& dir, const PipelineResult& result, const PipelineConfig& config);

// Depth metrics of predicted feature-resolution maps against full-resolution
// ground truth, and best-IoU matches of ground-truth boxes.
Metrics evaluate(const SceneData& scene, std::span<const DepthMap> depths,
                 std::span<const Box3D> boxes, const PipelineConfig& config);

// Voxel classes derived from ground-truth depth: voxels containing a
// back-projected ground-truth surface point, and voxels lying in front of the
// observed surface in at least one view by more than half the voxel diagonal.
enum class VoxelClass : unsigned char { Unknown, Surface, Free };
std::vector<VoxelClass> classify_voxels(const GridSpec& grid, std::span<const CameraView> views,
                                        std::span<const DepthMap> truth);

// Mean surface score over surface voxels divided by the mean over free voxels.
double surface_ratio(const VoxelGrid& grid, std::span<const VoxelClass> classes);

} // namespace mvdet
