#include "mvdet/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <variant>

namespace mvdet {

namespace {

using Field = std::variant<int*, double*, bool*>;

std::vector<std::pair<std::string, Field>> config_fields(PipelineConfig& c)
{
  return {
      {"planes", &c.planes},
      {"depth_min", &c.depth_min},
      {"depth_max", &c.depth_max},
      {"topk", &c.topk},
      {"window", &c.window},
      {"temperature", &c.temperature},
      {"penalty", &c.penalty},
      {"source_views", &c.source_views},
      {"grid_nx", &c.grid.nx},
      {"grid_ny", &c.grid.ny},
      {"grid_nz", &c.grid.nz},
      {"grid_origin_x", &c.grid.origin.x()},
      {"grid_origin_y", &c.grid.origin.y()},
      {"grid_origin_z", &c.grid.origin.z()},
      {"grid_pitch_x", &c.grid.pitch.x()},
      {"grid_pitch_y", &c.grid.pitch.y()},
      {"grid_pitch_z", &c.grid.pitch.z()},
      {"splat_footprint", &c.splat_footprint},
      {"refine", &c.refine},
      {"refine_steps", &c.refine_steps},
      {"refine_step_size", &c.refine_step_size},
      {"refine_novel_views", &c.refine_novel_views},
      {"refine_sources", &c.refine_sources},
      {"box_ratio", &c.box_ratio},
      {"box_min_voxels", &c.box_min_voxels},
  };
}

std::string trim(const std::string& s)
{
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(const char* spec, double v)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

} // namespace

void PipelineConfig::validate() const
{
  auto require = [](bool ok, const char* what) {
    if (!ok)
      throw std::invalid_argument(std::string("config: ") + what);
  };
  require(planes >= 2, "planes must be >= 2");
  require(depth_min > 0.0 && depth_max > depth_min, "depth range must satisfy 0 < depth_min < depth_max");
  require(topk >= 1 && topk <= planes, "topk must lie in [1, planes]");
  require(window > 0.0, "window must be positive");
  require(temperature > 0.0, "temperature must be positive");
  require(penalty > 0.0, "penalty must be positive");
  require(source_views >= 1, "source_views must be >= 1");
  require(grid.nx > 0 && grid.ny > 0 && grid.nz > 0, "grid dims must be positive");
  require((grid.pitch.array() > 0.0).all(), "grid pitch must be positive");
  require(grid.origin.allFinite(), "grid origin must be finite");
  require(splat_footprint > 0.0, "splat_footprint must be positive");
  require(refine_steps >= 1, "refine_steps must be >= 1");
  require(refine_step_size > 0.0, "refine_step_size must be positive");
  require(refine_novel_views >= 1, "refine_novel_views must be >= 1");
  require(refine_sources >= 1, "refine_sources must be >= 1");
  require(box_ratio > 0.0 && box_ratio <= 1.0, "box_ratio must lie in (0, 1]");
  require(box_min_voxels >= 1, "box_min_voxels must be >= 1");
}

PipelineConfig parse_config(const std::string& text, const std::string& source)
{
  PipelineConfig config;
  auto fields = config_fields(config);
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos)
      line.erase(hash);
    line = trim(line);
    if (line.empty())
      continue;
    const std::string at = source + ": line " + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(at + "expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return f.first == key; });
    if (it == fields.end())
      throw std::invalid_argument(at + "unknown key \"" + key + "\"");
    if (!seen.insert(key).second)
      throw std::invalid_argument(at + "duplicate key \"" + key + "\"");
    const std::string bad = at + "invalid value \"" + value + "\" for key \"" + key + "\"";
    std::visit(
        [&](auto* target) {
          using T = std::remove_pointer_t<decltype(target)>;
          std::size_t used = 0;
          try {
            if constexpr (std::is_same_v<T, bool>) {
              if (value == "1" || value == "true")
                *target = true;
              else if (value == "0" || value == "false")
                *target = false;
              else
                throw std::invalid_argument(bad);
              used = value.size();
            } else if constexpr (std::is_same_v<T, int>) {
              *target = std::stoi(value, &used);
            } else {
              *target = std::stod(value, &used);
              if (!std::isfinite(*target))
                used = 0;
            }
          } catch (const std::exception&) {
            throw std::invalid_argument(bad);
          }
          if (used != value.size() || value.empty())
            throw std::invalid_argument(bad);
        },
        it->second);
  }
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(source + ": " + e.what());
  }
  return config;
}

PipelineConfig load_config(const fs::path& path)
{
  std::ifstream in(path);
  if (!in)
    throw FormatError(path.string() + ": cannot open for reading");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

std::string format_config(const PipelineConfig& config)
{
  PipelineConfig copy = config;
  std::string out;
  for (const auto& [key, field] : config_fields(copy)) {
    out += key + " = ";
    std::visit(
        [&](auto* v) {
          using T = std::remove_pointer_t<decltype(v)>;
          if constexpr (std::is_same_v<T, bool>)
            out += *v ? "1" : "0";
          else if constexpr (std::is_same_v<T, int>)
            out += std::to_string(*v);
          else
            out += fmt("%.17g", *v);
        },
        field);
    out += '\n';
  }
  return out;
}

std::vector<Box3D> ground_truth_boxes(const SceneSpec& scene)
{
  std::vector<Box3D> boxes;
  for (const SceneBox& b : scene.boxes) {
    Box3D box;
    box.center = b.bounds.center();
    box.size = b.bounds.size();
    box.score = 1.0;
    boxes.push_back(box);
  }
  return boxes;
}

SceneData synthesize_scene(std::uint64_t seed, int n_boxes, int n_views, const CameraSetup& setup)
{
  const SceneSpec spec = generate_scene(seed, n_boxes);
  SceneData scene;
  scene.cameras = make_trajectory(spec, n_views, seed + 1, setup);
  for (const CameraView& v : scene.cameras) {
    GroundTruth gt = raycast(spec, v);
    scene.images.push_back(std::move(gt.image));
    scene.depths.push_back(std::move(gt.depth));
  }
  scene.boxes = ground_truth_boxes(spec);
  scene.has_boxes = true;
  return scene;
}

std::string view_file(int index, const std::string& extension)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "view_%03d", index);
  return buf + extension;
}

void save_scene(const fs::path& dir, const SceneData& scene)
{
  write_cameras(dir / "cameras.txt", scene.cameras);
  for (std::size_t i = 0; i < scene.images.size(); ++i)
    write_ppm(dir / "images" / view_file(static_cast<int>(i), ".ppm"), scene.images[i]);
  for (std::size_t i = 0; i < scene.depths.size(); ++i)
    write_raster(dir / "depth" / view_file(static_cast<int>(i), ".mvsr"), scene.depths[i]);
  if (scene.has_boxes)
    write_boxes(dir / "boxes.txt", scene.boxes);
}

SceneData load_scene(const fs::path& dir)
{
  if (!fs::is_directory(dir))
    throw FormatError(dir.string() + ": scene directory not found");
  SceneData scene;
  scene.cameras = read_cameras(dir / "cameras.txt");
  for (std::size_t i = 0; i < scene.cameras.size(); ++i) {
    const fs::path path = dir / "images" / view_file(static_cast<int>(i), ".ppm");
    Raster image = read_ppm(path);
    const CameraView& cam = scene.cameras[i];
    if (image.rows() != cam.height || image.cols() != cam.width)
      throw FormatError(path.string() + ": image size does not match camera " + std::to_string(i));
    scene.images.push_back(std::move(image));
  }
  if (fs::is_directory(dir / "depth")) {
    for (std::size_t i = 0; i < scene.cameras.size(); ++i) {
      const fs::path path = dir / "depth" / view_file(static_cast<int>(i), ".mvsr");
      Raster depth = read_raster(path);
      const CameraView& cam = scene.cameras[i];
      if (depth.rows() != cam.height || depth.cols() != cam.width || depth.channels() != 1)
        throw FormatError(path.string() + ": depth size does not match camera " + std::to_string(i));
      scene.depths.push_back(std::move(depth));
    }
  }
  if (fs::exists(dir / "boxes.txt")) {
    scene.boxes = read_boxes(dir / "boxes.txt");
    scene.has_boxes = true;
  }
  return scene;
}

void estimate_depth(const SceneData& scene, const PipelineConfig& config,
                    std::vector<ProbabilityVolume>& probabilities, std::vector<DepthMap>& depths)
{
  const int n = static_cast<int>(scene.cameras.size());
  if (n < 2 || scene.images.size() != scene.cameras.size())
    throw std::invalid_argument("pipeline: need at least two views with one image each");
  if (config.source_views >= n)
    throw std::invalid_argument("pipeline: source_views must be below the number of views");
  const DepthPlanes planes = config.depth_planes();
  std::vector<FeatureMap> features;
  for (const Raster& image : scene.images)
    features.push_back(extract_features(image));
  probabilities.clear();
  depths.clear();
  for (int i = 0; i < n; ++i) {
    const std::vector<int> src = select_source_views(scene.cameras, i, config.source_views);
    std::vector<FeatureView> sources;
    for (int j : src)
      sources.push_back({features[static_cast<std::size_t>(j)], scene.cameras[static_cast<std::size_t>(j)]});
    const CostVolume cost = build_cost_volume({features[static_cast<std::size_t>(i)], scene.cameras[static_cast<std::size_t>(i)]},
                                              sources, planes, CostOptions{config.penalty});
    probabilities.push_back(cost_to_probability(cost, config.temperature));
    depths.push_back(regress_depth(probabilities.back(), planes));
  }
}

std::vector<int> novel_view_indices(int n_views, int n_novel)
{
  if (n_novel < 1 || n_novel >= n_views)
    throw std::invalid_argument("novel_view_indices: need 1 <= novel views < views");
  std::vector<int> out;
  for (int j = 0; j < n_novel; ++j)
    out.push_back(static_cast<int>((2 * j + 1) * static_cast<long>(n_views) / (2 * n_novel)));
  return out;
}

PipelineResult run_pipeline(const SceneData& scene, const PipelineConfig& config)
{
  config.validate();
  PipelineResult result;
  estimate_depth(scene, config, result.probabilities, result.depths);
  const DepthPlanes planes = config.depth_planes();
  const int n = static_cast<int>(scene.cameras.size());

  if (config.refine) {
    const std::vector<int> novel = novel_view_indices(n, config.refine_novel_views);
    std::vector<int> pool;
    std::vector<CameraView> pool_cams;
    for (int i = 0; i < n; ++i)
      if (std::find(novel.begin(), novel.end(), i) == novel.end()) {
        pool.push_back(i);
        pool_cams.push_back(scene.cameras[static_cast<std::size_t>(i)]);
      }
    if (config.refine_sources > static_cast<int>(pool.size()))
      throw std::invalid_argument("pipeline: not enough views left for refinement sources");
    std::set<int> chosen;
    for (int v : novel)
      for (int j : select_novel_sources(pool_cams, scene.cameras[static_cast<std::size_t>(v)], config.refine_sources))
        chosen.insert(pool[static_cast<std::size_t>(j)]);

    RefineProblem problem;
    problem.planes = planes;
    problem.splat.footprint = config.splat_footprint;
    std::vector<ProbabilityVolume> initial;
    for (int s : chosen) {
      problem.sources.push_back(scene.cameras[static_cast<std::size_t>(s)]);
      problem.source_images.push_back(scene.images[static_cast<std::size_t>(s)]);
      initial.push_back(result.probabilities[static_cast<std::size_t>(s)]);
    }
    for (int v : novel) {
      problem.novel.push_back(scene.cameras[static_cast<std::size_t>(v)]);
      problem.novel_images.push_back(scene.images[static_cast<std::size_t>(v)]);
    }
    RefineOptions options;
    options.steps = config.refine_steps;
    options.step_size = config.refine_step_size;
    options.splat = problem.splat;
    RefineResult refined = refine_probability_volume(problem, initial, options);
    std::size_t k = 0;
    for (int s : chosen) {
      const auto idx = static_cast<std::size_t>(s);
      result.probabilities[idx] = std::move(refined.volumes[k]);
      result.depths[idx] = regress_depth(result.probabilities[idx], planes);
      const GaussianSplatSet part = build_splats(scene.cameras[idx], result.probabilities[idx], planes,
                                                 scene.images[idx], problem.splat, s);
      result.splats.insert(result.splats.end(), part.begin(), part.end());
      ++k;
    }
    result.metrics.refine_loss = refined.loss_trace;
  }

  std::vector<FeatureMap> features;
  for (const Raster& image : scene.images)
    features.push_back(extract_features(image));
  for (const ProbabilityVolume& prob : result.probabilities)
    result.proposals.push_back(sample_topk(prob, planes, config.topk));
  std::vector<VolumeView> views;
  for (int i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    views.push_back({i, features[idx], scene.cameras[idx], &result.proposals[idx]});
  }
  result.volume = build_volume(views, config.grid, SamplingOptions{config.window});
  result.boxes = extract_boxes(result.volume, BoxOptions{config.box_ratio, config.box_min_voxels});

  const std::vector<double> trace = result.metrics.refine_loss;
  result.metrics = evaluate(scene, result.depths, result.boxes, config);
  result.metrics.refine_loss = trace;
  return result;
}

Metrics evaluate(const SceneData& scene, std::span<const DepthMap> depths,
                 std::span<const Box3D> boxes, const PipelineConfig& config)
{
  Metrics metrics;
  if (!scene.depths.empty()) {
    if (scene.depths.size() != depths.size())
      throw std::invalid_argument("evaluate: one predicted depth map per ground-truth view expected");
    for (std::size_t i = 0; i < depths.size(); ++i) {
      const DepthMap truth = downsample_depth(scene.depths[i], config.depth_min, config.depth_max);
      if (!depths[i].same_shape(truth))
        throw std::invalid_argument("evaluate: depth map " + std::to_string(i) + " has the wrong shape");
      ViewDepthMetrics m;
      m.view = static_cast<int>(i);
      if (std::any_of(truth.data().begin(), truth.data().end(), [](double z) { return z > 0.0; }))
        m.depth = eval_depth(depths[i], truth);
      metrics.depth.push_back(m);
    }
  }
  metrics.predicted_boxes = static_cast<int>(boxes.size());
  if (scene.has_boxes)
    for (std::size_t g = 0; g < scene.boxes.size(); ++g) {
      BoxMatch match;
      match.gt = static_cast<int>(g);
      for (std::size_t b = 0; b < boxes.size(); ++b) {
        const double iou = iou3d(scene.boxes[g], boxes[b]);
        if (iou > match.iou) {
          match.iou = iou;
          match.match = static_cast<int>(b);
        }
      }
      metrics.boxes.push_back(match);
    }
  return metrics;
}

std::string format_metrics(const Metrics& metrics)
{
  std::string out;
  double sum = 0.0;
  int counted = 0;
  for (const ViewDepthMetrics& m : metrics.depth) {
    out += "depth view=" + std::to_string(m.view) + " rmse=" + fmt("%.6f", m.depth.rmse) +
           " abs_rel=" + fmt("%.6f", m.depth.abs_rel) + " pixels=" + std::to_string(m.depth.count) + "\n";
    if (m.depth.count > 0) {
      sum += m.depth.rmse;
      ++counted;
    }
  }
  if (counted > 0)
    out += "depth_mean rmse=" + fmt("%.6f", sum / counted) + "\n";
  out += "boxes predicted=" + std::to_string(metrics.predicted_boxes) + "\n";
  for (const BoxMatch& b : metrics.boxes)
    out += "gt_box index=" + std::to_string(b.gt) + " best_iou=" + fmt("%.6f", b.iou) +
           " match=" + std::to_string(b.match) + "\n";
  for (std::size_t i = 0; i < metrics.refine_loss.size(); ++i)
    out += "refine_loss step=" + std::to_string(i) + " value=" + fmt("%.9g", metrics.refine_loss[i]) + "\n";
  return out;
}

void write_outputs(const fs::path& dir, const PipelineResult& result, const PipelineConfig& config)
{
  fs::create_directories(dir);
  for (std::size_t i = 0; i < result.probabilities.size(); ++i) {
    write_raster(dir / "probability" / view_file(static_cast<int>(i), ".mvsr"), result.probabilities[i]);
    write_raster(dir / "depth" / view_file(static_cast<int>(i), ".mvsr"), result.depths[i]);
  }
  write_voxel_grid(dir / "volume.mvsv", result.volume);
  write_boxes(dir / "boxes.txt", result.boxes);
  if (!result.splats.empty())
    write_splats(dir / "splats.mvsr", result.splats);
  std::ofstream(dir / "metrics.txt") << format_metrics(result.metrics);
  std::ofstream(dir / "config.txt") << format_config(config);
}

std::vector<VoxelClass> classify_voxels(const GridSpec& grid, std::span<const CameraView> views,
                                        std::span<const DepthMap> truth)
{
  if (views.size() != truth.size())
    throw std::invalid_argument("classify_voxels: one depth map per view expected");
  std::vector<VoxelClass> classes(grid.voxel_count(), VoxelClass::Unknown);
  for (std::size_t i = 0; i < views.size(); ++i)
    for (int r = 0; r < truth[i].rows(); ++r)
      for (int c = 0; c < truth[i].cols(); ++c) {
        const double z = truth[i](r, c);
        if (!(z > 0.0))
          continue;
        const Ray ray = backproject_ray(c, r, views[i], kDownsample);
        const Eigen::Vector3d p = ray.origin + ray_distance(ray, views[i], z) * ray.direction;
        const Eigen::Vector3d cell = (p - grid.origin).cwiseQuotient(grid.pitch);
        const int x = static_cast<int>(std::floor(cell.x()));
        const int y = static_cast<int>(std::floor(cell.y()));
        const int zz = static_cast<int>(std::floor(cell.z()));
        if (x >= 0 && y >= 0 && zz >= 0 && x < grid.nx && y < grid.ny && zz < grid.nz)
          classes[grid.linear(x, y, zz)] = VoxelClass::Surface;
      }
  const double margin = 0.5 * grid.pitch.norm();
  for (int z = 0; z < grid.nz; ++z)
    for (int y = 0; y < grid.ny; ++y)
      for (int x = 0; x < grid.nx; ++x) {
        const std::size_t idx = grid.linear(x, y, z);
        if (classes[idx] == VoxelClass::Surface)
          continue;
        const Eigen::Vector3d p = grid.center(x, y, z);
        for (std::size_t i = 0; i < views.size(); ++i) {
          const Projection proj = project(p, views[i], kDownsample);
          if (!proj.valid)
            continue;
          const int col = std::clamp(static_cast<int>(std::floor(proj.u + 0.5)), 0, truth[i].cols() - 1);
          const int row = std::clamp(static_cast<int>(std::floor(proj.v + 0.5)), 0, truth[i].rows() - 1);
          const double surface = truth[i](row, col);
          if (surface > 0.0 && proj.depth < surface - margin) {
            classes[idx] = VoxelClass::Free;
            break;
          }
        }
      }
  return classes;
}

double surface_ratio(const VoxelGrid& grid, std::span<const VoxelClass> classes)
{
  if (classes.size() != grid.surface.size())
    throw std::invalid_argument("surface_ratio: class labels do not match the grid");
  double s_sum = 0.0, f_sum = 0.0;
  std::size_t s_n = 0, f_n = 0;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] == VoxelClass::Surface) {
      s_sum += grid.surface[i];
      ++s_n;
    } else if (classes[i] == VoxelClass::Free) {
      f_sum += grid.surface[i];
      ++f_n;
    }
  }
  if (s_n == 0 || f_n == 0)
    throw std::invalid_argument("surface_ratio: need both surface and free voxels");
  const double s_mean = s_sum / s_n, f_mean = f_sum / f_n;
  return f_mean > 0.0 ? s_mean / f_mean : std::numeric_limits<double>::infinity();
}

} // namespace mvdet
