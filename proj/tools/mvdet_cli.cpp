#include "mvdet/harness.hpp"
#include "mvdet/parallel.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>

using namespace mvdet;

namespace {

struct Globals
{
  std::string config;
  std::string out;
  int threads = 0;
  std::uint64_t seed = 1;
};

PipelineConfig config_from(const Globals& g)
{
  return g.config.empty() ? PipelineConfig{} : load_config(g.config);
}

fs::path require_out(const Globals& g, const char* command)
{
  if (g.out.empty())
    throw std::invalid_argument(std::string(command) + ": --out is required");
  return g.out;
}

void run(const Globals& g, const std::string& scene_dir, bool refine)
{
  PipelineConfig config = config_from(g);
  if (refine)
    config.refine = true;
  const fs::path out = require_out(g, refine ? "refine" : "run");
  const SceneData scene = load_scene(scene_dir);
  const PipelineResult result = run_pipeline(scene, config);
  write_outputs(out, result, config);
  std::cout << format_metrics(result.metrics);
}

void render(const Globals& g, const std::string& splats_path, const std::string& cameras_path, int view,
            const std::string& depth_path)
{
  const fs::path out = require_out(g, "render");
  const GaussianSplatSet splats = read_splats(splats_path);
  const std::vector<CameraView> cameras = read_cameras(cameras_path);
  if (view < 0 || view >= static_cast<int>(cameras.size()))
    throw std::invalid_argument("render: view " + std::to_string(view) + " not in " + cameras_path);
  const RenderTarget target = rasterize(splats, cameras[view]);
  write_ppm(out, target.color);
  if (!depth_path.empty())
    write_raster(depth_path, target.depth);
}

void eval(const Globals& g, const std::string& scene_dir, const std::string& result_dir)
{
  const PipelineConfig config = config_from(g);
  const SceneData scene = load_scene(scene_dir);
  std::vector<DepthMap> depths;
  for (std::size_t i = 0; i < scene.cameras.size(); ++i)
    depths.push_back(read_raster(fs::path(result_dir) / "depth" / view_file(static_cast<int>(i), ".mvsr")));
  const std::vector<Box3D> boxes = read_boxes(fs::path(result_dir) / "boxes.txt");
  Metrics metrics = evaluate(scene, depths, boxes, config);
  const std::string report = format_metrics(metrics);
  if (!g.out.empty())
    std::ofstream(g.out) << report;
  std::cout << report;
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Multi-view depth, voxel volume and box extraction on synthetic scenes"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Pipeline config file (key = value)")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "Output directory or file");
  app.add_option("--threads", g.threads, "Worker threads, 0 for hardware concurrency")->check(CLI::NonNegativeNumber);
  app.add_option("--seed", g.seed, "Scene seed");

  int boxes = 2, views = 10;
  auto* gen = app.add_subcommand("scene-gen", "Synthesize a scene directory");
  gen->add_option("--boxes", boxes, "Number of boxes")->check(CLI::NonNegativeNumber);
  gen->add_option("--views", views, "Number of views")->check(CLI::PositiveNumber);

  std::string scene_dir;
  auto* run_cmd = app.add_subcommand("run", "Estimate depth, build the volume and extract boxes");
  run_cmd->add_option("scene", scene_dir, "Scene directory")->required()->check(CLI::ExistingDirectory);
  auto* refine_cmd = app.add_subcommand("refine", "Run the pipeline with splat refinement enabled");
  refine_cmd->add_option("scene", scene_dir, "Scene directory")->required()->check(CLI::ExistingDirectory);

  std::string splats_path, cameras_path, depth_path;
  int view = 0;
  auto* render_cmd = app.add_subcommand("render", "Rasterize a splat set into one camera");
  render_cmd->add_option("--splats", splats_path, "Splat file")->required()->check(CLI::ExistingFile);
  render_cmd->add_option("--cameras", cameras_path, "Camera listing")->required()->check(CLI::ExistingFile);
  render_cmd->add_option("--view", view, "Camera index");
  render_cmd->add_option("--depth", depth_path, "Also write rendered depth as a raster");

  std::string result_dir;
  auto* eval_cmd = app.add_subcommand("eval", "Score pipeline outputs against scene ground truth");
  eval_cmd->add_option("scene", scene_dir, "Scene directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("result", result_dir, "Pipeline output directory")->required()->check(CLI::ExistingDirectory);

  for (CLI::App* sub : {gen, run_cmd, refine_cmd, render_cmd, eval_cmd})
    sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    set_thread_count(static_cast<unsigned>(g.threads));
    if (*gen) {
      save_scene(require_out(g, "scene-gen"), synthesize_scene(g.seed, boxes, views));
    } else if (*run_cmd) {
      run(g, scene_dir, false);
    } else if (*refine_cmd) {
      run(g, scene_dir, true);
    } else if (*render_cmd) {
      render(g, splats_path, cameras_path, view, depth_path);
    } else if (*eval_cmd) {
      eval(g, scene_dir, result_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
