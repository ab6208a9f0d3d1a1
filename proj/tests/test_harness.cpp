#include "mvdet/harness.hpp"

#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>

using namespace mvdet;

namespace {

fs::path scratch_dir(const std::string& name)
{
  const fs::path dir = fs::temp_directory_path() / ("mvdet_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

VoxelGrid grid_with(const GridSpec& spec, const std::vector<std::array<int, 3>>& cells, double s)
{
  VoxelGrid g;
  g.spec = spec;
  g.channels = 1;
  g.surface.assign(spec.voxel_count(), 0.0);
  g.aggregated.assign(spec.voxel_count(), 0.0);
  g.feature.assign(spec.voxel_count(), 0.0);
  g.matched.assign(spec.voxel_count(), 0);
  for (const auto& c : cells) {
    const std::size_t i = spec.linear(c[0], c[1], c[2]);
    g.surface[i] = s;
    g.matched[i] = 1;
  }
  return g;
}

GridSpec unit_grid(int n)
{
  GridSpec g;
  g.nx = g.ny = g.nz = n;
  g.origin = Eigen::Vector3d::Zero();
  g.pitch = Eigen::Vector3d::Ones();
  return g;
}

std::string read_file(const fs::path& p)
{
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text)
{
  std::ofstream(p, std::ios::binary) << text;
}

} // namespace

TEST_SUITE("harness")
{
  TEST_CASE("config: defaults, round trip, errors")
  {
    const PipelineConfig d = parse_config("");
    CHECK(d.planes == 12);
    CHECK(d.depth_min == 0.2);
    CHECK(d.depth_max == 5.0);
    CHECK(d.topk == 3);
    CHECK(d.window == 0.2);
    CHECK(d.source_views == 2);
    CHECK(d.grid.nx == 40);
    CHECK(d.grid.ny == 40);
    CHECK(d.grid.nz == 16);
    CHECK(d.grid.pitch == Eigen::Vector3d(0.16, 0.16, 0.2));
    CHECK(d.box_ratio == 0.5);
    CHECK(d.box_min_voxels == 4);
    CHECK(d.depth_planes().spacing() == doctest::Approx(0.436).epsilon(1e-3));

    PipelineConfig c;
    c.topk = 2;
    c.temperature = 0.0123456789;
    c.refine = true;
    c.grid.origin.z() = -0.25;
    const PipelineConfig back = parse_config(format_config(c));
    CHECK(format_config(back) == format_config(c));
    CHECK(back.temperature == c.temperature);
    CHECK(back.refine);

    const PipelineConfig commented = parse_config("# comment\n  topk = 1  # inline\n\n");
    CHECK(commented.topk == 1);

    auto fails_with = [](const std::string& text, const std::string& needle) {
      try {
        parse_config(text, "cfg.txt");
      } catch (const std::invalid_argument& e) {
        const std::string what = e.what();
        return what.find(needle) != std::string::npos && what.find("cfg.txt") != std::string::npos;
      }
      return false;
    };
    CHECK(fails_with("bogus = 1", "unknown key"));
    CHECK(fails_with("topk = 1\ntopk = 2", "duplicate key"));
    CHECK(fails_with("topk = two", "invalid value"));
    CHECK(fails_with("topk = 1.5", "invalid value"));
    CHECK(fails_with("window = nan", "invalid value"));
    CHECK(fails_with("topk", "expected key = value"));
    CHECK(fails_with("topk = 20", "topk"));
    CHECK(fails_with("window = -1", "window"));
    CHECK(fails_with("box_ratio = 1.5", "box_ratio"));
  }

  TEST_CASE("extract_boxes: empty grid, one block, two blocks")
  {
    const GridSpec spec = unit_grid(8);
    CHECK(extract_boxes(grid_with(spec, {}, 0.0)).empty());

    std::vector<std::array<int, 3>> block;
    for (int z = 2; z < 4; ++z)
      for (int y = 2; y < 4; ++y)
        for (int x = 2; x < 4; ++x)
          block.push_back({x, y, z});
    auto boxes = extract_boxes(grid_with(spec, block, 0.8));
    REQUIRE(boxes.size() == 1);
    // Centers 2.5 .. 3.5 grown by half a pitch.
    CHECK(boxes[0].min() == Eigen::Vector3d::Constant(2.0));
    CHECK(boxes[0].max() == Eigen::Vector3d::Constant(4.0));
    CHECK(boxes[0].score == doctest::Approx(0.8));
    CHECK(boxes[0].yaw == 0.0);

    auto two = block;
    for (const auto& c : block)
      two.push_back({c[0] + 4, c[1] + 4, c[2] + 3});
    VoxelGrid g = grid_with(spec, two, 0.8);
    g.surface[spec.linear(6, 6, 5)] = 0.9;  // raises the second block's mean score
    boxes = extract_boxes(g);
    REQUIRE(boxes.size() == 2);
    CHECK(boxes[0].center.x() == doctest::Approx(7.0));
    CHECK(boxes[1].center.x() == doctest::Approx(3.0));

    // Diagonal neighbours join under 26-connectivity.
    boxes = extract_boxes(grid_with(spec, {{0, 0, 0}, {1, 1, 1}, {2, 2, 2}, {3, 3, 3}}, 1.0));
    CHECK(boxes.size() == 1);
    // Below the minimum size.
    CHECK(extract_boxes(grid_with(spec, {{0, 0, 0}, {1, 1, 1}}, 1.0)).empty());
    CHECK_THROWS_AS(extract_boxes(g, BoxOptions{0.0, 4}), std::invalid_argument);
  }

  TEST_CASE("extract_boxes: boxes contain their member voxel centers")
  {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    GridSpec spec = unit_grid(10);
    spec.pitch = {0.16, 0.16, 0.2};
    spec.origin = {-1.0, 2.0, 0.3};
    VoxelGrid g = grid_with(spec, {}, 0.0);
    for (double& s : g.surface)
      s = u(rng) < 0.15 ? u(rng) : 0.0;
    BoxOptions opt{0.3, 1};
    const auto boxes = extract_boxes(g, opt);
    const double top = *std::max_element(g.surface.begin(), g.surface.end());
    for (int z = 0; z < spec.nz; ++z)
      for (int y = 0; y < spec.ny; ++y)
        for (int x = 0; x < spec.nx; ++x) {
          if (g.surface[spec.linear(x, y, z)] < opt.ratio * top)
            continue;
          const Eigen::Vector3d c = spec.center(x, y, z);
          const bool inside = std::any_of(boxes.begin(), boxes.end(), [&](const Box3D& b) {
            return (c.array() >= b.min().array()).all() && (c.array() <= b.max().array()).all();
          });
          CHECK(inside);
        }
    for (std::size_t i = 1; i < boxes.size(); ++i)
      CHECK(boxes[i - 1].score >= boxes[i].score);
  }

  TEST_CASE("iou3d: identical, disjoint, offset cubes, symmetry")
  {
    Box3D a;
    a.center = {0, 0, 0};
    a.size = {1, 1, 1};
    CHECK(iou3d(a, a) == doctest::Approx(1.0));
    Box3D b = a;
    b.center.x() = 3.0;
    CHECK(iou3d(a, b) == 0.0);
    b.center.x() = 0.5;
    CHECK(iou3d(a, b) == doctest::Approx(1.0 / 3.0));
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.1, 2.0);
    for (int i = 0; i < 100; ++i) {
      Box3D p, q;
      p.center = {u(rng), u(rng), u(rng)};
      q.center = {u(rng), u(rng), u(rng)};
      p.size = {u(rng), u(rng), u(rng)};
      q.size = {u(rng), u(rng), u(rng)};
      const double x = iou3d(p, q);
      CHECK(x == iou3d(q, p));
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
    b.yaw = 0.1;
    CHECK_THROWS_AS(iou3d(a, b), std::invalid_argument);
  }

  TEST_CASE("io: cameras, ppm, raster round trips")
  {
    const fs::path dir = scratch_dir("io");
    const SceneData scene = synthesize_scene(61, 2, 3);
    write_cameras(dir / "cams.txt", scene.cameras);
    const auto cams = read_cameras(dir / "cams.txt");
    REQUIRE(cams.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(cams[i].pose.R == scene.cameras[i].pose.R);
      CHECK(cams[i].pose.t == scene.cameras[i].pose.t);
      CHECK(cams[i].intrinsics.fx == scene.cameras[i].intrinsics.fx);
      CHECK(cams[i].intrinsics.cy == scene.cameras[i].intrinsics.cy);
      CHECK(cams[i].width == scene.cameras[i].width);
    }
    write_cameras(dir / "cams2.txt", cams);
    CHECK(read_file(dir / "cams.txt") == read_file(dir / "cams2.txt"));

    write_ppm(dir / "a.ppm", scene.images[0]);
    const Raster img = read_ppm(dir / "a.ppm");
    for (std::size_t i = 0; i < img.size(); ++i)
      CHECK(std::abs(img.data()[i] - scene.images[0].data()[i]) <= 0.5 / 255 + 1e-12);
    write_ppm(dir / "b.ppm", img);
    CHECK(read_file(dir / "a.ppm") == read_file(dir / "b.ppm"));
    CHECK(read_file(dir / "a.ppm").substr(0, 2) == "P6");

    // Values representable in f32 survive exactly.
    Raster r(3, 4, 2);
    for (std::size_t i = 0; i < r.size(); ++i)
      r.data()[i] = static_cast<float>(0.1 * i - 0.7);
    write_raster(dir / "r.mvsr", r);
    CHECK(read_raster(dir / "r.mvsr") == r);
    const std::string bytes = read_file(dir / "r.mvsr");
    CHECK(bytes.substr(0, 4) == "MVSR");
    CHECK(bytes.size() == 16 + 4 * r.size());
    CHECK(static_cast<unsigned char>(bytes[4]) == 3);  // little-endian rows
  }

  TEST_CASE("io: voxel grid, splats, boxes round trips")
  {
    const fs::path dir = scratch_dir("io2");
    GridSpec spec = unit_grid(3);
    spec.origin = {-1.5, 0.25, 0.5};
    spec.pitch = {0.5, 0.25, 0.125};
    VoxelGrid g = grid_with(spec, {{0, 1, 2}, {2, 2, 2}}, 0.75);
    g.channels = 2;
    g.feature.assign(spec.voxel_count() * 2, 0.0);
    g.aggregated.assign(spec.voxel_count() * 2, 0.0);
    for (std::size_t i = 0; i < spec.voxel_count(); ++i)
      if (g.surface[i] > 0.0) {
        g.aggregated[2 * i] = 0.5;
        g.aggregated[2 * i + 1] = 0.25;
        g.feature[2 * i] = 0.375;
        g.feature[2 * i + 1] = 0.1875;
      }
    write_voxel_grid(dir / "v.mvsv", g);
    const VoxelGrid h = read_voxel_grid(dir / "v.mvsv");
    CHECK(h.spec.origin == spec.origin);
    CHECK(h.spec.pitch == spec.pitch);
    CHECK(h.surface == g.surface);
    CHECK(h.feature == g.feature);
    CHECK(h.aggregated == g.aggregated);
    CHECK(h.matched == g.matched);
    write_voxel_grid(dir / "w.mvsv", h);
    CHECK(read_file(dir / "v.mvsv") == read_file(dir / "w.mvsv"));
    CHECK(read_file(dir / "v.mvsv").substr(0, 4) == "MVSV");

    GaussianSplatSet splats(3);
    for (int i = 0; i < 3; ++i) {
      splats[i].mean = {0.5 * i, -0.25, 2.0};
      splats[i].opacity = 0.125 * (i + 1);
      splats[i].scale = Eigen::Vector3d::Constant(0.0625);
      splats[i].color = {0.5, 0.25, 1.0};
      splats[i].view = i;
      splats[i].row = 7;
      splats[i].col = 11 + i;
    }
    write_splats(dir / "s.mvsr", splats);
    const GaussianSplatSet back = read_splats(dir / "s.mvsr");
    REQUIRE(back.size() == 3);
    for (int i = 0; i < 3; ++i) {
      CHECK(back[i].mean == splats[i].mean);
      CHECK(back[i].opacity == splats[i].opacity);
      CHECK(back[i].rotation == splats[i].rotation);
      CHECK(back[i].scale == splats[i].scale);
      CHECK(back[i].color == splats[i].color);
      CHECK(back[i].view == i);
      CHECK(back[i].col == 11 + i);
    }

    std::vector<Box3D> boxes(2);
    boxes[0].center = {0.1, 0.2, 0.3};
    boxes[0].size = {1.0 / 3.0, 0.5, 0.7};
    boxes[0].score = 0.123456789012345678;
    boxes[1].center = {-1, -2, -3};
    write_boxes(dir / "b.txt", boxes);
    const auto bb = read_boxes(dir / "b.txt");
    REQUIRE(bb.size() == 2);
    CHECK(bb[0].center == boxes[0].center);
    CHECK(bb[0].size == boxes[0].size);
    CHECK(bb[0].score == boxes[0].score);
    CHECK(bb[1].center == boxes[1].center);
  }

  TEST_CASE("io: malformed inputs name the file and field")
  {
    const fs::path dir = scratch_dir("bad");
    auto message = [](auto&& fn) {
      try {
        fn();
      } catch (const FormatError& e) {
        return std::string(e.what());
      }
      return std::string();
    };
    write_file(dir / "cams.txt", "mvdet-cameras 1\nviews 1\n100 100 x 10 16 16 1 0 0 0 0 1 0 0 0 0 1 0\n");
    std::string m = message([&] { read_cameras(dir / "cams.txt"); });
    CHECK(m.find("cams.txt") != std::string::npos);
    CHECK(m.find("line 3") != std::string::npos);
    CHECK(m.find("cx") != std::string::npos);

    write_file(dir / "r.mvsr", "MVSR\x02\0\0\0");
    m = message([&] { read_raster(dir / "r.mvsr"); });
    CHECK(m.find("r.mvsr") != std::string::npos);
    CHECK(m.find("truncated") != std::string::npos);

    write_file(dir / "x.mvsr", "XXXX");
    CHECK(message([&] { read_raster(dir / "x.mvsr"); }).find("magic") != std::string::npos);
    write_file(dir / "p.ppm", "P3\n1 1\n255\n");
    CHECK(message([&] { read_ppm(dir / "p.ppm"); }).find("P6") != std::string::npos);
    CHECK(message([&] { read_ppm(dir / "missing.ppm"); }).find("missing.ppm") != std::string::npos);
    write_file(dir / "b.txt", "0 0 0 1 1 1 0\n");
    CHECK(message([&] { read_boxes(dir / "b.txt"); }).find("b.txt") != std::string::npos);
    CHECK(message([&] { load_scene(dir / "nowhere"); }).find("nowhere") != std::string::npos);
  }

  TEST_CASE("scene directory round trip")
  {
    const fs::path dir = scratch_dir("scene");
    const SceneData scene = synthesize_scene(62, 2, 3);
    save_scene(dir, scene);
    const SceneData back = load_scene(dir);
    CHECK(back.cameras.size() == 3);
    CHECK(back.images.size() == 3);
    CHECK(back.depths.size() == 3);
    CHECK(back.has_boxes);
    REQUIRE(back.boxes.size() == 2);
    CHECK(back.boxes[0].center == scene.boxes[0].center);
    CHECK(fs::exists(dir / "images" / "view_002.ppm"));
  }

  TEST_CASE("pipeline: ten-view scene yields ten depth entries and a box")
  {
    const SceneData scene = synthesize_scene(71, 2, 10);
    const PipelineResult res = run_pipeline(scene, PipelineConfig{});
    CHECK(res.metrics.depth.size() == 10);
    CHECK(res.boxes.size() >= 1);
    CHECK(res.metrics.boxes.size() == 2);
    const std::string report = format_metrics(res.metrics);
    CHECK(report.find("depth view=9") != std::string::npos);
    CHECK(report.find("gt_box index=1") != std::string::npos);
    for (const auto& m : res.metrics.depth)
      CHECK(m.depth.count > 0);
  }

  TEST_CASE("novel view indices spread over the sequence")
  {
    CHECK(novel_view_indices(5, 2) == std::vector<int>{1, 3});
    CHECK(novel_view_indices(10, 1) == std::vector<int>{5});
    CHECK_THROWS_AS(novel_view_indices(3, 3), std::invalid_argument);
  }

  TEST_CASE("voxel classes and surface ratio on a known grid")
  {
    // A wall at z = 2 seen by a camera at the origin looking along +z. At
    // feature resolution f = 4 and c = 1.5, so two pixel columns land inside
    // the grid's x and y extent [-0.5, 0.5).
    CameraView v;
    v.width = v.height = 16;
    v.intrinsics = {16.0, 16.0, 7.5, 7.5};
    const DepthMap truth(4, 4, 1, 2.0);
    GridSpec spec;
    spec.nx = spec.ny = 2;
    spec.nz = 10;
    spec.origin = {-0.5, -0.5, -0.1};
    spec.pitch = {0.5, 0.5, 0.25};
    const std::vector<CameraView> views{v};
    const std::vector<DepthMap> maps{truth};
    const auto classes = classify_voxels(spec, views, maps);
    const double margin = 0.5 * spec.pitch.norm();
    for (int z = 0; z < spec.nz; ++z)
      for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) {
          const double zc = spec.center(x, y, z).z();
          const VoxelClass c = classes[spec.linear(x, y, z)];
          if (z == 8)
            CHECK(c == VoxelClass::Surface);  // [1.9, 2.15) holds the wall
          else if (zc > 0.6 && zc < 2.0 - margin)
            CHECK(c == VoxelClass::Free);
          else if (zc >= 2.0 - margin)
            CHECK(c == VoxelClass::Unknown);
        }

    VoxelGrid g = grid_with(spec, {{0, 0, 8}, {1, 1, 8}}, 0.6);
    for (int z = 0; z < 6; ++z)
      g.surface[spec.linear(1, 0, z)] = 0.1;
    double s_sum = 0.0, f_sum = 0.0;
    int s_n = 0, f_n = 0;
    for (std::size_t i = 0; i < classes.size(); ++i) {
      if (classes[i] == VoxelClass::Surface) {
        s_sum += g.surface[i];
        ++s_n;
      } else if (classes[i] == VoxelClass::Free) {
        f_sum += g.surface[i];
        ++f_n;
      }
    }
    REQUIRE(f_sum > 0.0);
    CHECK(surface_ratio(g, classes) == doctest::Approx((s_sum / s_n) / (f_sum / f_n)));
    CHECK(s_sum / s_n == doctest::Approx(0.3));
    const std::vector<VoxelClass> none(classes.size(), VoxelClass::Unknown);
    CHECK_THROWS_AS(surface_ratio(g, none), std::invalid_argument);
  }
}
