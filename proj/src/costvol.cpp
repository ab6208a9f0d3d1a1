#include "mvdet/costvol.hpp"

#include "mvdet/parallel.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mvdet {

namespace {

double luminance(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

int clamp_index(int i, int n) { return std::clamp(i, 0, n - 1); }

// Symmetric reflection about the border: -1 -> 0, n -> n - 1.
int reflect_index(int i, int n)
{
  if (i < 0)
    return -i - 1;
  if (i >= n)
    return 2 * n - i - 1;
  return i;
}

} // namespace

DepthPlanes DepthPlanes::uniform(int count, double near, double far)
{
  if (count < 2 || !(near > 0.0) || !(far > near))
    throw std::invalid_argument("DepthPlanes: need >= 2 planes over a positive range");
  DepthPlanes planes;
  planes.depths.resize(static_cast<std::size_t>(count));
  for (int m = 0; m < count; ++m)
    planes.depths[static_cast<std::size_t>(m)] = near + (far - near) * m / (count - 1);
  return planes;
}

double DepthPlanes::spacing() const
{
  return depths.size() < 2 ? 0.0 : (depths.back() - depths.front()) / (depths.size() - 1);
}

int DepthPlanes::nearest(double depth) const
{
  int best = 0;
  for (int m = 1; m < size(); ++m)
    if (std::abs(depths[static_cast<std::size_t>(m)] - depth) <
        std::abs(depths[static_cast<std::size_t>(best)] - depth))
      best = m;
  return best;
}

Raster downsample_image(const Raster& image, int factor)
{
  if (image.rows() % factor != 0 || image.cols() % factor != 0)
    throw std::invalid_argument("downsample_image: size not divisible by factor");
  Raster out(image.rows() / factor, image.cols() / factor, image.channels());
  const double norm = 1.0 / (factor * factor);
  for (int r = 0; r < out.rows(); ++r)
    for (int c = 0; c < out.cols(); ++c)
      for (int ch = 0; ch < image.channels(); ++ch) {
        double sum = 0.0;
        for (int dr = 0; dr < factor; ++dr)
          for (int dc = 0; dc < factor; ++dc)
            sum += image(r * factor + dr, c * factor + dc, ch);
        out(r, c, ch) = sum * norm;
      }
  return out;
}

FeatureMap extract_features(const Raster& image)
{
  if (image.channels() != 3)
    throw std::invalid_argument("extract_features: expected an RGB image");
  const Raster color = downsample_image(image, kDownsample);
  const int rows = color.rows(), cols = color.cols();

  Raster lum(rows, cols, 1);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      lum(r, c) = luminance(color(r, c, 0), color(r, c, 1), color(r, c, 2));
  auto L = [&](int r, int c) { return lum(clamp_index(r, rows), clamp_index(c, cols)); };

  FeatureMap features(rows, cols, kFeatureChannels);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double* f = features.cell(r, c);
      f[0] = color(r, c, 0);
      f[1] = color(r, c, 1);
      f[2] = color(r, c, 2);
      f[3] = ((L(r - 1, c + 1) + 2.0 * L(r, c + 1) + L(r + 1, c + 1)) -
              (L(r - 1, c - 1) + 2.0 * L(r, c - 1) + L(r + 1, c - 1))) / 8.0;
      f[4] = ((L(r + 1, c - 1) + 2.0 * L(r + 1, c) + L(r + 1, c + 1)) -
              (L(r - 1, c - 1) + 2.0 * L(r - 1, c) + L(r - 1, c + 1))) / 8.0;
      double sum = 0.0, sum_sq = 0.0;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const double x = L(r + dr, c + dc);
          sum += x;
          sum_sq += x * x;
        }
      const double mean = sum / 9.0;
      f[5] = std::sqrt(std::max(0.0, sum_sq / 9.0 - mean * mean));
    }
  return features;
}

std::vector<int> select_source_views(std::span<const CameraView> views, int reference, int n)
{
  const int count = static_cast<int>(views.size());
  if (reference < 0 || reference >= count)
    throw std::out_of_range("select_source_views: reference index out of range");
  if (n < 0 || n >= count)
    throw std::invalid_argument("select_source_views: n must be below the number of views");
  const Eigen::Vector3d center = views[static_cast<std::size_t>(reference)].pose.center();
  std::vector<int> order;
  for (int j = 0; j < count; ++j)
    if (j != reference)
      order.push_back(j);
  std::vector<double> dist(views.size());
  for (int j : order)
    dist[static_cast<std::size_t>(j)] =
        (views[static_cast<std::size_t>(j)].pose.center() - center).norm();
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return dist[static_cast<std::size_t>(a)] < dist[static_cast<std::size_t>(b)];
  });
  order.resize(static_cast<std::size_t>(n));
  return order;
}

void sample_bilinear(const Raster& grid, double u, double v, double* out)
{
  const int rows = grid.rows(), cols = grid.cols();
  u = std::clamp(u, 0.0, static_cast<double>(cols - 1));
  v = std::clamp(v, 0.0, static_cast<double>(rows - 1));
  const int c0 = std::min(static_cast<int>(u), cols - 1);
  const int r0 = std::min(static_cast<int>(v), rows - 1);
  const int c1 = std::min(c0 + 1, cols - 1);
  const int r1 = std::min(r0 + 1, rows - 1);
  const double a = u - c0, b = v - r0;
  const double* p00 = grid.cell(r0, c0);
  const double* p01 = grid.cell(r0, c1);
  const double* p10 = grid.cell(r1, c0);
  const double* p11 = grid.cell(r1, c1);
  for (int ch = 0; ch < grid.channels(); ++ch)
    out[ch] = (1.0 - b) * ((1.0 - a) * p00[ch] + a * p01[ch]) + b * ((1.0 - a) * p10[ch] + a * p11[ch]);
}

CostVolume build_cost_volume(const FeatureView& reference, std::span<const FeatureView> sources,
                             const DepthPlanes& planes, const CostOptions& options)
{
  if (sources.empty())
    throw std::invalid_argument("build_cost_volume: at least one source view is required");
  const FeatureMap& ref = reference.features;
  const int rows = ref.rows(), cols = ref.cols(), channels = ref.channels();
  for (const FeatureView& s : sources)
    if (s.features.channels() != channels)
      throw std::invalid_argument("build_cost_volume: channel count mismatch");

  const double scale = 1.0 / kDownsample;
  const Intrinsics Ki = scale_intrinsics(reference.camera.intrinsics, scale);
  struct SourceGeometry
  {
    Intrinsics K;
    Pose rel;
  };
  std::vector<SourceGeometry> geometry;
  for (const FeatureView& s : sources)
    geometry.push_back({scale_intrinsics(s.camera.intrinsics, scale),
                        relative_pose(reference.camera.pose, s.camera.pose)});

  CostVolume volume;
  volume.rows = rows;
  volume.cols = cols;
  volume.planes = planes.size();
  volume.channels = channels;
  volume.cost.assign(static_cast<std::size_t>(rows) * cols * planes.size() * channels, 0.0);
  volume.valid_views.assign(static_cast<std::size_t>(rows) * cols * planes.size(), 0);

  parallel_for(static_cast<std::size_t>(rows) * cols, [&](std::size_t idx) {
    const int r = static_cast<int>(idx / cols), c = static_cast<int>(idx % cols);
    const Eigen::Vector2d q(c, r);
    std::vector<double> sum(static_cast<std::size_t>(channels));
    std::vector<double> sum_sq(static_cast<std::size_t>(channels));
    std::vector<double> sample(static_cast<std::size_t>(channels));
    for (int m = 0; m < planes.size(); ++m) {
      // Reference first, then sources in input order.
      int count = 1;
      for (int ch = 0; ch < channels; ++ch) {
        const double x = ref(r, c, ch);
        sum[static_cast<std::size_t>(ch)] = x;
        sum_sq[static_cast<std::size_t>(ch)] = x * x;
      }
      for (std::size_t j = 0; j < sources.size(); ++j) {
        const FeatureMap& src = sources[j].features;
        const Warp w = homography_warp(q, planes.depths[static_cast<std::size_t>(m)],
                                       Ki, geometry[j].K, geometry[j].rel, src.cols(), src.rows());
        if (!w.valid)
          continue;
        sample_bilinear(src, w.q.x(), w.q.y(), sample.data());
        ++count;
        for (int ch = 0; ch < channels; ++ch) {
          const double x = sample[static_cast<std::size_t>(ch)];
          sum[static_cast<std::size_t>(ch)] += x;
          sum_sq[static_cast<std::size_t>(ch)] += x * x;
        }
      }
      volume.views(r, c, m) = count;
      for (int ch = 0; ch < channels; ++ch) {
        double cost = options.penalty;
        if (count >= 2) {
          const double mean = sum[static_cast<std::size_t>(ch)] / count;
          cost = std::max(0.0, sum_sq[static_cast<std::size_t>(ch)] / count - mean * mean);
        }
        volume.at(r, c, m, ch) = cost;
      }
    }
  });
  return volume;
}

ProbabilityVolume cost_to_probability(const CostVolume& volume, double temperature, bool smooth)
{
  if (!(temperature > 0.0))
    throw std::invalid_argument("cost_to_probability: temperature must be positive");
  const int rows = volume.rows, cols = volume.cols, planes = volume.planes;
  Raster score(rows, cols, planes);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      for (int m = 0; m < planes; ++m) {
        double s = 0.0;
        for (int ch = 0; ch < volume.channels; ++ch)
          s += volume.at(r, c, m, ch);
        score(r, c, m) = -s / volume.channels;
      }

  if (smooth) {
    static constexpr double kTaps[3] = {0.25, 0.5, 0.25};
    Raster tmp(rows, cols, planes);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        for (int m = 0; m < planes; ++m) {
          double s = 0.0;
          for (int d = -1; d <= 1; ++d)
            s += kTaps[d + 1] * score(r, reflect_index(c + d, cols), m);
          tmp(r, c, m) = s;
        }
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        for (int m = 0; m < planes; ++m) {
          double s = 0.0;
          for (int d = -1; d <= 1; ++d)
            s += kTaps[d + 1] * tmp(reflect_index(r + d, rows), c, m);
          score(r, c, m) = s;
        }
  }

  ProbabilityVolume prob(rows, cols, planes);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double* s = score.cell(r, c);
      double* p = prob.cell(r, c);
      const double top = *std::max_element(s, s + planes);
      double total = 0.0;
      for (int m = 0; m < planes; ++m) {
        p[m] = std::exp((s[m] - top) / temperature);
        total += p[m];
      }
      for (int m = 0; m < planes; ++m)
        p[m] /= total;
    }
  return prob;
}

DepthMap downsample_depth(const DepthMap& depth, double near, double far, double spread)
{
  if (depth.rows() % kDownsample || depth.cols() % kDownsample || depth.channels() != 1)
    throw std::invalid_argument("downsample_depth: single-channel map divisible by 4 expected");
  DepthMap out(depth.rows() / kDownsample, depth.cols() / kDownsample, 1);
  for (int r = 0; r < out.rows(); ++r)
    for (int c = 0; c < out.cols(); ++c) {
      double lo = std::numeric_limits<double>::infinity(), hi = 0.0, inv = 0.0;
      for (int a = 0; a < kDownsample; ++a)
        for (int b = 0; b < kDownsample; ++b) {
          const double z = depth(kDownsample * r + a, kDownsample * c + b);
          lo = std::min(lo, z);
          hi = std::max(hi, z);
          inv += z > 0.0 ? 1.0 / z : 0.0;
        }
      if (lo >= near && hi <= far && hi - lo <= spread * lo)
        out(r, c) = kDownsample * kDownsample / inv;
    }
  return out;
}

DepthMap regress_depth(const ProbabilityVolume& prob, const DepthPlanes& planes)
{
  if (prob.channels() != planes.size())
    throw std::invalid_argument("regress_depth: plane count mismatch");
  DepthMap depth(prob.rows(), prob.cols(), 1);
  for (int r = 0; r < prob.rows(); ++r)
    for (int c = 0; c < prob.cols(); ++c) {
      const double* p = prob.cell(r, c);
      double d = 0.0;
      for (int m = 0; m < planes.size(); ++m)
        d += p[m] * planes.depths[static_cast<std::size_t>(m)];
      depth(r, c) = d;
    }
  return depth;
}

DepthMetrics eval_depth(const DepthMap& depth, const DepthMap& truth, const Raster& mask)
{
  if (!depth.same_shape(truth) || mask.rows() != depth.rows() || mask.cols() != depth.cols())
    throw std::invalid_argument("eval_depth: shape mismatch");
  DepthMetrics m;
  double sq = 0.0, rel = 0.0;
  for (int r = 0; r < depth.rows(); ++r)
    for (int c = 0; c < depth.cols(); ++c) {
      if (mask(r, c) == 0.0 || !(truth(r, c) > 0.0))
        continue;
      const double e = depth(r, c) - truth(r, c);
      sq += e * e;
      rel += std::abs(e) / truth(r, c);
      ++m.count;
    }
  if (m.count == 0)
    throw std::invalid_argument("eval_depth: empty mask");
  m.rmse = std::sqrt(sq / m.count);
  m.abs_rel = rel / m.count;
  return m;
}

DepthMetrics eval_depth(const DepthMap& depth, const DepthMap& truth)
{
  Raster mask(truth.rows(), truth.cols(), 1);
  for (std::size_t i = 0; i < truth.size(); ++i)
    mask.data()[i] = truth.data()[i] > 0.0 ? 1.0 : 0.0;
  return eval_depth(depth, truth, mask);
}

} // namespace mvdet
