#include "mvdet/sampling.hpp"

#include "mvdet/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace mvdet {

namespace {

// Input views ordered by id.
std::vector<const VolumeView*> canonical_order(std::span<const VolumeView> views)
{
  std::vector<const VolumeView*> order;
  order.reserve(views.size());
  for (const VolumeView& v : views)
    order.push_back(&v);
  std::stable_sort(order.begin(), order.end(),
                   [](const VolumeView* a, const VolumeView* b) { return a->id < b->id; });
  return order;
}

struct PixelLookup
{
  int row = 0;
  int col = 0;
  double depth = 0.0;
  bool valid = false;
};

// Nearest feature cell hit by the projection of p.
PixelLookup lookup(const Eigen::Vector3d& p, const VolumeView& view)
{
  const Projection proj = project(p, view.camera, kDownsample);
  PixelLookup out;
  if (!proj.valid)
    return out;
  const FeatureMap& f = view.features;
  out.col = std::clamp(static_cast<int>(std::floor(proj.u + 0.5)), 0, f.cols() - 1);
  out.row = std::clamp(static_cast<int>(std::floor(proj.v + 0.5)), 0, f.rows() - 1);
  out.depth = proj.depth;
  out.valid = true;
  return out;
}

VoxelGrid empty_grid(const GridSpec& grid, int channels)
{
  if (grid.nx < 1 || grid.ny < 1 || grid.nz < 1 || !(grid.pitch.array() > 0.0).all())
    throw std::invalid_argument("voxel grid: dimensions and pitch must be positive");
  VoxelGrid out;
  out.spec = grid;
  out.channels = channels;
  const std::size_t n = grid.voxel_count();
  out.aggregated.assign(n * channels, 0.0);
  out.feature.assign(n * channels, 0.0);
  out.surface.assign(n, 0.0);
  out.matched.assign(n, 0);
  return out;
}

int common_channels(std::span<const VolumeView> views)
{
  if (views.empty())
    throw std::invalid_argument("build_volume: at least one view is required");
  const int channels = views.front().features.channels();
  for (const VolumeView& v : views)
    if (v.features.channels() != channels)
      throw std::invalid_argument("build_volume: feature channel mismatch");
  return channels;
}

} // namespace

DepthProposalSet sample_topk(const ProbabilityVolume& prob, const DepthPlanes& planes, int k)
{
  const int M = prob.channels();
  if (M != planes.size())
    throw std::invalid_argument("sample_topk: plane count mismatch");
  if (k < 1 || k > M)
    throw std::invalid_argument("sample_topk: k must lie in [1, M]");

  DepthProposalSet set;
  set.rows = prob.rows();
  set.cols = prob.cols();
  set.k = k;
  const std::size_t n = static_cast<std::size_t>(set.rows) * set.cols * k;
  set.index.resize(n);
  set.depth.resize(n);
  set.score.resize(n);

  std::vector<int> order(static_cast<std::size_t>(M));
  for (int r = 0; r < set.rows; ++r)
    for (int c = 0; c < set.cols; ++c) {
      const double* p = prob.cell(r, c);
      std::iota(order.begin(), order.end(), 0);
      std::partial_sort(order.begin(), order.begin() + k, order.end(), [p](int a, int b) {
        return p[a] > p[b] || (p[a] == p[b] && a < b);
      });
      // Underflowed probabilities are floored so every proposal keeps a
      // positive score.
      auto raw = [p](int m) { return std::max(p[m], std::numeric_limits<double>::min()); };
      double total = 0.0;
      for (int j = 0; j < k; ++j)
        total += raw(order[static_cast<std::size_t>(j)]);
      const std::size_t base = set.offset(r, c);
      for (int j = 0; j < k; ++j) {
        const int m = order[static_cast<std::size_t>(j)];
        set.index[base + j] = m;
        set.depth[base + j] = planes.depths[static_cast<std::size_t>(m)];
        set.score[base + j] = raw(m) / total;
      }
    }
  return set;
}

ProposalMatch gate_and_weight(double voxel_depth, std::span<const double> depths,
                              std::span<const double> scores, double window)
{
  if (!(window > 0.0))
    throw std::invalid_argument("gate_and_weight: window must be positive");
  ProposalMatch best;
  double best_dist = 0.0;
  for (std::size_t j = 0; j < depths.size(); ++j) {
    const double dist = std::abs(voxel_depth - depths[j]);
    if (dist > window)
      continue;
    if (!best.gated || dist < best_dist || (dist == best_dist && scores[j] > best.weight)) {
      best = {scores[j], static_cast<int>(j), true};
      best_dist = dist;
    }
  }
  return best;
}

VoxelGrid build_volume(std::span<const VolumeView> views, const GridSpec& grid,
                       const SamplingOptions& options)
{
  const int channels = common_channels(views);
  for (const VolumeView& v : views)
    if (v.proposals == nullptr || v.proposals->rows != v.features.rows() ||
        v.proposals->cols != v.features.cols())
      throw std::invalid_argument("build_volume: every view needs proposals matching its features");
  const auto order = canonical_order(views);
  VoxelGrid out = empty_grid(grid, channels);

  parallel_for(grid.voxel_count(), [&](std::size_t idx) {
    const int x = static_cast<int>(idx % grid.nx);
    const int y = static_cast<int>((idx / grid.nx) % grid.ny);
    const int z = static_cast<int>(idx / (static_cast<std::size_t>(grid.nx) * grid.ny));
    const Eigen::Vector3d p = grid.center(x, y, z);
    double* agg = out.aggregated.data() + idx * channels;
    double weight_sum = 0.0;
    int gated = 0;
    for (const VolumeView* view : order) {
      const PixelLookup px = lookup(p, *view);
      if (!px.valid)
        continue;
      const DepthProposalSet& props = *view->proposals;
      const std::size_t base = props.offset(px.row, px.col);
      const std::span<const double> depths(props.depth.data() + base, static_cast<std::size_t>(props.k));
      const std::span<const double> scores(props.score.data() + base, static_cast<std::size_t>(props.k));
      const ProposalMatch match = gate_and_weight(px.depth, depths, scores, options.window);
      if (!match.gated)
        continue;
      const double* f = view->features.cell(px.row, px.col);
      for (int ch = 0; ch < channels; ++ch)
        agg[ch] += match.weight * f[ch];
      weight_sum += match.weight;
      ++gated;
    }
    if (weight_sum > 1e-12) {
      for (int ch = 0; ch < channels; ++ch)
        agg[ch] /= weight_sum;
    } else {
      std::fill(agg, agg + channels, 0.0);
    }
    const double s = gated > 0 ? weight_sum / gated : 0.0;
    out.surface[idx] = s;
    out.matched[idx] = gated;
    double* v = out.feature.data() + idx * channels;
    for (int ch = 0; ch < channels; ++ch)
      v[ch] = s * agg[ch];
  });
  return out;
}

VoxelGrid build_volume_vanilla(std::span<const VolumeView> views, const GridSpec& grid)
{
  const int channels = common_channels(views);
  const auto order = canonical_order(views);
  VoxelGrid out = empty_grid(grid, channels);

  parallel_for(grid.voxel_count(), [&](std::size_t idx) {
    const int x = static_cast<int>(idx % grid.nx);
    const int y = static_cast<int>((idx / grid.nx) % grid.ny);
    const int z = static_cast<int>(idx / (static_cast<std::size_t>(grid.nx) * grid.ny));
    const Eigen::Vector3d p = grid.center(x, y, z);
    double* agg = out.aggregated.data() + idx * channels;
    int valid = 0;
    for (const VolumeView* view : order) {
      const PixelLookup px = lookup(p, *view);
      if (!px.valid)
        continue;
      const double* f = view->features.cell(px.row, px.col);
      for (int ch = 0; ch < channels; ++ch)
        agg[ch] += f[ch];
      ++valid;
    }
    if (valid > 0)
      for (int ch = 0; ch < channels; ++ch)
        agg[ch] /= valid;
    out.matched[idx] = valid;
    out.surface[idx] = valid > 0 ? 1.0 : 0.0;
    std::copy(agg, agg + channels, out.feature.data() + idx * channels);
  });
  return out;
}

} // namespace mvdet
