#include "mvdet/splat.hpp"

#include "mvdet/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mvdet {

namespace {

struct Projected
{
  std::size_t index = 0;
  Eigen::Vector3d cam = Eigen::Vector3d::Zero();  // camera-frame center
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix<double, 2, 3> J = Eigen::Matrix<double, 2, 3>::Zero();
  Eigen::Matrix3d cov_cam = Eigen::Matrix3d::Zero();
  Eigen::Matrix2d conic = Eigen::Matrix2d::Zero();
};

struct Fragment
{
  std::size_t pixel;
  double depth;
  std::size_t splat;  // index into the projected list
};

struct Frame
{
  int rows = 0;
  int cols = 0;
  Intrinsics K;
  std::vector<Projected> projected;
  std::vector<Fragment> fragments;        // sorted by (pixel, depth, splat index)
  std::vector<std::size_t> pixel_begin;   // CSR offsets into fragments
};

Frame prepare(std::span<const Gaussian> splats, const CameraView& target)
{
  Frame frame;
  frame.rows = scaled_height(target, kDownsample);
  frame.cols = scaled_width(target, kDownsample);
  frame.K = scale_intrinsics(target.intrinsics, 1.0 / kDownsample);
  const Eigen::Matrix3d& W = target.pose.R;
  const double fx = frame.K.fx, fy = frame.K.fy;

  for (std::size_t i = 0; i < splats.size(); ++i) {
    const Gaussian& g = splats[i];
    Projected p;
    p.index = i;
    p.cam = target.pose.apply(g.mean);
    const double x = p.cam.x(), y = p.cam.y(), z = p.cam.z();
    if (z <= kMinDepth)
      continue;
    p.mean = {fx * x / z + frame.K.cx, fy * y / z + frame.K.cy};
    p.J << fx / z, 0.0, -fx * x / (z * z), 0.0, fy / z, -fy * y / (z * z);
    p.cov_cam = W * g.covariance() * W.transpose();
    const Eigen::Matrix2d cov = p.J * p.cov_cam * p.J.transpose() + kLowPass * Eigen::Matrix2d::Identity();
    p.conic = cov.inverse();
    const double half_trace = 0.5 * (cov(0, 0) + cov(1, 1));
    const double half_diff = 0.5 * (cov(0, 0) - cov(1, 1));
    const double lambda_max = half_trace + std::sqrt(half_diff * half_diff + cov(0, 1) * cov(0, 1));
    const double radius = 3.0 * std::sqrt(lambda_max);
    const int c0 = std::max(0, static_cast<int>(std::ceil(p.mean.x() - radius)));
    const int c1 = std::min(frame.cols - 1, static_cast<int>(std::floor(p.mean.x() + radius)));
    const int r0 = std::max(0, static_cast<int>(std::ceil(p.mean.y() - radius)));
    const int r1 = std::min(frame.rows - 1, static_cast<int>(std::floor(p.mean.y() + radius)));
    if (c0 > c1 || r0 > r1)
      continue;
    const std::size_t slot = frame.projected.size();
    frame.projected.push_back(p);
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        const Eigen::Vector2d d(c - p.mean.x(), r - p.mean.y());
        if (d.dot(p.conic * d) > 9.0)
          continue;
        frame.fragments.push_back({static_cast<std::size_t>(r) * frame.cols + c, z, slot});
      }
  }

  std::sort(frame.fragments.begin(), frame.fragments.end(), [&](const Fragment& a, const Fragment& b) {
    if (a.pixel != b.pixel)
      return a.pixel < b.pixel;
    if (a.depth != b.depth)
      return a.depth < b.depth;
    return frame.projected[a.splat].index < frame.projected[b.splat].index;
  });
  const std::size_t pixels = static_cast<std::size_t>(frame.rows) * frame.cols;
  frame.pixel_begin.assign(pixels + 1, 0);
  for (const Fragment& f : frame.fragments)
    ++frame.pixel_begin[f.pixel + 1];
  for (std::size_t p = 0; p < pixels; ++p)
    frame.pixel_begin[p + 1] += frame.pixel_begin[p];
  return frame;
}

struct Contribution
{
  double falloff = 0.0;   // Gaussian weight exp(-q/2)
  double alpha = 0.0;     // effective opacity after clamping
  double transmittance = 0.0;
  bool clamped = false;
};

// Composites one pixel; returns per-fragment terms for the backward pass.
void composite(const Frame& frame, std::span<const Gaussian> splats, std::size_t pixel,
               double* color, double& depth, double& alpha, std::vector<Contribution>* trace)
{
  const int r = static_cast<int>(pixel / frame.cols), c = static_cast<int>(pixel % frame.cols);
  double T = 1.0, zsum = 0.0;
  color[0] = color[1] = color[2] = 0.0;
  if (trace)
    trace->clear();
  for (std::size_t f = frame.pixel_begin[pixel]; f < frame.pixel_begin[pixel + 1]; ++f) {
    const Projected& p = frame.projected[frame.fragments[f].splat];
    const Gaussian& g = splats[p.index];
    const Eigen::Vector2d d(c - p.mean.x(), r - p.mean.y());
    const double falloff = std::exp(-0.5 * d.dot(p.conic * d));
    const double raw = g.opacity * falloff;
    const double a = std::min(kMaxAlpha, raw);
    const double w = a * T;
    for (int ch = 0; ch < 3; ++ch)
      color[ch] += g.color[ch] * w;
    zsum += p.cam.z() * w;
    if (trace)
      trace->push_back({falloff, a, T, raw >= kMaxAlpha});
    T *= 1.0 - a;
  }
  alpha = 1.0 - T;
  depth = alpha > kMinCoverage ? zsum / alpha : 0.0;
}

} // namespace

Eigen::Matrix3d Gaussian::covariance() const
{
  const Eigen::Quaterniond q(rotation[0], rotation[1], rotation[2], rotation[3]);
  const Eigen::Matrix3d R = q.normalized().toRotationMatrix();
  return R * scale.cwiseProduct(scale).asDiagonal() * R.transpose();
}

GaussianSplatSet build_splats(const CameraView& view, const ProbabilityVolume& prob,
                              const DepthPlanes& planes, const Raster& image,
                              const SplatOptions& options, int view_id)
{
  const int rows = scaled_height(view, kDownsample), cols = scaled_width(view, kDownsample);
  if (prob.rows() != rows || prob.cols() != cols || prob.channels() != planes.size())
    throw std::invalid_argument("build_splats: probability volume does not match the view");
  if (image.rows() != view.height || image.cols() != view.width || image.channels() != 3)
    throw std::invalid_argument("build_splats: image does not match the view");
  const Raster color = downsample_image(image, kDownsample);
  const DepthMap depth = regress_depth(prob, planes);
  const Intrinsics K = scale_intrinsics(view.intrinsics, 1.0 / kDownsample);
  const double focal = 0.5 * (K.fx + K.fy);

  GaussianSplatSet splats(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      Gaussian& g = splats[static_cast<std::size_t>(r) * cols + c];
      const Ray ray = backproject_ray(c, r, view, kDownsample);
      const double D = depth(r, c);
      g.mean = ray.origin + ray_distance(ray, view, D) * ray.direction;
      const double* p = prob.cell(r, c);
      g.opacity = *std::max_element(p, p + prob.channels());
      g.scale = Eigen::Vector3d::Constant(options.footprint * D / focal);
      g.color = {color(r, c, 0), color(r, c, 1), color(r, c, 2)};
      g.view = view_id;
      g.row = r;
      g.col = c;
    }
  return splats;
}

RenderTarget rasterize(std::span<const Gaussian> splats, const CameraView& target)
{
  const Frame frame = prepare(splats, target);
  RenderTarget out{Raster(frame.rows, frame.cols, 3), Raster(frame.rows, frame.cols, 1),
                   Raster(frame.rows, frame.cols, 1)};
  parallel_for(static_cast<std::size_t>(frame.rows) * frame.cols, [&](std::size_t px) {
    const int r = static_cast<int>(px / frame.cols), c = static_cast<int>(px % frame.cols);
    composite(frame, splats, px, out.color.cell(r, c), out.depth(r, c), out.alpha(r, c), nullptr);
  });
  return out;
}

double rendering_loss(const RenderTarget& rendered, const Raster& target)
{
  if (!rendered.color.same_shape(target))
    throw std::invalid_argument("rendering_loss: shape mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = rendered.color.data()[i] - target.data()[i];
    sum += d * d;
  }
  return target.empty() ? 0.0 : sum / static_cast<double>(target.size());
}

std::vector<int> select_novel_sources(std::span<const CameraView> views, const CameraView& novel,
                                      int n)
{
  if (n < 0 || n > static_cast<int>(views.size()))
    throw std::invalid_argument("select_novel_sources: n exceeds the number of views");
  const Eigen::Vector3d center = novel.pose.center();
  std::vector<int> order(views.size());
  std::vector<double> dist(views.size());
  for (std::size_t j = 0; j < views.size(); ++j) {
    order[j] = static_cast<int>(j);
    dist[j] = (views[j].pose.center() - center).norm();
  }
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return dist[static_cast<std::size_t>(a)] < dist[static_cast<std::size_t>(b)];
  });
  order.resize(static_cast<std::size_t>(n));
  return order;
}

double render_loss_and_gradient(std::span<const Gaussian> splats, const CameraView& target,
                                const Raster& target_image, std::span<SplatGradient> grad)
{
  const Frame frame = prepare(splats, target);
  if (target_image.rows() != frame.rows || target_image.cols() != frame.cols ||
      target_image.channels() != 3)
    throw std::invalid_argument("render_loss_and_gradient: target image has the wrong shape");
  if (!grad.empty() && grad.size() != splats.size())
    throw std::invalid_argument("render_loss_and_gradient: gradient buffer size mismatch");
  const double norm = 1.0 / (3.0 * frame.rows * frame.cols);

  // Screen-space gradients per projected primitive.
  std::vector<Eigen::Vector2d> d_mean(frame.projected.size(), Eigen::Vector2d::Zero());
  std::vector<Eigen::Matrix2d> d_conic(frame.projected.size(), Eigen::Matrix2d::Zero());
  std::vector<double> d_opacity(frame.projected.size(), 0.0);

  double loss = 0.0;
  std::vector<Contribution> trace;
  std::vector<Eigen::Vector3d> suffix;
  for (std::size_t px = 0; px < static_cast<std::size_t>(frame.rows) * frame.cols; ++px) {
    const int r = static_cast<int>(px / frame.cols), c = static_cast<int>(px % frame.cols);
    double color[3], depth = 0.0, alpha = 0.0;
    composite(frame, splats, px, color, depth, alpha, grad.empty() ? nullptr : &trace);
    Eigen::Vector3d d_color;
    for (int ch = 0; ch < 3; ++ch) {
      const double e = color[ch] - target_image(r, c, ch);
      loss += e * e * norm;
      d_color[ch] = 2.0 * e * norm;
    }
    if (grad.empty() || trace.empty())
      continue;

    // suffix[i] = sum_{j > i} c_j a_j T_j
    const std::size_t begin = frame.pixel_begin[px];
    suffix.assign(trace.size(), Eigen::Vector3d::Zero());
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    for (std::size_t i = trace.size(); i-- > 0;) {
      suffix[i] = acc;
      const Gaussian& g = splats[frame.projected[frame.fragments[begin + i].splat].index];
      acc += g.color * trace[i].alpha * trace[i].transmittance;
    }
    for (std::size_t i = 0; i < trace.size(); ++i) {
      const Contribution& t = trace[i];
      if (t.clamped)
        continue;
      const std::size_t slot = frame.fragments[begin + i].splat;
      const Projected& p = frame.projected[slot];
      const Gaussian& g = splats[p.index];
      const Eigen::Vector3d d_a = g.color * t.transmittance - suffix[i] / (1.0 - t.alpha);
      const double dL_da = d_color.dot(d_a);
      d_opacity[slot] += dL_da * t.falloff;
      const double dL_dG = dL_da * g.opacity;
      const Eigen::Vector2d d(c - p.mean.x(), r - p.mean.y());
      d_mean[slot] += dL_dG * t.falloff * (p.conic * d);
      d_conic[slot] += dL_dG * (-0.5 * t.falloff) * (d * d.transpose());
    }
  }
  if (grad.empty())
    return loss;

  const Eigen::Matrix3d& W = target.pose.R;
  const double fx = frame.K.fx, fy = frame.K.fy;
  for (std::size_t slot = 0; slot < frame.projected.size(); ++slot) {
    const Projected& p = frame.projected[slot];
    const Gaussian& g = splats[p.index];
    const double x = p.cam.x(), y = p.cam.y(), z = p.cam.z();

    const Eigen::Matrix2d d_cov = -p.conic * d_conic[slot] * p.conic;
    const Eigen::Matrix2d d_cov_sym = d_cov + d_cov.transpose();
    const Eigen::Matrix<double, 2, 3> d_J = d_cov_sym * p.J * p.cov_cam;
    const Eigen::Matrix3d d_cov_cam = p.J.transpose() * d_cov * p.J;

    Eigen::Vector3d d_cam = p.J.transpose() * d_mean[slot];
    d_cam.x() += d_J(0, 2) * (-fx / (z * z));
    d_cam.y() += d_J(1, 2) * (-fy / (z * z));
    d_cam.z() += d_J(0, 0) * (-fx / (z * z)) + d_J(0, 2) * (2.0 * fx * x / (z * z * z)) +
                 d_J(1, 1) * (-fy / (z * z)) + d_J(1, 2) * (2.0 * fy * y / (z * z * z));

    SplatGradient& out = grad[p.index];
    out.mean += W.transpose() * d_cam;
    out.opacity += d_opacity[slot];
    // Isotropic: W * sigma^2 I * W^T = sigma^2 I.
    out.scale += 2.0 * g.scale.x() * d_cov_cam.trace();
  }
  return loss;
}

ProbabilityVolume softmax_planes(const Raster& logits)
{
  ProbabilityVolume prob(logits.rows(), logits.cols(), logits.channels());
  const int M = logits.channels();
  for (int r = 0; r < logits.rows(); ++r)
    for (int c = 0; c < logits.cols(); ++c) {
      const double* z = logits.cell(r, c);
      double* p = prob.cell(r, c);
      const double top = *std::max_element(z, z + M);
      double total = 0.0;
      for (int m = 0; m < M; ++m) {
        p[m] = std::exp(z[m] - top);
        total += p[m];
      }
      for (int m = 0; m < M; ++m)
        p[m] /= total;
    }
  return prob;
}

std::vector<Raster> logits_from_probabilities(std::span<const ProbabilityVolume> volumes)
{
  std::vector<Raster> logits;
  for (const ProbabilityVolume& v : volumes) {
    Raster z(v.rows(), v.cols(), v.channels());
    for (std::size_t i = 0; i < v.size(); ++i)
      z.data()[i] = std::log(std::max(v.data()[i], 1e-300));
    logits.push_back(std::move(z));
  }
  return logits;
}

double refinement_objective(const RefineProblem& problem, std::span<const Raster> logits,
                            std::vector<Raster>* grad)
{
  if (logits.size() != problem.sources.size() || problem.source_images.size() != problem.sources.size())
    throw std::invalid_argument("refinement_objective: one logit volume and image per source view");
  if (problem.novel_images.size() != problem.novel.size())
    throw std::invalid_argument("refinement_objective: one image per novel view");

  std::vector<ProbabilityVolume> probs;
  GaussianSplatSet splats;
  for (std::size_t s = 0; s < logits.size(); ++s) {
    probs.push_back(softmax_planes(logits[s]));
    const GaussianSplatSet part = build_splats(problem.sources[s], probs.back(), problem.planes,
                                               problem.source_images[s], problem.splat,
                                               static_cast<int>(s));
    splats.insert(splats.end(), part.begin(), part.end());
  }

  std::vector<SplatGradient> splat_grad(grad ? splats.size() : 0);
  double loss = 0.0;
  for (std::size_t v = 0; v < problem.novel.size(); ++v) {
    const Raster target = downsample_image(problem.novel_images[v], kDownsample);
    loss += render_loss_and_gradient(splats, problem.novel[v], target, splat_grad);
  }
  if (!grad)
    return loss;

  grad->clear();
  const int M = problem.planes.size();
  std::vector<double> d_prob(static_cast<std::size_t>(M));
  std::size_t offset = 0;
  for (std::size_t s = 0; s < logits.size(); ++s) {
    const CameraView& view = problem.sources[s];
    const ProbabilityVolume& B = probs[s];
    const Intrinsics K = scale_intrinsics(view.intrinsics, 1.0 / kDownsample);
    const double focal = 0.5 * (K.fx + K.fy);
    Raster g(B.rows(), B.cols(), M);
    for (int r = 0; r < B.rows(); ++r)
      for (int c = 0; c < B.cols(); ++c) {
        const SplatGradient& sg = splat_grad[offset + static_cast<std::size_t>(r) * B.cols() + c];
        const Ray ray = backproject_ray(c, r, view, kDownsample);
        const double dL_dD = sg.mean.dot(ray.direction) * ray_distance(ray, view, 1.0) +
                             sg.scale * problem.splat.footprint / focal;
        const double* p = B.cell(r, c);
        const int top = static_cast<int>(std::max_element(p, p + M) - p);
        double mean = 0.0;
        for (int m = 0; m < M; ++m) {
          d_prob[static_cast<std::size_t>(m)] =
              dL_dD * problem.planes.depths[static_cast<std::size_t>(m)] + (m == top ? sg.opacity : 0.0);
          mean += p[m] * d_prob[static_cast<std::size_t>(m)];
        }
        for (int m = 0; m < M; ++m)
          g(r, c, m) = p[m] * (d_prob[static_cast<std::size_t>(m)] - mean);
      }
    offset += static_cast<std::size_t>(B.rows()) * B.cols();
    grad->push_back(std::move(g));
  }
  return loss;
}

RefineResult refine_probability_volume(const RefineProblem& problem,
                                       std::span<const ProbabilityVolume> initial,
                                       const RefineOptions& options)
{
  if (options.steps < 1)
    throw std::invalid_argument("refine_probability_volume: steps must be >= 1");
  if (problem.novel.empty())
    throw std::invalid_argument("refine_probability_volume: at least one novel view is required");
  if (!(options.step_size > 0.0) || options.max_halvings < 0 || !(options.pixel_floor > 0.0))
    throw std::invalid_argument("refine_probability_volume: invalid step control");

  RefineProblem local = problem;
  local.splat = options.splat;
  std::vector<Raster> logits = logits_from_probabilities(initial);
  std::vector<Raster> grad;
  RefineResult result;
  double loss = refinement_objective(local, logits, &grad);
  if (!std::isfinite(loss))
    throw std::runtime_error("refine_probability_volume: non-finite initial loss");
  result.loss_trace.push_back(loss);

  for (int step = 0; step < options.steps; ++step) {
    // Per-pixel scaling: each pixel's largest logit change is step_size,
    // except where its gradient is negligible next to the strongest one.
    double gmax = 0.0;
    for (const Raster& g : grad)
      for (double v : g.data())
        gmax = std::max(gmax, std::abs(v));
    bool accepted = false;
    if (gmax > 0.0) {
      std::vector<Raster> direction = grad;
      for (Raster& d : direction)
        for (int r = 0; r < d.rows(); ++r)
          for (int c = 0; c < d.cols(); ++c) {
            double* p = d.cell(r, c);
            double norm = options.pixel_floor * gmax;
            for (int m = 0; m < d.channels(); ++m)
              norm = std::max(norm, std::abs(p[m]));
            for (int m = 0; m < d.channels(); ++m)
              p[m] /= norm;
          }
      double eta = options.step_size;
      for (int h = 0; h <= options.max_halvings && !accepted; ++h, eta *= 0.5) {
        std::vector<Raster> trial = logits;
        for (std::size_t s = 0; s < trial.size(); ++s)
          for (std::size_t i = 0; i < trial[s].size(); ++i)
            trial[s].data()[i] -= eta * direction[s].data()[i];
        const double trial_loss = refinement_objective(local, trial, nullptr);
        if (!std::isfinite(trial_loss))
          throw std::runtime_error("refine_probability_volume: non-finite loss");
        if (trial_loss <= loss) {
          logits = std::move(trial);
          loss = refinement_objective(local, logits, &grad);
          accepted = true;
        }
      }
    }
    if (accepted)
      ++result.accepted_steps;
    result.loss_trace.push_back(loss);
  }
  for (const Raster& z : logits)
    result.volumes.push_back(softmax_planes(z));
  return result;
}

} // namespace mvdet
