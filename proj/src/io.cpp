#include "mvdet/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

namespace mvdet {

namespace {

std::string where(const fs::path& path) { return path.string() + ": "; }

std::ofstream open_out(const fs::path& path, bool binary)
{
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out)
    throw FormatError(where(path) + "cannot open for writing");
  return out;
}

std::string slurp(const fs::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw FormatError(where(path) + "cannot open for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string format_double(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class ByteWriter
{
public:
  void u32(std::uint32_t v)
  {
    for (int i = 0; i < 4; ++i)
      bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void raw(std::string_view s) { bytes_.append(s); }
  void save(const fs::path& path) const
  {
    std::ofstream out = open_out(path, true);
    out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
    if (!out)
      throw FormatError(where(path) + "write failed");
  }

private:
  std::string bytes_;
};

class ByteReader
{
public:
  ByteReader(const fs::path& path) : path_(path), bytes_(slurp(path)) {}

  void magic(std::string_view expected)
  {
    if (bytes_.compare(0, expected.size(), expected) != 0)
      throw FormatError(where(path_) + "bad magic, expected \"" + std::string(expected) + "\"");
    pos_ = expected.size();
  }
  std::uint32_t u32(const char* field)
  {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f32(const char* field) { return std::bit_cast<float>(u32(field)); }
  void need(std::size_t n, const char* field) const
  {
    if (bytes_.size() - pos_ < n)
      throw FormatError(where(path_) + "truncated while reading " + field);
  }
  void finish() const
  {
    if (pos_ != bytes_.size())
      throw FormatError(where(path_) + "trailing bytes after payload");
  }

private:
  fs::path path_;
  std::string bytes_;
  std::size_t pos_ = 0;
};

// Whitespace-separated token stream over a text file that tracks line numbers.
class TextReader
{
public:
  explicit TextReader(const fs::path& path) : path_(path), in_(slurp(path)) {}

  bool next_line()
  {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      const auto hash = line.find('#');
      if (hash != std::string::npos)
        line.erase(hash);
      if (line.find_first_not_of(" \t\r") != std::string::npos) {
        line_ = std::istringstream(line);
        return true;
      }
    }
    return false;
  }
  std::string word(const std::string& field)
  {
    std::string w;
    if (!(line_ >> w))
      fail(field, "missing");
    return w;
  }
  double number(const std::string& field)
  {
    const std::string w = word(field);
    try {
      std::size_t used = 0;
      const double v = std::stod(w, &used);
      if (used == w.size() && std::isfinite(v))
        return v;
    } catch (const std::exception&) {
    }
    fail(field, "not a finite number: \"" + w + "\"");
  }
  int integer(const std::string& field)
  {
    const double v = number(field);
    if (v != std::floor(v) || std::abs(v) > 1e9)
      fail(field, "not an integer");
    return static_cast<int>(v);
  }
  void end_of_line()
  {
    std::string extra;
    if (line_ >> extra)
      fail("line", "unexpected trailing token \"" + extra + "\"");
  }
  [[noreturn]] void fail(const std::string& field, const std::string& what) const
  {
    throw FormatError(where(path_) + "line " + std::to_string(line_no_) + ": field " + field +
                      ": " + what);
  }
  [[noreturn]] void fail_eof(const std::string& what) const
  {
    throw FormatError(where(path_) + "unexpected end of file, expected " + what);
  }

private:
  fs::path path_;
  std::istringstream in_;
  std::istringstream line_;
  int line_no_ = 0;
};

constexpr const char* kCameraHeader = "mvdet-cameras";

} // namespace

void write_cameras(const fs::path& path, std::span<const CameraView> views)
{
  std::ofstream out = open_out(path, false);
  out << kCameraHeader << " 1\n";
  out << "views " << views.size() << "\n";
  out << "# fx fy cx cy width height r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2\n";
  for (const CameraView& v : views) {
    const Intrinsics& K = v.intrinsics;
    out << format_double(K.fx) << ' ' << format_double(K.fy) << ' ' << format_double(K.cx) << ' '
        << format_double(K.cy) << ' ' << v.width << ' ' << v.height;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c)
        out << ' ' << format_double(v.pose.R(r, c));
      out << ' ' << format_double(v.pose.t(r));
    }
    out << '\n';
  }
  if (!out)
    throw FormatError(where(path) + "write failed");
}

std::vector<CameraView> read_cameras(const fs::path& path)
{
  TextReader in(path);
  if (!in.next_line())
    in.fail_eof("header");
  if (in.word("header") != kCameraHeader)
    in.fail("header", std::string("expected \"") + kCameraHeader + "\"");
  if (in.integer("version") != 1)
    in.fail("version", "unsupported");
  in.end_of_line();
  if (!in.next_line())
    in.fail_eof("view count");
  if (in.word("views") != "views")
    in.fail("views", "expected \"views <count>\"");
  const int count = in.integer("views");
  if (count < 0)
    in.fail("views", "negative count");
  in.end_of_line();

  std::vector<CameraView> views;
  for (int i = 0; i < count; ++i) {
    if (!in.next_line())
      in.fail_eof("view " + std::to_string(i));
    const std::string tag = "view " + std::to_string(i) + " ";
    CameraView v;
    v.intrinsics.fx = in.number(tag + "fx");
    v.intrinsics.fy = in.number(tag + "fy");
    v.intrinsics.cx = in.number(tag + "cx");
    v.intrinsics.cy = in.number(tag + "cy");
    v.width = in.integer(tag + "width");
    v.height = in.integer(tag + "height");
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c)
        v.pose.R(r, c) = in.number(tag + "r" + std::to_string(r) + std::to_string(c));
      v.pose.t(r) = in.number(tag + "t" + std::to_string(r));
    }
    in.end_of_line();
    try {
      v.validate();
    } catch (const std::exception& e) {
      in.fail(tag + "camera", e.what());
    }
    views.push_back(v);
  }
  if (in.next_line())
    in.fail("line", "data after the last view");
  return views;
}

void write_ppm(const fs::path& path, const Raster& image)
{
  if (image.channels() != 3)
    throw std::invalid_argument("write_ppm: RGB raster expected");
  std::ofstream out = open_out(path, true);
  out << "P6\n" << image.cols() << ' ' << image.rows() << "\n255\n";
  std::string bytes(image.size(), '\0');
  for (std::size_t i = 0; i < image.size(); ++i)
    bytes[i] = static_cast<char>(std::lround(std::clamp(image.data()[i], 0.0, 1.0) * 255.0));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw FormatError(where(path) + "write failed");
}

Raster read_ppm(const fs::path& path)
{
  const std::string bytes = slurp(path);
  std::size_t pos = 0;
  auto token = [&](const char* field) {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#')
        while (pos < bytes.size() && bytes[pos] != '\n')
          ++pos;
      else if (std::isspace(static_cast<unsigned char>(bytes[pos])))
        ++pos;
      else
        break;
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])))
      ++pos;
    if (start == pos)
      throw FormatError(where(path) + "missing " + field);
    return bytes.substr(start, pos - start);
  };
  auto positive = [&](const char* field) {
    const std::string t = token(field);
    if (t.find_first_not_of("0123456789") != std::string::npos || t.size() > 9 || std::stoi(t) <= 0)
      throw FormatError(where(path) + "invalid " + field + " \"" + t + "\"");
    return std::stoi(t);
  };
  if (token("magic") != "P6")
    throw FormatError(where(path) + "bad magic, expected P6");
  const int cols = positive("width");
  const int rows = positive("height");
  if (positive("maxval") != 255)
    throw FormatError(where(path) + "maxval must be 255");
  ++pos;  // single whitespace byte before the pixel data
  Raster image(rows, cols, 3);
  if (bytes.size() < pos || bytes.size() - pos != image.size())
    throw FormatError(where(path) + "pixel data size does not match the header");
  for (std::size_t i = 0; i < image.size(); ++i)
    image.data()[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
  return image;
}

void write_raster(const fs::path& path, const Raster& raster)
{
  ByteWriter out;
  out.raw("MVSR");
  out.u32(static_cast<std::uint32_t>(raster.rows()));
  out.u32(static_cast<std::uint32_t>(raster.cols()));
  out.u32(static_cast<std::uint32_t>(raster.channels()));
  for (double v : raster.data())
    out.f32(v);
  out.save(path);
}

Raster read_raster(const fs::path& path)
{
  ByteReader in(path);
  in.magic("MVSR");
  const std::uint32_t rows = in.u32("rows"), cols = in.u32("cols"), channels = in.u32("channels");
  const std::uint64_t count = std::uint64_t{rows} * cols * channels;
  if (count > (std::uint64_t{1} << 32))
    throw FormatError(where(path) + "dimensions too large");
  in.need(count * 4, "values");
  Raster raster(static_cast<int>(rows), static_cast<int>(cols), static_cast<int>(channels));
  for (double& v : raster.data())
    v = in.f32("values");
  in.finish();
  return raster;
}

void write_voxel_grid(const fs::path& path, const VoxelGrid& grid)
{
  const GridSpec& g = grid.spec;
  const std::size_t n = g.voxel_count();
  if (grid.surface.size() != n || grid.feature.size() != n * grid.channels)
    throw std::invalid_argument("write_voxel_grid: inconsistent grid");
  ByteWriter out;
  out.raw("MVSV");
  out.u32(static_cast<std::uint32_t>(g.nx));
  out.u32(static_cast<std::uint32_t>(g.ny));
  out.u32(static_cast<std::uint32_t>(g.nz));
  out.u32(static_cast<std::uint32_t>(grid.channels));
  for (int a = 0; a < 3; ++a)
    out.f32(g.origin[a]);
  for (int a = 0; a < 3; ++a)
    out.f32(g.pitch[a]);
  for (std::size_t v = 0; v < n; ++v) {
    for (int ch = 0; ch < grid.channels; ++ch)
      out.f32(grid.feature[v * grid.channels + ch]);
    out.f32(grid.surface[v]);
  }
  out.save(path);
}

VoxelGrid read_voxel_grid(const fs::path& path)
{
  ByteReader in(path);
  in.magic("MVSV");
  VoxelGrid grid;
  GridSpec& g = grid.spec;
  g.nx = static_cast<int>(in.u32("nx"));
  g.ny = static_cast<int>(in.u32("ny"));
  g.nz = static_cast<int>(in.u32("nz"));
  grid.channels = static_cast<int>(in.u32("channels"));
  if (g.nx <= 0 || g.ny <= 0 || g.nz <= 0 || grid.channels < 0 ||
      g.voxel_count() * (grid.channels + 1) > (std::size_t{1} << 32))
    throw FormatError(where(path) + "invalid dimensions");
  for (int a = 0; a < 3; ++a)
    g.origin[a] = in.f32("origin");
  for (int a = 0; a < 3; ++a)
    g.pitch[a] = in.f32("pitch");
  const std::size_t n = g.voxel_count(), C = static_cast<std::size_t>(grid.channels);
  in.need(n * (C + 1) * 4, "voxels");
  grid.feature.resize(n * C);
  grid.aggregated.resize(n * C);
  grid.surface.resize(n);
  grid.matched.resize(n);
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t ch = 0; ch < C; ++ch)
      grid.feature[v * C + ch] = in.f32("feature");
    const double s = in.f32("surface");
    grid.surface[v] = s;
    grid.matched[v] = s > 0.0 ? 1 : 0;
    for (std::size_t ch = 0; ch < C; ++ch)
      grid.aggregated[v * C + ch] = s > 0.0 ? grid.feature[v * C + ch] / s : 0.0;
  }
  in.finish();
  return grid;
}

Raster splats_to_raster(std::span<const Gaussian> splats)
{
  Raster out(static_cast<int>(splats.size()), 1, kSplatChannels);
  for (std::size_t i = 0; i < splats.size(); ++i) {
    const Gaussian& g = splats[i];
    double* p = out.cell(static_cast<int>(i), 0);
    const std::array<double, kSplatChannels> values{
        g.mean.x(), g.mean.y(), g.mean.z(), g.opacity,
        g.rotation[0], g.rotation[1], g.rotation[2], g.rotation[3],
        g.scale.x(), g.scale.y(), g.scale.z(),
        g.color.x(), g.color.y(), g.color.z(),
        static_cast<double>(g.view), static_cast<double>(g.row), static_cast<double>(g.col)};
    std::copy(values.begin(), values.end(), p);
  }
  return out;
}

GaussianSplatSet splats_from_raster(const Raster& raster)
{
  if (raster.cols() != 1 || raster.channels() != kSplatChannels)
    throw FormatError("splat raster must have 1 column and 17 channels");
  GaussianSplatSet splats(static_cast<std::size_t>(raster.rows()));
  for (int i = 0; i < raster.rows(); ++i) {
    const double* p = raster.cell(i, 0);
    Gaussian& g = splats[static_cast<std::size_t>(i)];
    g.mean = {p[0], p[1], p[2]};
    g.opacity = p[3];
    g.rotation = {p[4], p[5], p[6], p[7]};
    g.scale = {p[8], p[9], p[10]};
    g.color = {p[11], p[12], p[13]};
    g.view = static_cast<int>(p[14]);
    g.row = static_cast<int>(p[15]);
    g.col = static_cast<int>(p[16]);
  }
  return splats;
}

void write_splats(const fs::path& path, std::span<const Gaussian> splats)
{
  write_raster(path, splats_to_raster(splats));
}

GaussianSplatSet read_splats(const fs::path& path)
{
  try {
    return splats_from_raster(read_raster(path));
  } catch (const FormatError& e) {
    throw FormatError(where(path) + e.what());
  }
}

void write_boxes(const fs::path& path, std::span<const Box3D> boxes)
{
  std::ofstream out = open_out(path, false);
  out << "# cx cy cz w h l yaw score\n";
  for (const Box3D& b : boxes) {
    out << format_double(b.center.x()) << ' ' << format_double(b.center.y()) << ' '
        << format_double(b.center.z()) << ' ' << format_double(b.size.x()) << ' '
        << format_double(b.size.y()) << ' ' << format_double(b.size.z()) << ' '
        << format_double(b.yaw) << ' ' << format_double(b.score) << '\n';
  }
  if (!out)
    throw FormatError(where(path) + "write failed");
}

std::vector<Box3D> read_boxes(const fs::path& path)
{
  TextReader in(path);
  std::vector<Box3D> boxes;
  while (in.next_line()) {
    Box3D b;
    b.center.x() = in.number("cx");
    b.center.y() = in.number("cy");
    b.center.z() = in.number("cz");
    b.size.x() = in.number("w");
    b.size.y() = in.number("h");
    b.size.z() = in.number("l");
    b.yaw = in.number("yaw");
    b.score = in.number("score");
    in.end_of_line();
    if (!(b.size.array() > 0.0).all())
      in.fail("size", "box sizes must be positive");
    boxes.push_back(b);
  }
  return boxes;
}

} // namespace mvdet
