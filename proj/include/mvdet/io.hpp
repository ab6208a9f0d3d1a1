#pragma once

#include "mvdet/boxes.hpp"
#include "mvdet/splat.hpp"

#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

namespace mvdet {

namespace fs = std::filesystem;

// Raised for unreadable or malformed files; the message names the file and
// the offending field.
class FormatError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

// Text listing: header line, view count, then one line per view with
// fx fy cx cy width height followed by the row-major 3x4 [R|t].
void write_cameras(const fs::path& path, std::span<const CameraView> views);
std::vector<CameraView> read_cameras(const fs::path& path);

// Binary PPM (P6, maxval 255). Channel values are clamped to [0, 1] and
// rounded to 8 bits.
void write_ppm(const fs::path& path, const Raster& image);
Raster read_ppm(const fs::path& path);

// "MVSR", u32 rows, cols, channels, then little-endian f32 values row-major.
void write_raster(const fs::path& path, const Raster& raster);
Raster read_raster(const fs::path& path);

// "MVSV", u32 nx, ny, nz, channels, f32 origin[3], f32 pitch[3], then per
// voxel (x fastest) the final feature v followed by the surface score s.
// Reading restores v and s; v-hat is recovered as v / s and the match count
// only as present (1) or absent (0).
void write_voxel_grid(const fs::path& path, const VoxelGrid& grid);
VoxelGrid read_voxel_grid(const fs::path& path);

// Splats are stored as an MVSR raster with one row per primitive and 17
// channels: mean(3), opacity, rotation wxyz(4), scale(3), color(3), view,
// row, col.
inline constexpr int kSplatChannels = 17;
Raster splats_to_raster(std::span<const Gaussian> splats);
GaussianSplatSet splats_from_raster(const Raster& raster);
void write_splats(const fs::path& path, std::span<const Gaussian> splats);
GaussianSplatSet read_splats(const fs::path& path);

// One box per line: cx cy cz w h l yaw score.
void write_boxes(const fs::path& path, std::span<const Box3D> boxes);
std::vector<Box3D> read_boxes(const fs::path& path);

} // namespace mvdet
