#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace mvdet {

// Dense row-major grid of multi-channel samples. Backs images, depth maps,
// feature maps and probability volumes alike.
class Raster
{
public:
  Raster() = default;
  Raster(int rows, int cols, int channels, double fill = 0.0)
    : rows_(rows), cols_(cols), channels_(channels)
  {
    if (rows < 0 || cols < 0 || channels < 1)
      throw std::invalid_argument("Raster: invalid dimensions");
    data_.assign(static_cast<std::size_t>(rows) * cols * channels, fill);
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(int r, int c, int ch = 0) const
  {
    return (static_cast<std::size_t>(r) * cols_ + c) * channels_ + ch;
  }

  double& operator()(int r, int c, int ch = 0) { return data_[index(r, c, ch)]; }
  double operator()(int r, int c, int ch = 0) const { return data_[index(r, c, ch)]; }

  // Pointer to the channel vector of one cell.
  double* cell(int r, int c) { return data_.data() + index(r, c); }
  const double* cell(int r, int c) const { return data_.data() + index(r, c); }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Raster& o) const
  {
    return rows_ == o.rows_ && cols_ == o.cols_ && channels_ == o.channels_;
  }

  friend bool operator==(const Raster&, const Raster&) = default;

private:
  int rows_ = 0;
  int cols_ = 0;
  int channels_ = 1;
  std::vector<double> data_;
};

} // namespace mvdet
