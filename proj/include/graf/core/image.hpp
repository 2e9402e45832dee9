#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace graf {

// RGB image, channel values nominally in [0, 1], row-major with interleaved channels.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill) {
    if (w < 0 || h < 0) throw std::invalid_argument("image dimensions must be non-negative");
  }

  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3 +
           static_cast<std::size_t>(c);
  }
  double& at(int x, int y, int c) { return data[index(x, y, c)]; }
  double at(int x, int y, int c) const { return data[index(x, y, c)]; }

  void clamp01() {
    for (auto& v : data) v = std::clamp(v, 0.0, 1.0);
  }

  bool operator==(const Image&) const = default;
};

}  // namespace graf
