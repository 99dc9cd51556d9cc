#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "vip/roi.hpp"
#include "vip/tensor.hpp"

namespace vip {

// 8-bit RGB image, interleaved samples in row-major order (PPM layout).
struct RawImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // 3 * width * height

  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

// Binary PPM (P6, maxval 255). Writes are canonical, so write(read(f))
// reproduces canonical files byte for byte.
RawImage read_ppm(const std::string& path);
RawImage read_ppm(std::istream& is, const std::string& origin = "<stream>");
void write_ppm(const RawImage& image, const std::string& path);
void write_ppm(const RawImage& image, std::ostream& os);

// Bilinear resampling with half-pixel centers onto a square target.
RawImage resize_bilinear(const RawImage& image, int target_resolution);

// Rescales a box from one frame to another; outer bounds are kept covering
// (floor origin, ceil extent).
BoundingBox scale_box(const BoundingBox& box, int from_w, int from_h, int to_w, int to_h);

// Min-max normalizes a grid_w x grid_h scalar field, maps it through the
// fixed 256-entry colormap and nearest-neighbor upsamples to a square
// resolution. Constant fields map to the colormap midpoint.
RawImage render_heatmap(const std::vector<float>& values, int grid_w, int grid_h,
                        int resolution);

const std::array<std::array<std::uint8_t, 3>, 256>& heat_colormap();

// [3, H, W] float tensor in [0, 255] <-> interleaved 8-bit image.
Tensor image_to_tensor(const RawImage& image);
RawImage tensor_to_image(const Tensor& t);

}  // namespace vip
