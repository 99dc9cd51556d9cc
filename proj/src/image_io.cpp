#include "vip/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace vip {

namespace {

// Skips whitespace and '#' comments between PPM header fields.
void skip_ppm_separators(std::istream& is) {
  for (;;) {
    int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      is.get();
    } else {
      return;
    }
  }
}

int read_ppm_int(std::istream& is, const std::string& origin, const char* field) {
  skip_ppm_separators(is);
  int value;
  if (!(is >> value)) {
    throw FormatError("ppm " + origin + ": missing or invalid " + field);
  }
  return value;
}

}  // namespace

RawImage read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_ppm(is, path);
}

RawImage read_ppm(std::istream& is, const std::string& origin) {
  char magic[2];
  if (!is.read(magic, 2)) throw FormatError("ppm " + origin + ": truncated magic");
  if (magic[0] != 'P' || magic[1] != '6') {
    throw FormatError("ppm " + origin + ": expected binary P6, got " +
                      std::string(magic, 2));
  }
  RawImage img;
  img.width = read_ppm_int(is, origin, "width");
  img.height = read_ppm_int(is, origin, "height");
  const int maxval = read_ppm_int(is, origin, "maxval");
  if (img.width <= 0 || img.height <= 0) {
    throw FormatError("ppm " + origin + ": non-positive dimensions");
  }
  if (maxval != 255) {
    throw FormatError("ppm " + origin + ": unsupported maxval " + std::to_string(maxval));
  }
  is.get();  // single whitespace byte after maxval
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  if (!is.read(reinterpret_cast<char*>(img.pixels.data()),
               static_cast<std::streamsize>(img.pixels.size()))) {
    throw FormatError("ppm " + origin + ": truncated pixel data");
  }
  return img;
}

void write_ppm(const RawImage& image, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_ppm(image, os);
  if (!os) throw IoError("write failed for " + path);
}

void write_ppm(const RawImage& image, std::ostream& os) {
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
    throw ContractError("write_ppm: pixel buffer does not match dimensions");
  }
  os << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.pixels.data()),
           static_cast<std::streamsize>(image.pixels.size()));
}

RawImage resize_bilinear(const RawImage& image, int target_resolution) {
  if (target_resolution <= 0) throw ContractError("resize: target must be positive");
  if (image.width == target_resolution && image.height == target_resolution) return image;

  RawImage out;
  out.width = out.height = target_resolution;
  out.pixels.resize(static_cast<std::size_t>(target_resolution) * target_resolution * 3);
  const double sx = static_cast<double>(image.width) / target_resolution;
  const double sy = static_cast<double>(image.height) / target_resolution;
  for (int y = 0; y < target_resolution; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < target_resolution; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - wy) * ((1 - wx) * image.at(x0, y0, c) + wx * image.at(x1, y0, c)) +
                         wy * ((1 - wx) * image.at(x0, y1, c) + wx * image.at(x1, y1, c));
        out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

BoundingBox scale_box(const BoundingBox& box, int from_w, int from_h, int to_w, int to_h) {
  if (from_w <= 0 || from_h <= 0 || to_w <= 0 || to_h <= 0) {
    throw ContractError("scale_box: frames must be positive");
  }
  const double rx = static_cast<double>(to_w) / from_w;
  const double ry = static_cast<double>(to_h) / from_h;
  BoundingBox out;
  out.x0 = static_cast<int>(std::floor(box.x0 * rx));
  out.y0 = static_cast<int>(std::floor(box.y0 * ry));
  out.x1 = static_cast<int>(std::ceil(box.x1 * rx));
  out.y1 = static_cast<int>(std::ceil(box.y1 * ry));
  out.x0 = std::clamp(out.x0, 0, to_w - 1);
  out.y0 = std::clamp(out.y0, 0, to_h - 1);
  out.x1 = std::clamp(out.x1, out.x0 + 1, to_w);
  out.y1 = std::clamp(out.y1, out.y0 + 1, to_h);
  return out;
}

const std::array<std::array<std::uint8_t, 3>, 256>& heat_colormap() {
  // Piecewise-linear map through five anchors, dark blue to yellow.
  static const std::array<std::array<std::uint8_t, 3>, 256> table = [] {
    const std::array<std::array<double, 3>, 5> anchors = {{
        {13, 8, 135},     // deep blue
        {126, 3, 168},    // purple
        {204, 71, 120},   // magenta
        {248, 149, 64},   // orange
        {240, 249, 33},   // yellow
    }};
    std::array<std::array<std::uint8_t, 3>, 256> t{};
    for (int i = 0; i < 256; ++i) {
      const double pos = i / 255.0 * (anchors.size() - 1);
      const int seg = std::min(static_cast<int>(pos), static_cast<int>(anchors.size()) - 2);
      const double f = pos - seg;
      for (int c = 0; c < 3; ++c) {
        const double v = anchors[seg][c] * (1 - f) + anchors[seg + 1][c] * f;
        t[i][c] = static_cast<std::uint8_t>(std::lround(v));
      }
    }
    return t;
  }();
  return table;
}

RawImage render_heatmap(const std::vector<float>& values, int grid_w, int grid_h,
                        int resolution) {
  if (grid_w <= 0 || grid_h <= 0 ||
      values.size() != static_cast<std::size_t>(grid_w) * grid_h) {
    throw ContractError("render_heatmap: value count does not match grid");
  }
  if (resolution <= 0) throw ContractError("render_heatmap: resolution must be positive");
  for (float v : values) {
    if (!std::isfinite(v)) throw ContractError("render_heatmap: non-finite value");
  }

  float lo = values[0], hi = values[0];
  for (float v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const bool degenerate = hi <= lo;

  const auto& cmap = heat_colormap();
  RawImage out;
  out.width = out.height = resolution;
  out.pixels.resize(static_cast<std::size_t>(resolution) * resolution * 3);
  for (int y = 0; y < resolution; ++y) {
    const int gy = std::min(static_cast<int>(static_cast<long>(y) * grid_h / resolution),
                            grid_h - 1);
    for (int x = 0; x < resolution; ++x) {
      const int gx = std::min(static_cast<int>(static_cast<long>(x) * grid_w / resolution),
                              grid_w - 1);
      int idx = 128;
      if (!degenerate) {
        const float v = values[static_cast<std::size_t>(gy) * grid_w + gx];
        idx = static_cast<int>(std::lround((v - lo) / (hi - lo) * 255.0f));
        idx = std::clamp(idx, 0, 255);
      }
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = cmap[idx][c];
    }
  }
  return out;
}

Tensor image_to_tensor(const RawImage& image) {
  const int h = image.height, w = image.width;
  std::vector<float> data(static_cast<std::size_t>(3) * h * w);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        data[(static_cast<std::size_t>(c) * h + y) * w + x] = image.at(x, y, c);
      }
    }
  }
  return Tensor({3, h, w}, std::move(data));
}

RawImage tensor_to_image(const Tensor& t) {
  if (t.rank() != 3 || t.dim(0) != 3) {
    throw DimError("tensor_to_image: expected [3,H,W], got " + shape_str(t.shape()));
  }
  const int h = t.dim(1), w = t.dim(2);
  RawImage img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<std::size_t>(3) * h * w);
  const auto& data = t.data();
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const float v = data[(static_cast<std::size_t>(c) * h + y) * w + x];
        img.at(x, y, c) =
            static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 255.0f)));
      }
    }
  }
  return img;
}

}  // namespace vip
