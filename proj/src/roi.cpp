#include "vip/roi.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace vip {

bool RoiTokenSet::contains(int token) const {
  return std::binary_search(indices.begin(), indices.end(), token);
}

namespace {

void check_box(const BoundingBox& b, int w, int h) {
  if (b.x0 < 0 || b.x0 >= b.x1 || b.x1 > w || b.y0 < 0 || b.y0 >= b.y1 || b.y1 > h) {
    std::ostringstream os;
    os << "box (" << b.x0 << "," << b.y0 << "," << b.x1 << "," << b.y1
       << ") outside image " << w << "x" << h << " or degenerate";
    throw ContractError(os.str());
  }
}

}  // namespace

RoiTokenSet extract_roi_token_idx(const std::vector<BoundingBox>& boxes,
                                  const ViTConfig& config) {
  config.validate();
  if (boxes.empty()) throw ContractError("ROI extraction requires at least one box");
  const int res = config.resolution;
  const int p = config.patch_dim;
  const int grid_w = res / p;

  std::set<int> tokens;
  for (const BoundingBox& b : boxes) {
    check_box(b, res, res);
    // Patch cells whose pixel extent overlaps the box with positive area.
    const int col0 = b.x0 / p;
    const int col1 = (b.x1 - 1) / p;
    const int row0 = b.y0 / p;
    const int row1 = (b.y1 - 1) / p;
    for (int row = row0; row <= row1; ++row) {
      for (int col = col0; col <= col1; ++col) {
        tokens.insert(1 + row * grid_w + col);
      }
    }
  }
  if (tokens.empty()) throw ContractError("ROI token set is empty");

  RoiTokenSet out;
  out.indices.assign(tokens.begin(), tokens.end());
  out.seq_len = config.seq_len();
  return out;
}

Tensor roi_pixel_mask(const std::vector<BoundingBox>& boxes, int resolution) {
  if (resolution <= 0) throw ContractError("roi_pixel_mask: resolution must be positive");
  Tensor mask({resolution, resolution});
  auto& m = mask.mutable_data();
  for (const BoundingBox& b : boxes) {
    check_box(b, resolution, resolution);
    for (int y = b.y0; y < b.y1; ++y) {
      for (int x = b.x0; x < b.x1; ++x) {
        m[static_cast<std::size_t>(y) * resolution + x] = 1.0f;
      }
    }
  }
  return mask;
}

std::vector<BoundingBox> read_box_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open box file " + path);
  std::vector<BoundingBox> boxes;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    BoundingBox b;
    if (!(ls >> b.x0)) continue;  // blank or comment-only line
    if (!(ls >> b.y0 >> b.x1 >> b.y1)) {
      throw FormatError("box file " + path + ": malformed line " + std::to_string(line_no));
    }
    int extra;
    if (ls >> extra) {
      throw FormatError("box file " + path + ": trailing fields on line " +
                        std::to_string(line_no));
    }
    boxes.push_back(b);
  }
  return boxes;
}

}  // namespace vip
