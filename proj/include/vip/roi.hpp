#pragma once

#include <string>
#include <vector>

#include "vip/tensor.hpp"
#include "vip/vit.hpp"

namespace vip {

// Pixel-space box, inclusive-exclusive, origin top-left.
struct BoundingBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;
};

// Token indices whose patches intersect the ROI. Index 0 (CLS) never
// appears; indices are sorted and unique.
struct RoiTokenSet {
  std::vector<int> indices;
  int seq_len = 0;

  bool contains(int token) const;
  int count() const { return static_cast<int>(indices.size()); }
};

// Maps boxes (already in model-input coordinates) to the token set of every
// patch cell the boxes overlap with positive area.
RoiTokenSet extract_roi_token_idx(const std::vector<BoundingBox>& boxes,
                                  const ViTConfig& config);

// [H, W] tensor with 1 inside any box, 0 elsewhere.
Tensor roi_pixel_mask(const std::vector<BoundingBox>& boxes, int resolution);

// Box list file: one "x0 y0 x1 y1" line per box, '#' starts a comment.
std::vector<BoundingBox> read_box_file(const std::string& path);

}  // namespace vip
