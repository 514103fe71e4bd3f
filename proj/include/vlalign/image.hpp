// Copyright 2026 The vlalign Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>

#include "vlalign/types.hpp"

namespace vlalign {

// Square RGB image with pixel values in [0, 1]. Pixels are stored one row
// per pixel in row-major scan order, three columns (R, G, B).
struct Image {
  int height = 0;
  int width = 0;
  Matd pixels;  // (height*width) x 3
  std::string id;
};

// Deterministic pseudo-random image derived from an image id. This is the
// desk-scale stand-in for real image files: the same id always produces
// the same pixels, so data pipelines stay byte-reproducible.
Image synthetic_image(const std::string& image_id, int image_size);

// Resolves image ids to pixel data.
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual Image image(const std::string& image_id, int image_size) const = 0;
};

class SyntheticImageSource final : public ImageSource {
 public:
  Image image(const std::string& image_id, int image_size) const override {
    return synthetic_image(image_id, image_size);
  }
};

}  // namespace vlalign
