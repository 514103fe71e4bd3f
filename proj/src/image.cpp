// Copyright 2026 The vlalign Authors
// SPDX-License-Identifier: Apache-2.0
#include "vlalign/image.hpp"

#include "vlalign/rng.hpp"

namespace vlalign {

Image synthetic_image(const std::string& image_id, int image_size) {
  Rng rng(fnv1a64(image_id));
  Image img;
  img.height = image_size;
  img.width = image_size;
  img.id = image_id;
  img.pixels.resize(static_cast<Index>(image_size) * image_size, 3);
  for (Index i = 0; i < img.pixels.rows(); ++i)
    for (Index c = 0; c < 3; ++c) img.pixels(i, c) = rng.next_double();
  return img;
}

}  // namespace vlalign
