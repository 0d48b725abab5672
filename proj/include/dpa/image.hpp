#pragma once

#include "dpa/common.hpp"

// In-memory rasters. Images hold three channel planes in [0,1], indexed
// (row y, column x). Masks are single planes with values in {0,1} after load.

namespace dpa {

struct Image {
  Index width = 0, height = 0;
  Mat r, g, b;  // height x width each

  static Image zeros(Index w, Index h) {
    Image im;
    im.width = w;
    im.height = h;
    im.r = Mat::Zero(h, w);
    im.g = Mat::Zero(h, w);
    im.b = Mat::Zero(h, w);
    return im;
  }

  Vec3 pixel(Index y, Index x) const { return Vec3(r(y, x), g(y, x), b(y, x)); }

  void set_pixel(Index y, Index x, const Vec3& c) {
    r(y, x) = c[0];
    g(y, x) = c[1];
    b(y, x) = c[2];
  }

  void validate() const {
    if (r.rows() != height || r.cols() != width || g.rows() != height ||
        g.cols() != width || b.rows() != height || b.cols() != width)
      throw ValidationError("Image: channel planes do not match declared size");
    if (!r.allFinite() || !g.allFinite() || !b.allFinite())
      throw ValidationError("Image: non-finite pixel values");
  }
};

using Mask = Mat;  // height x width, 0 = background, 1 = foreground

// Zero out background pixels so losses and metrics compare against the
// masked-object convention (background is black, mask 0).
inline void apply_mask(Image& im, const Mask& mask) {
  if (mask.rows() != im.height || mask.cols() != im.width)
    throw ValidationError("apply_mask: mask size does not match image");
  im.r = im.r.cwiseProduct(mask);
  im.g = im.g.cwiseProduct(mask);
  im.b = im.b.cwiseProduct(mask);
}

}  // namespace dpa
