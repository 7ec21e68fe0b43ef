#include <cmath>

#include "muvit/data.hpp"

namespace muvit {

AugmentChoice draw_augment(std::mt19937_64& rng) {
  AugmentChoice c;
  c.hflip = (rng() & 1) != 0;
  c.vflip = (rng() & 1) != 0;
  c.rot90 = static_cast<int>(rng() & 3);
  return c;
}

namespace {

// In-place transform of every [S,S] plane of a [C,S,S] tensor.
void transform_planes(Tensor<float>& t, const AugmentChoice& c) {
  const std::int64_t C = t.dim(0), S = t.dim(1);
  std::vector<float> plane(static_cast<std::size_t>(S * S));
  for (std::int64_t ch = 0; ch < C; ++ch) {
    float* p = t.ptr() + ch * S * S;
    std::copy(p, p + S * S, plane.begin());
    for (std::int64_t y = 0; y < S; ++y) {
      for (std::int64_t x = 0; x < S; ++x) {
        // Source coordinate of output pixel (y, x): undo rotation, then flips.
        std::int64_t sy = y, sx = x;
        for (int r = 0; r < c.rot90; ++r) {
          // Counter-clockwise quarter turn: out(y, x) = in(x, S-1-y).
          const std::int64_t ny = sx, nx = S - 1 - sy;
          sy = ny;
          sx = nx;
        }
        if (c.vflip) sy = S - 1 - sy;
        if (c.hflip) sx = S - 1 - sx;
        p[y * S + x] = plane[static_cast<std::size_t>(sy * S + sx)];
      }
    }
  }
}

void require_square(const Tensor<float>& t, const char* what) {
  if (t.ndim() != 3 || t.dim(1) != t.dim(2)) {
    throw UsageError(std::string(what) + " must be [C,S,S] with square planes, got " + shape_str(t.shape()));
  }
}

}  // namespace

void apply_augment(Tensor<float>& image, Tensor<float>& mask, const AugmentChoice& choice) {
  require_square(image, "augment image");
  require_square(mask, "augment mask");
  if (image.dim(1) != mask.dim(1)) throw UsageError("augment: image and mask sizes differ");
  transform_planes(image, choice);
  transform_planes(mask, choice);
}

void standardize(Tensor<float>& image) {
  if (image.ndim() != 3) throw UsageError("standardize expects [C,H,W], got " + shape_str(image.shape()));
  const std::int64_t C = image.dim(0);
  const std::size_t plane = static_cast<std::size_t>(image.dim(1) * image.dim(2));
  for (std::int64_t c = 0; c < C; ++c) {
    float* p = image.ptr() + c * static_cast<std::int64_t>(plane);
    double mean = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mean += p[i];
    mean /= static_cast<double>(plane);
    double var = 0.0;
    for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
    var /= static_cast<double>(plane);
    const double inv = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
    for (std::size_t i = 0; i < plane; ++i) p[i] = static_cast<float>((p[i] - mean) * inv);
  }
}

void augment(Tensor<float>& image, Tensor<float>& mask, std::mt19937_64& rng) {
  apply_augment(image, mask, draw_augment(rng));
  standardize(image);
}

void make_batch(const Dataset& data, const std::vector<std::size_t>& order, std::size_t first,
                std::size_t count, Tensor<float>& images, Tensor<float>& masks, std::mt19937_64* rng) {
  if (count == 0 || first + count > order.size()) throw UsageError("make_batch: range out of bounds");
  const auto& ref = data.at(order[first]);
  const std::int64_t S = ref.image.dim(1);
  const std::int64_t N = static_cast<std::int64_t>(count);
  images = Tensor<float>({N, 3, S, S});
  masks = Tensor<float>({N, ref.mask.dim(0), S, S});
  const std::size_t isz = ref.image.numel(), msz = ref.mask.numel();
  for (std::size_t b = 0; b < count; ++b) {
    const auto& s = data.at(order[first + b]);
    if (s.image.numel() != isz || s.mask.numel() != msz) throw UsageError("make_batch: samples differ in size");
    auto img = s.image.clone();
    auto msk = s.mask.clone();
    if (rng != nullptr) {
      augment(img, msk, *rng);
    } else {
      standardize(img);
    }
    std::copy(img.data().begin(), img.data().end(), images.data().begin() + static_cast<std::ptrdiff_t>(b * isz));
    std::copy(msk.data().begin(), msk.data().end(), masks.data().begin() + static_cast<std::ptrdiff_t>(b * msz));
  }
}

}  // namespace muvit
