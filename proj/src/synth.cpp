#include <algorithm>
#include <cmath>
#include <numbers>

#include "muvit/data.hpp"

namespace muvit {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  // 53 random bits, independent of the standard library's distributions.
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

double gaussian(std::mt19937_64& rng) {
  const double u1 = uniform(rng, 0x1.0p-53, 1.0);
  const double u2 = uniform(rng, 0.0, 1.0);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

struct Ellipse {
  double cx, cy, a, b, theta;
  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = (c * dx + s * dy) / a;
    const double v = (-s * dx + c * dy) / b;
    return u * u + v * v <= 1.0;
  }
};

std::vector<double> blur(const std::vector<double>& src, int size, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    norm += kernel[i + radius];
  }
  for (auto& k : kernel) k /= norm;
  auto at = [size](int v) { return std::clamp(v, 0, size - 1); };
  std::vector<double> tmp(src.size()), out(src.size());
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * src[y * size + at(x + i)];
      tmp[y * size + x] = acc;
    }
  }
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * tmp[at(y + i) * size + x];
      out[y * size + x] = acc;
    }
  }
  return out;
}

}  // namespace

double synth_intensity_gap(double difficulty) {
  const double d = std::clamp(difficulty, 0.0, 1.0);
  return 0.55 - 0.45 * d;
}

Sample synth_sample(std::uint64_t seed, int index, int size, double difficulty) {
  if (size < 32 || size % 32 != 0) throw ConfigError("synthetic size must be a positive multiple of 32");
  if (index < 0) throw ConfigError("sample index must be non-negative");
  const double d = std::clamp(difficulty, 0.0, 1.0);
  std::mt19937_64 rng(splitmix(splitmix(seed) ^ static_cast<std::uint64_t>(index)));
  const int S = size;
  const std::size_t plane = static_cast<std::size_t>(S) * S;

  std::vector<double> mask(plane);
  for (int attempt = 0;; ++attempt) {
    if (attempt > 10000) throw NumericError("synthetic generator failed to meet the foreground bounds");
    const int blobs = 1 + static_cast<int>(rng() % 3);
    std::vector<Ellipse> shapes;
    for (int k = 0; k < blobs; ++k) {
      Ellipse e;
      e.a = uniform(rng, 0.08, 0.25) * S;
      e.b = uniform(rng, 0.08, 0.25) * S;
      e.cx = uniform(rng, 0.15, 0.85) * S;
      e.cy = uniform(rng, 0.15, 0.85) * S;
      e.theta = uniform(rng, 0.0, std::numbers::pi);
      shapes.push_back(e);
    }
    std::size_t fg = 0;
    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        bool in = false;
        for (const auto& e : shapes) in = in || e.contains(x + 0.5, y + 0.5);
        mask[y * S + x] = in ? 1.0 : 0.0;
        fg += in;
      }
    }
    const double frac = static_cast<double>(fg) / static_cast<double>(plane);
    if (frac >= 0.02 && frac <= 0.5) break;
  }

  const double background = uniform(rng, 0.2, 0.3);
  const double gap = synth_intensity_gap(d);
  const auto soft = blur(mask, S, 0.8 + 1.2 * d);
  const double speckle = 0.04 + 0.16 * d;
  std::vector<double> intensity(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    intensity[i] = (background + gap * soft[i]) * (1.0 + speckle * gaussian(rng));
  }
  // Line artifacts crossing the field.
  const int lines = 1 + static_cast<int>(rng() % 2);
  for (int l = 0; l < lines; ++l) {
    const double amp = 0.06 + 0.1 * d;
    const bool horizontal = (rng() & 1) != 0;
    const int at = static_cast<int>(rng() % static_cast<std::uint64_t>(S));
    for (int t = 0; t < S; ++t) {
      const std::size_t i = horizontal ? static_cast<std::size_t>(at) * S + t : static_cast<std::size_t>(t) * S + at;
      intensity[i] += amp;
    }
  }

  Sample s;
  s.id = "synth_" + std::to_string(seed) + "_" + std::to_string(index);
  s.seed = seed;
  s.image = Tensor<float>({3, S, S});
  s.mask = Tensor<float>({1, S, S});
  static constexpr double tint[3] = {1.0, 0.97, 0.94};
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(intensity[i] * tint[c], 0.0, 1.0);
      s.image[c * plane + i] = static_cast<float>(std::round(v * 255.0)) / 255.0f;
    }
    s.mask[i] = static_cast<float>(mask[i]);
  }
  return s;
}

Dataset synth_dataset(const SynthOptions& opts) {
  if (opts.count < 0) throw ConfigError("sample count must be non-negative");
  Dataset out;
  out.reserve(static_cast<std::size_t>(opts.count));
  for (int i = 0; i < opts.count; ++i) {
    out.push_back(synth_sample(opts.seed, opts.first_index + i, opts.size, opts.difficulty));
  }
  return out;
}

}  // namespace muvit
