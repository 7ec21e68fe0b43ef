#pragma once

// Samples, PNM image/mask files, the synthetic blob dataset and the
// geometric augmentations applied during training.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "muvit/tensor.hpp"

namespace muvit {

struct Sample {
  Tensor<float> image;  // [3,S,S] in [0,1]
  Tensor<float> mask;   // [1,S,S] in {0,1}
  std::string id;
  std::optional<std::uint64_t> seed;
};

using Dataset = std::vector<Sample>;

// ---- PNM ---------------------------------------------------------------

/// Raw 8-bit raster as stored in a P5 (channels 1) or P6 (channels 3) file.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;  // interleaved, row-major
};

/// Parses binary P5/P6 with maxval 255. Throws ParseError with the byte
/// offset on bad magic, header, maxval or a truncated payload.
Raster parse_pnm(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_pnm(const Raster& r);

Raster read_pnm(const std::string& path);
void write_pnm(const std::string& path, const Raster& r);

/// [3,H,W] in [0,1]. Grayscale rasters are replicated to three channels.
Tensor<float> raster_to_image(const Raster& r);
/// [1,H,W]; pixels >= 128 become 1.
Tensor<float> raster_to_mask(const Raster& r);
/// Rounds to the nearest 8-bit level; exact inverse of raster_to_image on
/// 8-bit data.
Raster image_to_raster(const Tensor<float>& image);
Raster mask_to_raster(const Tensor<float>& mask);

/// Reads <dir>/images/<id>.ppm and <dir>/masks/<id>.pgm pairs in
/// lexicographic id order.
Dataset load_dataset_dir(const std::string& dir);
void save_dataset_dir(const std::string& dir, const Dataset& data);

// ---- synthetic data ----------------------------------------------------

struct SynthOptions {
  std::uint64_t seed = 0;
  int count = 1;
  int size = 64;
  double difficulty = 0.0;  // 0 = easy, 1 = hard
  int first_index = 0;
};

/// Low-contrast elliptical blobs with blurred edges, speckle and line
/// artifacts. Sample i depends only on (seed, i). Foreground fraction is
/// kept within [0.02, 0.5] by rejection.
Dataset synth_dataset(const SynthOptions& opts);
Sample synth_sample(std::uint64_t seed, int index, int size, double difficulty);

/// Foreground/background mean-intensity gap the generator targets.
double synth_intensity_gap(double difficulty);

// ---- augmentation ------------------------------------------------------

struct AugmentChoice {
  bool hflip = false;
  bool vflip = false;
  int rot90 = 0;  // counter-clockwise quarter turns, 0..3
};

AugmentChoice draw_augment(std::mt19937_64& rng);

/// Applies the same flips and rotation to image [C,S,S] and mask [1,S,S].
void apply_augment(Tensor<float>& image, Tensor<float>& mask, const AugmentChoice& choice);

/// Random flips and rotation followed by per-channel standardization.
void augment(Tensor<float>& image, Tensor<float>& mask, std::mt19937_64& rng);

/// Per-channel zero mean, unit variance over the spatial plane.
void standardize(Tensor<float>& image);

/// Stacks samples order[first .. first+count) into a batch. Images are
/// standardized; with `rng` each sample is augmented first.
void make_batch(const Dataset& data, const std::vector<std::size_t>& order, std::size_t first,
                std::size_t count, Tensor<float>& images, Tensor<float>& masks,
                std::mt19937_64* rng = nullptr);

}  // namespace muvit
