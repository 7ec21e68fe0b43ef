#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "muvit/data.hpp"

namespace muvit {

namespace fs = std::filesystem;

namespace {

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

class HeaderReader {
 public:
  explicit HeaderReader(const std::vector<std::uint8_t>& b) : b_(b) {}

  void skip_separators() {
    const std::size_t start = pos_;
    while (pos_ < b_.size()) {
      if (is_space(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
    if (pos_ == start) throw ParseError("expected whitespace in PNM header", static_cast<long long>(pos_));
  }

  long long number(const char* what) {
    const std::size_t start = pos_;
    long long v = 0;
    while (pos_ < b_.size() && b_[pos_] >= '0' && b_[pos_] <= '9') {
      v = v * 10 + (b_[pos_] - '0');
      if (v > 1'000'000'000) throw ParseError(std::string("PNM ") + what + " too large", static_cast<long long>(start));
      ++pos_;
    }
    if (pos_ == start) throw ParseError(std::string("expected PNM ") + what, static_cast<long long>(start));
    return v;
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

Raster parse_pnm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw ParseError("bad PNM magic (expected P5 or P6)", 0);
  }
  Raster r;
  r.channels = bytes[1] == '5' ? 1 : 3;
  HeaderReader h(bytes);
  h.advance(2);
  h.skip_separators();
  const auto width = h.number("width");
  h.skip_separators();
  const auto height = h.number("height");
  h.skip_separators();
  const std::size_t maxval_at = h.pos();
  const auto maxval = h.number("maxval");
  if (maxval != 255) {
    throw ParseError("unsupported PNM maxval " + std::to_string(maxval) + " (only 255)",
                     static_cast<long long>(maxval_at));
  }
  if (h.pos() >= bytes.size() || !is_space(bytes[h.pos()])) {
    throw ParseError("expected one whitespace byte after maxval", static_cast<long long>(h.pos()));
  }
  h.advance(1);
  if (width <= 0 || height <= 0) throw ParseError("PNM dimensions must be positive", 2);
  r.width = static_cast<int>(width);
  r.height = static_cast<int>(height);
  const std::size_t need = static_cast<std::size_t>(width * height * r.channels);
  const std::size_t have = bytes.size() - h.pos();
  if (have < need) {
    throw ParseError("truncated PNM payload: expected " + std::to_string(need) + " bytes, found " +
                         std::to_string(have),
                     static_cast<long long>(bytes.size()));
  }
  r.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.pos()),
                  bytes.begin() + static_cast<std::ptrdiff_t>(h.pos() + need));
  return r;
}

std::vector<std::uint8_t> encode_pnm(const Raster& r) {
  if (r.channels != 1 && r.channels != 3) throw UsageError("PNM raster must have 1 or 3 channels");
  if (r.pixels.size() != static_cast<std::size_t>(r.width) * r.height * r.channels) {
    throw UsageError("PNM raster size does not match its dimensions");
  }
  const std::string header = std::string(r.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(r.width) + " " +
                             std::to_string(r.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), r.pixels.begin(), r.pixels.end());
  return out;
}

Raster read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_pnm(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void write_pnm(const std::string& path, const Raster& r) {
  const auto bytes = encode_pnm(r);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

Tensor<float> raster_to_image(const Raster& r) {
  const std::int64_t H = r.height, W = r.width;
  Tensor<float> img({3, H, W});
  for (std::int64_t c = 0; c < 3; ++c) {
    const std::int64_t src = r.channels == 1 ? 0 : c;
    for (std::int64_t i = 0; i < H * W; ++i) {
      img[static_cast<std::size_t>(c * H * W + i)] = static_cast<float>(r.pixels[static_cast<std::size_t>(i * r.channels + src)]) / 255.0f;
    }
  }
  return img;
}

Tensor<float> raster_to_mask(const Raster& r) {
  const std::int64_t H = r.height, W = r.width;
  Tensor<float> mask({1, H, W});
  for (std::int64_t i = 0; i < H * W; ++i) {
    mask[static_cast<std::size_t>(i)] = r.pixels[static_cast<std::size_t>(i * r.channels)] >= 128 ? 1.0f : 0.0f;
  }
  return mask;
}

namespace {

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

Raster image_to_raster(const Tensor<float>& image) {
  if (image.ndim() != 3 || image.dim(0) != 3) throw UsageError("expected image [3,H,W], got " + shape_str(image.shape()));
  Raster r;
  r.channels = 3;
  r.height = static_cast<int>(image.dim(1));
  r.width = static_cast<int>(image.dim(2));
  const std::size_t plane = static_cast<std::size_t>(r.height) * r.width;
  r.pixels.resize(plane * 3);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) r.pixels[i * 3 + c] = to_byte(image[c * plane + i]);
  }
  return r;
}

Raster mask_to_raster(const Tensor<float>& mask) {
  if (mask.ndim() != 3 || mask.dim(0) != 1) throw UsageError("expected mask [1,H,W], got " + shape_str(mask.shape()));
  Raster r;
  r.channels = 1;
  r.height = static_cast<int>(mask.dim(1));
  r.width = static_cast<int>(mask.dim(2));
  r.pixels.resize(mask.numel());
  for (std::size_t i = 0; i < mask.numel(); ++i) r.pixels[i] = mask[i] >= 0.5f ? 255 : 0;
  return r;
}

Dataset load_dataset_dir(const std::string& dir) {
  const fs::path root(dir);
  const fs::path images = root / "images";
  const fs::path masks = root / "masks";
  if (!fs::is_directory(images) || !fs::is_directory(masks)) {
    throw IoError(dir + " must contain images/ and masks/ directories");
  }
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(images)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw IoError("no .ppm images under " + images.string());
  Dataset data;
  for (const auto& id : ids) {
    const auto mask_path = masks / (id + ".pgm");
    if (!fs::exists(mask_path)) throw IoError("missing mask " + mask_path.string());
    Sample s;
    s.id = id;
    const auto img = read_pnm((images / (id + ".ppm")).string());
    const auto msk = read_pnm(mask_path.string());
    if (img.width != msk.width || img.height != msk.height) {
      throw ParseError(id + ": image and mask sizes differ");
    }
    if (img.width != img.height || img.width % 32 != 0) {
      throw ConfigError(id + ": images must be square with a side divisible by 32");
    }
    s.image = raster_to_image(img);
    s.mask = raster_to_mask(msk);
    data.push_back(std::move(s));
  }
  return data;
}

void save_dataset_dir(const std::string& dir, const Dataset& data) {
  const fs::path root(dir);
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  for (const auto& s : data) {
    write_pnm((root / "images" / (s.id + ".ppm")).string(), image_to_raster(s.image));
    write_pnm((root / "masks" / (s.id + ".pgm")).string(), mask_to_raster(s.mask));
  }
}

}  // namespace muvit
