#pragma once

// Full encoder/decoder network: three ConvUtr stages, one LKLGL stage, a ViT
// bottleneck at 1/32 resolution, then five cascaded decoder blocks with
// optional skip adapters and a 1x1 segmentation head.

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "muvit/nn.hpp"

namespace muvit {

enum class Variant { base, large };
enum class SkipMode { none, skip1, skip2, skip3, horizontal };
enum class DownsampleMode { maxpool, conv };
enum class Mode { train, eval };

std::string to_string(Variant v);
std::string to_string(SkipMode m);
std::string to_string(DownsampleMode m);
Variant parse_variant(const std::string& s);
SkipMode parse_skip_mode(const std::string& s);
DownsampleMode parse_downsample_mode(const std::string& s);

struct ModelConfig {
  Variant variant = Variant::base;
  std::array<int, 5> channels{16, 16, 32, 64, 128};
  std::array<int, 5> depths{1, 1, 3, 3, 3};
  std::array<int, 3> kernels{3, 3, 7};
  int lklgl_kernel = 9;
  int pool_ratio = 2;
  int transconv_kernel = 2;
  int ffn_ratio = 4;
  int head_dim = 32;
  int num_classes = 1;
  int input_size = 256;
  SkipMode skip_mode = SkipMode::skip3;
  DownsampleMode downsample_mode = DownsampleMode::maxpool;
  bool literal_order = false;

  static ModelConfig make(Variant v, int input_size = 256);

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;

  int heads(int dim) const { return dim >= head_dim ? dim / head_dim : 1; }

  /// Output widths of the decoder blocks, coarsest first (S/16 ... S). The
  /// S/2 block keeps C3 rather than stepping down to C2.
  std::array<int, 5> decoder_channels() const {
    return {channels[4], channels[3], channels[2], channels[2], channels[0]};
  }

  /// Decoder block fed by encoder stage `stage` (0-based), or -1.
  int skip_target(int stage) const;

  /// Side length of the bottleneck token grid.
  int bottleneck_size() const { return input_size / 32; }
};

template <typename T>
struct NamedState {
  std::string name;
  Tensor<T> tensor;  // aliases the model's storage
  bool trainable;
};

/// Called after every named sub-layer during forward.
template <typename T>
using ForwardProbe = std::function<void(const std::string& layer, const Tensor<T>& out)>;

template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);
  ~Model();
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;

  const ModelConfig& config() const;

  void set_mode(Mode mode);
  Mode mode() const;

  /// images: [N,3,S,S] with S == input_size. Returns logits [N,classes,S,S].
  /// `stages`, when given, receives the five encoder stage outputs. In eval
  /// mode nothing is recorded on the active graph.
  Tensor<T> forward(const Tensor<T>& images, std::array<Tensor<T>, 5>* stages = nullptr,
                    const ForwardProbe<T>& probe = {});

  void visit_state(const nn::StateVisitor<T>& f);
  std::vector<NamedState<T>> state();
  std::vector<std::pair<std::string, Tensor<T>>> parameters();

  /// Copies values in. Every name must be present with a matching shape;
  /// the error names the first tensor that is missing or mismatched.
  void load_state(const std::vector<std::pair<std::string, Tensor<T>>>& tensors);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace muvit
