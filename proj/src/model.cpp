#include "muvit/model.hpp"

#include <map>
#include <optional>

namespace muvit {

std::string to_string(Variant v) { return v == Variant::base ? "base" : "large"; }

std::string to_string(SkipMode m) {
  switch (m) {
    case SkipMode::none: return "none";
    case SkipMode::skip1: return "skip1";
    case SkipMode::skip2: return "skip2";
    case SkipMode::skip3: return "skip3";
    case SkipMode::horizontal: return "horizontal";
  }
  return "?";
}

std::string to_string(DownsampleMode m) { return m == DownsampleMode::maxpool ? "maxpool" : "conv"; }

Variant parse_variant(const std::string& s) {
  if (s == "base") return Variant::base;
  if (s == "large") return Variant::large;
  throw ConfigError("unknown variant '" + s + "' (expected base or large)");
}

SkipMode parse_skip_mode(const std::string& s) {
  for (auto m : {SkipMode::none, SkipMode::skip1, SkipMode::skip2, SkipMode::skip3,
                 SkipMode::horizontal}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown skip mode '" + s + "' (expected none, skip1, skip2, skip3 or horizontal)");
}

DownsampleMode parse_downsample_mode(const std::string& s) {
  if (s == "maxpool") return DownsampleMode::maxpool;
  if (s == "conv") return DownsampleMode::conv;
  throw ConfigError("unknown downsample mode '" + s + "' (expected maxpool or conv)");
}

ModelConfig ModelConfig::make(Variant v, int input_size) {
  ModelConfig cfg;
  cfg.variant = v;
  cfg.input_size = input_size;
  if (v == Variant::large) {
    cfg.channels = {32, 32, 64, 128, 256};
    cfg.depths = {1, 1, 3, 3, 4};
  }
  return cfg;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  for (int i = 0; i < 5; ++i) {
    if (channels[i] < 1) fail("channels[" + std::to_string(i) + "] must be positive");
    if (depths[i] < 0) fail("depths[" + std::to_string(i) + "] must be non-negative");
  }
  for (int k : kernels) {
    if (k < 1 || k % 2 == 0) fail("ConvUtr kernels must be odd and positive, got " + std::to_string(k));
  }
  if (lklgl_kernel < 1 || lklgl_kernel % 2 == 0) fail("lklgl_kernel must be odd and positive");
  if (pool_ratio < 1) fail("pool_ratio must be >= 1");
  if (transconv_kernel != pool_ratio) {
    fail("transconv_kernel (" + std::to_string(transconv_kernel) + ") must equal pool_ratio (" +
         std::to_string(pool_ratio) + ") to restore the pooled grid");
  }
  if (ffn_ratio < 1) fail("ffn_ratio must be >= 1");
  if (head_dim < 1) fail("head_dim must be >= 1");
  if (num_classes < 1) fail("num_classes must be >= 1");
  if (input_size < 32 || input_size % 32 != 0) {
    fail("input_size must be a positive multiple of 32, got " + std::to_string(input_size));
  }
  if ((input_size / 16) % pool_ratio != 0) {
    fail("stage-4 grid " + std::to_string(input_size / 16) + " is not divisible by pool_ratio " +
         std::to_string(pool_ratio));
  }
  for (int s : {3, 4}) {
    if (channels[s] % heads(channels[s]) != 0) {
      fail("channels[" + std::to_string(s) + "]=" + std::to_string(channels[s]) +
           " not divisible by head count " + std::to_string(heads(channels[s])));
    }
  }
}

int ModelConfig::skip_target(int stage) const {
  int used = 0;
  switch (skip_mode) {
    case SkipMode::none: used = 0; break;
    case SkipMode::skip1: used = 1; break;
    case SkipMode::skip2: used = 2; break;
    case SkipMode::skip3:
    case SkipMode::horizontal: used = 3; break;
  }
  if (stage < 0 || stage >= used) return -1;
  // Stage s produces S/2^(s+1). Pooled once more it meets the decoder block
  // that outputs S/2^(s+2); horizontal skips meet the block at S/2^(s+1).
  return skip_mode == SkipMode::horizontal ? 3 - stage : 2 - stage;
}

template <typename T>
struct Model<T>::Impl {
  ModelConfig cfg;
  Mode mode = Mode::train;

  std::array<nn::Conv2d<T>, 5> proj;
  std::array<nn::Conv2d<T>, 5> down;
  std::array<std::vector<nn::ConvUtrBlock<T>>, 3> utr;
  std::vector<nn::LklglBlock<T>> lklgl;
  std::vector<nn::VitBlock<T>> vit;
  Tensor<T> pos_embed;
  std::array<std::optional<nn::SkipAdapter<T>>, 5> skips;  // by decoder block
  std::array<int, 5> skip_source{-1, -1, -1, -1, -1};
  std::array<nn::DecoderBlock<T>, 5> dec;
  nn::Conv2d<T> head;

  bool conv_down() const { return cfg.downsample_mode == DownsampleMode::conv; }

  static std::string stage_name(int s) { return "encoder.stage" + std::to_string(s + 1); }

  Impl(const ModelConfig& c, std::uint64_t seed) : cfg(c) {
    cfg.validate();
    nn::Rng rng(seed);
    const auto& C = cfg.channels;

    for (int s = 0; s < 3; ++s) {
      if (s == 0) {
        proj[s] = nn::Conv2d<T>(3, C[0], 3, 1, 1, 1, rng);
      } else {
        proj[s] = nn::Conv2d<T>(C[s - 1], C[s], 1, 1, 0, 1, rng);
      }
      for (int i = 0; i < cfg.depths[s]; ++i) utr[s].emplace_back(C[s], cfg.kernels[s], rng);
      if (conv_down()) down[s] = nn::Conv2d<T>(C[s], C[s], 2, 2, 0, 1, rng);
    }

    for (int s = 3; s < 5; ++s) {
      if (conv_down()) {
        down[s] = nn::Conv2d<T>(C[s - 1], C[s], 2, 2, 0, 1, rng);
      } else {
        proj[s] = nn::Conv2d<T>(C[s - 1], C[s], 1, 1, 0, 1, rng);
      }
      if (s == 3) {
        nn::LklglOptions o;
        o.kernel = cfg.lklgl_kernel;
        o.pool_ratio = cfg.pool_ratio;
        o.ffn_ratio = cfg.ffn_ratio;
        o.heads = cfg.heads(C[3]);
        o.literal_order = cfg.literal_order;
        for (int i = 0; i < cfg.depths[3]; ++i) lklgl.emplace_back(C[3], o, rng);
      } else {
        const std::int64_t g = cfg.bottleneck_size();
        pos_embed = Tensor<T>({1, g * g, C[4]});
        pos_embed.set_requires_grad(true);
        for (int i = 0; i < cfg.depths[4]; ++i) vit.emplace_back(C[4], cfg.heads(C[4]), cfg.ffn_ratio, rng);
      }
    }

    const auto D = cfg.decoder_channels();
    for (int s = 0; s < 3; ++s) {
      const int j = cfg.skip_target(s);
      if (j >= 0) skip_source[j] = s;
    }
    for (int j = 0; j < 5; ++j) {
      const int in = j == 0 ? C[4] : D[j - 1];
      const int s = skip_source[j];
      if (s >= 0) {
        skips[j].emplace(C[s], D[j], cfg.skip_mode != SkipMode::horizontal, rng);
      }
      dec[j] = nn::DecoderBlock<T>(in, s >= 0 ? D[j] : 0, D[j], rng);
    }
    head = nn::Conv2d<T>(D[4], cfg.num_classes, 1, 1, 0, 1, rng);
  }

  void visit(const nn::StateVisitor<T>& f) {
    for (int s = 0; s < 5; ++s) {
      const auto base = stage_name(s);
      const bool has_proj = s < 3 || !conv_down();
      if (has_proj) proj[s].visit(base + ".proj", f);
      if (s < 3) {
        for (std::size_t i = 0; i < utr[s].size(); ++i) utr[s][i].visit(base + ".blocks." + std::to_string(i), f);
        if (conv_down()) down[s].visit(base + ".down", f);
      } else {
        if (conv_down()) down[s].visit(base + ".down", f);
        if (s == 3) {
          for (std::size_t i = 0; i < lklgl.size(); ++i) lklgl[i].visit(base + ".blocks." + std::to_string(i), f);
        } else {
          f(base + ".pos_embed", pos_embed, true);
          for (std::size_t i = 0; i < vit.size(); ++i) vit[i].visit(base + ".blocks." + std::to_string(i), f);
        }
      }
    }
    for (int j = 0; j < 5; ++j) {
      if (skips[j]) skips[j]->visit("decoder.skip" + std::to_string(skip_source[j] + 1), f);
      dec[j].visit("decoder.blocks." + std::to_string(j), f);
    }
    head.visit("head", f);
  }

  Tensor<T> forward(const Tensor<T>& images, std::array<Tensor<T>, 5>* stages,
                    const ForwardProbe<T>& probe) {
    const std::int64_t S = cfg.input_size;
    if (images.ndim() != 4 || images.dim(0) < 1 || images.dim(1) != 3 || images.dim(2) != S ||
        images.dim(3) != S) {
      throw UsageError("model expects images [N,3," + std::to_string(S) + "," + std::to_string(S) +
                       "], got " + shape_str(images.shape()));
    }
    std::optional<NoGradScope<T>> no_grad;
    if (mode == Mode::eval) no_grad.emplace();
    const bool training = mode == Mode::train;
    auto emit = [&](const std::string& name, const Tensor<T>& t) {
      if (probe) probe(name, t);
    };

    std::array<Tensor<T>, 5> e;
    Tensor<T> h = images;
    for (int s = 0; s < 3; ++s) {
      const auto base = stage_name(s);
      h = proj[s](h);
      emit(base + ".proj", h);
      for (std::size_t i = 0; i < utr[s].size(); ++i) {
        h = utr[s][i](h, training);
        emit(base + ".blocks." + std::to_string(i), h);
      }
      if (conv_down()) {
        h = down[s](h);
        emit(base + ".down", h);
      } else {
        h = pool2d(h, PoolKind::max, 2, 2);
      }
      e[s] = h;
    }
    for (int s = 3; s < 5; ++s) {
      const auto base = stage_name(s);
      if (conv_down()) {
        h = down[s](h);
        emit(base + ".down", h);
      } else {
        h = proj[s](pool2d(h, PoolKind::max, 2, 2));
        emit(base + ".proj", h);
      }
      if (s == 3) {
        for (std::size_t i = 0; i < lklgl.size(); ++i) {
          h = lklgl[i](h);
          emit(base + ".blocks." + std::to_string(i), h);
        }
      } else {
        const std::int64_t g = h.dim(2);
        auto tok = add(to_tokens(h), pos_embed);
        emit(base + ".pos_embed", tok);
        for (std::size_t i = 0; i < vit.size(); ++i) {
          tok = vit[i](tok);
          emit(base + ".blocks." + std::to_string(i), tok);
        }
        h = from_tokens(tok, g, g);
      }
      e[s] = h;
    }

    Tensor<T> d = e[4];
    for (int j = 0; j < 5; ++j) {
      Tensor<T> skip;
      if (skips[j]) {
        skip = (*skips[j])(e[skip_source[j]], training);
        emit("decoder.skip" + std::to_string(skip_source[j] + 1), skip);
      }
      d = dec[j](d, skip.defined() ? &skip : nullptr, training);
      emit("decoder.blocks." + std::to_string(j), d);
    }
    auto logits = head(d);
    emit("head", logits);
    if (stages != nullptr) *stages = e;
    return logits;
  }
};

template <typename T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t seed) : impl_(std::make_unique<Impl>(cfg, seed)) {}

template <typename T>
Model<T>::~Model() = default;
template <typename T>
Model<T>::Model(Model&&) noexcept = default;
template <typename T>
Model<T>& Model<T>::operator=(Model&&) noexcept = default;

template <typename T>
const ModelConfig& Model<T>::config() const {
  return impl_->cfg;
}

template <typename T>
void Model<T>::set_mode(Mode mode) {
  impl_->mode = mode;
}

template <typename T>
Mode Model<T>::mode() const {
  return impl_->mode;
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& images, std::array<Tensor<T>, 5>* stages,
                            const ForwardProbe<T>& probe) {
  return impl_->forward(images, stages, probe);
}

template <typename T>
void Model<T>::visit_state(const nn::StateVisitor<T>& f) {
  impl_->visit(f);
}

template <typename T>
std::vector<NamedState<T>> Model<T>::state() {
  std::vector<NamedState<T>> out;
  impl_->visit([&](const std::string& name, Tensor<T>& t, bool trainable) {
    out.push_back({name, t, trainable});
  });
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> Model<T>::parameters() {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  impl_->visit([&](const std::string& name, Tensor<T>& t, bool trainable) {
    if (trainable) out.emplace_back(name, t);
  });
  return out;
}

template <typename T>
void Model<T>::load_state(const std::vector<std::pair<std::string, Tensor<T>>>& tensors) {
  std::map<std::string, const Tensor<T>*> given;
  for (const auto& [name, t] : tensors) {
    if (!given.emplace(name, &t).second) throw ConfigError("duplicate tensor '" + name + "'");
  }
  auto own = state();
  std::map<std::string, bool> known;
  for (const auto& s : own) {
    known[s.name] = true;
    auto it = given.find(s.name);
    if (it == given.end()) throw ConfigError("tensor '" + s.name + "' is missing");
    if (it->second->shape() != s.tensor.shape()) {
      throw ConfigError("tensor '" + s.name + "' has shape " + shape_str(it->second->shape()) +
                        ", model expects " + shape_str(s.tensor.shape()));
    }
  }
  for (const auto& [name, t] : tensors) {
    if (!known.count(name)) throw ConfigError("tensor '" + name + "' does not exist in this model");
  }
  for (auto& s : own) {
    const auto& src = *given.at(s.name);
    std::copy(src.data().begin(), src.data().end(), s.tensor.data().begin());
  }
}

template class Model<float>;
template class Model<double>;

}  // namespace muvit
