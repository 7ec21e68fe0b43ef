#include "muvit/accounting.hpp"

#include <map>

namespace muvit {

std::string to_string(CostKind k) {
  switch (k) {
    case CostKind::conv: return "conv";
    case CostKind::conv_transpose: return "conv_transpose";
    case CostKind::linear: return "linear";
    case CostKind::attention_scores: return "attention_scores";
    case CostKind::attention_values: return "attention_values";
    case CostKind::elementwise: return "elementwise";
    case CostKind::parameter: return "parameter";
  }
  return "?";
}

std::int64_t CostReport::macs_of(CostKind k) const {
  std::int64_t total = 0;
  for (const auto& r : rows) {
    if (r.kind == k) total += r.macs;
  }
  return total;
}

std::int64_t CostReport::params_under(const std::string& prefix) const {
  std::int64_t total = 0;
  for (const auto& r : rows) {
    if (r.layer == prefix || r.layer.rfind(prefix + ".", 0) == 0) total += r.params;
  }
  return total;
}

std::int64_t conv_macs(std::int64_t h, std::int64_t w, std::int64_t d_in, std::int64_t d_out, std::int64_t k) {
  return h * w * d_in * d_out * k * k;
}

std::int64_t convutr_macs(std::int64_t h, std::int64_t w, std::int64_t d, std::int64_t k) {
  return h * w * d * (k * k + 2 * d);
}

std::int64_t attention_quadratic_macs(std::int64_t tokens, std::int64_t d) { return 2 * tokens * tokens * d; }

std::int64_t attention_macs(std::int64_t tokens, std::int64_t d) {
  return attention_quadratic_macs(tokens, d) + 4 * tokens * d * d;
}

double attention_cost_ratio(std::int64_t tokens, int p) {
  if (p < 1) throw ConfigError("pool ratio must be >= 1");
  const std::int64_t p2 = static_cast<std::int64_t>(p) * p;
  if (tokens < 1 || tokens % p2 != 0) {
    throw ConfigError(std::to_string(tokens) + " tokens are not divisible by p^2 = " + std::to_string(p2));
  }
  const double pooled = static_cast<double>(tokens / p2);
  const double full = static_cast<double>(tokens);
  return (pooled * pooled) / (full * full);
}

namespace {

class Walker {
 public:
  explicit Walker(std::int64_t batch) : n_(batch) {}

  CostReport finish(std::int64_t input_size) {
    report_.batch = n_;
    report_.input_size = input_size;
    for (const auto& r : report_.rows) {
      report_.total_params += r.params;
      report_.total_macs += r.macs;
    }
    return std::move(report_);
  }

  // Returns the output side length.
  std::int64_t conv(const std::string& name, std::int64_t side, std::int64_t di, std::int64_t dj,
                    std::int64_t k, std::int64_t stride = 1, std::int64_t pad = 0, std::int64_t groups = 1) {
    const std::int64_t out = (side + 2 * pad - k) / stride + 1;
    CostRow r{name, CostKind::conv};
    r.params = dj * (di / groups) * k * k + dj;
    r.macs = n_ * out * out * dj * (di / groups) * k * k;
    r.h = r.w = out;
    r.d_in = di;
    r.d_out = dj;
    r.k = k;
    report_.rows.push_back(r);
    return out;
  }

  void conv_transpose(const std::string& name, std::int64_t side, std::int64_t di, std::int64_t dj, std::int64_t k) {
    CostRow r{name, CostKind::conv_transpose};
    r.params = di * dj * k * k + dj;
    r.macs = n_ * side * side * di * dj * k * k;
    r.h = r.w = side;
    r.d_in = di;
    r.d_out = dj;
    r.k = k;
    report_.rows.push_back(r);
  }

  void linear(const std::string& name, std::int64_t tokens, std::int64_t di, std::int64_t dj) {
    CostRow r{name, CostKind::linear};
    r.params = di * dj + dj;
    r.macs = n_ * tokens * di * dj;
    r.tokens = tokens;
    r.d_in = di;
    r.d_out = dj;
    report_.rows.push_back(r);
  }

  void batchnorm(const std::string& name, std::int64_t side, std::int64_t d) {
    CostRow r{name, CostKind::elementwise};
    r.params = 2 * d;
    r.macs = n_ * side * side * d;
    r.h = r.w = side;
    r.d_in = r.d_out = d;
    report_.rows.push_back(r);
  }

  void layernorm(const std::string& name, std::int64_t tokens, std::int64_t d) {
    CostRow r{name, CostKind::elementwise};
    r.params = 2 * d;
    r.macs = n_ * tokens * d;
    r.tokens = tokens;
    r.d_in = r.d_out = d;
    report_.rows.push_back(r);
  }

  // Parameter-free elementwise work over `side` x `side` x `d` produced values.
  void elementwise(const std::string& name, std::int64_t side, std::int64_t d) {
    CostRow r{name, CostKind::elementwise};
    r.macs = n_ * side * side * d;
    r.h = r.w = side;
    r.d_in = r.d_out = d;
    report_.rows.push_back(r);
  }

  void tokenwise(const std::string& name, std::int64_t tokens, std::int64_t d) {
    CostRow r{name, CostKind::elementwise};
    r.macs = n_ * tokens * d;
    r.tokens = tokens;
    r.d_in = r.d_out = d;
    report_.rows.push_back(r);
  }

  void parameter(const std::string& name, std::int64_t count) {
    CostRow r{name, CostKind::parameter};
    r.params = count;
    report_.rows.push_back(r);
  }

  void attention(const std::string& name, std::int64_t tokens, std::int64_t d, std::int64_t heads) {
    linear(name + ".q", tokens, d, d);
    linear(name + ".k", tokens, d, d);
    linear(name + ".v", tokens, d, d);
    CostRow s{name + ".scores", CostKind::attention_scores};
    s.macs = n_ * tokens * tokens * d;
    s.tokens = tokens;
    s.d_in = s.d_out = d;
    report_.rows.push_back(s);
    tokenwise(name + ".softmax", tokens, heads * tokens);
    CostRow v{name + ".values", CostKind::attention_values};
    v.macs = n_ * tokens * tokens * d;
    v.tokens = tokens;
    v.d_in = v.d_out = d;
    report_.rows.push_back(v);
    linear(name + ".proj", tokens, d, d);
  }

  void mlp(const std::string& name, std::int64_t tokens, std::int64_t d, std::int64_t ratio) {
    linear(name + ".fc1", tokens, d, d * ratio);
    tokenwise(name + ".gelu", tokens, d * ratio);
    linear(name + ".fc2", tokens, d * ratio, d);
  }

 private:
  std::int64_t n_;
  CostReport report_;
};

}  // namespace

CostReport count_flops(const ModelConfig& cfg, std::int64_t batch) {
  cfg.validate();
  if (batch < 1) throw ConfigError("batch must be >= 1");
  Walker w(batch);
  const auto& C = cfg.channels;
  const bool conv_down = cfg.downsample_mode == DownsampleMode::conv;
  std::int64_t side = cfg.input_size;
  std::array<std::int64_t, 5> stage_side{};

  for (int s = 0; s < 3; ++s) {
    const std::string base = "encoder.stage" + std::to_string(s + 1);
    if (s == 0) {
      w.conv(base + ".proj", side, 3, C[0], 3, 1, 1);
    } else {
      w.conv(base + ".proj", side, C[s - 1], C[s], 1);
    }
    const std::int64_t d = C[s], k = cfg.kernels[s];
    for (int i = 0; i < cfg.depths[s]; ++i) {
      const std::string b = base + ".blocks." + std::to_string(i);
      w.conv(b + ".dw", side, d, d, k, 1, k / 2, d);
      w.elementwise(b + ".gelu1", side, d);
      w.batchnorm(b + ".bn1", side, d);
      w.conv(b + ".pw1", side, d, d, 1);
      w.elementwise(b + ".gelu2", side, d);
      w.batchnorm(b + ".bn2", side, d);
      w.conv(b + ".pw2", side, d, d, 1);
      w.elementwise(b + ".gelu3", side, d);
      w.batchnorm(b + ".bn3", side, d);
    }
    if (conv_down) {
      side = w.conv(base + ".down", side, d, d, 2, 2);
    } else {
      side /= 2;
      w.elementwise(base + ".pool", side, d);
    }
    stage_side[s] = side;
  }

  for (int s = 3; s < 5; ++s) {
    const std::string base = "encoder.stage" + std::to_string(s + 1);
    if (conv_down) {
      side = w.conv(base + ".down", side, C[s - 1], C[s], 2, 2);
    } else {
      side /= 2;
      w.elementwise(base + ".pool", side, C[s - 1]);
      w.conv(base + ".proj", side, C[s - 1], C[s], 1);
    }
    const std::int64_t d = C[s];
    const std::int64_t T = side * side;
    const std::int64_t heads = cfg.heads(C[s]);
    if (s == 3) {
      const std::int64_t p = cfg.pool_ratio;
      const std::int64_t k = cfg.lklgl_kernel;
      for (int i = 0; i < cfg.depths[3]; ++i) {
        const std::string b = base + ".blocks." + std::to_string(i);
        w.layernorm(b + ".norm1", T, d);
        w.conv(b + ".dw", side, d, d, k, 1, k / 2, d);
        w.conv(b + ".pw", side, d, d, 1);
        w.layernorm(b + ".norm2", T, d);
        w.mlp(b + ".ffn1", T, d, cfg.ffn_ratio);
        w.layernorm(b + ".norm3", T, d);
        if (cfg.literal_order) {
          w.attention(b + ".attn", T, d, heads);
          w.elementwise(b + ".pool", side / p, d);
        } else {
          w.elementwise(b + ".pool", side / p, d);
          w.attention(b + ".attn", T / (p * p), d, heads);
        }
        w.conv_transpose(b + ".up", side / p, d, d, p);
        w.layernorm(b + ".norm4", T, d);
        w.mlp(b + ".ffn2", T, d, cfg.ffn_ratio);
      }
    } else {
      w.parameter(base + ".pos_embed", T * d);
      for (int i = 0; i < cfg.depths[4]; ++i) {
        const std::string b = base + ".blocks." + std::to_string(i);
        w.layernorm(b + ".norm1", T, d);
        w.attention(b + ".attn", T, d, heads);
        w.layernorm(b + ".norm2", T, d);
        w.mlp(b + ".ffn", T, d, cfg.ffn_ratio);
      }
    }
    stage_side[s] = side;
  }

  const auto D = cfg.decoder_channels();
  std::int64_t in = C[4];
  for (int j = 0; j < 5; ++j) {
    int source = -1;
    for (int s = 0; s < 3; ++s) {
      if (cfg.skip_target(s) == j) source = s;
    }
    std::int64_t skip = 0;
    if (source >= 0) {
      const std::string a = "decoder.skip" + std::to_string(source + 1);
      std::int64_t r = stage_side[source];
      if (cfg.skip_mode != SkipMode::horizontal) {
        r /= 2;
        w.elementwise(a + ".pool", r, C[source]);
      }
      w.conv(a + ".conv1", r, C[source], D[j], 3, 1, 1);
      w.elementwise(a + ".relu1", r, D[j]);
      w.batchnorm(a + ".bn1", r, D[j]);
      w.conv(a + ".conv2", r, D[j], D[j], 3, 1, 1);
      w.elementwise(a + ".relu2", r, D[j]);
      w.batchnorm(a + ".bn2", r, D[j]);
      skip = D[j];
    }
    const std::string b = "decoder.blocks." + std::to_string(j);
    side *= 2;
    w.elementwise(b + ".upsample", side, in);
    w.conv(b + ".conv", side, in + skip, D[j], 3, 1, 1);
    w.batchnorm(b + ".bn", side, D[j]);
    w.elementwise(b + ".relu", side, D[j]);
    in = D[j];
  }
  w.conv("head", side, in, cfg.num_classes, 1);
  return w.finish(cfg.input_size);
}

namespace {

std::string layer_of(const std::string& tensor_name) {
  const auto dot = tensor_name.rfind('.');
  if (dot == std::string::npos) return tensor_name;
  const auto leaf = tensor_name.substr(dot + 1);
  if (leaf == "weight" || leaf == "bias" || leaf == "running_mean" || leaf == "running_var") {
    return tensor_name.substr(0, dot);
  }
  return tensor_name;
}

}  // namespace

template <typename T>
CostReport count_params(Model<T>& model) {
  const CostReport analytic = count_flops(model.config());
  std::map<std::string, std::int64_t> expected;
  for (const auto& r : analytic.rows) {
    if (r.params > 0) expected[r.layer] += r.params;
  }

  CostReport report;
  report.input_size = model.config().input_size;
  std::map<std::string, std::int64_t> found;
  for (const auto& s : model.state()) {
    CostRow r{s.name, CostKind::parameter};
    r.params = s.trainable ? static_cast<std::int64_t>(s.tensor.numel()) : 0;
    report.rows.push_back(r);
    report.total_params += r.params;
    if (r.params > 0) found[layer_of(s.name)] += r.params;
  }

  for (const auto& [layer, n] : expected) {
    auto it = found.find(layer);
    const std::int64_t got = it == found.end() ? 0 : it->second;
    if (got != n) {
      throw VerificationError("parameter count mismatch at " + layer + ": analytic " + std::to_string(n) +
                              ", enumerated " + std::to_string(got));
    }
  }
  for (const auto& [layer, n] : found) {
    if (!expected.count(layer)) {
      throw VerificationError("layer " + layer + " holds " + std::to_string(n) +
                              " parameters the analytic model does not know about");
    }
  }
  if (report.total_params != analytic.total_params) {
    throw VerificationError("total parameter mismatch: analytic " + std::to_string(analytic.total_params) +
                            ", enumerated " + std::to_string(report.total_params));
  }
  return report;
}

template <typename T>
MacCounters instrumented_macs(Model<T>& model, std::int64_t batch) {
  const std::int64_t S = model.config().input_size;
  Tensor<T> images({batch, 3, S, S});
  const Mode previous = model.mode();
  model.set_mode(Mode::eval);
  MacCounters counters;
  {
    MacCountScope scope(counters);
    model.forward(images);
  }
  model.set_mode(previous);
  return counters;
}

template CostReport count_params(Model<float>&);
template CostReport count_params(Model<double>&);
template MacCounters instrumented_macs(Model<float>&, std::int64_t);
template MacCounters instrumented_macs(Model<double>&, std::int64_t);

}  // namespace muvit
