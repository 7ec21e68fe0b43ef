#include "muvit/verify.hpp"

#include <functional>
#include <random>

#include "muvit/gradcheck.hpp"
#include "muvit/loss.hpp"
#include "muvit/model.hpp"
#include "muvit/nn.hpp"

namespace muvit {

namespace {

using D = double;
using T = Tensor<D>;

class Cases {
 public:
  Cases(std::string scope, double threshold, std::uint64_t seed)
      : scope_(std::move(scope)), threshold_(threshold), rng_(seed) {}

  T rand(Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    T t(std::move(shape));
    for (auto& v : t.data()) v = u(rng_);
    return t;
  }

  T binary(Shape shape) {
    T t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<double>(rng_() & 1);
    return t;
  }

  /// Projects the output to a scalar with a fixed random weighting.
  void run(const std::string& name, const std::function<T()>& out, const std::vector<NamedTensor>& inputs,
           std::size_t max_per_input = 0) {
    const std::uint64_t proj_seed = rng_();
    add(name, [&] { return random_projection(out(), proj_seed); }, inputs, max_per_input);
  }

  /// `loss` already returns a scalar.
  void add(const std::string& name, const std::function<T()>& loss, const std::vector<NamedTensor>& inputs,
           std::size_t max_per_input = 0, bool skip_nonsmooth = false, double eps = GradcheckOptions{}.eps) {
    GradcheckOptions o;
    o.eps = eps;
    o.max_per_input = max_per_input;
    o.seed = rng_();
    o.skip_nonsmooth = skip_nonsmooth;
    const auto r = gradcheck(loss, inputs, o);
    GradcheckRow row;
    row.scope = scope_;
    row.name = name;
    row.max_rel_error = r.max_rel_error;
    row.worst = r.worst;
    row.worst_analytic = r.worst_analytic;
    row.worst_numeric = r.worst_numeric;
    row.eps = eps;
    row.checked = r.checked;
    row.nonsmooth = r.nonsmooth;
    row.unverified = r.unverified;
    row.passed = r.max_rel_error <= threshold_ && r.unverified.empty();
    rows.push_back(row);
  }

  nn::Rng& rng() { return rng_; }
  std::vector<GradcheckRow> rows;

 private:
  std::string scope_;
  double threshold_;
  nn::Rng rng_;
};

template <typename Layer>
std::vector<NamedTensor> params_of(Layer& layer, const std::string& prefix) {
  std::vector<NamedTensor> out;
  layer.visit(prefix, [&](const std::string& name, T& t, bool trainable) {
    if (trainable) out.emplace_back(name, t);
  });
  return out;
}

template <typename Layer>
void randomize(Layer& layer, nn::Rng& rng, double scale = 0.5) {
  std::uniform_real_distribution<double> u(-scale, scale);
  layer.visit("", [&](const std::string& name, T& t, bool trainable) {
    if (!trainable) return;
    const bool is_gamma = name.size() >= 7 && name.compare(name.size() - 7, 7, ".weight") == 0 && t.ndim() == 1;
    for (auto& v : t.data()) v = (is_gamma ? 1.0 : 0.0) + u(rng);
  });
}

std::vector<NamedTensor> concat(std::vector<NamedTensor> a, const std::vector<NamedTensor>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

void ops_cases(Cases& c) {
  {
    auto x = c.rand({3, 4}), w = c.rand({5, 4}), b = c.rand({5});
    c.run("linear", [&] { return linear(x, w, b); }, {{"x", x}, {"w", w}, {"b", b}});
  }
  {
    auto x = c.rand({1, 2, 5, 5}), w = c.rand({3, 2, 3, 3}), b = c.rand({3});
    c.run("conv2d 3x3 pad 1", [&] { return conv2d(x, w, b, 1, 1); }, {{"x", x}, {"w", w}, {"b", b}});
  }
  {
    auto x = c.rand({2, 2, 6, 6}), w = c.rand({4, 2, 2, 2}), b = c.rand({4});
    c.run("conv2d 2x2 stride 2", [&] { return conv2d(x, w, b, 2, 0); }, {{"x", x}, {"w", w}, {"b", b}});
  }
  {
    auto x = c.rand({1, 3, 5, 5}), w = c.rand({3, 1, 3, 3}), b = c.rand({3});
    c.run("conv2d depthwise", [&] { return conv2d(x, w, b, 1, 1, 3); }, {{"x", x}, {"w", w}, {"b", b}});
  }
  {
    auto x = c.rand({2, 4, 3, 3}), w = c.rand({4, 2, 1, 1}), b = c.rand({4});
    c.run("conv2d pointwise", [&] { return conv2d(x, w, b, 1, 0, 2); }, {{"x", x}, {"w", w}, {"b", b}});
  }
  {
    auto x = c.rand({1, 3, 3, 3}), w = c.rand({3, 2, 2, 2}), b = c.rand({2});
    c.run("conv_transpose2d", [&] { return conv_transpose2d(x, w, b, 2); }, {{"x", x}, {"w", w}, {"b", b}});
  }
  {
    auto x = c.rand({1, 2, 4, 4});
    c.run("max_pool2d", [&] { return pool2d(x, PoolKind::max, 2, 2); }, {{"x", x}});
    c.run("avg_pool2d", [&] { return pool2d(x, PoolKind::avg, 2, 2); }, {{"x", x}});
  }
  {
    auto x = c.rand({1, 2, 3, 3});
    c.run("bilinear_upsample", [&] { return bilinear_upsample(x, 2); }, {{"x", x}});
  }
  {
    auto x = c.rand({2, 3, 3, 3}), g = c.rand({3}, 0.5, 1.5), b = c.rand({3});
    T rm({3}), rv({3}, 1.0);
    c.run("batchnorm2d train", [&] { return batchnorm2d(x, g, b, rm, rv, true); }, {{"x", x}, {"gamma", g}, {"beta", b}});
    c.run("batchnorm2d eval", [&] { return batchnorm2d(x, g, b, rm, rv, false); }, {{"x", x}, {"gamma", g}, {"beta", b}});
  }
  {
    auto x = c.rand({2, 3, 4}), g = c.rand({4}, 0.5, 1.5), b = c.rand({4});
    c.run("layernorm", [&] { return layernorm(x, g, b); }, {{"x", x}, {"gamma", g}, {"beta", b}});
  }
  {
    auto x = c.rand({2, 5}, -2.0, 2.0);
    c.run("gelu", [&] { return gelu(x); }, {{"x", x}});
    c.run("relu", [&] { return relu(x); }, {{"x", x}});
    c.run("sigmoid", [&] { return sigmoid(x); }, {{"x", x}});
    c.run("softmax", [&] { return softmax(x); }, {{"x", x}});
  }
  {
    auto a = c.rand({2, 3, 4}), b = c.rand({2, 4, 5}), bt = c.rand({2, 5, 4});
    c.run("bmm", [&] { return bmm(a, b, false); }, {{"a", a}, {"b", b}});
    c.run("bmm transposed", [&] { return bmm(a, bt, true); }, {{"a", a}, {"b", bt}});
  }
  {
    AttentionWeights<D> w{c.rand({8, 8}), c.rand({8}), c.rand({8, 8}), c.rand({8}),
                          c.rand({8, 8}), c.rand({8}), c.rand({8, 8}), c.rand({8})};
    auto x = c.rand({1, 4, 8});
    c.run("mhsa", [&] { return mhsa(x, 2, w); },
          {{"x", x}, {"wq", w.wq}, {"bq", w.bq}, {"wk", w.wk}, {"bk", w.bk}, {"wv", w.wv}, {"bv", w.bv},
           {"wo", w.wo}, {"bo", w.bo}});
  }
  {
    auto a = c.rand({2, 3, 4}), b = c.rand({1, 3, 4}), m = c.rand({2, 3, 4});
    c.run("add broadcast", [&] { return add(a, b); }, {{"a", a}, {"b", b}});
    c.run("mul", [&] { return mul(a, m); }, {{"a", a}, {"b", m}});
    c.add("mean", [&] { return mean(mul(a, a)); }, {{"a", a}});
    c.run("reshape", [&] { return reshape(a, {6, 4}); }, {{"a", a}});
    c.run("split/merge heads", [&] { return merge_heads(scale(split_heads(a, 2), 3.0), 2); }, {{"a", a}});
  }
  {
    auto a = c.rand({2, 2, 3, 3}), b = c.rand({2, 1, 3, 3});
    c.run("concat_channels", [&] { return concat_channels(a, b); }, {{"a", a}, {"b", b}});
    c.run("tokens round trip", [&] { return from_tokens(scale(to_tokens(a), 2.0), 3, 3); }, {{"a", a}});
  }
  {
    auto z = c.rand({2, 2, 4, 4}, -3.0, 3.0);
    auto y = c.binary({2, 2, 4, 4});
    c.add("seg_loss", [&] { return seg_loss(z, y).total; }, {{"logits", z}});
  }
}

void blocks_cases(Cases& c) {
  auto& rng = c.rng();
  {
    nn::ConvUtrBlock<D> block(4, 3, rng);
    randomize(block, rng);
    auto x = c.rand({2, 4, 4, 4});
    c.run("conv_utr_block", [&] { return block(x, true); }, concat({{"x", x}}, params_of(block, "block")));
  }
  for (bool literal : {false, true}) {
    nn::LklglOptions o;
    o.kernel = 3;
    o.heads = 2;
    o.ffn_ratio = 2;
    o.literal_order = literal;
    nn::LklglBlock<D> block(8, o, rng);
    randomize(block, rng);
    auto x = c.rand({1, 8, 4, 4});
    c.run(literal ? "lklgl_block (literal order)" : "lklgl_block", [&] { return block(x); },
          concat({{"x", x}}, params_of(block, "block")));
  }
  {
    nn::VitBlock<D> block(8, 2, 2, rng);
    randomize(block, rng);
    auto x = c.rand({2, 4, 8});
    c.run("vit_block", [&] { return block(x); }, concat({{"x", x}}, params_of(block, "block")));
  }
  {
    nn::SkipAdapter<D> adapter(3, 4, true, rng);
    randomize(adapter, rng);
    auto x = c.rand({2, 3, 4, 4});
    c.run("skip_adapter", [&] { return adapter(x, true); }, concat({{"x", x}}, params_of(adapter, "skip")));
  }
  {
    nn::DecoderBlock<D> block(4, 2, 3, rng);
    randomize(block, rng);
    auto x = c.rand({2, 4, 2, 2}), s = c.rand({2, 2, 4, 4});
    c.run("decoder_block", [&] { return block(x, &s, true); },
          concat({{"x", x}, {"skip", s}}, params_of(block, "dec")));
  }
  {
    auto z = c.rand({2, 1, 4, 4}, -3.0, 3.0);
    auto y = c.binary({2, 1, 4, 4});
    c.add("seg_loss", [&] { return seg_loss(z, y).total; }, {{"logits", z}});
  }
}

void model_cases(Cases& c) {
  ModelConfig cfg;
  cfg.channels = {4, 4, 8, 8, 16};
  cfg.depths = {1, 1, 1, 1, 1};
  cfg.input_size = 32;
  Model<D> model(cfg, 7);
  model.set_mode(Mode::train);
  auto x = c.rand({2, 3, 32, 32});
  auto y = c.binary({2, 1, 32, 32});
  std::vector<NamedTensor> inputs{{"images", x}};
  for (auto& [name, t] : model.parameters()) inputs.emplace_back(name, t);
  c.add("model seg_loss", [&] { return seg_loss(model.forward(x), y).total; }, inputs, 2, true, 1e-3);
}

}  // namespace

std::vector<GradcheckRow> gradcheck_scope(const std::string& scope, double threshold, std::uint64_t seed) {
  Cases c(scope, threshold, seed);
  if (scope == "ops") {
    ops_cases(c);
  } else if (scope == "blocks") {
    blocks_cases(c);
  } else if (scope == "model") {
    model_cases(c);
  } else {
    throw ConfigError("unknown gradcheck scope '" + scope + "' (expected ops, blocks or model)");
  }
  return std::move(c.rows);
}

}  // namespace muvit
