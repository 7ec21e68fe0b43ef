#include "muvit/metrics.hpp"

#include <cmath>
#include <numeric>

namespace muvit {

double OverlapCounts::iou() const {
  const std::int64_t u = union_size();
  return u == 0 ? 1.0 : static_cast<double>(intersection) / static_cast<double>(u);
}

double OverlapCounts::f1() const {
  const std::int64_t s = predicted + truth;
  return s == 0 ? 1.0 : 2.0 * static_cast<double>(intersection) / static_cast<double>(s);
}

OverlapCounts overlap(const std::vector<bool>& pred, const std::vector<bool>& truth) {
  if (pred.size() != truth.size()) throw UsageError("overlap: mask sizes differ");
  OverlapCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    c.predicted += pred[i];
    c.truth += truth[i];
    c.intersection += pred[i] && truth[i];
  }
  return c;
}

namespace {

void finish(EvalResult& r) {
  if (r.samples.empty()) return;
  double iou = 0.0, f1 = 0.0;
  for (const auto& s : r.samples) {
    iou += s.iou;
    f1 += s.f1;
  }
  r.mean_iou = iou / static_cast<double>(r.samples.size());
  r.mean_f1 = f1 / static_cast<double>(r.samples.size());
}

}  // namespace

template <typename T>
EvalResult segmentation_metrics(const Tensor<T>& logits, const Tensor<T>& truth, double threshold) {
  if (logits.shape() != truth.shape()) {
    throw UsageError("metrics: logits " + shape_str(logits.shape()) + " vs mask " + shape_str(truth.shape()));
  }
  if (logits.ndim() < 2) throw UsageError("metrics: expected a batch dimension");
  if (!(threshold > 0.0 && threshold < 1.0)) throw UsageError("metrics: threshold must lie in (0, 1)");
  // sigmoid(z) >= t  <=>  z >= logit(t)
  const double cut = std::log(threshold / (1.0 - threshold));
  const std::int64_t N = logits.dim(0);
  const std::size_t per = logits.numel() / static_cast<std::size_t>(N);
  EvalResult r;
  r.threshold = threshold;
  for (std::int64_t n = 0; n < N; ++n) {
    std::vector<bool> p(per), g(per);
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t k = static_cast<std::size_t>(n) * per + i;
      const T y = truth[k];
      if (y != T(0) && y != T(1)) throw UsageError("metrics: ground truth must be 0 or 1");
      p[i] = static_cast<double>(logits[k]) >= cut;
      g[i] = y == T(1);
    }
    SampleMetrics s;
    s.id = std::to_string(n);
    s.counts = overlap(p, g);
    s.iou = s.counts.iou();
    s.f1 = s.counts.f1();
    r.samples.push_back(s);
  }
  finish(r);
  return r;
}

EvalResult evaluate(Model<float>& model, const Dataset& data, int batch, double threshold) {
  if (data.empty()) throw UsageError("evaluate: empty dataset");
  if (batch < 1) throw UsageError("evaluate: batch must be >= 1");
  const Mode previous = model.mode();
  model.set_mode(Mode::eval);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  EvalResult all;
  all.threshold = threshold;
  for (std::size_t first = 0; first < data.size(); first += static_cast<std::size_t>(batch)) {
    const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(batch), data.size() - first);
    Tensor<float> images, masks;
    make_batch(data, order, first, count, images, masks);
    const auto logits = model.forward(images);
    auto part = segmentation_metrics(logits, masks, threshold);
    for (std::size_t b = 0; b < count; ++b) {
      part.samples[b].id = data[first + b].id;
      all.samples.push_back(part.samples[b]);
    }
  }
  model.set_mode(previous);
  finish(all);
  return all;
}

template EvalResult segmentation_metrics(const Tensor<float>&, const Tensor<float>&, double);
template EvalResult segmentation_metrics(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace muvit
