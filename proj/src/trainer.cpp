#include "muvit/trainer.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "muvit/loss.hpp"
#include "muvit/metrics.hpp"

namespace muvit {

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(epoch) + 1);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

namespace {

[[noreturn]] void diagnose_forward(Model<float>& model, const Tensor<float>& images, std::int64_t step) {
  std::string culprit;
  {
    NoGradScope<float> off;
    model.forward(images, nullptr, [&](const std::string& layer, const Tensor<float>& out) {
      if (culprit.empty() && !out.all_finite()) culprit = layer;
    });
  }
  throw NumericError("non-finite loss at step " + std::to_string(step) +
                     (culprit.empty() ? std::string("; all layer outputs finite, the loss itself overflowed")
                                      : "; first non-finite layer output: " + culprit));
}

}  // namespace

TrainResult train_loop(Model<float>& model, Sgd<float>& optim, const Dataset& train, const Dataset& val,
                       const TrainOptions& opts) {
  if (train.empty()) throw UsageError("training set is empty");
  if (opts.batch < 1 || static_cast<std::size_t>(opts.batch) > train.size()) {
    throw UsageError("batch size must lie in [1, " + std::to_string(train.size()) + "]");
  }
  if (opts.epochs < 1) throw UsageError("epochs must be >= 1");

  const std::size_t batch = static_cast<std::size_t>(opts.batch);
  const std::int64_t per_epoch = static_cast<std::int64_t>((train.size() + batch - 1) / batch);
  const std::int64_t total = per_epoch * opts.epochs;
  const std::int64_t warmup = per_epoch * opts.warmup_epochs;

  std::ofstream log;
  if (!opts.log_path.empty()) {
    log.open(opts.log_path);
    if (!log) throw IoError("cannot write log " + opts.log_path);
  }
  auto emit = [&](const nlohmann::ordered_json& rec) {
    if (log) log << rec.dump() << '\n';
  };

  std::mt19937_64 aug_rng(opts.seed ^ 0xa5a5a5a5a5a5a5a5ULL);
  TrainResult result;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    model.set_mode(Mode::train);
    const auto order = shuffled_order(train.size(), opts.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t first = 0; first < order.size(); first += batch) {
      const std::size_t count = std::min(batch, order.size() - first);
      Tensor<float> images, masks;
      make_batch(train, order, first, count, images, masks, opts.augment ? &aug_rng : nullptr);

      const double lr = lr_at(opts.schedule, step, total, opts.lr0, warmup);
      optim.zero_grad();
      Graph<float> graph;
      LossTerms<float> terms;
      {
        GraphScope<float> scope(graph);
        const auto logits = model.forward(images);
        terms = seg_loss(logits, masks);
        if (!std::isfinite(terms.total.item())) diagnose_forward(model, images, step);
        graph.backward(terms.total);
      }
      for (const auto& [name, p] : model.parameters()) {
        if (p.has_grad()) {
          for (float g : p.grad()) {
            if (!std::isfinite(g)) {
              throw NumericError("non-finite gradient at step " + std::to_string(step) + " in parameter " + name);
            }
          }
        }
      }
      optim.step(lr);

      StepRecord rec{step, epoch, lr, 0.5 * terms.bce + terms.dice, terms.bce, terms.dice};
      result.steps.push_back(rec);
      loss_sum += rec.loss;
      nlohmann::ordered_json j;
      j["type"] = "step";
      j["epoch"] = epoch;
      j["step"] = step;
      j["lr"] = lr;
      j["loss"] = rec.loss;
      j["bce"] = rec.bce;
      j["dice"] = rec.dice;
      emit(j);
      ++step;
    }

    EpochRecord er;
    er.epoch = epoch;
    er.train_loss = loss_sum / static_cast<double>(per_epoch);
    if (!val.empty()) {
      const auto ev = evaluate(model, val, opts.batch, opts.threshold);
      er.val_iou = ev.mean_iou;
      er.val_f1 = ev.mean_f1;
      if (ev.mean_iou > result.best_val_iou) {
        result.best_val_iou = ev.mean_iou;
        result.best_epoch = epoch;
        result.best_state.clear();
        for (const auto& s : model.state()) result.best_state.emplace_back(s.name, s.tensor.clone());
      }
    }
    result.epochs.push_back(er);
    nlohmann::ordered_json j;
    j["type"] = "epoch";
    j["epoch"] = epoch;
    j["train_loss"] = er.train_loss;
    if (!val.empty()) {
      j["val_iou"] = er.val_iou;
      j["val_f1"] = er.val_f1;
    }
    emit(j);
  }
  model.set_mode(Mode::train);
  return result;
}

}  // namespace muvit
