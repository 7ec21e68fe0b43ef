#include "muvit/muvit.h"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <optional>
#include <string>

#include <json.hpp>

#include "muvit/accounting.hpp"
#include "muvit/checkpoint.hpp"
#include "muvit/metrics.hpp"
#include "muvit/trainer.hpp"
#include "muvit/gradcheck.hpp"
#include "muvit/verify.hpp"

using muvit::Checkpoint;
using muvit::Model;
using muvit::RunConfig;
using ojson = nlohmann::ordered_json;

struct muvit_model {
  RunConfig config;
  Model<float> model;
  std::optional<muvit::Sgd<float>> optim;
  std::vector<std::pair<std::string, muvit::Tensor<float>>> best_state;

  muvit_model(const RunConfig& c) : config(c), model(c.model, c.seed) {}
};

struct muvit_dataset {
  muvit::Dataset samples;
};

namespace {

thread_local std::string last_error;

template <typename F>
muvit_status guarded(F&& body) {
  last_error.clear();
  try {
    body();
    return MUVIT_OK;
  } catch (const muvit::UsageError& e) {
    last_error = e.what();
    return MUVIT_ERR_USAGE;
  } catch (const muvit::ConfigError& e) {
    last_error = e.what();
    return MUVIT_ERR_CONFIG;
  } catch (const muvit::ParseError& e) {
    last_error = e.what();
    return MUVIT_ERR_PARSE;
  } catch (const muvit::IoError& e) {
    last_error = e.what();
    return MUVIT_ERR_IO;
  } catch (const muvit::NumericError& e) {
    last_error = e.what();
    return MUVIT_ERR_NUMERIC;
  } catch (const muvit::VerificationError& e) {
    last_error = e.what();
    return MUVIT_ERR_VERIFICATION;
  } catch (const std::exception& e) {
    last_error = e.what();
    return MUVIT_ERR_INTERNAL;
  }
}

void require(bool ok, const char* msg) {
  if (!ok) throw muvit::UsageError(msg);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put_json(char** out, const ojson& j) {
  if (out != nullptr) *out = dup_string(j.dump());
}

ojson eval_json(const muvit::EvalResult& r) {
  ojson j;
  j["threshold"] = r.threshold;
  j["mean_iou"] = r.mean_iou;
  j["mean_f1"] = r.mean_f1;
  j["samples"] = ojson::array();
  for (const auto& s : r.samples) {
    ojson row;
    row["id"] = s.id;
    row["iou"] = s.iou;
    row["f1"] = s.f1;
    row["intersection"] = s.counts.intersection;
    row["predicted"] = s.counts.predicted;
    row["truth"] = s.counts.truth;
    j["samples"].push_back(row);
  }
  return j;
}

ojson counters_json(const muvit::MacCounters& c) {
  ojson j;
  j["conv"] = c.conv;
  j["conv_transpose"] = c.conv_transpose;
  j["linear"] = c.linear;
  j["attention_scores"] = c.attention_scores;
  j["attention_values"] = c.attention_values;
  j["total"] = c.total();
  return j;
}

}  // namespace

extern "C" {

const char* muvit_version(void) { return "1.0.0"; }

const char* muvit_status_name(muvit_status status) {
  switch (status) {
    case MUVIT_OK: return "ok";
    case MUVIT_ERR_USAGE: return "usage error";
    case MUVIT_ERR_CONFIG: return "configuration error";
    case MUVIT_ERR_PARSE: return "parse error";
    case MUVIT_ERR_IO: return "i/o error";
    case MUVIT_ERR_NUMERIC: return "numeric error";
    case MUVIT_ERR_VERIFICATION: return "verification failure";
    case MUVIT_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* muvit_last_error(void) { return last_error.c_str(); }

void muvit_string_free(char* s) { std::free(s); }

muvit_status muvit_model_create(const char* config_json, muvit_model** out) {
  return guarded([&] {
    require(config_json != nullptr && out != nullptr, "muvit_model_create: null argument");
    *out = new muvit_model(muvit::config_from_json(config_json));
  });
}

muvit_status muvit_model_load(const char* path, muvit_model** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "muvit_model_load: null argument");
    const Checkpoint ckpt = muvit::load_checkpoint(path);
    auto m = std::make_unique<muvit_model>(ckpt.config);
    muvit::restore_model(ckpt, m->model);
    if (ckpt.has_optimizer()) {
      m->optim.emplace(m->model.parameters());
      muvit::restore_optimizer(ckpt, *m->optim);
    }
    *out = m.release();
  });
}

muvit_status muvit_model_save(const muvit_model* model, const char* path) {
  return guarded([&] {
    require(model != nullptr && path != nullptr, "muvit_model_save: null argument");
    auto& m = const_cast<muvit_model&>(*model);
    const auto ckpt = muvit::make_checkpoint(m.config, m.model, m.optim ? &*m.optim : nullptr);
    muvit::save_checkpoint(path, ckpt);
  });
}

muvit_status muvit_model_save_best(const muvit_model* model, const char* path) {
  return guarded([&] {
    require(model != nullptr && path != nullptr, "muvit_model_save_best: null argument");
    if (model->best_state.empty()) throw muvit::UsageError("no best state: train with a validation set first");
    Checkpoint ckpt;
    ckpt.config = model->config;
    for (const auto& [name, t] : model->best_state) {
      muvit::StoredTensor s;
      s.name = name;
      s.dtype = muvit::DType::f32;
      s.shape = t.shape();
      s.values.assign(t.data().begin(), t.data().end());
      ckpt.tensors.push_back(std::move(s));
    }
    muvit::save_checkpoint(path, ckpt);
  });
}

void muvit_model_free(muvit_model* model) { delete model; }

muvit_status muvit_model_config(const muvit_model* model, char** json_out) {
  return guarded([&] {
    require(model != nullptr && json_out != nullptr, "muvit_model_config: null argument");
    *json_out = dup_string(muvit::config_to_json(model->config));
  });
}

muvit_status muvit_model_forward(muvit_model* model, const float* images, int64_t n, float* logits,
                                 size_t logits_len) {
  return guarded([&] {
    require(model != nullptr && images != nullptr && logits != nullptr, "muvit_model_forward: null argument");
    require(n >= 1, "muvit_model_forward: n must be >= 1");
    const std::int64_t S = model->config.model.input_size;
    const std::int64_t classes = model->config.model.num_classes;
    require(logits_len == static_cast<size_t>(n * classes * S * S), "muvit_model_forward: logits buffer size mismatch");
    muvit::Tensor<float> x({n, 3, S, S});
    std::copy(images, images + x.numel(), x.data().begin());
    const auto previous = model->model.mode();
    model->model.set_mode(muvit::Mode::eval);
    const auto y = model->model.forward(x);
    model->model.set_mode(previous);
    std::copy(y.data().begin(), y.data().end(), logits);
  });
}

muvit_status muvit_count(const char* config_json, char** report_json) {
  return guarded([&] {
    require(config_json != nullptr, "muvit_count: null argument");
    const RunConfig cfg = muvit::config_from_json(config_json);
    Model<float> model(cfg.model, cfg.seed);
    const auto flops = muvit::count_flops(cfg.model);
    const auto params = muvit::count_params(model);  // throws on disagreement
    const auto measured = muvit::instrumented_macs(model);

    const std::pair<const char*, std::pair<std::int64_t, std::int64_t>> checks[] = {
        {"conv", {flops.macs_of(muvit::CostKind::conv), measured.conv}},
        {"conv_transpose", {flops.macs_of(muvit::CostKind::conv_transpose), measured.conv_transpose}},
        {"linear", {flops.macs_of(muvit::CostKind::linear), measured.linear}},
        {"attention_scores", {flops.macs_of(muvit::CostKind::attention_scores), measured.attention_scores}},
        {"attention_values", {flops.macs_of(muvit::CostKind::attention_values), measured.attention_values}},
    };
    for (const auto& [kind, pair] : checks) {
      if (pair.first != pair.second) {
        throw muvit::VerificationError(std::string("instrumented ") + kind + " MACs " + std::to_string(pair.second) +
                                       " differ from the analytic " + std::to_string(pair.first));
      }
    }

    ojson j;
    j["variant"] = muvit::to_string(cfg.model.variant);
    j["input_size"] = cfg.model.input_size;
    j["batch"] = flops.batch;
    j["total_params"] = params.total_params;
    j["analytic_params"] = flops.total_params;
    j["total_macs"] = flops.total_macs;
    j["total_flops"] = 2 * flops.total_macs;
    j["gflops"] = flops.gflops();
    j["instrumented_macs"] = counters_json(measured);
    j["layers"] = ojson::array();
    for (const auto& r : flops.rows) {
      ojson row;
      row["layer"] = r.layer;
      row["kind"] = muvit::to_string(r.kind);
      row["params"] = r.params;
      row["macs"] = r.macs;
      row["flops"] = 2 * r.macs;
      row["h"] = r.h;
      row["w"] = r.w;
      row["d_in"] = r.d_in;
      row["d_out"] = r.d_out;
      row["k"] = r.k;
      row["tokens"] = r.tokens;
      j["layers"].push_back(row);
    }
    j["tensors"] = ojson::array();
    for (const auto& r : params.rows) {
      ojson row;
      row["name"] = r.layer;
      row["params"] = r.params;
      j["tensors"].push_back(row);
    }
    put_json(report_json, j);
  });
}

muvit_status muvit_dataset_synth(uint64_t seed, int64_t n, int size, double difficulty, muvit_dataset** out) {
  return guarded([&] {
    require(out != nullptr, "muvit_dataset_synth: null argument");
    require(n >= 0 && n <= 1'000'000, "muvit_dataset_synth: n out of range");
    muvit::SynthOptions o;
    o.seed = seed;
    o.count = static_cast<int>(n);
    o.size = size;
    o.difficulty = difficulty;
    auto d = std::make_unique<muvit_dataset>();
    d->samples = muvit::synth_dataset(o);
    *out = d.release();
  });
}

muvit_status muvit_dataset_load_dir(const char* dir, muvit_dataset** out) {
  return guarded([&] {
    require(dir != nullptr && out != nullptr, "muvit_dataset_load_dir: null argument");
    auto d = std::make_unique<muvit_dataset>();
    d->samples = muvit::load_dataset_dir(dir);
    *out = d.release();
  });
}

muvit_status muvit_dataset_save_dir(const muvit_dataset* data, const char* dir) {
  return guarded([&] {
    require(data != nullptr && dir != nullptr, "muvit_dataset_save_dir: null argument");
    muvit::save_dataset_dir(dir, data->samples);
  });
}

muvit_status muvit_dataset_slice(const muvit_dataset* data, int64_t first, int64_t count, muvit_dataset** out) {
  return guarded([&] {
    require(data != nullptr && out != nullptr, "muvit_dataset_slice: null argument");
    const auto size = static_cast<int64_t>(data->samples.size());
    require(first >= 0 && count >= 0 && first + count <= size, "muvit_dataset_slice: range out of bounds");
    auto d = std::make_unique<muvit_dataset>();
    d->samples.assign(data->samples.begin() + first, data->samples.begin() + first + count);
    *out = d.release();
  });
}

int64_t muvit_dataset_size(const muvit_dataset* data) {
  return data == nullptr ? 0 : static_cast<int64_t>(data->samples.size());
}

void muvit_dataset_free(muvit_dataset* data) { delete data; }

muvit_status muvit_train(muvit_model* model, const muvit_dataset* train, const muvit_dataset* val,
                         const char* log_path, char** history_json) {
  return guarded([&] {
    require(model != nullptr && train != nullptr, "muvit_train: null argument");
    const auto& rc = model->config;
    if (!train->samples.empty() && train->samples.front().image.dim(1) != rc.model.input_size) {
      throw muvit::UsageError("training images are " + std::to_string(train->samples.front().image.dim(1)) +
                              " pixels wide, the model expects " + std::to_string(rc.model.input_size));
    }
    muvit::TrainOptions o;
    o.epochs = rc.epochs;
    o.batch = rc.batch;
    o.schedule = rc.schedule;
    o.lr0 = rc.lr0;
    o.warmup_epochs = rc.warmup_epochs;
    o.seed = rc.seed;
    if (log_path != nullptr) o.log_path = log_path;
    if (!model->optim) model->optim.emplace(model->model.parameters());
    static const muvit::Dataset empty;
    const auto result = muvit::train_loop(model->model, *model->optim, train->samples,
                                          val != nullptr ? val->samples : empty, o);
    model->best_state = result.best_state;

    ojson j;
    j["steps"] = result.steps.size();
    j["best_epoch"] = result.best_epoch;
    j["best_val_iou"] = result.best_val_iou;
    j["epochs"] = ojson::array();
    for (const auto& e : result.epochs) {
      ojson row;
      row["epoch"] = e.epoch;
      row["train_loss"] = e.train_loss;
      if (e.val_iou >= 0.0) {
        row["val_iou"] = e.val_iou;
        row["val_f1"] = e.val_f1;
      }
      j["epochs"].push_back(row);
    }
    put_json(history_json, j);
  });
}

muvit_status muvit_evaluate(muvit_model* model, const muvit_dataset* data, double threshold, char** report_json) {
  return guarded([&] {
    require(model != nullptr && data != nullptr, "muvit_evaluate: null argument");
    const auto r = muvit::evaluate(model->model, data->samples, model->config.batch, threshold);
    put_json(report_json, eval_json(r));
  });
}

muvit_status muvit_bench(muvit_model* model, int iters, int batch, char** report_json) {
  return guarded([&] {
    require(model != nullptr, "muvit_bench: null argument");
    require(iters >= 1 && batch >= 1, "muvit_bench: iters and batch must be >= 1");
    const std::int64_t S = model->config.model.input_size;
    muvit::Tensor<float> x({batch, 3, S, S});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>((i * 2654435761u) % 1000) / 1000.0f;
    const auto previous = model->model.mode();
    model->model.set_mode(muvit::Mode::eval);
    model->model.forward(x);  // warm-up
    std::vector<double> ms;
    for (int i = 0; i < iters; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      model->model.forward(x);
      const auto t1 = std::chrono::steady_clock::now();
      ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    model->model.set_mode(previous);
    std::vector<double> sorted = ms;
    std::sort(sorted.begin(), sorted.end());
    auto pct = [&](double q) {
      const auto idx = static_cast<std::size_t>(q * static_cast<double>(sorted.size() - 1) + 0.5);
      return sorted[idx];
    };
    double mean = 0.0;
    for (double v : ms) mean += v;
    mean /= static_cast<double>(ms.size());
    ojson j;
    j["note"] = "local single-process CPU latency; not comparable to published device throughput";
    j["iters"] = iters;
    j["batch"] = batch;
    j["input_size"] = S;
    j["mean_ms"] = mean;
    j["p50_ms"] = pct(0.5);
    j["p95_ms"] = pct(0.95);
    j["images_per_s"] = 1000.0 * batch / mean;
    put_json(report_json, j);
  });
}

muvit_status muvit_gradcheck(const char* scope, double threshold, char** report_json) {
  muvit_status status = MUVIT_OK;
  const auto run = guarded([&] {
    require(scope != nullptr, "muvit_gradcheck: null argument");
    const auto rows = muvit::gradcheck_scope(scope, threshold);
    ojson j;
    j["scope"] = scope;
    j["threshold"] = threshold;
    j["eps"] = rows.empty() ? muvit::GradcheckOptions{}.eps : rows.front().eps;
    j["cases"] = ojson::array();
    bool all = true;
    for (const auto& r : rows) {
      ojson row;
      row["name"] = r.name;
      row["max_rel_error"] = r.max_rel_error;
      row["worst"] = r.worst;
      row["worst_analytic"] = r.worst_analytic;
      row["worst_numeric"] = r.worst_numeric;
      row["nonsmooth_skipped"] = r.nonsmooth;
      row["unverified"] = r.unverified;
      row["checked"] = r.checked;
      row["passed"] = r.passed;
      j["cases"].push_back(row);
      all = all && r.passed;
    }
    j["passed"] = all;
    put_json(report_json, j);
    if (!all) status = MUVIT_ERR_VERIFICATION;
  });
  if (run != MUVIT_OK) return run;
  if (status != MUVIT_OK) last_error = "gradient check exceeded the threshold";
  return status;
}

}  // extern "C"
