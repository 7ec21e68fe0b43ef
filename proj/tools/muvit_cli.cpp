// Command-line front end over the C API.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "muvit/muvit.h"

using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct Failure {
  muvit_status status;
  std::string message;
};

void check(muvit_status s) {
  if (s != MUVIT_OK) throw Failure{s, muvit_last_error()};
}

int exit_code(muvit_status s) {
  return s == MUVIT_ERR_USAGE || s == MUVIT_ERR_CONFIG ? kExitUsage : kExitFailure;
}

struct ModelDeleter {
  void operator()(muvit_model* m) const { muvit_model_free(m); }
};
struct DatasetDeleter {
  void operator()(muvit_dataset* d) const { muvit_dataset_free(d); }
};
using ModelPtr = std::unique_ptr<muvit_model, ModelDeleter>;
using DatasetPtr = std::unique_ptr<muvit_dataset, DatasetDeleter>;

/// Owns a string returned by the library.
class Owned {
 public:
  ~Owned() { muvit_string_free(p_); }
  char** out() { return &p_; }
  json parse() const { return json::parse(p_ == nullptr ? "{}" : p_); }

 private:
  char* p_ = nullptr;
};

struct Ablation {
  std::string skip_mode;
  std::string downsample_mode;
  std::string kernels;
  bool literal_order = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--skip-mode", skip_mode, "none | skip1 | skip2 | skip3 | horizontal");
    cmd->add_option("--downsample-mode", downsample_mode, "maxpool | conv");
    cmd->add_option("--kernels", kernels, "ConvUtr kernels K1,K2,K3");
    cmd->add_flag("--literal-order", literal_order, "attend on the full grid, then pool");
  }

  void apply(json& cfg) const {
    if (!skip_mode.empty()) cfg["skip_mode"] = skip_mode;
    if (!downsample_mode.empty()) cfg["downsample_mode"] = downsample_mode;
    if (!kernels.empty()) {
      json k = json::array();
      std::stringstream ss(kernels);
      std::string item;
      while (std::getline(ss, item, ',')) {
        try {
          std::size_t used = 0;
          const int v = std::stoi(item, &used);
          if (used != item.size()) throw std::invalid_argument(item);
          k.push_back(v);
        } catch (const std::exception&) {
          throw Failure{MUVIT_ERR_USAGE, "--kernels expects three comma-separated integers"};
        }
      }
      if (k.size() != 3) throw Failure{MUVIT_ERR_USAGE, "--kernels expects three comma-separated integers"};
      cfg["kernels"] = k;
    }
    if (literal_order) cfg["literal_order"] = true;
  }
};

std::pair<std::uint64_t, std::int64_t> parse_seed_count(const std::string& s) {
  const auto comma = s.find(',');
  try {
    if (comma == std::string::npos) throw std::invalid_argument(s);
    return {std::stoull(s.substr(0, comma)), std::stoll(s.substr(comma + 1))};
  } catch (const std::exception&) {
    throw Failure{MUVIT_ERR_USAGE, "--synth expects SEED,N"};
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Failure{MUVIT_ERR_IO, "cannot open " + path};
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Failure{MUVIT_ERR_IO, "cannot write " + path};
  out << text << '\n';
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- commands -----------------------------------------------------------

struct BuildArgs {
  std::string variant = "base";
  int size = 256;
  int classes = 1;
  std::uint64_t seed = 0;
  std::string out;
  Ablation ablation;
};

int run_build(const BuildArgs& a) {
  json cfg;
  cfg["variant"] = a.variant;
  cfg["input_size"] = a.size;
  cfg["num_classes"] = a.classes;
  cfg["seed"] = a.seed;
  a.ablation.apply(cfg);
  muvit_model* raw = nullptr;
  check(muvit_model_create(cfg.dump().c_str(), &raw));
  ModelPtr model(raw);
  check(muvit_model_save(model.get(), a.out.c_str()));
  Owned doc;
  check(muvit_model_config(model.get(), doc.out()));
  std::cout << "wrote " << a.out << " " << doc.parse().dump() << "\n";
  return kExitOk;
}

struct CountArgs {
  std::string variant = "base";
  int size = 256;
  int classes = 1;
  std::string json_out;
  bool all_layers = false;
  Ablation ablation;
};

int run_count(const CountArgs& a) {
  json cfg;
  cfg["variant"] = a.variant;
  cfg["input_size"] = a.size;
  cfg["num_classes"] = a.classes;
  a.ablation.apply(cfg);
  Owned out;
  check(muvit_count(cfg.dump().c_str(), out.out()));
  const json r = out.parse();
  if (!a.json_out.empty()) write_text(a.json_out, r.dump(2));

  std::printf("%-46s %-17s %10s %16s\n", "layer", "kind", "params", "MACs");
  for (const auto& row : r["layers"]) {
    if (!a.all_layers && row["kind"] == "elementwise" && row["params"].get<std::int64_t>() == 0) continue;
    std::printf("%-46s %-17s %10lld %16lld\n", row["layer"].get<std::string>().c_str(),
                row["kind"].get<std::string>().c_str(), static_cast<long long>(row["params"].get<std::int64_t>()),
                static_cast<long long>(row["macs"].get<std::int64_t>()));
  }
  const auto params = r["total_params"].get<std::int64_t>();
  const auto macs = r["total_macs"].get<std::int64_t>();
  std::printf("\nvariant %s, input %dx%d\n", r["variant"].get<std::string>().c_str(), a.size, a.size);
  std::printf("total params     %lld (%.3f M), analytic and enumerated agree\n", static_cast<long long>(params),
              params / 1e6);
  std::printf("total MACs       %lld (%.3f G)\n", static_cast<long long>(macs), macs / 1e9);
  std::printf("total FLOPs      %lld (%.3f GFLOPs = 2 x MACs)\n", static_cast<long long>(2 * macs),
              2.0 * macs / 1e9);
  std::printf("instrumented MACs (conv/linear/attention) match the analytic rows\n");
  return kExitOk;
}

struct SynthArgs {
  std::uint64_t seed = 0;
  std::int64_t n = 1;
  int size = 64;
  double difficulty = 0.0;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  muvit_dataset* raw = nullptr;
  check(muvit_dataset_synth(a.seed, a.n, a.size, a.difficulty, &raw));
  DatasetPtr data(raw);
  check(muvit_dataset_save_dir(data.get(), a.out.c_str()));
  std::cout << "wrote " << a.n << " samples to " << a.out << "\n";
  return kExitOk;
}

DatasetPtr load_data(const std::string& dir, const std::string& synth, int size, double difficulty) {
  muvit_dataset* raw = nullptr;
  if (!dir.empty()) {
    check(muvit_dataset_load_dir(dir.c_str(), &raw));
  } else {
    const auto [seed, n] = parse_seed_count(synth);
    check(muvit_dataset_synth(seed, n, size, difficulty, &raw));
  }
  return DatasetPtr(raw);
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string synth;
  double difficulty = 0.0;
  std::string val_data;
  std::string val_synth;
  double val_fraction = 0.0;
  std::string out;
  std::string best_out;
  std::string log;
  Ablation ablation;
};

int run_train(const TrainArgs& a) {
  json cfg = json::parse(read_file(a.config), nullptr, false);
  if (cfg.is_discarded()) throw Failure{MUVIT_ERR_PARSE, a.config + " is not valid JSON"};
  a.ablation.apply(cfg);
  muvit_model* raw = nullptr;
  check(muvit_model_create(cfg.dump().c_str(), &raw));
  ModelPtr model(raw);
  Owned doc;
  check(muvit_model_config(model.get(), doc.out()));
  const int size = doc.parse()["input_size"].get<int>();

  DatasetPtr all = load_data(a.data, a.synth, size, a.difficulty);
  DatasetPtr train, val;
  if (!a.val_data.empty() || !a.val_synth.empty()) {
    train = std::move(all);
    val = load_data(a.val_data, a.val_synth, size, a.difficulty);
  } else if (a.val_fraction > 0.0) {
    const auto n = muvit_dataset_size(all.get());
    const auto nv = static_cast<std::int64_t>(static_cast<double>(n) * a.val_fraction);
    if (nv < 1 || nv >= n) throw Failure{MUVIT_ERR_USAGE, "--val-fraction leaves an empty split"};
    muvit_dataset* t = nullptr;
    muvit_dataset* v = nullptr;
    check(muvit_dataset_slice(all.get(), 0, n - nv, &t));
    train.reset(t);
    check(muvit_dataset_slice(all.get(), n - nv, nv, &v));
    val.reset(v);
  } else {
    train = std::move(all);
  }

  Owned history;
  check(muvit_train(model.get(), train.get(), val.get(), a.log.empty() ? nullptr : a.log.c_str(), history.out()));
  check(muvit_model_save(model.get(), a.out.c_str()));
  const json h = history.parse();
  for (const auto& e : h["epochs"]) {
    std::cout << "epoch " << e["epoch"].get<int>() << "  loss " << fmt("%.5f", e["train_loss"].get<double>());
    if (e.contains("val_iou")) std::cout << "  val IoU " << fmt("%.4f", e["val_iou"].get<double>());
    std::cout << "\n";
  }
  std::cout << "wrote " << a.out << "\n";
  if (!a.best_out.empty()) {
    check(muvit_model_save_best(model.get(), a.best_out.c_str()));
    std::cout << "best epoch " << h["best_epoch"].get<int>() << " (val IoU "
              << fmt("%.4f", h["best_val_iou"].get<double>()) << ") written to " << a.best_out << "\n";
  }
  return kExitOk;
}

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string synth;
  double difficulty = 0.0;
  double threshold = 0.5;
  std::string json_out;
};

int run_eval(const EvalArgs& a) {
  muvit_model* raw = nullptr;
  check(muvit_model_load(a.ckpt.c_str(), &raw));
  ModelPtr model(raw);
  Owned doc;
  check(muvit_model_config(model.get(), doc.out()));
  const int size = doc.parse()["input_size"].get<int>();
  DatasetPtr data = load_data(a.data, a.synth, size, a.difficulty);
  Owned report;
  check(muvit_evaluate(model.get(), data.get(), a.threshold, report.out()));
  const json r = report.parse();
  if (!a.json_out.empty()) write_text(a.json_out, r.dump(2));
  std::printf("%-28s %8s %8s\n", "sample", "IoU", "F1");
  for (const auto& s : r["samples"]) {
    std::printf("%-28s %8.4f %8.4f\n", s["id"].get<std::string>().c_str(), s["iou"].get<double>(),
                s["f1"].get<double>());
  }
  std::printf("%-28s %8.4f %8.4f   (threshold %.2f)\n", "mean", r["mean_iou"].get<double>(),
              r["mean_f1"].get<double>(), a.threshold);
  return kExitOk;
}

struct BenchArgs {
  std::string ckpt;
  int iters = 10;
  int batch = 1;
};

int run_bench(const BenchArgs& a) {
  muvit_model* raw = nullptr;
  check(muvit_model_load(a.ckpt.c_str(), &raw));
  ModelPtr model(raw);
  Owned report;
  check(muvit_bench(model.get(), a.iters, a.batch, report.out()));
  const json r = report.parse();
  std::printf("forward latency over %d iterations, batch %d, input %lld\n", a.iters, a.batch,
              static_cast<long long>(r["input_size"].get<std::int64_t>()));
  std::printf("  mean %.2f ms   p50 %.2f ms   p95 %.2f ms   (%.2f images/s)\n", r["mean_ms"].get<double>(),
              r["p50_ms"].get<double>(), r["p95_ms"].get<double>(), r["images_per_s"].get<double>());
  std::printf("  note: %s; timings are nondeterministic\n", r["note"].get<std::string>().c_str());
  return kExitOk;
}

struct GradcheckArgs {
  std::string scope = "ops";
  double threshold = 1e-5;
};

int run_gradcheck(const GradcheckArgs& a) {
  Owned report;
  const muvit_status s = muvit_gradcheck(a.scope.c_str(), a.threshold, report.out());
  if (s != MUVIT_OK && s != MUVIT_ERR_VERIFICATION) throw Failure{s, muvit_last_error()};
  const json r = report.parse();
  std::printf("%-32s %14s %8s  %-6s %s\n", "case", "max rel err", "checked", "status", "worst element");
  for (const auto& c : r["cases"]) {
    std::printf("%-32s %14.3e %8lld  %-6s %s\n", c["name"].get<std::string>().c_str(),
                c["max_rel_error"].get<double>(), static_cast<long long>(c["checked"].get<std::int64_t>()),
                c["passed"].get<bool>() ? "ok" : "FAIL", c["worst"].get<std::string>().c_str());
    if (!c["passed"].get<bool>()) {
      std::printf("%32s analytic %.6e  numeric %.6e\n", "", c["worst_analytic"].get<double>(),
                  c["worst_numeric"].get<double>());
      for (const auto& u : c["unverified"]) {
        std::printf("%32s no smooth element found in %s\n", "", u.get<std::string>().c_str());
      }
    }
  }
  const bool ok = r["passed"].get<bool>();
  std::size_t skipped = 0;
  for (const auto& c : r["cases"]) skipped += c["nonsmooth_skipped"].get<std::size_t>();
  if (skipped > 0) std::printf("%zu sampled elements redrawn: stencil crossed a ReLU/max-pool/clamp branch\n", skipped);
  std::printf("%s: threshold %.1e, fourth-order central differences eps %.0e, float64\n", ok ? "passed" : "FAILED",
              a.threshold, r["eps"].get<double>());
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mobile U-ViT segmentation toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", muvit_version());

  BuildArgs build;
  auto* c_build = app.add_subcommand("build", "instantiate an untrained model and save it");
  c_build->add_option("--variant", build.variant, "base | large")->capture_default_str();
  c_build->add_option("--size", build.size, "input side length (multiple of 32)")->capture_default_str();
  c_build->add_option("--classes", build.classes, "number of output channels")->capture_default_str();
  c_build->add_option("--seed", build.seed, "initialization seed")->capture_default_str();
  c_build->add_option("--out", build.out, "checkpoint path")->required();
  build.ablation.add_to(c_build);

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "train from a config document");
  c_train->add_option("--config", train.config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
  auto* data_opt = c_train->add_option("--data", train.data, "dataset directory (images/, masks/)");
  auto* synth_opt = c_train->add_option("--synth", train.synth, "synthetic training set SEED,N");
  data_opt->excludes(synth_opt);
  c_train->add_option("--difficulty", train.difficulty, "synthetic difficulty in [0,1]")->capture_default_str();
  c_train->add_option("--val-data", train.val_data, "validation directory");
  c_train->add_option("--val-synth", train.val_synth, "synthetic validation set SEED,N");
  c_train->add_option("--val-fraction", train.val_fraction, "hold out the tail of the training set");
  c_train->add_option("--out", train.out, "final checkpoint (with optimizer state)")->required();
  c_train->add_option("--best-out", train.best_out, "best-by-validation-IoU checkpoint");
  c_train->add_option("--log", train.log, "JSON-lines training log");
  train.ablation.add_to(c_train);

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "score a checkpoint on a dataset");
  c_eval->add_option("--ckpt", eval.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  auto* edata = c_eval->add_option("--data", eval.data, "dataset directory");
  auto* esynth = c_eval->add_option("--synth", eval.synth, "synthetic set SEED,N");
  edata->excludes(esynth);
  c_eval->add_option("--difficulty", eval.difficulty, "synthetic difficulty")->capture_default_str();
  c_eval->add_option("--threshold", eval.threshold, "probability threshold")->capture_default_str();
  c_eval->add_option("--json", eval.json_out, "write the per-sample report here");

  CountArgs count;
  auto* c_count = app.add_subcommand("count", "parameter and FLOP report");
  c_count->add_option("--variant", count.variant, "base | large")->capture_default_str();
  c_count->add_option("--size", count.size, "input side length")->capture_default_str();
  c_count->add_option("--classes", count.classes, "number of output channels")->capture_default_str();
  c_count->add_option("--json", count.json_out, "write the structured report here");
  c_count->add_flag("--all-layers", count.all_layers, "include parameter-free elementwise rows");
  count.ablation.add_to(c_count);

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "local forward latency");
  c_bench->add_option("--ckpt", bench.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  c_bench->add_option("--iters", bench.iters, "timed iterations")->capture_default_str();
  c_bench->add_option("--batch", bench.batch, "batch size")->capture_default_str();

  GradcheckArgs grad;
  auto* c_grad = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  c_grad->add_option("--scope", grad.scope, "ops | blocks | model")
      ->check(CLI::IsMember({"ops", "blocks", "model"}))
      ->capture_default_str();
  c_grad->add_option("--threshold", grad.threshold, "maximum relative error")->capture_default_str();

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "write a synthetic PNM dataset");
  c_synth->add_option("--seed", synth.seed, "generator seed")->capture_default_str();
  c_synth->add_option("--n", synth.n, "number of samples")->capture_default_str()->check(CLI::PositiveNumber);
  c_synth->add_option("--size", synth.size, "side length (multiple of 32)")->capture_default_str();
  c_synth->add_option("--difficulty", synth.difficulty, "0 = easy, 1 = hard")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  c_synth->add_option("--out", synth.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (c_train->parsed() && train.data.empty() && train.synth.empty()) {
      throw Failure{MUVIT_ERR_USAGE, "train needs --data DIR or --synth SEED,N"};
    }
    if (c_eval->parsed() && eval.data.empty() && eval.synth.empty()) {
      throw Failure{MUVIT_ERR_USAGE, "eval needs --data DIR or --synth SEED,N"};
    }
    if (c_build->parsed()) return run_build(build);
    if (c_train->parsed()) return run_train(train);
    if (c_eval->parsed()) return run_eval(eval);
    if (c_count->parsed()) return run_count(count);
    if (c_bench->parsed()) return run_bench(bench);
    if (c_grad->parsed()) return run_gradcheck(grad);
    if (c_synth->parsed()) return run_synth(synth);
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << "\n";
    return exit_code(f.status);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
