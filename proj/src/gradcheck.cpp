#include "muvit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <utility>

#include "muvit/ops.hpp"

namespace muvit {

GradcheckResult gradcheck(const std::function<Tensor<double>()>& loss_fn,
                          const std::vector<NamedTensor>& inputs, const GradcheckOptions& options) {
  const double eps = options.eps;
  const std::size_t max_per_input = options.max_per_input;
  std::vector<Tensor<double>> xs;
  for (const auto& [name, t] : inputs) {
    Tensor<double> x = t;
    x.set_requires_grad(true);
    x.zero_grad();
    xs.push_back(x);
  }

  Graph<double> graph;
  {
    GraphScope<double> scope(graph);
    const auto loss = loss_fn();
    if (!std::isfinite(loss.item())) throw VerificationError("gradcheck: non-finite loss");
    graph.backward(loss);
  }
  graph.clear();

  auto eval = [&](std::uint64_t* branches = nullptr) {
    NoGradScope<double> off;
    BranchTrace trace;
    BranchTraceScope tracing(trace);
    const double v = loss_fn().item();
    if (!std::isfinite(v)) throw VerificationError("gradcheck: non-finite perturbed loss");
    if (branches != nullptr) *branches = trace.hash;
    return v;
  };
  std::uint64_t base_branches = 0;
  if (options.skip_nonsmooth) eval(&base_branches);

  // Gradients far below the largest one are compared in absolute terms;
  // their difference quotients are mostly rounding.
  double largest = 0.0;
  for (const auto& x : xs) {
    if (x.has_grad()) {
      for (double g : x.grad()) largest = std::max(largest, std::abs(g));
    }
  }
  const double floor = std::max(1e-12, options.floor_ratio * largest);

  GradcheckResult result;
  std::mt19937_64 rng(options.seed);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    auto& x = xs[k];
    const std::vector<double> analytic =
        x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end())
                     : std::vector<double>(x.numel(), 0.0);
    std::vector<std::size_t> idx(x.numel());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const bool sampled = max_per_input != 0 && idx.size() > max_per_input;
    if (sampled) std::shuffle(idx.begin(), idx.end(), rng);
    // When sampling, elements that cross a branch are replaced by further
    // draws so every input still gets max_per_input smooth checks.
    const std::size_t attempts = sampled ? std::min(idx.size(), options.max_attempts_per_input) : idx.size();
    std::size_t smooth = 0;
    for (std::size_t n = 0; n < attempts && !(sampled && smooth == max_per_input); ++n) {
      const std::size_t i = idx[n];
      const double orig = x[i];
      bool crossed = false;
      auto at = [&](double offset) {
        x[i] = orig + offset;
        std::uint64_t branches = 0;
        const double v = eval(&branches);
        crossed = crossed || branches != base_branches;
        return v;
      };
      // Fourth-order central stencil, shrunk while it crosses a branch.
      auto stencil = [&](double h) {
        crossed = false;
        const double f2 = at(2.0 * h), f1 = at(h), b1 = at(-h), b2 = at(-2.0 * h);
        return (-f2 + 8.0 * f1 - 8.0 * b1 + b2) / (12.0 * h);
      };
      double numeric = stencil(eps);
      for (int shrink = 0; options.skip_nonsmooth && crossed && shrink < options.max_shrinks; ++shrink) {
        numeric = stencil(eps * std::pow(0.3, shrink + 1));
      }
      x[i] = orig;
      const double a = analytic[i];
      if (!std::isfinite(a)) {
        throw VerificationError("gradcheck: non-finite analytic gradient for " + inputs[k].first);
      }
      auto rel = [&](double p, double q) { return std::abs(p - q) / std::max(floor, std::abs(p) + std::abs(q)); };
      // The stencil straddles a ReLU kink, max-pool tie or loss clamp.
      if (options.skip_nonsmooth && crossed) {
        ++result.nonsmooth;
        continue;
      }
      const double err = rel(a, numeric);
      ++smooth;
      ++result.checked;
      if (err > result.max_rel_error || result.worst.empty()) {
        result.max_rel_error = err;
        result.worst = inputs[k].first + "[" + std::to_string(i) + "]";
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
    if (smooth == 0 && x.numel() > 0) result.unverified.push_back(inputs[k].first);
  }
  return result;
}

Tensor<double> random_projection(const Tensor<double>& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor<double> r(out.shape());
  for (auto& v : r.data()) v = dist(rng);
  return sum(mul(out, r));
}

}  // namespace muvit
