#include "muvit/optim.hpp"

#include <cmath>
#include <map>
#include <numbers>

namespace muvit {

template <typename T>
Sgd<T>::Sgd(Named params, SgdOptions opts) : params_(std::move(params)), opts_(opts) {
  for (const auto& [name, p] : params_) velocity_.emplace_back(p.shape());
}

template <typename T>
void Sgd<T>::step(double lr) {
  for (const auto& [name, p] : params_) {
    if (!p.has_grad()) throw UsageError("parameter '" + name + "' has no gradient");
  }
  const T mu = static_cast<T>(opts_.momentum);
  const T wd = static_cast<T>(opts_.weight_decay);
  const T rate = static_cast<T>(lr);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k].second;
    auto g = p.grad();
    auto v = velocity_[k].data();
    auto data = p.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      v[i] = mu * v[i] + (g[i] + wd * data[i]);
    }
    if (lr != 0.0) {
      for (std::size_t i = 0; i < data.size(); ++i) data[i] -= rate * v[i];
    }
  }
  ++steps_;
}

template <typename T>
void Sgd<T>::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

template <typename T>
typename Sgd<T>::Named Sgd<T>::state() const {
  Named out;
  for (std::size_t k = 0; k < params_.size(); ++k) out.emplace_back("optim/" + params_[k].first, velocity_[k]);
  return out;
}

template <typename T>
void Sgd<T>::load_state(const Named& buffers, std::int64_t steps) {
  std::map<std::string, const Tensor<T>*> byname;
  for (const auto& [name, t] : buffers) byname[name] = &t;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto key = "optim/" + params_[k].first;
    auto it = byname.find(key);
    if (it == byname.end()) throw ConfigError("optimizer state is missing '" + key + "'");
    if (it->second->shape() != velocity_[k].shape()) {
      throw ConfigError("optimizer buffer '" + key + "' has shape " + shape_str(it->second->shape()) +
                        ", expected " + shape_str(velocity_[k].shape()));
    }
    std::copy(it->second->data().begin(), it->second->data().end(), velocity_[k].data().begin());
  }
  steps_ = steps;
}

template class Sgd<float>;
template class Sgd<double>;

std::string to_string(ScheduleKind k) { return k == ScheduleKind::poly ? "poly" : "warmup_cosine"; }

ScheduleKind parse_schedule(const std::string& s) {
  if (s == "poly") return ScheduleKind::poly;
  if (s == "warmup_cosine") return ScheduleKind::warmup_cosine;
  throw ConfigError("unknown schedule '" + s + "' (expected poly or warmup_cosine)");
}

double lr_at(ScheduleKind kind, std::int64_t t, std::int64_t total, double lr0, std::int64_t warmup,
             double power) {
  if (total <= 0) throw ConfigError("schedule needs a positive step count");
  if (t < 0 || t > total) {
    throw UsageError("step " + std::to_string(t) + " outside [0, " + std::to_string(total) + "]");
  }
  if (kind == ScheduleKind::poly) {
    return lr0 * std::pow(1.0 - static_cast<double>(t) / static_cast<double>(total), power);
  }
  if (warmup < 0 || warmup > total) throw ConfigError("warmup must lie in [0, total]");
  if (t < warmup) return lr0 * static_cast<double>(t) / static_cast<double>(warmup);
  if (total == warmup) return lr0;
  const double progress = static_cast<double>(t - warmup) / static_cast<double>(total - warmup);
  return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace muvit
