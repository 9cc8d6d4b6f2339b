#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lifelong/tensor.hpp"

namespace lifelong {

enum class LrSchedule : std::uint8_t { linear_decay, inverse_sqrt };

inline std::string_view to_string(LrSchedule s) {
  return s == LrSchedule::linear_decay ? "linear-decay" : "inverse-sqrt";
}

inline LrSchedule parse_schedule(std::string_view text) {
  if (text == "linear-decay") return LrSchedule::linear_decay;
  if (text == "inverse-sqrt") return LrSchedule::inverse_sqrt;
  throw ConfigError("schedule: unknown value '" + std::string(text) + "'");
}

inline std::size_t warmup_steps(std::size_t total, double warmup_ratio) {
  return static_cast<std::size_t>(std::floor(warmup_ratio * static_cast<double>(total)));
}

/// Learning rate at 1-based update `step` of `total`: linear warmup to `peak`,
/// then linear decay to zero at `total` or peak * sqrt(warmup / step).
inline double lr_at(LrSchedule schedule, std::size_t step, std::size_t total, double warmup_ratio, double peak) {
  if (total == 0) throw InvalidArgument("lr_at: total steps must be positive");
  if (step > total) throw InvalidArgument("lr_at: step beyond total");
  const std::size_t warmup = warmup_steps(total, warmup_ratio);
  if (warmup > 0 && step < warmup) {
    return peak * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (schedule == LrSchedule::linear_decay) {
    if (total == warmup) return peak;
    return peak * static_cast<double>(total - step) / static_cast<double>(total - warmup);
  }
  // inverse-sqrt: a zero-length warmup behaves like a one-step warmup
  const double w = static_cast<double>(std::max<std::size_t>(warmup, 1));
  return peak * std::sqrt(w / static_cast<double>(std::max<std::size_t>(step, 1)));
}

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-6;
};

struct NamedParam {
  std::string name;
  Tensor tensor;
  double weight_decay = 0.01;
};

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
inline double clip_grad_norm(std::span<NamedParam> params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params) {
    for (float g : p.tensor.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const float factor = static_cast<float>(max_norm / (norm + 1e-6));
    for (auto& p : params) {
      for (float& g : p.tensor.grad()) g *= factor;
    }
  }
  return norm;
}

/// Adam with decoupled weight decay. Moment buffers are keyed by parameter
/// name and carry their own step count, so parameters that sit out a step
/// (prompts of absent domains) keep consistent bias correction.
class AdamW {
 public:
  struct Slot {
    std::vector<float> m;
    std::vector<float> v;
    std::uint64_t steps = 0;
  };

  explicit AdamW(AdamHyper hyper = {}) : hyper_(hyper) {}

  const AdamHyper& hyper() const { return hyper_; }

  void step(std::span<const NamedParam> params, double lr) {
    for (const auto& p : params) {
      Tensor t = p.tensor;
      auto values = t.values();
      auto grads = t.grad();
      Slot& slot = slots_[p.name];
      if (slot.m.size() != values.size()) {
        slot.m.assign(values.size(), 0.0f);
        slot.v.assign(values.size(), 0.0f);
        slot.steps = 0;
      }
      ++slot.steps;
      const double c1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(slot.steps));
      const double c2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(slot.steps));
      const float b1 = static_cast<float>(hyper_.beta1), b2 = static_cast<float>(hyper_.beta2);
      for (std::size_t i = 0; i < values.size(); ++i) {
        const float g = grads[i];
        slot.m[i] = b1 * slot.m[i] + (1.0f - b1) * g;
        slot.v[i] = b2 * slot.v[i] + (1.0f - b2) * g * g;
        const double m_hat = slot.m[i] / c1;
        const double v_hat = slot.v[i] / c2;
        const double update = m_hat / (std::sqrt(v_hat) + hyper_.epsilon) + p.weight_decay * values[i];
        values[i] = static_cast<float>(static_cast<double>(values[i]) - lr * update);
      }
    }
  }

  void reset() { slots_.clear(); }

  /// True when no moment buffer holds state.
  bool fresh() const {
    for (const auto& [_, slot] : slots_) {
      if (slot.steps != 0) return false;
      for (float x : slot.m) if (x != 0.0f) return false;
      for (float x : slot.v) if (x != 0.0f) return false;
    }
    return true;
  }

  const std::map<std::string, Slot>& slots() const { return slots_; }

 private:
  AdamHyper hyper_;
  std::map<std::string, Slot> slots_;
};

}  // namespace lifelong
