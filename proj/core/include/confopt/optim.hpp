#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "confopt/params.hpp"

namespace confopt {

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double lr = 0.025;
  double momentum = 0.9;
  double weight_decay = 3e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct LrSchedule {
  enum class Kind { kCosineAnnealing, kConstant };
  Kind kind = Kind::kCosineAnnealing;
  double lr_max = 0.025;
  double lr_min = 0.0;
  int total_epochs = 1;
};

// lr_min + 0.5 (lr_max - lr_min) (1 + cos(pi epoch / total)).
inline double cosine_lr(int epoch, const LrSchedule& s) {
  if (epoch < 0 || epoch > s.total_epochs) {
    throw std::invalid_argument("cosine_lr: epoch " + std::to_string(epoch) + " out of [0," +
                                std::to_string(s.total_epochs) + "]");
  }
  if (s.kind == LrSchedule::Kind::kConstant) return s.lr_max;
  return s.lr_min +
         0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(M_PI * static_cast<double>(epoch) / s.total_epochs));
}

// SGD-with-momentum or Adam over a fixed subset of a ParamSet. L2 weight
// decay is folded into the gradient (g <- g + wd * w) before the update.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerConfig cfg, std::vector<int> param_ids)
      : cfg_(cfg), param_ids_(std::move(param_ids)) {}

  const OptimizerConfig& config() const { return cfg_; }
  const std::vector<int>& param_ids() const { return param_ids_; }
  int64_t step_count() const { return step_count_; }

  // lr < 0 uses cfg.lr. `frozen` (param id indexed, optional) skips updates
  // but still advances momentum state consistently by treating the gradient
  // as absent for that parameter.
  void step(ParamSet& params, const GradMap& grads, double lr = -1.0,
            const std::vector<bool>* frozen = nullptr) {
    if (buffers_.empty()) init_buffers(params);
    double eff_lr = lr < 0 ? cfg_.lr : lr;
    ++step_count_;
    for (size_t k = 0; k < param_ids_.size(); ++k) {
      int id = param_ids_[k];
      if (frozen && (*frozen)[id]) continue;
      const Tensor<float>& g = grads.at(id);  // throws when missing
      Tensor<float>& w = params.value(id);
      if (!g.same_shape(w)) {
        throw std::invalid_argument("optimizer: grad shape " + shape_str(g.shape) +
                                    " vs param " + shape_str(w.shape));
      }
      if (cfg_.kind == OptimizerKind::kSgd) {
        Tensor<float>& vel = buffers_[k].m;
        for (size_t i = 0; i < w.data.size(); ++i) {
          double gi = g.data[i] + cfg_.weight_decay * w.data[i];
          double v = cfg_.momentum * vel.data[i] + gi;
          vel.data[i] = static_cast<float>(v);
          w.data[i] -= static_cast<float>(eff_lr * v);
        }
      } else {
        Tensor<float>& m = buffers_[k].m;
        Tensor<float>& v = buffers_[k].v;
        double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
        double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
        for (size_t i = 0; i < w.data.size(); ++i) {
          double gi = g.data[i] + cfg_.weight_decay * w.data[i];
          double mi = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * gi;
          double vi = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * gi * gi;
          m.data[i] = static_cast<float>(mi);
          v.data[i] = static_cast<float>(vi);
          w.data[i] -= static_cast<float>(eff_lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps));
        }
      }
    }
  }

  // Checkpoint access.
  struct Buffers {
    Tensor<float> m;
    Tensor<float> v;
  };
  std::vector<Buffers>& buffers(ParamSet& params) {
    if (buffers_.empty()) init_buffers(params);
    return buffers_;
  }
  void set_step_count(int64_t n) { step_count_ = n; }

 private:
  void init_buffers(const ParamSet& params) {
    buffers_.reserve(param_ids_.size());
    for (int id : param_ids_) {
      Buffers b;
      b.m = Tensor<float>::zeros(params.value(id).shape);
      if (cfg_.kind == OptimizerKind::kAdam) b.v = Tensor<float>::zeros(params.value(id).shape);
      buffers_.push_back(std::move(b));
    }
  }

  OptimizerConfig cfg_;
  std::vector<int> param_ids_;
  std::vector<Buffers> buffers_;
  int64_t step_count_ = 0;
};

}  // namespace confopt
