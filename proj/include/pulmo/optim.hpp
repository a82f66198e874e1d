#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "pulmo/errors.hpp"
#include "pulmo/tensor.hpp"

namespace pulmo::optim {

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Standard Adam with bias correction. State tensors are lazily sized to the
// parameter list on the first step.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  void set_lr(float lr) { cfg_.lr = lr; }

  void step(const std::vector<Tensor*>& params,
            const std::vector<Tensor>& grads) {
    if (params.size() != grads.size()) {
      throw DimensionError("adam: param/grad count mismatch");
    }
    if (m_.empty()) {
      for (const Tensor* p : params) {
        m_.emplace_back(p->shape(), 0.0f);
        v_.emplace_back(p->shape(), 0.0f);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), t_);
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      const Tensor& g = grads[i];
      if (!p.same_shape(g)) {
        throw DimensionError("adam: grad shape mismatch at param " +
                             std::to_string(i));
      }
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0f - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0f - cfg_.beta2) * g[j] * g[j];
        const float mhat = static_cast<float>(m[j] / bc1);
        const float vhat = static_cast<float>(v[j] / bc2);
        p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  void reset() {
    m_.clear();
    v_.clear();
    t_ = 0;
  }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  long t_ = 0;
};

}  // namespace pulmo::optim
