#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "rgbx/graph.hpp"

namespace rgbx {

struct AdamWConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;

    void validate() const {
        if (!(lr > 0)) throw std::invalid_argument("adamw: lr must be > 0");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw std::invalid_argument("adamw: betas must lie in [0, 1)");
        if (eps <= 0 || weight_decay < 0) throw std::invalid_argument("adamw: bad eps/decay");
    }
};

// 1/2 (1 + cos(pi * step / total)): 1 at step 0, ~0 at the final step.
inline double cosine_factor(int64_t step, int64_t total_steps) {
    if (total_steps <= 0) return 1.0;
    return 0.5 * (1.0 + std::cos(3.141592653589793 * double(step) / double(total_steps)));
}

// Adaptive moments with bias correction and decoupled weight decay. A step
// whose gradients contain non-finite values is skipped and counted.
class AdamW {
public:
    AdamW(std::vector<std::shared_ptr<Buffer>> params, AdamWConfig cfg = {})
        : cfg_(cfg), params_(std::move(params)) {
        cfg_.validate();
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const auto& p : params_) {
            m_.emplace_back(p->size(), 0.0);
            v_.emplace_back(p->size(), 0.0);
        }
    }

    bool step(const std::vector<Buffer>& grads, double lr_scale = 1.0) {
        if (grads.size() != params_.size())
            throw std::invalid_argument("adamw: gradient list size mismatch");
        for (size_t i = 0; i < grads.size(); ++i) {
            if (grads[i].size() != params_[i]->size())
                throw std::invalid_argument("adamw: gradient shape mismatch");
            for (double g : grads[i])
                if (!std::isfinite(g)) {
                    ++skipped_;
                    return false;
                }
        }
        ++t_;
        const double lr = cfg_.lr * lr_scale;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            Buffer& p = *params_[i];
            Buffer& m = m_[i];
            Buffer& v = v_[i];
            const Buffer& g = grads[i];
            for (size_t j = 0; j < p.size(); ++j) {
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                p[j] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p[j]);
            }
        }
        return true;
    }

    int64_t step_count() const { return t_; }
    int64_t skipped_count() const { return skipped_; }

private:
    AdamWConfig cfg_;
    std::vector<std::shared_ptr<Buffer>> params_;
    std::vector<Buffer> m_, v_;
    int64_t t_ = 0;
    int64_t skipped_ = 0;
};

} // namespace rgbx
