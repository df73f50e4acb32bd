#pragma once

#include <cmath>
#include <vector>

#include "rst/graph.hpp"

namespace rst {

// Adam with bias correction. State rows follow the model's visit() order,
// so one optimizer instance must stay attached to one model.
template <typename Real>
class Adam {
public:
    // lr = 0 is a valid no-op configuration (used by dry-run tests).
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        if (lr < 0) throw ConfigError("learning rate must be non-negative");
    }

    double learning_rate() const { return lr_; }

    template <typename Model>
    void step(Model& model, const Graph<Real>& g) {
        ++t_;
        const Real b1t = Real(1) - static_cast<Real>(std::pow(beta1_, t_));
        const Real b2t = Real(1) - static_cast<Real>(std::pow(beta2_, t_));
        size_t slot = 0;
        model.visit([&](const std::string&, Mat<Real>& p) {
            if (slot >= m_.size()) {
                m_.push_back(Mat<Real>::Zero(p.rows(), p.cols()));
                v_.push_back(Mat<Real>::Zero(p.rows(), p.cols()));
            }
            const Mat<Real>* grad = g.grad_of(&p);
            if (grad) {
                Mat<Real>& m = m_[slot];
                Mat<Real>& v = v_[slot];
                m = m * static_cast<Real>(beta1_) + *grad * static_cast<Real>(1 - beta1_);
                v = v * static_cast<Real>(beta2_) +
                    grad->cwiseProduct(*grad) * static_cast<Real>(1 - beta2_);
                p.array() -= static_cast<Real>(lr_) * (m.array() / b1t) /
                             ((v.array() / b2t).sqrt() + static_cast<Real>(eps_));
            }
            ++slot;
        });
    }

    void reset() {
        m_.clear();
        v_.clear();
        t_ = 0;
    }

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<Mat<Real>> m_, v_;
};

}  // namespace rst
