#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "batchcur/error.hpp"
#include "batchcur/loss.hpp"
#include "batchcur/nn.hpp"

namespace batchcur {

struct SgdConfig {
    double learning_rate = 0.06;  // base rate for batch 128
    double momentum = 0.9;
    double weight_decay = 0.0;

    friend bool operator==(const SgdConfig&, const SgdConfig&) = default;
};

// Cosine decay from base_lr at step 0 towards 0 at total_steps.
inline double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps) {
    if (total_steps == 0) return base_lr;
    const double t = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

// SGD with heavy-ball momentum: v <- mu v + g + wd p; p <- p - lr v.
template <class T>
class Sgd {
public:
    explicit Sgd(SgdConfig cfg = {}) : cfg_(cfg) {}

    const SgdConfig& config() const noexcept { return cfg_; }

    void step(EncoderModel<T>& model, double lr) {
        auto params = model.parameters();
        if (velocity_.empty()) {
            for (auto* p : params) velocity_.emplace_back(p->size(), T(0));
        }
        const T mu = static_cast<T>(cfg_.momentum);
        const T wd = static_cast<T>(cfg_.weight_decay);
        const T rate = static_cast<T>(lr);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = *params[i];
            auto& v = velocity_[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                T g = p.grad[j];
                if (wd != T(0)) g += wd * p.value[j];
                v[j] = mu * v[j] + g;
                p.value[j] -= rate * v[j];
            }
        }
    }

private:
    SgdConfig cfg_;
    std::vector<std::vector<T>> velocity_;
};

// One contrastive update on 2N views (rows 2i, 2i+1 from instance i).
// Returns the loss evaluated before the update.
template <class T>
T train_step(EncoderModel<T>& model, Sgd<T>& optimizer, const Tensor<T>& views, T temperature, double lr) {
    model.zero_grad();
    auto out = model.forward(views);
    auto loss = nt_xent_loss(out.z, temperature);
    if (!std::isfinite(static_cast<double>(loss.loss)))
        throw NumericError("non-finite training loss " + std::to_string(static_cast<double>(loss.loss)));
    model.backward(loss.grad);
    optimizer.step(model, lr);
    return loss.loss;
}

}  // namespace batchcur
