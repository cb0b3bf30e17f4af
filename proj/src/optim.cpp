#include "rce/optim.hpp"

#include "rce/error.hpp"

#include <cmath>
#include <numbers>

namespace rce {

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, const AdamOptions& options) {
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), {});
        state.v.assign(params.size(), {});
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].numel(), 0.0);
            state.v[i].assign(params[i].numel(), 0.0);
        }
        state.step = 0;
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(options.beta1, t);
    const double c2 = 1.0 - std::pow(options.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != params[i].numel()) {
            throw ShapeMismatch("optimizer state does not match parameter " + std::to_string(i));
        }
        if (!params[i].has_grad()) {
            continue; // never reached by a backward pass
        }
        auto g = params[i].grad();
        for (std::size_t j = 0; j < m.size(); ++j) {
            m[j] = options.beta1 * m[j] + (1.0 - options.beta1) * g[j];
            v[j] = options.beta2 * v[j] + (1.0 - options.beta2) * g[j] * g[j];
        }
        auto p = params[i].data();
        for (std::size_t j = 0; j < m.size(); ++j) {
            p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + options.eps);
        }
    }
}

double lr_schedule(long long step, long long warmup, long long total, double max_lr) {
    if (step < 0 || step > total) {
        throw StepOutOfRange("step " + std::to_string(step) + " outside [0, " + std::to_string(total) + "]");
    }
    if (warmup > 0 && step < warmup) {
        return max_lr * static_cast<double>(step) / static_cast<double>(warmup);
    }
    if (total <= warmup) {
        return max_lr;
    }
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    return 0.5 * max_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

void zero_grads(std::vector<Tensor>& params) {
    for (auto& p : params) {
        p.zero_grad();
    }
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (p.has_grad()) {
            for (double g : p.grad()) {
                sq += g * g;
            }
        }
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& p : params) {
            if (p.has_grad()) {
                for (double& g : p.grad()) {
                    g *= s;
                }
            }
        }
    }
    return norm;
}

std::vector<Tensor> tensors_of(const ParamList& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& p : params) {
        out.push_back(p.tensor);
    }
    return out;
}

} // namespace rce
