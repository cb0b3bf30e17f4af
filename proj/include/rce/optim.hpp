#pragma once

#include "rce/nn.hpp"

#include <cstdint>
#include <vector>

namespace rce {

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First and second moment estimates, one buffer per parameter.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t step = 0;
};

/// One bias-corrected Adam update of every tensor in `params` from its
/// accumulated gradient. Parameters no backward pass has reached (no
/// gradient buffer) are skipped. Gradients are left untouched.
void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, const AdamOptions& options = {});

/// Linear warmup from 0 to `max_lr` over `warmup` steps, then cosine decay to
/// 0 at `total`. Throws StepOutOfRange outside [0, total].
double lr_schedule(long long step, long long warmup = 5000, long long total = 300000, double max_lr = 0.001);

/// Zeroes every gradient buffer.
void zero_grads(std::vector<Tensor>& params);

/// Scales gradients so their global L2 norm is at most `max_norm`; returns
/// the norm before scaling. A non-positive bound leaves them unchanged.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

std::vector<Tensor> tensors_of(const ParamList& params);

} // namespace rce
