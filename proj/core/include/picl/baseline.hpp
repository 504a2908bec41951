#pragma once

#include "picl/data.hpp"
#include "picl/model.hpp"

namespace picl {

// Toy dense cross-attention baseline: per-pixel tokens at a small working
// resolution, target tokens cross-attend to all context tokens each layer.
struct GlobalModelConfig {
    int d = 16;
    int layers = 2;
    int heads = 2;
    int enc_mid = 8;       // hidden width of the conv encoder/decoder
    int working_res = 32;
    int n_context = 3;
    int safety_cap = 128;  // dense attention refuses to run above this

    int head_dim() const { return d / heads; }
    void validate() const;
};

void init_global_model(const GlobalModelConfig& cfg, ParamSet& params, RngStream& rng);

// Logits at the working resolution; differentiable w.r.t. params.
Tensor global_forward_logits(const GlobalModelConfig& cfg, const ParamSet& params, const TaskInstance& task);

// sigma(logits) upsampled to the task's native resolution.
Tensor global_forward(const GlobalModelConfig& cfg, const ParamSet& params, const TaskInstance& task);

}  // namespace picl
