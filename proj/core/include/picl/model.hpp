#pragma once

#include <vector>

#include "picl/ops.hpp"
#include "picl/params.hpp"

namespace picl {

struct ModelConfig {
    int d = 32;
    int layers = 2;
    int heads = 2;
    int patch_size = 8;
    std::vector<int> enc_channels = {8, 16};

    int head_dim() const { return d / heads; }
    void validate() const;
};

enum class TokenKind { Target = 0, ContextJoint = 1 };

struct PatchToken {
    Tensor embedding;  // [d]
    double y = 0;      // patch-grid coordinates
    double x = 0;
    TokenKind kind = TokenKind::Target;
};

struct EncodedPatch {
    Tensor embedding;  // [d]
    Tensor skip_full;  // [c1, P, P]
    Tensor skip_half;  // [c2, ceil(P/2), ceil(P/2)]
};

// Standard sinusoidal encoding of an integer resolution.
std::vector<double> resolution_encoding(int r, int d);

// Registers all encoder/attention/decoder parameters under "pm/".
void init_patch_model(const ModelConfig& cfg, ParamSet& params, RngStream& rng);

// CNN-encodes one patch (label channel 0.5-filled for target patches) and
// conditions the embedding on the level resolution.
EncodedPatch encode_patch(const ModelConfig& cfg, const ParamSet& params, const Tensor& image_patch,
                          const Tensor* label_patch, int resolution);

// L pre-norm transformer layers over the joint target/context token set with
// per-layer type embeddings and 2D RoPE on q/k. Returns [T, d].
Tensor attention_stack(const ModelConfig& cfg, const ParamSet& params, const std::vector<PatchToken>& tokens);

// Reconstructs per-pixel logits for one patch from its attended embedding and
// the encoder skip features. Returns [P, P].
Tensor decode_patch(const ModelConfig& cfg, const ParamSet& params, const Tensor& attended, const EncodedPatch& enc);

}  // namespace picl
