#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "picl/data.hpp"
#include "picl/model.hpp"
#include "picl/sampling.hpp"

namespace picl {

struct LevelConfig {
    int resolution = 0;
    int k_target = 1;
    int k_context = 1;
    int patch_size = 8;
    int stride = 8;
};

struct CascadeConfig {
    std::vector<LevelConfig> levels;  // strictly increasing resolution
    ModelConfig model;
    int n_context = 3;
    bool noise_enabled = true;
    void validate() const;
};

struct LevelPrediction {
    Tensor logits;                 // [r,r], zero outside coverage
    Tensor combined;               // [r,r] after additive fusion
    std::vector<double> coverage;  // binary, r*r
    SampledPatchSet patches;
    int resolution = 0;
};

struct PredictionPyramid {
    std::vector<LevelPrediction> levels;
    Tensor final_prob;  // [R,R] at the task's native resolution
};

// Per-pixel mean over covering patches; uncovered pixels get logit 0 and
// coverage 0. Differentiable w.r.t. the patch logits.
std::pair<Tensor, std::vector<double>> aggregate_patches(const std::vector<std::pair<PatchBox, Tensor>>& patch_logits,
                                                         int resolution);

// Bilinear-upsamples the previous combined logits and adds the coverage-masked
// level logits.
Tensor fuse_levels(const Tensor& prev_combined, const Tensor& level_logits, const std::vector<double>& coverage);

LevelPrediction run_level(const TaskInstance& task, const LevelConfig& level, const LevelPrediction* prev,
                          const CascadeConfig& config, const ParamSet& params, RngStream& rng);

PredictionPyramid cascade_forward(const TaskInstance& task, const CascadeConfig& config, const ParamSet& params,
                                  RngStream& rng);

// BCE + soft Dice (eps = 1) of combined logits against a binary mask.
Tensor level_loss(const Tensor& combined_logits, const Tensor& gt);

// Sum of per-level losses, ground truth downsampled by area majority.
Tensor total_loss(const PredictionPyramid& pyramid, const Tensor& gt_full);

// Area-majority mask resampling (foreground where covered area >= 0.5).
std::vector<double> resample_mask_majority(const std::vector<double>& mask, int in_res, int out_res);

// Extracts a detached patch from a [H,W] map.
Tensor extract_patch(const Tensor& map, const PatchBox& box);

}  // namespace picl
