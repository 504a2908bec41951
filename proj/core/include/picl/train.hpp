#pragma once

#include <string>
#include <vector>

#include "picl/baseline.hpp"
#include "picl/cascade.hpp"
#include "picl/evalcost.hpp"

namespace picl {

struct TrainConfig {
    std::string arch = "patchicl";  // "patchicl" | "global"
    uint64_t seed = 1;
    long steps = 1000;
    double lr = 1e-3;
    long checkpoint_every = 500;
    std::string out_dir;
    std::string resume;  // checkpoint path; "<path>.opt" must hold the optimizer state
    CascadeConfig cascade;
    GlobalModelConfig global;

    void validate() const;
};

struct TrainResult {
    long steps_done = 0;
    double final_loss = 0;
    std::string checkpoint_path;
};

// Three-level coarse-to-fine cascade ending at `resolution`.
CascadeConfig default_cascade_config(int resolution, int n_context);

// Adam on one random episode per step; appends "step,loss_total,loss_l<i>..."
// rows to <out_dir>/train_log.csv and writes periodic + final checkpoints.
// Per-step RNG streams are derived from (seed, step), so a resumed run is
// bit-identical to an uninterrupted one.
TrainResult train_model(const TrainConfig& cfg, const std::vector<TaskInstance>& episodes);

// Per-episode Dice (prediction binarized at 0.5), indexed like `episodes`.
// `jobs` threads split the episodes; the result is independent of `jobs`.
// When `predictions` is given it receives the probability maps.
std::vector<double> eval_dice_per_episode(const TrainConfig& cfg, const ParamSet& params,
                                          const std::vector<TaskInstance>& episodes, int jobs,
                                          std::vector<Tensor>* predictions = nullptr);

}  // namespace picl
