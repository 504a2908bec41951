#pragma once

#include <string>
#include <vector>

#include "picl/baseline.hpp"
#include "picl/cascade.hpp"

namespace picl {

// Analytic operation counts. Convention: 1 multiply-add = 2 FLOPs; the
// attention term is L * (4*T^2*d_h*heads + 8*T*d^2) over T tokens.
struct FlopsReport {
    int resolution = 0;
    std::string arch;
    double encoder = 0;
    double attention = 0;
    double decoder = 0;
    double sampling = 0;
    double aggregation = 0;
    double total = 0;

    double other() const { return sampling + aggregation; }
};

extern const char* kFlopsConvention;

FlopsReport flops_patchicl(const CascadeConfig& config);
FlopsReport flops_global(const GlobalModelConfig& config, int resolution);

// 2|A^B| / (|A|+|B|), inputs binarized at 0.5; 1.0 when both masks are empty.
double dice_score(const Tensor& pred, const Tensor& gt);

struct DiceResult {
    std::vector<double> per_episode;
    double mean = 0;
    double stddev = 0;
    int n = 0;
};

DiceResult summarize_dice(std::vector<double> per_episode);

struct SweepRow {
    int resolution = 0;
    std::string arch;
    double dice_mean = 0;
    double dice_std = 0;
    int n = 0;
    FlopsReport flops;
};

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);

// First resolution where the PatchICL total undercuts the global total
// (rows must contain both arches per resolution); -1 if none.
int crossover_resolution(const std::vector<SweepRow>& rows);

// Cascade used in the resolution sweep: levels r/4 -> r/2 -> r with fixed K
// and patch size.
CascadeConfig sweep_cascade_config(int resolution, const ModelConfig& model, int n_context);

}  // namespace picl
