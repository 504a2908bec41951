#pragma once

#include <vector>

#include "picl/rng.hpp"

namespace picl {

struct PatchBox {
    int y0 = 0;
    int x0 = 0;
    int size = 0;
    bool covers(int y, int x) const { return y >= y0 && y < y0 + size && x >= x0 && x < x0 + size; }
};

struct CandidateGrid {
    std::vector<PatchBox> boxes;  // row-major grid order
    int resolution = 0;
    int stride = 0;
    int patch_size = 0;
};

// H x W binary-entropy map, values in [0, ln 2].
struct EntropyMap {
    std::vector<double> values;
    int resolution = 0;
};

struct SampledPatchSet {
    std::vector<int> selected;          // candidate indices, key-descending
    std::vector<PatchBox> boxes;        // boxes of the selected candidates
    std::vector<double> weights;        // per-candidate mean weights (all candidates)
    std::vector<double> noise;          // per-candidate Gumbel draws (zeros when noise off)
    int k = 0;
};

// Elementwise binary entropy in nats of a probability map (0 log 0 := 0).
EntropyMap entropy_map(const std::vector<double>& prob, int resolution);

// Regular grid of patch boxes; extra border-flush boxes are appended per
// row/column so the union always covers the full image.
CandidateGrid candidate_grid(int resolution, int patch_size, int stride);

// Mean of the map over each candidate box.
std::vector<double> patch_mean_weights(const std::vector<double>& map, int resolution, const CandidateGrid& grid);

// Top-K of log w(k) + g_k, g_k ~ Gumbel(0,1); ties break toward lower index.
// Zero-weight candidates get key -inf and lose to any positive-weight one.
SampledPatchSet gumbel_top_k(const std::vector<double>& weights, const CandidateGrid& grid, int k, RngStream& rng,
                             bool noise_enabled);

// Per-candidate weight 1 / (1 + mean Euclidean distance to the mask boundary);
// uniform when the mask has no boundary (empty or full).
std::vector<double> boundary_distance_weights(const std::vector<double>& label, int resolution,
                                              const CandidateGrid& grid);

// Exact per-pixel Euclidean distance to the nearest boundary pixel, where the
// boundary is every fg pixel 4-adjacent to bg plus every bg pixel 4-adjacent
// to fg. Empty result if the mask has no boundary.
std::vector<double> boundary_distance_map(const std::vector<double>& label, int resolution);

}  // namespace picl
