#include "picl/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace picl {

EntropyMap entropy_map(const std::vector<double>& prob, int resolution) {
    if (static_cast<int>(prob.size()) != resolution * resolution) {
        throw std::invalid_argument("entropy_map: map size does not match resolution");
    }
    EntropyMap out;
    out.resolution = resolution;
    out.values.resize(prob.size());
    for (size_t i = 0; i < prob.size(); ++i) {
        double p = prob[i];
        if (!(p >= 0.0 && p <= 1.0)) {
            int y = static_cast<int>(i) / resolution, x = static_cast<int>(i) % resolution;
            throw std::invalid_argument("entropy_map: probability " + std::to_string(p) + " outside [0,1] at (" +
                                        std::to_string(y) + "," + std::to_string(x) + ")");
        }
        double h = 0.0;
        if (p > 0.0 && p < 1.0) h = -p * std::log(p) - (1.0 - p) * std::log(1.0 - p);
        out.values[i] = std::max(0.0, h);
    }
    return out;
}

CandidateGrid candidate_grid(int resolution, int patch_size, int stride) {
    if (patch_size < 1 || patch_size > resolution) {
        throw std::invalid_argument("candidate_grid: patch_size " + std::to_string(patch_size) +
                                    " invalid for resolution " + std::to_string(resolution));
    }
    if (stride < 1) throw std::invalid_argument("candidate_grid: stride must be >= 1");
    std::vector<int> starts;
    for (int s = 0; s + patch_size <= resolution; s += stride) starts.push_back(s);
    // Border-flush box if the last regular box leaves pixels uncovered.
    if (starts.back() + patch_size < resolution) starts.push_back(resolution - patch_size);
    CandidateGrid g;
    g.resolution = resolution;
    g.stride = stride;
    g.patch_size = patch_size;
    for (int y : starts) {
        for (int x : starts) g.boxes.push_back({y, x, patch_size});
    }
    return g;
}

std::vector<double> patch_mean_weights(const std::vector<double>& map, int resolution, const CandidateGrid& grid) {
    if (resolution != grid.resolution || static_cast<int>(map.size()) != resolution * resolution) {
        throw std::invalid_argument("patch_mean_weights: map resolution does not match grid");
    }
    std::vector<double> out(grid.boxes.size());
    for (size_t k = 0; k < grid.boxes.size(); ++k) {
        const PatchBox& b = grid.boxes[k];
        double s = 0;
        for (int y = b.y0; y < b.y0 + b.size; ++y) {
            for (int x = b.x0; x < b.x0 + b.size; ++x) s += map[static_cast<size_t>(y) * resolution + x];
        }
        out[k] = s / (static_cast<double>(b.size) * b.size);
    }
    return out;
}

SampledPatchSet gumbel_top_k(const std::vector<double>& weights, const CandidateGrid& grid, int k, RngStream& rng,
                             bool noise_enabled) {
    if (k < 1) throw std::invalid_argument("gumbel_top_k: K must be >= 1");
    if (weights.size() != grid.boxes.size()) {
        throw std::invalid_argument("gumbel_top_k: weight count does not match candidate count");
    }
    bool any_positive = false;
    for (double w : weights) {
        if (w < 0) throw std::invalid_argument("gumbel_top_k: negative weight");
        if (w > 0) any_positive = true;
    }
    if (!any_positive) throw std::invalid_argument("gumbel_top_k: no informative candidates (all weights zero)");

    SampledPatchSet out;
    out.weights = weights;
    out.noise.resize(weights.size(), 0.0);
    // Noise is drawn per candidate in index order so equal streams replay
    // identical realizations.
    if (noise_enabled) {
        for (auto& g : out.noise) g = rng.gumbel();
    }
    std::vector<double> keys(weights.size());
    for (size_t i = 0; i < weights.size(); ++i) {
        keys[i] = weights[i] > 0 ? std::log(weights[i]) + out.noise[i] : -std::numeric_limits<double>::infinity();
    }
    std::vector<int> order(weights.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return keys[static_cast<size_t>(a)] > keys[static_cast<size_t>(b)]; });
    int n = std::min<int>(k, static_cast<int>(weights.size()));
    for (int i = 0; i < n; ++i) {
        // Zero-weight candidates sort last, so they are only picked once every
        // positive-weight candidate is already in the set.
        int idx = order[static_cast<size_t>(i)];
        out.selected.push_back(idx);
        out.boxes.push_back(grid.boxes[static_cast<size_t>(idx)]);
    }
    out.k = k;
    return out;
}

std::vector<double> boundary_distance_map(const std::vector<double>& label, int resolution) {
    if (static_cast<int>(label.size()) != resolution * resolution) {
        throw std::invalid_argument("boundary_distance_map: label size does not match resolution");
    }
    auto fg = [&](int y, int x) { return label[static_cast<size_t>(y) * resolution + x] > 0.5; };
    std::vector<std::pair<int, int>> boundary;
    for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
            bool f = fg(y, x);
            bool adj_other = false;
            const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
            for (int d = 0; d < 4; ++d) {
                int ny = y + dy[d], nx = x + dx[d];
                if (ny < 0 || ny >= resolution || nx < 0 || nx >= resolution) continue;
                if (fg(ny, nx) != f) {
                    adj_other = true;
                    break;
                }
            }
            if (adj_other) boundary.emplace_back(y, x);
        }
    }
    if (boundary.empty()) return {};
    std::vector<double> dist(label.size());
    for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& [by, bx] : boundary) {
                double d2 = static_cast<double>((y - by) * (y - by) + (x - bx) * (x - bx));
                best = std::min(best, d2);
            }
            dist[static_cast<size_t>(y) * resolution + x] = std::sqrt(best);
        }
    }
    return dist;
}

std::vector<double> boundary_distance_weights(const std::vector<double>& label, int resolution,
                                              const CandidateGrid& grid) {
    if (resolution != grid.resolution) {
        throw std::invalid_argument("boundary_distance_weights: label resolution does not match grid");
    }
    std::vector<double> dist = boundary_distance_map(label, resolution);
    if (dist.empty()) {
        // No boundary (empty or full mask): uniform weights.
        return std::vector<double>(grid.boxes.size(), 1.0);
    }
    std::vector<double> mean_dist = patch_mean_weights(dist, resolution, grid);
    std::vector<double> out(mean_dist.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + mean_dist[i]);
    return out;
}

}  // namespace picl
