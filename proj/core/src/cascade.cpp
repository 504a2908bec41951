#include "picl/cascade.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace picl {

void CascadeConfig::validate() const {
    if (levels.empty()) throw std::invalid_argument("CascadeConfig: at least one level required");
    for (size_t i = 0; i < levels.size(); ++i) {
        const LevelConfig& l = levels[i];
        if (l.k_target < 1 || l.k_context < 1) throw std::invalid_argument("CascadeConfig: K must be >= 1");
        if (l.patch_size > l.resolution) throw std::invalid_argument("CascadeConfig: patch_size exceeds level resolution");
        if (i > 0 && levels[i - 1].resolution >= l.resolution) {
            throw std::invalid_argument("CascadeConfig: level resolutions must be strictly increasing");
        }
        if (l.patch_size != model.patch_size) {
            throw std::invalid_argument("CascadeConfig: level patch_size must match the model patch size");
        }
    }
    model.validate();
    if (n_context < 1) throw std::invalid_argument("CascadeConfig: n_context must be >= 1");
}

std::pair<Tensor, std::vector<double>> aggregate_patches(const std::vector<std::pair<PatchBox, Tensor>>& patch_logits,
                                                         int resolution) {
    std::vector<double> counts(static_cast<size_t>(resolution) * resolution, 0.0);
    for (const auto& [box, patch] : patch_logits) {
        if (box.y0 < 0 || box.x0 < 0 || box.y0 + box.size > resolution || box.x0 + box.size > resolution) {
            throw std::invalid_argument("aggregate_patches: box out of bounds");
        }
        if (patch.rank() != 2 || patch.dim(0) != box.size || patch.dim(1) != box.size) {
            throw std::invalid_argument("aggregate_patches: patch shape does not match its box");
        }
        for (int y = box.y0; y < box.y0 + box.size; ++y) {
            for (int x = box.x0; x < box.x0 + box.size; ++x) counts[static_cast<size_t>(y) * resolution + x] += 1.0;
        }
    }
    std::vector<double> vals(counts.size(), 0.0);
    for (const auto& [box, patch] : patch_logits) {
        const auto& pv = patch.data();
        for (int y = 0; y < box.size; ++y) {
            for (int x = 0; x < box.size; ++x) {
                size_t px = static_cast<size_t>(box.y0 + y) * resolution + (box.x0 + x);
                vals[px] += pv[static_cast<size_t>(y) * box.size + x] / counts[px];
            }
        }
    }
    Tape* tp = nullptr;
    std::vector<int> nodes;
    for (const auto& [box, patch] : patch_logits) {
        nodes.push_back(patch.node());
        if (patch.attached()) {
            if (tp && tp != patch.tape()) throw std::invalid_argument("aggregate_patches mixes tapes");
            tp = patch.tape();
        }
    }
    Tensor out({resolution, resolution}, std::move(vals));
    if (tp) {
        int node = tp->alloc(out.size());
        out.set_node(tp, node);
        std::vector<PatchBox> boxes;
        for (const auto& [box, patch] : patch_logits) boxes.push_back(box);
        tp->record([tp, node, nodes, boxes, counts, resolution]() {
            auto& g = tp->grad(node);
            for (size_t k = 0; k < boxes.size(); ++k) {
                if (nodes[k] < 0) continue;
                auto& gp = tp->grad(nodes[k]);
                const PatchBox& box = boxes[k];
                for (int y = 0; y < box.size; ++y) {
                    for (int x = 0; x < box.size; ++x) {
                        size_t px = static_cast<size_t>(box.y0 + y) * resolution + (box.x0 + x);
                        gp[static_cast<size_t>(y) * box.size + x] += g[px] / counts[px];
                    }
                }
            }
        });
    }
    std::vector<double> coverage(counts.size());
    for (size_t i = 0; i < counts.size(); ++i) coverage[i] = counts[i] > 0 ? 1.0 : 0.0;
    return {out, coverage};
}

Tensor fuse_levels(const Tensor& prev_combined, const Tensor& level_logits, const std::vector<double>& coverage) {
    if (level_logits.rank() != 2 || level_logits.dim(0) != level_logits.dim(1)) {
        throw std::invalid_argument("fuse_levels: level logits must be square");
    }
    int r = level_logits.dim(0);
    if (static_cast<int>(coverage.size()) != r * r) {
        throw std::invalid_argument("fuse_levels: coverage resolution does not match level logits");
    }
    Tensor up = resize_bilinear(prev_combined, r);
    Tensor mask({r, r}, std::vector<double>(coverage));
    return add(up, mul(level_logits, mask));
}

Tensor extract_patch(const Tensor& map, const PatchBox& box) {
    if (map.rank() != 2) throw std::invalid_argument("extract_patch: expected [H,W]");
    int w = map.dim(1);
    std::vector<double> vals(static_cast<size_t>(box.size) * box.size);
    for (int y = 0; y < box.size; ++y) {
        for (int x = 0; x < box.size; ++x) {
            vals[static_cast<size_t>(y) * box.size + x] = map[(box.y0 + y) * w + (box.x0 + x)];
        }
    }
    return Tensor({box.size, box.size}, std::move(vals));
}

std::vector<double> resample_mask_majority(const std::vector<double>& mask, int in_res, int out_res) {
    if (static_cast<int>(mask.size()) != in_res * in_res) {
        throw std::invalid_argument("resample_mask_majority: mask size does not match resolution");
    }
    std::vector<double> out(static_cast<size_t>(out_res) * out_res, 0.0);
    double s = static_cast<double>(in_res) / out_res;
    for (int oy = 0; oy < out_res; ++oy) {
        double y0 = oy * s, y1 = (oy + 1) * s;
        for (int ox = 0; ox < out_res; ++ox) {
            double x0 = ox * s, x1 = (ox + 1) * s;
            // exact fractional-area average over the covered block
            double acc = 0, area = 0;
            for (int iy = static_cast<int>(std::floor(y0)); iy < static_cast<int>(std::ceil(y1)); ++iy) {
                double wy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
                for (int ix = static_cast<int>(std::floor(x0)); ix < static_cast<int>(std::ceil(x1)); ++ix) {
                    double wx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
                    double w = wy * wx;
                    acc += w * mask[static_cast<size_t>(std::min(iy, in_res - 1)) * in_res + std::min(ix, in_res - 1)];
                    area += w;
                }
            }
            out[static_cast<size_t>(oy) * out_res + ox] = (acc / area >= 0.5) ? 1.0 : 0.0;
        }
    }
    return out;
}

namespace {

std::vector<double> sigmoid_values(const Tensor& logits) {
    std::vector<double> out(static_cast<size_t>(logits.size()));
    for (int i = 0; i < logits.size(); ++i) {
        double z = logits[i];
        out[static_cast<size_t>(i)] = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }
    return out;
}

}  // namespace

LevelPrediction run_level(const TaskInstance& task, const LevelConfig& level, const LevelPrediction* prev,
                          const CascadeConfig& config, const ParamSet& params, RngStream& rng) {
    int r = level.resolution;
    CandidateGrid grid = candidate_grid(r, level.patch_size, level.stride);

    // Target sampling weights: uniform at the coarsest level, mean entropy of
    // the previous prediction afterwards. Selection itself never carries
    // gradients, so the entropy source is read from detached values.
    std::vector<double> target_weights;
    if (!prev) {
        target_weights.assign(grid.boxes.size(), 1.0);
    } else {
        Tensor up = resize_bilinear(prev->combined.detached(), r);
        EntropyMap ent = entropy_map(sigmoid_values(up), r);
        target_weights = patch_mean_weights(ent.values, r, grid);
        bool any = false;
        for (double w : target_weights) any = any || w > 0;
        if (!any) target_weights.assign(grid.boxes.size(), 1.0);  // fully confident previous level
    }
    SampledPatchSet target_set = gumbel_top_k(target_weights, grid, level.k_target, rng, config.noise_enabled);

    Tensor image_r = resize_bilinear(task.target_image.detached(), r);

    std::vector<PatchToken> tokens;
    std::vector<EncodedPatch> target_enc;
    for (const PatchBox& box : target_set.boxes) {
        Tensor patch = extract_patch(image_r, box);
        EncodedPatch enc = encode_patch(config.model, params, patch, nullptr, r);
        PatchToken tok;
        tok.embedding = enc.embedding;
        tok.y = static_cast<double>(box.y0) / level.stride;
        tok.x = static_cast<double>(box.x0) / level.stride;
        tok.kind = TokenKind::Target;
        tokens.push_back(std::move(tok));
        target_enc.push_back(std::move(enc));
    }

    for (const auto& [ctx_img, ctx_label] : task.context) {
        Tensor cimg = resize_bilinear(ctx_img.detached(), r);
        Tensor clab({r, r}, resample_mask_majority(ctx_label.data(), ctx_label.dim(0), r));
        std::vector<double> w = boundary_distance_weights(clab.data(), r, grid);
        SampledPatchSet ctx_set = gumbel_top_k(w, grid, level.k_context, rng, config.noise_enabled);
        for (const PatchBox& box : ctx_set.boxes) {
            Tensor ip = extract_patch(cimg, box);
            Tensor lp = extract_patch(clab, box);
            EncodedPatch enc = encode_patch(config.model, params, ip, &lp, r);
            PatchToken tok;
            tok.embedding = enc.embedding;
            tok.y = static_cast<double>(box.y0) / level.stride;
            tok.x = static_cast<double>(box.x0) / level.stride;
            tok.kind = TokenKind::ContextJoint;
            tokens.push_back(std::move(tok));
        }
    }

    Tensor attended = attention_stack(config.model, params, tokens);

    std::vector<std::pair<PatchBox, Tensor>> patch_logits;
    for (size_t i = 0; i < target_set.boxes.size(); ++i) {
        Tensor logit = decode_patch(config.model, params, row(attended, static_cast<int>(i)), target_enc[i]);
        patch_logits.emplace_back(target_set.boxes[i], logit);
    }
    auto [logits, coverage] = aggregate_patches(patch_logits, r);

    LevelPrediction out;
    out.logits = logits;
    out.coverage = std::move(coverage);
    out.patches = std::move(target_set);
    out.resolution = r;
    out.combined = prev ? fuse_levels(prev->combined, logits, out.coverage) : logits;
    return out;
}

PredictionPyramid cascade_forward(const TaskInstance& task, const CascadeConfig& config, const ParamSet& params,
                                  RngStream& rng) {
    config.validate();
    PredictionPyramid pyr;
    for (size_t l = 0; l < config.levels.size(); ++l) {
        const LevelPrediction* prev = l > 0 ? &pyr.levels[l - 1] : nullptr;
        pyr.levels.push_back(run_level(task, config.levels[l], prev, config, params, rng));
    }
    int native = task.target_image.dim(0);
    pyr.final_prob = resize_bilinear(sigmoid(pyr.levels.back().combined), native);
    return pyr;
}

Tensor level_loss(const Tensor& combined_logits, const Tensor& gt) {
    if (combined_logits.shape() != gt.shape()) {
        throw std::invalid_argument("level_loss: shape mismatch " + shape_str(combined_logits.shape()) + " vs " +
                                    shape_str(gt.shape()));
    }
    double sy = 0;
    for (double v : gt.data()) {
        if (!(v == 0.0 || v == 1.0)) throw std::invalid_argument("level_loss: ground truth is not binary");
        sy += v;
    }
    Tensor gt_detached = gt.detached();
    Tensor bce = bce_with_logits(combined_logits, gt_detached);
    const double eps = 1.0;
    Tensor p = sigmoid(combined_logits);
    Tensor inter = sum_all(mul(p, gt_detached));
    Tensor num = add_scalar(scale(inter, 2.0), eps);
    Tensor den = add_scalar(sum_all(p), sy + eps);
    Tensor dice_loss = sub(Tensor::scalar(1.0), divide(num, den));
    return add(bce, dice_loss);
}

Tensor total_loss(const PredictionPyramid& pyramid, const Tensor& gt_full) {
    if (pyramid.levels.empty()) throw std::invalid_argument("total_loss: empty pyramid");
    if (gt_full.rank() != 2 || gt_full.dim(0) != gt_full.dim(1)) {
        throw std::invalid_argument("total_loss: ground truth must be a square mask");
    }
    int native = gt_full.dim(0);
    Tensor total;
    for (const auto& lvl : pyramid.levels) {
        Tensor gt_l({lvl.resolution, lvl.resolution}, resample_mask_majority(gt_full.data(), native, lvl.resolution));
        Tensor l = level_loss(lvl.combined, gt_l);
        total = total.defined() ? add(total, l) : l;
    }
    return total;
}

}  // namespace picl
