#include <cmath>
#include <vector>

#include "doctest.h"
#include "picl/cascade.hpp"
#include "picl/data.hpp"

using namespace picl;

namespace {

CascadeConfig tiny_cascade() {
    CascadeConfig cfg;
    cfg.model.d = 8;
    cfg.model.layers = 1;
    cfg.model.heads = 2;
    cfg.model.patch_size = 4;
    cfg.model.enc_channels = {2, 3};
    cfg.levels.push_back({8, 2, 1, 4, 4});
    cfg.levels.push_back({16, 3, 1, 4, 4});
    cfg.n_context = 2;
    cfg.noise_enabled = true;
    return cfg;
}

TaskInstance tiny_task(uint64_t seed, int res = 24) {
    DatasetManifest m;
    m.seed = seed;
    m.resolution = res;
    m.n_context = 2;
    TaskInstance t = generate_episode(m, "train", 0);
    return t;
}

}  // namespace

TEST_CASE("aggregate_patches matches a brute-force overlap mean") {
    RngStream rng(20, 0);
    int res = 10;
    std::vector<std::pair<PatchBox, Tensor>> patches;
    patches.emplace_back(PatchBox{0, 0, 4}, Tensor::randn({4, 4}, rng));
    patches.emplace_back(PatchBox{2, 2, 4}, Tensor::randn({4, 4}, rng));
    patches.emplace_back(PatchBox{2, 2, 4}, Tensor::randn({4, 4}, rng));  // duplicate box
    patches.emplace_back(PatchBox{6, 5, 4}, Tensor::randn({4, 4}, rng));
    auto [agg, coverage] = aggregate_patches(patches, res);

    for (int y = 0; y < res; ++y) {
        for (int x = 0; x < res; ++x) {
            double sum = 0;
            int n = 0;
            for (const auto& [box, p] : patches) {
                if (!box.covers(y, x)) continue;
                sum += p[(y - box.y0) * box.size + (x - box.x0)];
                n++;
            }
            int i = y * res + x;
            CHECK(coverage[static_cast<size_t>(i)] == (n > 0 ? 1.0 : 0.0));
            if (n > 0) {
                CHECK(std::fabs(agg[i] - sum / n) <= 1e-12);
            } else {
                CHECK(agg[i] == 0.0);  // uncovered pixels carry exactly zero logit
            }
        }
    }
}

TEST_CASE("aggregate_patches validates boxes and shapes") {
    RngStream rng(21, 0);
    CHECK_THROWS(aggregate_patches({{PatchBox{6, 6, 4}, Tensor::randn({4, 4}, rng)}}, 8));
    CHECK_THROWS(aggregate_patches({{PatchBox{0, 0, 4}, Tensor::randn({3, 4}, rng)}}, 8));
}

TEST_CASE("aggregate_patches gradients match finite differences") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        RngStream rng(seed, 22);
        ParamSet p;
        p.add("p0", Tensor::randn({3, 3}, rng));
        p.add("p1", Tensor::randn({3, 3}, rng));
        Tensor w = Tensor::randn({6, 6}, rng);
        auto build = [&](ParamSet& q) {
            auto [agg, cov] = aggregate_patches({{PatchBox{0, 0, 3}, q.get("p0")}, {PatchBox{2, 2, 3}, q.get("p1")}}, 6);
            return mean_all(mul(agg, w));
        };
        Tape tape;
        p.attach_all(tape);
        Tensor loss = build(p);
        GradMap an = backward(loss, p);
        p.detach_all();
        GradMap fd = finite_diff_grad([&](ParamSet& q) { return build(q).value(); }, p, 1e-5);
        for (const auto& [name, g] : an) {
            for (int i = 0; i < g.size(); ++i) {
                CHECK(g[i] == doctest::Approx(fd.at(name)[i]).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("fuse_levels equals upsampled previous plus masked logits, exactly local") {
    RngStream rng(23, 0);
    Tensor prev = Tensor::randn({4, 4}, rng);
    Tensor logits = Tensor::randn({8, 8}, rng);
    std::vector<double> cov(64, 0.0);
    for (int i = 0; i < 64; ++i) cov[static_cast<size_t>(i)] = (i % 3 == 0) ? 1.0 : 0.0;
    Tensor fused = fuse_levels(prev, logits, cov);
    Tensor up = resize_bilinear(prev, 8);
    for (int i = 0; i < 64; ++i) {
        if (cov[static_cast<size_t>(i)] == 1.0) {
            CHECK(std::fabs(fused[i] - (up[i] + logits[i])) <= 1e-12);
        } else {
            CHECK(fused[i] == up[i]);  // bitwise: uncovered pixels are untouched
        }
    }
    CHECK_THROWS(fuse_levels(prev, logits, std::vector<double>(16, 1.0)));
}

TEST_CASE("resample_mask_majority matches an exact fractional-area oracle") {
    RngStream rng(24, 0);
    for (auto [in_res, out_res] : std::vector<std::pair<int, int>>{{8, 4}, {8, 2}, {4, 8}, {6, 6}}) {
        std::vector<double> mask(static_cast<size_t>(in_res) * in_res);
        for (auto& v : mask) v = rng.next_below(2) ? 1.0 : 0.0;
        std::vector<double> got = resample_mask_majority(mask, in_res, out_res);
        double s = static_cast<double>(in_res) / out_res;
        for (int oy = 0; oy < out_res; ++oy) {
            for (int ox = 0; ox < out_res; ++ox) {
                double area = 0;
                // integrate the fg indicator over the out-cell footprint
                for (int iy = 0; iy < in_res; ++iy) {
                    double wy = std::max(0.0, std::min<double>(iy + 1, (oy + 1) * s) - std::max<double>(iy, oy * s));
                    if (wy == 0) continue;
                    for (int ix = 0; ix < in_res; ++ix) {
                        double wx = std::max(0.0, std::min<double>(ix + 1, (ox + 1) * s) - std::max<double>(ix, ox * s));
                        area += wy * wx * mask[static_cast<size_t>(iy) * in_res + ix];
                    }
                }
                double want = area / (s * s) >= 0.5 ? 1.0 : 0.0;
                CHECK(got[static_cast<size_t>(oy) * out_res + ox] == want);
            }
        }
    }
    // identity when resolutions match
    std::vector<double> m = {1, 0, 0, 1};
    CHECK(resample_mask_majority(m, 2, 2) == m);
}

TEST_CASE("extract_patch copies the right window") {
    std::vector<double> v(30);
    for (int i = 0; i < 30; ++i) v[static_cast<size_t>(i)] = i;
    Tensor map({5, 6}, v);
    Tensor p = extract_patch(map, {1, 2, 3});
    REQUIRE(p.shape() == Shape{3, 3});
    for (int y = 0; y < 3; ++y) {
        for (int x = 0; x < 3; ++x) CHECK(p[y * 3 + x] == map[(1 + y) * 6 + (2 + x)]);
    }
}

TEST_CASE("level_loss equals BCE plus soft Dice with eps = 1") {
    RngStream rng(25, 0);
    Tensor logits = Tensor::randn({6, 6}, rng, 2.0);
    std::vector<double> gv(36);
    for (auto& g : gv) g = rng.next_below(2) ? 1.0 : 0.0;
    Tensor gt({6, 6}, gv);
    double bce = 0, sp = 0, sg = 0, inter = 0;
    for (int i = 0; i < 36; ++i) {
        double p = 1.0 / (1.0 + std::exp(-logits[i]));
        double y = gv[static_cast<size_t>(i)];
        bce += -(y * std::log(p) + (1 - y) * std::log(1 - p));
        sp += p;
        sg += y;
        inter += p * y;
    }
    bce /= 36;
    double dice_loss = 1.0 - (2 * inter + 1.0) / (sp + sg + 1.0);
    CHECK(std::fabs(level_loss(logits, gt).value() - (bce + dice_loss)) <= 1e-12);
    CHECK_THROWS(level_loss(logits, Tensor::full({6, 6}, 0.25)));
    CHECK_THROWS(level_loss(logits, Tensor({2, 2}, {0, 1, 0, 1})));
}

TEST_CASE("level_loss on empty masks rewards empty predictions") {
    Tensor gt({4, 4});  // all zeros
    Tensor confident_empty = Tensor::full({4, 4}, -10.0);
    Tensor confident_full = Tensor::full({4, 4}, 10.0);
    CHECK(level_loss(confident_empty, gt).value() < 0.01);
    CHECK(level_loss(confident_full, gt).value() > 1.0);
}

TEST_CASE("cascade_forward produces a consistent pyramid") {
    CascadeConfig cfg = tiny_cascade();
    RngStream init(30, 0);
    ParamSet params;
    init_patch_model(cfg.model, params, init);
    TaskInstance task = tiny_task(31);

    RngStream rng(32, 5);
    PredictionPyramid pyr = cascade_forward(task, cfg, params, rng);
    REQUIRE(pyr.levels.size() == 2);
    CHECK(pyr.levels[0].resolution == 8);
    CHECK(pyr.levels[1].resolution == 16);
    CHECK(pyr.final_prob.shape() == Shape{24, 24});
    for (int i = 0; i < pyr.final_prob.size(); ++i) {
        CHECK(pyr.final_prob[i] >= 0.0);
        CHECK(pyr.final_prob[i] <= 1.0);
    }
    for (const auto& lvl : pyr.levels) {
        CHECK(static_cast<int>(lvl.patches.selected.size()) <= lvl.patches.k);
        for (double c : lvl.coverage) CHECK((c == 0.0 || c == 1.0));
    }

    // identical RNG stream replays the identical pyramid
    RngStream rng2(32, 5);
    PredictionPyramid pyr2 = cascade_forward(task, cfg, params, rng2);
    for (int i = 0; i < pyr.final_prob.size(); ++i) CHECK(pyr.final_prob[i] == pyr2.final_prob[i]);
    CHECK(pyr.levels[1].patches.selected == pyr2.levels[1].patches.selected);
}

TEST_CASE("fusion locality holds across random cascade runs") {
    CascadeConfig cfg = tiny_cascade();
    RngStream init(33, 0);
    ParamSet params;
    init_patch_model(cfg.model, params, init);
    TaskInstance task = tiny_task(34);
    for (uint64_t run = 0; run < 25; ++run) {
        RngStream rng(35, run);
        PredictionPyramid pyr = cascade_forward(task, cfg, params, rng);
        const LevelPrediction& fine = pyr.levels[1];
        Tensor up = resize_bilinear(pyr.levels[0].combined.detached(), fine.resolution);
        for (int i = 0; i < fine.combined.size(); ++i) {
            if (fine.coverage[static_cast<size_t>(i)] == 0.0) CHECK(fine.combined[i] == up[i]);
        }
    }
}

TEST_CASE("total_loss sums per-level losses over majority-downsampled ground truth") {
    CascadeConfig cfg = tiny_cascade();
    RngStream init(36, 0);
    ParamSet params;
    init_patch_model(cfg.model, params, init);
    TaskInstance task = tiny_task(37);
    RngStream rng(38, 0);
    PredictionPyramid pyr = cascade_forward(task, cfg, params, rng);
    double want = 0;
    for (const auto& lvl : pyr.levels) {
        Tensor gt_l({lvl.resolution, lvl.resolution},
                    resample_mask_majority(task.target_mask.data(), 24, lvl.resolution));
        want += level_loss(lvl.combined.detached(), gt_l).value();
    }
    CHECK(total_loss(pyr, task.target_mask).value() == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("CascadeConfig validation") {
    CascadeConfig cfg = tiny_cascade();
    CHECK_NOTHROW(cfg.validate());
    cfg.levels[1].resolution = 8;  // not strictly increasing
    CHECK_THROWS(cfg.validate());
    cfg = tiny_cascade();
    cfg.levels[0].patch_size = 8;  // disagrees with the model patch size
    CHECK_THROWS(cfg.validate());
    cfg = tiny_cascade();
    cfg.levels.clear();
    CHECK_THROWS(cfg.validate());
}
