#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "picl/baseline.hpp"
#include "picl/cascade.hpp"
#include "picl/data.hpp"
#include "picl/ops.hpp"

using namespace picl;

namespace {

GlobalModelConfig tiny_global() {
    GlobalModelConfig cfg;
    cfg.d = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.enc_mid = 2;
    cfg.working_res = 8;
    cfg.n_context = 1;
    return cfg;
}

TaskInstance tiny_task(uint64_t seed, int n_context) {
    DatasetManifest m;
    m.seed = seed;
    m.resolution = 24;
    m.n_context = n_context;
    return generate_episode(m, "train", 0);
}

}  // namespace

TEST_CASE("GlobalModelConfig validation") {
    CHECK_NOTHROW(tiny_global().validate());
    GlobalModelConfig bad = tiny_global();
    bad.d = 9;
    CHECK_THROWS(bad.validate());
    bad = tiny_global();
    bad.heads = 4;  // head dim 2
    CHECK_THROWS(bad.validate());
}

TEST_CASE("init_global_model registers a deterministic parameter set under gm/") {
    GlobalModelConfig cfg = tiny_global();
    RngStream r1(40, 0), r2(40, 0);
    ParamSet a, b;
    init_global_model(cfg, a, r1);
    init_global_model(cfg, b, r2);
    REQUIRE(!a.names().empty());
    CHECK(a.names() == b.names());
    for (const auto& n : a.names()) {
        CHECK(n.rfind("gm/", 0) == 0);
        for (int i = 0; i < a.get(n).size(); ++i) CHECK(a.get(n)[i] == b.get(n)[i]);
    }
}

TEST_CASE("global_forward output contract") {
    GlobalModelConfig cfg = tiny_global();
    RngStream rng(41, 0);
    ParamSet p;
    init_global_model(cfg, p, rng);
    TaskInstance task = tiny_task(42, 1);

    Tensor logits = global_forward_logits(cfg, p, task);
    CHECK(logits.shape() == Shape{8, 8});
    Tensor prob = global_forward(cfg, p, task);
    CHECK(prob.shape() == Shape{24, 24});
    for (int i = 0; i < prob.size(); ++i) {
        CHECK(prob[i] >= 0.0);
        CHECK(prob[i] <= 1.0);
    }
    Tensor again = global_forward(cfg, p, task);
    for (int i = 0; i < prob.size(); ++i) CHECK(prob[i] == again[i]);  // deterministic given params
}

TEST_CASE("global_forward enforces the dense-attention safety cap") {
    GlobalModelConfig cfg = tiny_global();
    cfg.working_res = 256;  // above the default cap of 128
    RngStream rng(43, 0);
    ParamSet p;
    init_global_model(cfg, p, rng);
    TaskInstance task = tiny_task(44, 1);
    try {
        global_forward_logits(cfg, p, task);
        FAIL("expected the cap error");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("cost model") != std::string::npos);
    }
}

TEST_CASE("global_forward rejects a context-count mismatch") {
    GlobalModelConfig cfg = tiny_global();
    cfg.n_context = 3;
    RngStream rng(45, 0);
    ParamSet p;
    init_global_model(cfg, p, rng);
    TaskInstance task = tiny_task(46, 1);  // only one context pair
    CHECK_THROWS(global_forward_logits(cfg, p, task));
}

TEST_CASE("global_forward gradients match finite differences at r = 8") {
    GlobalModelConfig cfg = tiny_global();
    RngStream rng(47, 0);
    ParamSet p;
    init_global_model(cfg, p, rng);
    TaskInstance task = tiny_task(48, 1);
    Tensor gt({8, 8}, resample_mask_majority(task.target_mask.data(), 24, 8));

    auto loss_fn = [&](ParamSet& q) { return bce_with_logits(global_forward_logits(cfg, q, task), gt); };
    Tape tape;
    p.attach_all(tape);
    Tensor loss = loss_fn(p);
    GradMap an = backward(loss, p);
    p.detach_all();
    GradMap fd = finite_diff_grad([&](ParamSet& q) { return loss_fn(q).value(); }, p, 1e-5);
    for (const auto& [name, g] : an) {
        const Tensor& f = fd.at(name);
        for (int i = 0; i < g.size(); ++i) {
            double denom = std::max({std::fabs(g[i]), std::fabs(f[i]), 1e-4});
            INFO(name, "[", i, "]");
            CHECK(std::fabs(g[i] - f[i]) / denom <= 1e-4);
        }
    }
}
