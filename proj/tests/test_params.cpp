#include <cmath>
#include <cstdio>
#include <vector>

#include "doctest.h"
#include "picl/checkpoint.hpp"
#include "picl/ops.hpp"
#include "picl/params.hpp"
#include "picl/rng.hpp"

using namespace picl;

TEST_CASE("ParamSet keeps insertion order and rejects duplicates") {
    ParamSet p;
    p.add("b", Tensor({2}));
    p.add("a", Tensor({3}));
    CHECK(p.names() == std::vector<std::string>{"b", "a"});
    CHECK(p.total_trainable_size() == 5);
    CHECK_THROWS(p.add("a", Tensor({1})));
    CHECK_THROWS(p.get("zz"));
    p.add("frozen", Tensor({4}), false);
    CHECK(p.total_trainable_size() == 5);
    CHECK_FALSE(p.trainable("frozen"));
}

TEST_CASE("backward returns zero gradients for off-path parameters") {
    ParamSet p;
    p.add("used", Tensor({2}, {1, 2}));
    p.add("unused", Tensor({2}, {3, 4}));
    Tape tape;
    p.attach_all(tape);
    Tensor loss = sum_all(mul(p.get("used"), p.get("used")));
    GradMap g = backward(loss, p);
    p.detach_all();
    CHECK(g.at("used").data() == std::vector<double>{2, 4});
    CHECK(g.at("unused").data() == std::vector<double>{0, 0});
}

TEST_CASE("backward rejects non-scalar and detached losses") {
    ParamSet p;
    p.add("x", Tensor({2}, {1, 2}));
    CHECK_THROWS(backward(sum_all(p.get("x")), p));  // detached: no tape attached
    Tape tape;
    p.attach_all(tape);
    CHECK_THROWS(backward(p.get("x"), p));  // not scalar
    p.detach_all();
}

TEST_CASE("finite_diff_grad matches an analytic polynomial gradient") {
    ParamSet p;
    p.add("x", Tensor({3}, {1.0, -2.0, 0.5}));
    // f = sum(x^3), df/dx_i = 3 x_i^2
    auto f = [](ParamSet& q) {
        double s = 0;
        for (int i = 0; i < 3; ++i) s += q.get("x")[i] * q.get("x")[i] * q.get("x")[i];
        return s;
    };
    GradMap g = finite_diff_grad(f, p, 1e-5);
    for (int i = 0; i < 3; ++i) {
        double xi = p.get("x")[i];
        CHECK(g.at("x")[i] == doctest::Approx(3 * xi * xi).epsilon(1e-8));
    }
    // perturbations must be restored
    CHECK(p.get("x").data() == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("finite_diff_grad rejects a nondeterministic loss") {
    ParamSet p;
    p.add("x", Tensor({1}, {1.0}));
    int calls = 0;
    CHECK_THROWS(finite_diff_grad([&](ParamSet&) { return static_cast<double>(calls++); }, p, 1e-5));
}

TEST_CASE("Adam matches a scalar reference implementation") {
    ParamSet p;
    p.add("w", Tensor({1}, {2.0}));
    AdamConfig cfg;
    cfg.lr = 0.1;
    Adam opt(cfg);

    double w_ref = 2.0, m = 0, v = 0;
    for (int t = 1; t <= 25; ++t) {
        // gradient of 0.5*w^2
        double g_ref = w_ref;
        GradMap g;
        g.emplace("w", Tensor({1}, {p.get("w")[0]}));
        opt.step(p, g);
        m = 0.9 * m + 0.1 * g_ref;
        v = 0.999 * v + 0.001 * g_ref * g_ref;
        double mh = m / (1 - std::pow(0.9, t));
        double vh = v / (1 - std::pow(0.999, t));
        w_ref -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
        CHECK(p.get("w")[0] == doctest::Approx(w_ref).epsilon(1e-12));
    }
    CHECK(opt.step_count() == 25);
}

TEST_CASE("Adam on a quadratic bowl converges") {
    RngStream rng(70, 0);
    ParamSet p;
    p.add("w", Tensor::randn({8}, rng, 3.0));
    Adam opt(AdamConfig{0.05});
    for (int t = 0; t < 800; ++t) {
        Tape tape;
        p.attach_all(tape);
        Tensor loss = sum_all(mul(p.get("w"), p.get("w")));
        GradMap g = backward(loss, p);
        p.detach_all();
        opt.step(p, g);
    }
    for (int i = 0; i < 8; ++i) CHECK(std::fabs(p.get("w")[i]) < 1e-3);
}

TEST_CASE("Adam state round-trips through a checkpoint") {
    ParamSet p;
    p.add("w", Tensor({2}, {1.0, -1.0}));
    Adam a;
    GradMap g;
    g.emplace("w", Tensor({2}, {0.5, 0.25}));
    a.step(p, g);
    a.step(p, g);

    save_checkpoint(a.state(), "adam_state_tmp.pckt");
    Adam b;
    b.state() = load_checkpoint("adam_state_tmp.pckt");
    std::remove("adam_state_tmp.pckt");
    // same state + same params must give identical next steps
    ParamSet p_copy;
    p_copy.add("w", Tensor({2}, {p.get("w")[0], p.get("w")[1]}));
    a.step(p, g);
    b.step(p_copy, g);
    CHECK(p.get("w")[0] == p_copy.get("w")[0]);
    CHECK(p.get("w")[1] == p_copy.get("w")[1]);
}
