#pragma once

#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "picl/tensor.hpp"

namespace picl {

using GradMap = std::map<std::string, Tensor>;

// Named parameter collection with deterministic (insertion) iteration order.
class ParamSet {
public:
    Tensor& add(const std::string& name, Tensor init, bool trainable = true);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const;
    bool trainable(const std::string& name) const;
    const std::vector<std::string>& names() const { return order_; }
    int total_trainable_size() const;

    void attach_all(Tape& tape);
    void detach_all();

private:
    struct Entry {
        Tensor value;
        bool trainable;
    };
    std::vector<std::string> order_;
    std::unordered_map<std::string, Entry> map_;
};

// Reverse-mode gradients of a recorded scalar loss w.r.t. every trainable
// parameter. Parameters off the path get zero gradients.
GradMap backward(const Tensor& loss, const ParamSet& params);

// Central-difference oracle: (f(th + h e_i) - f(th - h e_i)) / 2h per scalar.
// loss_fn must be deterministic; two base evaluations are compared to verify.
GradMap finite_diff_grad(const std::function<double(ParamSet&)>& loss_fn, ParamSet& params, double step);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First/second moments live in a ParamSet ("m/<name>", "v/<name>", "t") so
// optimizer state checkpoints through the same format as the model.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
    void step(ParamSet& params, const GradMap& grads);
    ParamSet& state() { return state_; }
    const ParamSet& state() const { return state_; }
    long step_count() const;

private:
    AdamConfig cfg_;
    ParamSet state_;
};

}  // namespace picl
