#include "picl/params.hpp"

#include <cmath>
#include <stdexcept>

namespace picl {

Tensor& ParamSet::add(const std::string& name, Tensor init, bool trainable) {
    if (map_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    order_.push_back(name);
    auto& e = map_[name];
    e.value = std::move(init);
    e.trainable = trainable;
    return e.value;
}

Tensor& ParamSet::get(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second.value;
}

const Tensor& ParamSet::get(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second.value;
}

bool ParamSet::has(const std::string& name) const { return map_.count(name) != 0; }

bool ParamSet::trainable(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second.trainable;
}

int ParamSet::total_trainable_size() const {
    int n = 0;
    for (const auto& name : order_) {
        const auto& e = map_.at(name);
        if (e.trainable) n += e.value.size();
    }
    return n;
}

void ParamSet::attach_all(Tape& tape) {
    for (const auto& name : order_) {
        auto& e = map_.at(name);
        if (e.trainable) tape.watch(e.value);
    }
}

void ParamSet::detach_all() {
    for (const auto& name : order_) {
        auto& e = map_.at(name);
        e.value.set_node(nullptr, -1);
    }
}

GradMap backward(const Tensor& loss, const ParamSet& params) {
    if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    Tape* tp = loss.tape();
    if (!tp) throw std::invalid_argument("backward: loss is detached from any tape");
    tp->backward(loss);
    GradMap out;
    for (const auto& name : params.names()) {
        if (!params.trainable(name)) continue;
        const Tensor& p = params.get(name);
        out.emplace(name, Tensor(p.shape(), tp->grad_of(p)));
    }
    return out;
}

GradMap finite_diff_grad(const std::function<double(ParamSet&)>& loss_fn, ParamSet& params, double step) {
    if (step <= 0) throw std::invalid_argument("finite_diff_grad: step must be > 0");
    double base1 = loss_fn(params);
    double base2 = loss_fn(params);
    if (base1 != base2) throw std::runtime_error("finite_diff_grad: loss_fn is not deterministic");
    GradMap out;
    for (const auto& name : params.names()) {
        if (!params.trainable(name)) continue;
        Tensor& p = params.get(name);
        std::vector<double> g(static_cast<size_t>(p.size()));
        auto& vals = p.mutable_data();
        for (size_t i = 0; i < vals.size(); ++i) {
            double orig = vals[i];
            vals[i] = orig + step;
            double fp = loss_fn(params);
            vals[i] = orig - step;
            double fm = loss_fn(params);
            vals[i] = orig;
            g[i] = (fp - fm) / (2.0 * step);
        }
        out.emplace(name, Tensor(p.shape(), std::move(g)));
    }
    return out;
}

void Adam::step(ParamSet& params, const GradMap& grads) {
    if (!state_.has("t")) state_.add("t", Tensor::scalar(0.0));
    Tensor& tstep = state_.get("t");
    double t = tstep.mutable_data()[0] += 1.0;
    double c1 = 1.0 - std::pow(cfg_.beta1, t);
    double c2 = 1.0 - std::pow(cfg_.beta2, t);
    for (const auto& name : params.names()) {
        if (!params.trainable(name)) continue;
        auto it = grads.find(name);
        if (it == grads.end()) throw std::invalid_argument("Adam: missing gradient for " + name);
        Tensor& p = params.get(name);
        if (!state_.has("m/" + name)) {
            state_.add("m/" + name, Tensor(p.shape()));
            state_.add("v/" + name, Tensor(p.shape()));
        }
        auto& m = state_.get("m/" + name).mutable_data();
        auto& v = state_.get("v/" + name).mutable_data();
        auto& pv = p.mutable_data();
        const auto& g = it->second.data();
        for (size_t i = 0; i < pv.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            pv[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
        }
    }
}

long Adam::step_count() const { return state_.has("t") ? static_cast<long>(state_.get("t").value()) : 0; }

}  // namespace picl
