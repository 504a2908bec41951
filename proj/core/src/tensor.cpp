#include "picl/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace picl {

int shape_size(const Shape& s) {
    int n = 1;
    for (int d : s) {
        if (d <= 0) throw std::invalid_argument("tensor shape has non-positive dimension " + shape_str(s));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

void require_finite(const std::vector<double>& values, const char* what) {
    for (double v : values) {
        if (!std::isfinite(v)) throw std::runtime_error(std::string("non-finite value in ") + what);
    }
}

Tensor::Tensor(Shape shape)
    : data_(std::make_shared<std::vector<double>>(static_cast<size_t>(shape_size(shape)), 0.0)),
      shape_(std::move(shape)) {}

Tensor::Tensor(Shape shape, std::vector<double> values) {
    int n = shape_size(shape);
    if (static_cast<size_t>(n) != values.size()) {
        throw std::invalid_argument("tensor values length " + std::to_string(values.size()) +
                                    " does not match shape " + shape_str(shape));
    }
    require_finite(values, "tensor construction");
    data_ = std::make_shared<std::vector<double>>(std::move(values));
    shape_ = std::move(shape);
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(Shape shape, double v) {
    int n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), v));
}

Tensor Tensor::randn(Shape shape, RngStream& rng, double stddev) {
    int n = shape_size(shape);
    std::vector<double> vals(static_cast<size_t>(n));
    for (auto& v : vals) v = stddev * rng.normal();
    return Tensor(std::move(shape), std::move(vals));
}

double Tensor::value() const {
    if (size() != 1) throw std::invalid_argument("value() on non-scalar tensor " + shape_str(shape_));
    return (*data_)[0];
}

Tensor Tensor::detached() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = -1;
    return t;
}

int Tape::alloc(int size) {
    grads_.emplace_back(static_cast<size_t>(size), 0.0);
    return static_cast<int>(grads_.size()) - 1;
}

void Tape::watch(Tensor& t) {
    if (!t.defined()) throw std::invalid_argument("watch() on undefined tensor");
    t.set_node(this, alloc(t.size()));
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) throw std::invalid_argument("backward() requires a scalar loss, got " + shape_str(loss.shape()));
    if (loss.tape() != this) throw std::invalid_argument("backward() on a loss detached from this tape");
    grads_[static_cast<size_t>(loss.node())][0] = 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

std::vector<double> Tape::grad_of(const Tensor& t) const {
    if (t.tape() != this) return std::vector<double>(static_cast<size_t>(t.size()), 0.0);
    return grads_[static_cast<size_t>(t.node())];
}

void Tape::clear() {
    grads_.clear();
    steps_.clear();
}

Tape* joint_tape(std::initializer_list<const Tensor*> inputs) {
    Tape* tp = nullptr;
    for (const Tensor* t : inputs) {
        if (!t->attached()) continue;
        if (tp && tp != t->tape()) throw std::invalid_argument("operation mixes tensors from two tapes");
        tp = t->tape();
    }
    return tp;
}

}  // namespace picl
