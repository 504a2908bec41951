#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "picl/rng.hpp"

namespace picl {

using Shape = std::vector<int>;

int shape_size(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

// Dense row-major f64 tensor. Values are immutable once built, except through
// mutable_data() which is reserved for parameter initialization and optimizer
// updates (never during a recorded forward pass).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double v);
    static Tensor full(Shape shape, double v);
    static Tensor randn(Shape shape, RngStream& rng, double stddev = 1.0);

    bool defined() const { return data_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int size() const { return data_ ? static_cast<int>(data_->size()) : 0; }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape_.size()); }

    const std::vector<double>& data() const { return *data_; }
    std::vector<double>& mutable_data() { return *data_; }
    std::shared_ptr<std::vector<double>> storage() const { return data_; }
    double operator[](int i) const { return (*data_)[static_cast<size_t>(i)]; }
    double value() const;  // scalar tensors only

    Tape* tape() const { return tape_; }
    int node() const { return node_; }
    bool attached() const { return tape_ != nullptr; }
    Tensor detached() const;

    void set_node(Tape* t, int n) { tape_ = t; node_ = n; }

private:
    std::shared_ptr<std::vector<double>> data_;
    Shape shape_;
    Tape* tape_ = nullptr;
    int node_ = -1;
};

// Reverse-mode tape: ops allocate a gradient slot per result and push a
// backward closure; backward() replays them in reverse. One tape per training
// step, single-threaded.
class Tape {
public:
    int alloc(int size);
    std::vector<double>& grad(int node) { return grads_[static_cast<size_t>(node)]; }
    void record(std::function<void()> fn) { steps_.push_back(std::move(fn)); }

    // Marks a leaf (parameter) so downstream ops record gradients for it.
    void watch(Tensor& t);

    void backward(const Tensor& loss);
    std::vector<double> grad_of(const Tensor& t) const;
    void clear();

private:
    std::vector<std::vector<double>> grads_;
    std::vector<std::function<void()>> steps_;
};

// Throws if any entry is non-finite. Called on explicit-value construction,
// and after every op in debug builds.
void require_finite(const std::vector<double>& values, const char* what);

#ifndef NDEBUG
inline void debug_check_finite(const Tensor& t, const char* op) { require_finite(t.data(), op); }
#else
inline void debug_check_finite(const Tensor&, const char*) {}
#endif

// Returns the tape shared by the attached inputs (nullptr if all detached);
// throws if two inputs sit on different tapes.
Tape* joint_tape(std::initializer_list<const Tensor*> inputs);

}  // namespace picl
