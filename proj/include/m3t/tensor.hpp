#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "m3t/common.hpp"

namespace m3t {

using Shape = std::vector<idx>;

inline idx shape_numel(const Shape& s) {
    idx n = 1;
    for (idx e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

template <class S>
class Tape;

// Shared buffer behind a Tensor handle. `grad` stays empty until backward
// (or an explicit ensure) touches it; `tape` marks the tape that produced
// this value, null for leaves.
template <class S>
struct Storage {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;
    bool requires_grad = false;
    bool trainable = false;
    Tape<S>* tape = nullptr;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), S(0));
    }
};

// Dense row-major n-dimensional value with optional gradient. Handles share
// storage; copying a Tensor aliases the same buffer.
template <class S>
class Tensor {
public:
    using scalar_type = S;

    Tensor() = default;

    explicit Tensor(Shape shape)
        : st_(std::make_shared<Storage<S>>()) {
        for (idx e : shape)
            if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        st_->shape = std::move(shape);
        st_->value.assign(static_cast<size_t>(shape_numel(st_->shape)), S(0));
    }

    Tensor(Shape shape, std::vector<S> values)
        : st_(std::make_shared<Storage<S>>()) {
        for (idx e : shape)
            if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        if (shape_numel(shape) != static_cast<idx>(values.size()))
            throw ShapeError(strf("shape %s wants %lld values, got %zu", shape_str(shape).c_str(),
                                  static_cast<long long>(shape_numel(shape)), values.size()));
        st_->shape = std::move(shape);
        st_->value = std::move(values);
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, S v) {
        Tensor t(std::move(shape));
        std::fill(t.st_->value.begin(), t.st_->value.end(), v);
        return t;
    }

    static Tensor scalar(S v) {
        Tensor t;
        t.st_ = std::make_shared<Storage<S>>();
        t.st_->shape = {};
        t.st_->value = {v};
        return t;
    }

    static Tensor uniform(Shape shape, S lo, S hi, std::mt19937_64& rng) {
        Tensor t(std::move(shape));
        std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
        for (S& v : t.st_->value) v = static_cast<S>(dist(rng));
        return t;
    }

    bool defined() const { return st_ != nullptr; }
    const Shape& shape() const { return st_->shape; }
    idx rank() const { return static_cast<idx>(st_->shape.size()); }
    idx numel() const { return static_cast<idx>(st_->value.size()); }
    idx extent(idx axis) const { return st_->shape[static_cast<size_t>(axis)]; }

    S* data() { return st_->value.data(); }
    const S* data() const { return st_->value.data(); }
    std::vector<S>& values() { return st_->value; }
    const std::vector<S>& values() const { return st_->value; }

    S item() const {
        if (numel() != 1) throw ContractError("item() on tensor with numel " + std::to_string(numel()));
        return st_->value[0];
    }

    bool requires_grad() const { return st_->requires_grad; }
    void set_requires_grad(bool b) { st_->requires_grad = b; }
    bool trainable() const { return st_->trainable; }
    void mark_trainable() {
        st_->trainable = true;
        st_->requires_grad = true;
    }

    bool has_grad() const { return st_->grad.size() == st_->value.size(); }
    std::vector<S>& grad() { return st_->grad; }
    const std::vector<S>& grad() const { return st_->grad; }
    void ensure_grad() { st_->ensure_grad(); }
    void zero_grad() {
        if (!st_->grad.empty()) std::fill(st_->grad.begin(), st_->grad.end(), S(0));
    }

    std::shared_ptr<Storage<S>> storage() const { return st_; }

private:
    std::shared_ptr<Storage<S>> st_;
};

// Wengert list for one training step. Exactly one tape may be active per
// thread; ops record their backward closures while it is active, and
// backward() consumes the tape. Also hands out counter-based dropout seeds
// so a replayed step regenerates identical masks.
template <class S>
class Tape {
public:
    explicit Tape(std::uint64_t dropout_seed = 0, idx step = 0)
        : seed_(dropout_seed), step_(step) {
        if (active_) throw ContractError("a tape is already active on this thread");
        active_ = this;
    }

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    ~Tape() {
        if (active_ == this) active_ = nullptr;
    }

    static Tape* active() { return active_; }

    void record(std::function<void()> backward_fn) {
        if (consumed_) throw ContractError("recording on a consumed tape");
        ops_.push_back(std::move(backward_fn));
    }

    size_t size() const { return ops_.size(); }
    bool consumed() const { return consumed_; }

    std::uint64_t next_dropout_seed() {
        return mix64(seed_, static_cast<std::uint64_t>(step_),
                     static_cast<std::uint64_t>(drop_calls_++));
    }

    // Reverse sweep from a scalar loss recorded on this tape.
    void backward(const Tensor<S>& loss) {
        if (consumed_) throw ContractError("backward() on a consumed tape");
        if (loss.numel() != 1) throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
        if (loss.storage()->tape != this) throw ContractError("loss is not on the active tape");
        loss.storage()->ensure_grad();
        loss.storage()->grad[0] = S(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
        ops_.clear();
        consumed_ = true;
    }

private:
    static thread_local Tape* active_;
    std::vector<std::function<void()>> ops_;
    bool consumed_ = false;
    std::uint64_t seed_;
    idx step_;
    idx drop_calls_ = 0;
};

template <class S>
thread_local Tape<S>* Tape<S>::active_ = nullptr;

// Named trainable parameters in registration order; the order is the
// checkpoint and optimizer-state order.
template <class S>
struct ParamSet {
    std::vector<std::pair<std::string, Tensor<S>>> items;

    Tensor<S> add(const std::string& name, Tensor<S> t) {
        for (auto& [n, _] : items)
            if (n == name) throw ContractError("duplicate parameter name: " + name);
        t.mark_trainable();
        items.emplace_back(name, t);
        return t;
    }

    Tensor<S>* find(const std::string& name) {
        for (auto& [n, t] : items)
            if (n == name) return &t;
        return nullptr;
    }

    size_t size() const { return items.size(); }
};

// Fan-in scaled uniform init, U(-sqrt(1/fan_in), +sqrt(1/fan_in)).
template <class S>
Tensor<S> uniform_init(Shape shape, idx fan_in, std::mt19937_64& rng) {
    S bound = static_cast<S>(std::sqrt(1.0 / static_cast<double>(fan_in)));
    return Tensor<S>::uniform(std::move(shape), -bound, bound, rng);
}

}  // namespace m3t
