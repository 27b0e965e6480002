#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dgcn/errors.hpp"
#include "dgcn/shape.hpp"

namespace dgcn {

template <typename T>
using Buffer = std::shared_ptr<std::vector<T>>;

template <typename T>
Buffer<T> make_buffer(std::size_t n, T fill = T(0)) {
    return std::make_shared<std::vector<T>>(n, fill);
}

template <typename T>
class Tape;

// Dense tensor handle. A tensor is either a tracked value on a Tape
// (id >= 0, gradients flow through it) or a free constant. Copies share
// the underlying buffer.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, Buffer<T> data) : shape_(shape), data_(std::move(data)) {
        if (data_->size() != shape_.size())
            throw DimensionError("tensor: buffer size " + std::to_string(data_->size()) +
                                 " does not match shape " + shape_.str());
    }

    static Tensor zeros(Shape shape) { return Tensor(shape, make_buffer<T>(shape.size())); }
    static Tensor full(Shape shape, T v) { return Tensor(shape, make_buffer<T>(shape.size(), v)); }
    static Tensor from(Shape shape, std::vector<T> values) {
        return Tensor(shape, std::make_shared<std::vector<T>>(std::move(values)));
    }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return shape_.size(); }
    std::size_t rows() const { return shape_.rows(); }
    std::size_t channels() const { return shape_.last_dim(); }

    const T* data() const { return data_->data(); }
    T* data() { return data_->data(); }
    const Buffer<T>& buffer() const { return data_; }
    T at(std::size_t i) const { return (*data_)[i]; }

    bool tracked() const { return tape_ != nullptr; }
    Tape<T>* tape() const { return tape_; }
    int id() const { return id_; }

    // Detached view of the same buffer (no tape, no gradient flow).
    Tensor detached() const { return Tensor(shape_, data_); }

private:
    friend class Tape<T>;
    Shape shape_;
    Buffer<T> data_;
    Tape<T>* tape_ = nullptr;
    int id_ = -1;
};

template <typename T>
void check_finite(const std::vector<T>& v, const char* op) {
    for (const T& x : v) {
        if (!std::isfinite(static_cast<double>(x)))
            throw NumericError(std::string(op) + ": non-finite value in output");
    }
}

// Reverse-mode tape: a linear record of primitive applications. Forward
// ops append nodes in execution order, so walking the record backwards
// visits each node exactly once in reverse topological order.
//
// The tape does not keep forward activations alive. Each node's backward
// closure captures only the buffers it needs (inputs for matmul, argmax
// indices for max, masks for relu/dropout); everything else is freed as
// soon as the caller drops it. retain()/retain_aux() account for what is
// kept so the operator memory benchmark measures, not estimates.
template <typename T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Tracked leaf whose gradient accumulates into `grad` (persistent,
    // shared with the parameter store; never cleared by backward()).
    Tensor<T> leaf(const Shape& shape, Buffer<T> data, Buffer<T> grad) {
        if (grad->size() != shape.size()) throw DimensionError("leaf: grad/shape mismatch");
        Tensor<T> t(shape, std::move(data));
        t.tape_ = this;
        t.id_ = add_slot(shape, std::move(grad), /*persistent=*/true);
        return t;
    }

    // Tracked intermediate produced by an op.
    Tensor<T> track(const Shape& shape, Buffer<T> data) {
        Tensor<T> t(shape, std::move(data));
        t.tape_ = this;
        t.id_ = add_slot(shape, nullptr, /*persistent=*/false);
        return t;
    }

    void record(std::function<void(Tape&)> backward) { nodes_.push_back(std::move(backward)); }

    // Accounting for buffers a backward closure keeps alive. Deduplicated
    // by address: a weight shared by many nodes is counted once.
    const Buffer<T>& retain(const Buffer<T>& b) {
        if (retained_.insert(static_cast<const void*>(b.get())).second)
            value_scalars_ += b->size();
        return b;
    }
    template <typename U>
    const std::shared_ptr<std::vector<U>>& retain_aux(const std::shared_ptr<std::vector<U>>& b) {
        if (retained_.insert(static_cast<const void*>(b.get())).second)
            aux_scalars_ += b->size();
        return b;
    }

    std::size_t saved_value_scalars() const { return value_scalars_; }
    std::size_t saved_aux_scalars() const { return aux_scalars_; }
    std::size_t saved_scalar_count() const { return value_scalars_ + aux_scalars_; }
    std::size_t node_count() const { return nodes_.size(); }

    // Gradient buffer for a tracked value; allocated zero on first use.
    T* grad_of(int id) {
        auto& s = slots_[static_cast<std::size_t>(id)];
        if (!s.grad) s.grad = make_buffer<T>(s.shape.size());
        return s.grad->data();
    }
    // Null when no downstream consumer has deposited a gradient.
    const T* grad_if_any(int id) const {
        const auto& s = slots_[static_cast<std::size_t>(id)];
        return s.grad ? s.grad->data() : nullptr;
    }
    const Shape& shape_of(int id) const { return slots_[static_cast<std::size_t>(id)].shape; }

    // Reverse sweep from a scalar loss. Non-leaf gradients are recomputed
    // from scratch on every call; leaf gradients accumulate until the
    // owner zeroes them.
    void backward(const Tensor<T>& loss) {
        if (loss.tape() != this || loss.id() < 0)
            throw std::invalid_argument("backward: loss is not tracked on this tape");
        if (loss.size() != 1)
            throw DimensionError("backward: loss must be a scalar, got " + loss.shape().str());
        for (auto& s : slots_) {
            if (!s.persistent) s.grad = nullptr;
        }
        grad_of(loss.id())[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)(*this);
    }

    void reset() {
        nodes_.clear();
        slots_.clear();
        retained_.clear();
        value_scalars_ = 0;
        aux_scalars_ = 0;
    }

private:
    struct Slot {
        Shape shape;
        Buffer<T> grad;
        bool persistent = false;
    };

    int add_slot(const Shape& shape, Buffer<T> grad, bool persistent) {
        slots_.push_back(Slot{shape, std::move(grad), persistent});
        return static_cast<int>(slots_.size()) - 1;
    }

    std::vector<Slot> slots_;
    std::vector<std::function<void(Tape&)>> nodes_;
    std::unordered_set<const void*> retained_;
    std::size_t value_scalars_ = 0;
    std::size_t aux_scalars_ = 0;
};

// Named trainable tensor (or non-trainable state buffer) with a
// persistent gradient that Adam consumes.
template <typename T>
struct Parameter {
    std::string name;
    Shape shape;
    Buffer<T> value;
    Buffer<T> grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, Shape s, bool train = true)
        : name(std::move(n)),
          shape(s),
          value(make_buffer<T>(s.size())),
          grad(make_buffer<T>(s.size())),
          trainable(train) {}

    std::size_t size() const { return shape.size(); }

    // Bind into a forward pass: tracked leaf when taping, constant otherwise.
    Tensor<T> use(Tape<T>* tape) const {
        if (tape && trainable) return tape->leaf(shape, value, grad);
        return Tensor<T>(shape, value);
    }
    Tensor<T> constant() const { return Tensor<T>(shape, value); }

    void zero_grad() { std::fill(grad->begin(), grad->end(), T(0)); }
};

}  // namespace dgcn
