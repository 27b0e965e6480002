#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "dgcn/rng.hpp"
#include "dgcn/tensor.hpp"

namespace dgcn {

// Named parameters and state buffers in deterministic creation order.
// Trainable entries carry gradients consumed by the optimizer;
// non-trainable entries (batch-norm running stats) ride along so a
// checkpoint restores evaluation behavior exactly.
template <typename T>
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;
    ParamStore(ParamStore&&) = default;
    ParamStore& operator=(ParamStore&&) = default;

    Parameter<T>& create(const std::string& name, Shape shape, bool trainable = true) {
        if (by_name_.count(name)) throw std::invalid_argument("param store: duplicate name " + name);
        params_.push_back(std::make_unique<Parameter<T>>(name, shape, trainable));
        by_name_[name] = params_.size() - 1;
        return *params_.back();
    }

    Parameter<T>& at(const std::string& name) {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw std::out_of_range("param store: no parameter " + name);
        return *params_[it->second];
    }
    const Parameter<T>& at(const std::string& name) const {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw std::out_of_range("param store: no parameter " + name);
        return *params_[it->second];
    }
    bool contains(const std::string& name) const { return by_name_.count(name) != 0; }

    std::size_t entry_count() const { return params_.size(); }
    Parameter<T>& entry(std::size_t i) { return *params_[i]; }
    const Parameter<T>& entry(std::size_t i) const { return *params_[i]; }

    // Trainable scalar count (the model's parameter count).
    std::size_t trainable_scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_)
            if (p->trainable) n += p->size();
        return n;
    }
    std::size_t total_scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p->size();
        return n;
    }

    void zero_grads() {
        for (auto& p : params_)
            if (p->trainable) p->zero_grad();
    }

    void fill_trainable(T v) {
        for (auto& p : params_)
            if (p->trainable) std::fill(p->value->begin(), p->value->end(), v);
    }

private:
    std::vector<std::unique_ptr<Parameter<T>>> params_;
    std::unordered_map<std::string, std::size_t> by_name_;
};

// Uniform Glorot init, scale sqrt(6 / (fan_in + fan_out)).
template <typename T>
void init_glorot(Parameter<T>& p, std::size_t fan_in, std::size_t fan_out, const RngStream& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < p.size(); ++i)
        (*p.value)[i] = static_cast<T>((2.0 * rng.uniform(i) - 1.0) * a);
}

template <typename T>
void init_constant(Parameter<T>& p, T v) {
    std::fill(p.value->begin(), p.value->end(), v);
}

}  // namespace dgcn
