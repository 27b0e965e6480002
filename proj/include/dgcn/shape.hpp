#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "dgcn/errors.hpp"

namespace dgcn {

// Dense tensor shape, up to 3 axes.
class Shape {
public:
    Shape() : rank_(0), dims_{0, 0, 0} {}
    explicit Shape(std::size_t d0) : rank_(1), dims_{d0, 0, 0} {}
    Shape(std::size_t d0, std::size_t d1) : rank_(2), dims_{d0, d1, 0} {}
    Shape(std::size_t d0, std::size_t d1, std::size_t d2) : rank_(3), dims_{d0, d1, d2} {}

    std::size_t rank() const { return rank_; }
    std::size_t dim(std::size_t i) const { return dims_[i]; }
    std::size_t operator[](std::size_t i) const { return dims_[i]; }

    std::size_t size() const {
        std::size_t n = 1;
        for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
        return rank_ == 0 ? 0 : n;
    }

    // Rows when the last axis is treated as the channel axis.
    std::size_t rows() const { return last_dim() == 0 ? 0 : size() / last_dim(); }
    std::size_t last_dim() const { return rank_ == 0 ? 0 : dims_[rank_ - 1]; }

    bool operator==(const Shape& o) const {
        if (rank_ != o.rank_) return false;
        for (std::size_t i = 0; i < rank_; ++i)
            if (dims_[i] != o.dims_[i]) return false;
        return true;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < rank_; ++i) {
            if (i) s += "x";
            s += std::to_string(dims_[i]);
        }
        return s + ")";
    }

private:
    std::size_t rank_;
    std::array<std::size_t, 3> dims_;
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (a != b) throw DimensionError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
}

}  // namespace dgcn
