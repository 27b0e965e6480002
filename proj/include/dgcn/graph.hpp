#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dgcn/ops.hpp"
#include "dgcn/tensor.hpp"

namespace dgcn {

// Fixed fan-in neighbor index table: entry (v, j) is the vertex id of
// v's j-th selected neighbor. Rows never contain the row's own vertex
// (aggregators treat the central vertex separately) and are distinct
// unless the table was built through the fixed-edge adapter, which may
// pad low-degree rows by repeating true neighbors.
class NeighborTable {
public:
    NeighborTable() : n_(0), k_(0), indices_(std::make_shared<std::vector<int>>()) {}

    NeighborTable(std::size_t n, std::size_t k, std::shared_ptr<std::vector<int>> indices,
                  bool allow_duplicates = false)
        : n_(n), k_(k), indices_(std::move(indices)) {
        validate(allow_duplicates);
    }

    static NeighborTable from_rows(const std::vector<std::vector<int>>& rows,
                                   bool allow_duplicates = false) {
        const std::size_t n = rows.size();
        const std::size_t k = n ? rows[0].size() : 0;
        auto buf = std::make_shared<std::vector<int>>();
        buf->reserve(n * k);
        for (const auto& r : rows) {
            if (r.size() != k) throw DimensionError("neighbor table: ragged rows");
            buf->insert(buf->end(), r.begin(), r.end());
        }
        return NeighborTable(n, k, std::move(buf), allow_duplicates);
    }

    std::size_t num_vertices() const { return n_; }
    std::size_t fan_in() const { return k_; }
    int at(std::size_t v, std::size_t j) const { return (*indices_)[v * k_ + j]; }
    const std::shared_ptr<std::vector<int>>& indices() const { return indices_; }

    bool operator==(const NeighborTable& o) const {
        return n_ == o.n_ && k_ == o.k_ && *indices_ == *o.indices_;
    }

private:
    void validate(bool allow_duplicates) const {
        if (indices_->size() != n_ * k_)
            throw DimensionError("neighbor table: index buffer size mismatch");
        for (std::size_t v = 0; v < n_; ++v) {
            for (std::size_t j = 0; j < k_; ++j) {
                int u = at(v, j);
                if (u < 0 || static_cast<std::size_t>(u) >= n_)
                    throw std::out_of_range("neighbor table: entry " + std::to_string(u) +
                                            " out of range at row " + std::to_string(v));
                if (static_cast<std::size_t>(u) == v)
                    throw std::invalid_argument("neighbor table: self-loop at row " +
                                                std::to_string(v));
                if (!allow_duplicates) {
                    for (std::size_t j2 = 0; j2 < j; ++j2)
                        if (at(v, j2) == u)
                            throw std::invalid_argument("neighbor table: duplicate neighbor " +
                                                        std::to_string(u) + " in row " +
                                                        std::to_string(v));
                }
            }
        }
    }

    std::size_t n_;
    std::size_t k_;
    std::shared_ptr<std::vector<int>> indices_;
};

// Vertex features (N x D) plus the neighbor table they are paired with.
template <typename T>
struct Graph {
    Tensor<T> features;  // rank 2, rows = vertices
    NeighborTable neighbors;

    Graph() = default;
    Graph(Tensor<T> f, NeighborTable nbrs) : features(std::move(f)), neighbors(std::move(nbrs)) {
        if (features.shape().rank() != 2)
            throw DimensionError("graph: features must be rank 2, got " + features.shape().str());
        if (neighbors.num_vertices() != features.shape()[0])
            throw DimensionError("graph: neighbor table rows != vertex count");
    }

    std::size_t num_vertices() const { return features.shape()[0]; }
    std::size_t feature_dim() const { return features.shape()[1]; }
};

// Vertex-wise addition of two feature maps (residual fuse).
template <typename T>
Tensor<T> add_features(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape().rank() != 2 || b.shape().rank() != 2)
        throw DimensionError("add_features: inputs must be rank 2");
    return add(a, b);
}

// Vertex-wise concatenation of feature maps (dense fuse); channel order
// follows list order and slicing by the part widths recovers the parts.
template <typename T>
Tensor<T> concat_features(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_features: empty part list");
    for (const auto& p : parts) {
        if (p.shape().rank() != 2) throw DimensionError("concat_features: parts must be rank 2");
        if (p.shape()[0] != parts[0].shape()[0])
            throw DimensionError("concat_features: vertex counts differ");
    }
    return concat_last(parts);
}

// Materialize neighbor features: slot (v, j, :) = features row nbrs(v, j).
template <typename T>
Tensor<T> gather_neighbors(const Tensor<T>& features, const NeighborTable& nbrs) {
    if (features.shape().rank() != 2)
        throw DimensionError("gather_neighbors: features must be rank 2");
    if (nbrs.num_vertices() != features.shape()[0])
        throw DimensionError("gather_neighbors: table rows != vertex count");
    return gather_rows(features, nbrs.indices(), nbrs.num_vertices(), nbrs.fan_in());
}

// Mean pairwise L2 distance between vertex rows; 0 iff all rows are
// identical. Over-smoothing diagnostic, not differentiated.
template <typename T>
double feature_diversity(const Tensor<T>& features) {
    if (features.shape().rank() != 2)
        throw DimensionError("feature_diversity: features must be rank 2");
    const std::size_t n = features.shape()[0], d = features.shape()[1];
    if (n < 2) throw std::invalid_argument("feature_diversity: need at least 2 vertices");
    const T* p = features.data();
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double ss = 0;
            for (std::size_t c = 0; c < d; ++c) {
                double dv = static_cast<double>(p[i * d + c]) - p[j * d + c];
                ss += dv * dv;
            }
            total += std::sqrt(ss);
        }
    }
    return total / (static_cast<double>(n) * (n - 1) / 2.0);
}

}  // namespace dgcn
