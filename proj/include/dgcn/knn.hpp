#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "dgcn/graph.hpp"
#include "dgcn/parallel.hpp"
#include "dgcn/rng.hpp"
#include "dgcn/tensor.hpp"

namespace dgcn {

// Dilated neighborhood construction plan. With dilation rate d, the k
// selected neighbors are every d-th entry of the sorted k*d nearest
// list. During training a row falls back, with probability epsilon, to
// k neighbors sampled uniformly from that k*d candidate set; the
// deterministic flag (inference) disables that branch entirely.
struct DilationPlan {
    std::size_t k = 1;
    std::size_t d = 1;
    double epsilon = 0.0;
    bool deterministic = false;

    void validate() const {
        if (k < 1) throw std::invalid_argument("dilation plan: k must be >= 1");
        if (d < 1) throw std::invalid_argument("dilation plan: d must be >= 1");
        if (epsilon < 0 || epsilon > 1)
            throw std::invalid_argument("dilation plan: epsilon must be in [0,1]");
    }
};

namespace knn_detail {

// (distance, id) candidates for row v; squared L2 accumulated in double
// so ordering matches the double-precision oracles bit-for-bit.
template <typename T>
inline void candidate_distances(const T* pts, std::size_t n, std::size_t dim, std::size_t v,
                                std::vector<std::pair<double, int>>& out) {
    out.clear();
    out.reserve(n - 1);
    const T* pv = pts + v * dim;
    for (std::size_t u = 0; u < n; ++u) {
        if (u == v) continue;
        double ss = 0;
        const T* pu = pts + u * dim;
        for (std::size_t c = 0; c < dim; ++c) {
            double dv = static_cast<double>(pv[c]) - static_cast<double>(pu[c]);
            ss += dv * dv;
        }
        out.emplace_back(ss, static_cast<int>(u));
    }
}

}  // namespace knn_detail

// The m nearest other vertices per row, ascending by L2 distance, ties
// broken by ascending vertex id.
template <typename T>
NeighborTable knn_bruteforce(const Tensor<T>& points, std::size_t m) {
    if (points.shape().rank() != 2) throw DimensionError("knn: points must be rank 2");
    const std::size_t n = points.shape()[0], dim = points.shape()[1];
    if (m < 1 || m >= n)
        throw std::invalid_argument("knn: need 1 <= m <= N-1, got m=" + std::to_string(m) +
                                    " N=" + std::to_string(n));
    auto idx = std::make_shared<std::vector<int>>(n * m);
    const T* pts = points.data();
    parallel_for(n, [&](std::size_t v) {
        std::vector<std::pair<double, int>> cand;
        knn_detail::candidate_distances(pts, n, dim, v, cand);
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(m), cand.end());
        for (std::size_t j = 0; j < m; ++j) (*idx)[v * m + j] = cand[j].second;
    });
    return NeighborTable(n, m, std::move(idx));
}

// Dilation rate actually used for a graph of n vertices: capped so that
// k*d candidates exist (d >= 1 always).
inline std::size_t clamp_dilation(std::size_t d, std::size_t k, std::size_t n) {
    if (n < 2 || k > n - 1) return 1;
    std::size_t dmax = (n - 1) / k;
    return std::max<std::size_t>(1, std::min(d, dmax));
}

// Dilated k-NN over an explicit metric space. Deterministic selection
// takes positions 0, d, 2d, ... of the sorted k*d nearest list; the
// stochastic branch is decided per row with one Bernoulli(epsilon) draw.
// branch_taken, when given, records that per-row decision.
template <typename T>
NeighborTable dilated_knn(const Tensor<T>& points, const DilationPlan& plan, const RngStream& rng,
                          std::vector<std::uint8_t>* branch_taken = nullptr) {
    plan.validate();
    if (points.shape().rank() != 2) throw DimensionError("knn: points must be rank 2");
    const std::size_t n = points.shape()[0], dim = points.shape()[1];
    if (plan.k >= n)
        throw std::invalid_argument("dilated_knn: fan-in " + std::to_string(plan.k) +
                                    " needs at least " + std::to_string(plan.k + 1) + " vertices");
    const std::size_t d = clamp_dilation(plan.d, plan.k, n);
    const std::size_t kd = plan.k * d;
    auto idx = std::make_shared<std::vector<int>>(n * plan.k);
    const T* pts = points.data();
    const bool stochastic = !plan.deterministic && plan.epsilon > 0;
    if (branch_taken) branch_taken->assign(n, 0);
    parallel_for(n, [&](std::size_t v) {
        std::vector<std::pair<double, int>> cand;
        knn_detail::candidate_distances(pts, n, dim, v, cand);
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(kd), cand.end());
        RngStream row = rng.fork(v);
        if (stochastic && row.uniform(0) < plan.epsilon) {
            if (branch_taken) (*branch_taken)[v] = 1;
            std::vector<int> pick = row.sample_without_replacement(1, static_cast<int>(kd),
                                                                   static_cast<int>(plan.k));
            for (std::size_t j = 0; j < plan.k; ++j)
                (*idx)[v * plan.k + j] = cand[static_cast<std::size_t>(pick[j])].second;
        } else {
            for (std::size_t j = 0; j < plan.k; ++j) (*idx)[v * plan.k + j] = cand[j * d].second;
        }
    });
    return NeighborTable(n, plan.k, std::move(idx));
}

// Per-layer edge rebuild hook: same contract as dilated_knn, evaluated
// on the current layer's feature space (layer 0 passes coordinates).
template <typename T>
NeighborTable dynamic_rebuild(const Tensor<T>& graph_features, const DilationPlan& plan,
                              const RngStream& rng) {
    return dilated_knn(graph_features, plan, rng);
}

// Dilated k-NN within each contiguous row segment of a stacked batch;
// no edges cross segment boundaries. Indices are global row ids.
template <typename T>
NeighborTable knn_segmented(const Tensor<T>& features, const std::vector<std::size_t>& segments,
                            const DilationPlan& plan, const RngStream& rng) {
    if (features.shape().rank() != 2) throw DimensionError("knn: points must be rank 2");
    const std::size_t dim = features.shape()[1];
    auto idx = std::make_shared<std::vector<int>>(features.shape()[0] * plan.k);
    std::size_t base = 0;
    for (std::size_t s = 0; s < segments.size(); ++s) {
        const std::size_t n = segments[s];
        Tensor<T> seg(Shape(n, dim),
                      std::make_shared<std::vector<T>>(features.data() + base * dim,
                                                       features.data() + (base + n) * dim));
        NeighborTable t = dilated_knn(seg, plan, rng.fork(s));
        for (std::size_t i = 0; i < n * plan.k; ++i)
            (*idx)[base * plan.k + i] = (*t.indices())[i] + static_cast<int>(base);
        base += n;
    }
    if (base != features.shape()[0]) throw DimensionError("knn: segments do not cover all rows");
    return NeighborTable(features.shape()[0], plan.k, std::move(idx));
}

}  // namespace dgcn
