#pragma once

#include <vector>

#include "dgcn/data.hpp"
#include "dgcn/train.hpp"

namespace dgcn {

// Point cloud -> trainer sample: model input is coords plus any extra
// channels; with static topology (neither dynamic nor fixed edges) the
// coordinate k-NN table is built once here and reused every epoch.
template <typename T>
PreparedSample<T> prepare_pointcloud(const PointCloudSample& s, const ModelConfig& cfg,
                                     std::uint64_t seed) {
    if (s.n < cfg.k + 1)
        throw std::invalid_argument("sample has " + std::to_string(s.n) +
                                    " points, need at least k+1 = " + std::to_string(cfg.k + 1));
    PreparedSample<T> p;
    const std::size_t d = s.feature_dim();
    auto feat = make_buffer<T>(s.n * d);
    auto crd = make_buffer<T>(s.n * 3);
    for (std::size_t i = 0; i < s.n; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            (*feat)[i * d + c] = static_cast<T>(s.coords[i * 3 + c]);
            (*crd)[i * 3 + c] = static_cast<T>(s.coords[i * 3 + c]);
        }
        for (std::size_t j = 0; j < s.extra_dim; ++j)
            (*feat)[i * d + 3 + j] = static_cast<T>(s.extras[i * s.extra_dim + j]);
    }
    p.features = Tensor<T>(Shape(s.n, d), std::move(feat));
    p.coords = Tensor<T>(Shape(s.n, std::size_t(3)), std::move(crd));
    p.labels = s.labels;
    if (!cfg.dynamic_knn && !cfg.fixed_edges) {
        DilationPlan plan{cfg.k, 1, 0.0, true};
        p.edges = dilated_knn(p.coords, plan, RngStream(seed));
        p.has_edges = true;
    }
    return p;
}

template <typename T>
std::vector<PreparedSample<T>> prepare_pointclouds(const std::vector<PointCloudSample>& set,
                                                   const ModelConfig& cfg, std::uint64_t seed) {
    std::vector<PreparedSample<T>> out;
    out.reserve(set.size());
    for (std::size_t i = 0; i < set.size(); ++i)
        out.push_back(prepare_pointcloud<T>(set[i], cfg, seed + i));
    return out;
}

// Fixed-edge graph -> trainer sample with the fan-in adapter applied.
template <typename T>
PreparedSample<T> prepare_fixed_graph(const FixedGraphSample& s, const ModelConfig& cfg,
                                      std::uint64_t seed) {
    PreparedSample<T> p;
    auto feat = make_buffer<T>(s.n * s.feat_dim);
    for (std::size_t i = 0; i < feat->size(); ++i) (*feat)[i] = static_cast<T>(s.features[i]);
    p.features = Tensor<T>(Shape(s.n, s.feat_dim), std::move(feat));
    p.multilabels = s.multilabels;
    p.edges = fixed_edges_to_table(s, cfg.k, RngStream(seed)).table;
    p.has_edges = true;
    return p;
}

}  // namespace dgcn
