#pragma once

#include <string>
#include <vector>

#include "dgcn/graph.hpp"
#include "dgcn/ops.hpp"
#include "dgcn/param_store.hpp"

namespace dgcn {

inline constexpr double kBnMomentum = 0.9;
inline constexpr double kBnEps = 1e-5;

enum class OperatorKind { EdgeConv, MRGCN, GraphSAGE, GraphSAGE_N, GIN, MeanGCN };

inline const char* operator_name(OperatorKind k) {
    switch (k) {
        case OperatorKind::EdgeConv: return "edgeconv";
        case OperatorKind::MRGCN: return "mrgcn";
        case OperatorKind::GraphSAGE: return "sage";
        case OperatorKind::GraphSAGE_N: return "sage_n";
        case OperatorKind::GIN: return "gin";
        case OperatorKind::MeanGCN: return "mean";
    }
    throw std::invalid_argument("operator_name: unknown kind");
}

inline OperatorKind parse_operator(const std::string& s) {
    if (s == "edgeconv") return OperatorKind::EdgeConv;
    if (s == "mrgcn") return OperatorKind::MRGCN;
    if (s == "sage") return OperatorKind::GraphSAGE;
    if (s == "sage_n") return OperatorKind::GraphSAGE_N;
    if (s == "gin") return OperatorKind::GIN;
    if (s == "mean") return OperatorKind::MeanGCN;
    throw std::invalid_argument("unknown operator '" + s +
                                "' (expected edgeconv|mrgcn|sage|sage_n|gin|mean)");
}

// Per-pass context: tape (null for pure inference), train-mode flag for
// batch norm and dropout, dropout rate for the prediction head, and the
// step-forked random stream feeding dropout masks and stochastic
// dilation.
template <typename T>
struct PassContext {
    Tape<T>* tape = nullptr;
    bool training = false;
    double dropout = 0.0;
    RngStream rng;
};

// One mlp stage: affine -> batch norm -> ReLU.
template <typename T>
struct MlpStage {
    Parameter<T>* weight = nullptr;
    Parameter<T>* bias = nullptr;
    Parameter<T>* gamma = nullptr;
    Parameter<T>* beta = nullptr;
    Parameter<T>* running_mean = nullptr;  // non-trainable
    Parameter<T>* running_var = nullptr;   // non-trainable
};

template <typename T>
MlpStage<T> make_mlp_stage(ParamStore<T>& store, const std::string& prefix, std::size_t in_dim,
                           std::size_t out_dim, const RngStream& rng) {
    MlpStage<T> s;
    s.weight = &store.create(prefix + ".w", Shape(in_dim, out_dim));
    s.bias = &store.create(prefix + ".b", Shape(out_dim));
    s.gamma = &store.create(prefix + ".bn.gamma", Shape(out_dim));
    s.beta = &store.create(prefix + ".bn.beta", Shape(out_dim));
    s.running_mean = &store.create(prefix + ".bn.running_mean", Shape(out_dim), false);
    s.running_var = &store.create(prefix + ".bn.running_var", Shape(out_dim), false);
    init_glorot(*s.weight, in_dim, out_dim, rng.fork(0));
    init_constant(*s.bias, T(0));
    init_constant(*s.gamma, T(1));
    init_constant(*s.beta, T(0));
    init_constant(*s.running_mean, T(0));
    init_constant(*s.running_var, T(1));
    return s;
}

template <typename T>
Tensor<T> apply_mlp_stage(const Tensor<T>& x, const MlpStage<T>& s, PassContext<T>& ctx) {
    Tensor<T> h = matmul(x, s.weight->use(ctx.tape));
    h = bias_add(h, s.bias->use(ctx.tape));
    h = batch_norm(h, s.gamma->use(ctx.tape), s.beta->use(ctx.tape), s.running_mean->value,
                   s.running_var->value, kBnMomentum, kBnEps, ctx.training);
    return relu(h);
}

template <typename T>
Tensor<T> apply_mlp(const Tensor<T>& x, const std::vector<MlpStage<T>>& stages, PassContext<T>& ctx) {
    Tensor<T> h = x;
    for (const auto& s : stages) h = apply_mlp_stage(h, s, ctx);
    return h;
}

// Learnable state of one graph-convolution layer.
template <typename T>
struct LayerParams {
    OperatorKind kind = OperatorKind::MRGCN;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    std::vector<MlpStage<T>> mlp;      // update mlp
    std::vector<MlpStage<T>> pre_mlp;  // GraphSAGE neighbor transform
    Parameter<T>* gin_eps = nullptr;
};

// Registers a layer's parameters. mlp_stages is the stage count of each
// mlp (default 1); intermediate stages keep width out_dim.
template <typename T>
LayerParams<T> make_layer(ParamStore<T>& store, const std::string& prefix, OperatorKind kind,
                          std::size_t in_dim, std::size_t out_dim, const RngStream& rng,
                          std::size_t mlp_stages = 1) {
    if (in_dim < 1 || out_dim < 1) throw std::invalid_argument("make_layer: zero width");
    if (mlp_stages < 1) throw std::invalid_argument("make_layer: mlp needs at least one stage");
    LayerParams<T> lp;
    lp.kind = kind;
    lp.in_dim = in_dim;
    lp.out_dim = out_dim;

    auto add_stages = [&](std::vector<MlpStage<T>>& dst, const std::string& tag, std::size_t first_in) {
        std::size_t cur = first_in;
        for (std::size_t i = 0; i < mlp_stages; ++i) {
            dst.push_back(make_mlp_stage(store, prefix + "." + tag + "." + std::to_string(i), cur,
                                         out_dim, rng.fork(dst.size() + 31 * i + (tag == "pre" ? 7 : 0))));
            cur = out_dim;
        }
    };

    switch (kind) {
        case OperatorKind::EdgeConv:
        case OperatorKind::MRGCN:
        case OperatorKind::MeanGCN:
            add_stages(lp.mlp, "mlp", 2 * in_dim);
            break;
        case OperatorKind::GraphSAGE:
        case OperatorKind::GraphSAGE_N:
            add_stages(lp.pre_mlp, "pre", in_dim);
            add_stages(lp.mlp, "mlp", in_dim + out_dim);
            break;
        case OperatorKind::GIN:
            add_stages(lp.mlp, "mlp", in_dim);
            lp.gin_eps = &store.create(prefix + ".eps", Shape(std::size_t(1)));
            init_constant(*lp.gin_eps, T(0));
            break;
    }
    return lp;
}

namespace gcn_detail {

template <typename T>
void check_layer_input(const Graph<T>& g, const LayerParams<T>& p, const char* op) {
    if (g.feature_dim() != p.in_dim)
        throw DimensionError(std::string(op) + ": input width " + std::to_string(g.feature_dim()) +
                             " != layer width " + std::to_string(p.in_dim));
    if (g.neighbors.fan_in() < 1) throw DimensionError(std::string(op) + ": fan-in must be >= 1");
}

}  // namespace gcn_detail

// h'_v = max_u mlp(concat(h_v, h_u - h_v))
template <typename T>
Tensor<T> edgeconv_forward(const Graph<T>& g, const LayerParams<T>& p, PassContext<T>& ctx) {
    gcn_detail::check_layer_input(g, p, "edgeconv");
    Tensor<T> nbrs = gather_neighbors(g.features, g.neighbors);
    Tensor<T> center = expand_mid(g.features, g.neighbors.fan_in());
    Tensor<T> diffs = sub(nbrs, center);
    Tensor<T> edges = concat_last<T>({center, diffs});
    Tensor<T> e = apply_mlp(edges, p.mlp, ctx);
    return max_axis(e, 1);
}

// h'_v = mlp(concat(h_v, max_u (h_u - h_v))); one mlp application per vertex.
template <typename T>
Tensor<T> mrgcn_forward(const Graph<T>& g, const LayerParams<T>& p, PassContext<T>& ctx) {
    gcn_detail::check_layer_input(g, p, "mrgcn");
    Tensor<T> nbrs = gather_neighbors(g.features, g.neighbors);
    Tensor<T> center = expand_mid(g.features, g.neighbors.fan_in());
    Tensor<T> agg = max_axis(sub(nbrs, center), 1);
    return apply_mlp(concat_last<T>({g.features, agg}), p.mlp, ctx);
}

// n_v = max_u mlp1(h_u); h'_v = mlp2(concat(h_v, n_v)); optional per-row
// L2 normalization after aggregation.
template <typename T>
Tensor<T> graphsage_forward(const Graph<T>& g, const LayerParams<T>& p, PassContext<T>& ctx,
                            bool normalize) {
    gcn_detail::check_layer_input(g, p, "graphsage");
    Tensor<T> nbrs = gather_neighbors(g.features, g.neighbors);
    Tensor<T> n = max_axis(apply_mlp(nbrs, p.pre_mlp, ctx), 1);
    Tensor<T> h = apply_mlp(concat_last<T>({g.features, n}), p.mlp, ctx);
    return normalize ? row_l2_normalize(h) : h;
}

// h'_v = mlp((1 + eps) * h_v + sum_u h_u), eps learnable per layer.
template <typename T>
Tensor<T> gin_forward(const Graph<T>& g, const LayerParams<T>& p, PassContext<T>& ctx) {
    gcn_detail::check_layer_input(g, p, "gin");
    Tensor<T> s = sum_axis(gather_neighbors(g.features, g.neighbors), 1);
    Tensor<T> center = mul_scalar(g.features, add_const(p.gin_eps->use(ctx.tape), 1.0));
    return apply_mlp(add(center, s), p.mlp, ctx);
}

// Mean-aggregator baseline: h'_v = mlp(concat(h_v, mean_u h_u)).
template <typename T>
Tensor<T> meangcn_forward(const Graph<T>& g, const LayerParams<T>& p, PassContext<T>& ctx) {
    gcn_detail::check_layer_input(g, p, "meangcn");
    Tensor<T> m = mean_axis(gather_neighbors(g.features, g.neighbors), 1);
    return apply_mlp(concat_last<T>({g.features, m}), p.mlp, ctx);
}

template <typename T>
Tensor<T> operator_forward(const Graph<T>& g, const LayerParams<T>& p, PassContext<T>& ctx) {
    switch (p.kind) {
        case OperatorKind::EdgeConv: return edgeconv_forward(g, p, ctx);
        case OperatorKind::MRGCN: return mrgcn_forward(g, p, ctx);
        case OperatorKind::GraphSAGE: return graphsage_forward(g, p, ctx, false);
        case OperatorKind::GraphSAGE_N: return graphsage_forward(g, p, ctx, true);
        case OperatorKind::GIN: return gin_forward(g, p, ctx);
        case OperatorKind::MeanGCN: return meangcn_forward(g, p, ctx);
    }
    throw std::invalid_argument("operator_forward: unknown kind");
}

}  // namespace dgcn
