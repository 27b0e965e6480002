#include <doctest.h>

#include <cmath>
#include <vector>

#include "dgcn/gcn_ops.hpp"
#include "support/op_check.hpp"

using namespace dgcn;

namespace {

// ---------------------------------------------------------------------------
// Unvectorized reference: per-vertex loops over raw doubles, no tensor
// ops, no tape. BN statistics recomputed from scratch.

struct StageRef {
    std::vector<double> w, b, gamma, beta, rm, rv;
    std::size_t in = 0, out = 0;
};

StageRef snapshot_stage(const MlpStage<double>& s) {
    StageRef r;
    r.w = *s.weight->value;
    r.b = *s.bias->value;
    r.gamma = *s.gamma->value;
    r.beta = *s.beta->value;
    r.rm = *s.running_mean->value;
    r.rv = *s.running_var->value;
    r.in = s.weight->shape[0];
    r.out = s.weight->shape[1];
    return r;
}

// rows: R x in, row-major. Applies affine -> BN -> ReLU.
std::vector<double> oracle_stage(const std::vector<double>& rows, std::size_t nrows,
                                 const StageRef& s, bool train) {
    std::vector<double> z(nrows * s.out, 0.0);
    for (std::size_t r = 0; r < nrows; ++r)
        for (std::size_t o = 0; o < s.out; ++o) {
            double acc = s.b[o];
            for (std::size_t i = 0; i < s.in; ++i) acc += rows[r * s.in + i] * s.w[i * s.out + o];
            z[r * s.out + o] = acc;
        }
    std::vector<double> y(nrows * s.out, 0.0);
    for (std::size_t o = 0; o < s.out; ++o) {
        double mu, var;
        if (train) {
            mu = 0;
            for (std::size_t r = 0; r < nrows; ++r) mu += z[r * s.out + o];
            mu /= static_cast<double>(nrows);
            var = 0;
            for (std::size_t r = 0; r < nrows; ++r) {
                double dv = z[r * s.out + o] - mu;
                var += dv * dv;
            }
            var /= static_cast<double>(nrows);
        } else {
            mu = s.rm[o];
            var = s.rv[o];
        }
        double inv = 1.0 / std::sqrt(var + kBnEps);
        for (std::size_t r = 0; r < nrows; ++r) {
            double h = s.gamma[o] * (z[r * s.out + o] - mu) * inv + s.beta[o];
            y[r * s.out + o] = h > 0 ? h : 0;
        }
    }
    return y;
}

std::vector<double> oracle_mlp(const std::vector<double>& rows, std::size_t nrows,
                               const std::vector<StageRef>& stages, bool train) {
    std::vector<double> h = rows;
    for (const auto& s : stages) h = oracle_stage(h, nrows, s, train);
    return h;
}

struct LayerRef {
    std::vector<StageRef> mlp, pre;
    double eps = 0;
};

LayerRef snapshot_layer(const LayerParams<double>& p) {
    LayerRef r;
    for (const auto& s : p.mlp) r.mlp.push_back(snapshot_stage(s));
    for (const auto& s : p.pre_mlp) r.pre.push_back(snapshot_stage(s));
    if (p.gin_eps) r.eps = (*p.gin_eps->value)[0];
    return r;
}

std::vector<double> oracle_operator(OperatorKind kind, const std::vector<double>& feats,
                                    std::size_t n, std::size_t d,
                                    const std::vector<std::vector<int>>& nbrs,
                                    const LayerRef& lr, bool train) {
    const std::size_t k = nbrs[0].size();
    const std::size_t out = lr.mlp.back().out;
    auto hv = [&](std::size_t v, std::size_t c) { return feats[v * d + c]; };

    if (kind == OperatorKind::EdgeConv) {
        std::vector<double> rows(n * k * 2 * d);
        for (std::size_t v = 0; v < n; ++v)
            for (std::size_t j = 0; j < k; ++j)
                for (std::size_t c = 0; c < d; ++c) {
                    rows[(v * k + j) * 2 * d + c] = hv(v, c);
                    rows[(v * k + j) * 2 * d + d + c] =
                        hv(static_cast<std::size_t>(nbrs[v][j]), c) - hv(v, c);
                }
        auto e = oracle_mlp(rows, n * k, lr.mlp, train);
        std::vector<double> y(n * out);
        for (std::size_t v = 0; v < n; ++v)
            for (std::size_t c = 0; c < out; ++c) {
                double best = e[(v * k) * out + c];
                for (std::size_t j = 1; j < k; ++j)
                    best = std::max(best, e[(v * k + j) * out + c]);
                y[v * out + c] = best;
            }
        return y;
    }
    if (kind == OperatorKind::MRGCN || kind == OperatorKind::MeanGCN) {
        std::vector<double> rows(n * 2 * d);
        for (std::size_t v = 0; v < n; ++v)
            for (std::size_t c = 0; c < d; ++c) {
                rows[v * 2 * d + c] = hv(v, c);
                if (kind == OperatorKind::MRGCN) {
                    double best = hv(static_cast<std::size_t>(nbrs[v][0]), c) - hv(v, c);
                    for (std::size_t j = 1; j < k; ++j)
                        best = std::max(best, hv(static_cast<std::size_t>(nbrs[v][j]), c) - hv(v, c));
                    rows[v * 2 * d + d + c] = best;
                } else {
                    double acc = 0;
                    for (std::size_t j = 0; j < k; ++j) acc += hv(static_cast<std::size_t>(nbrs[v][j]), c);
                    rows[v * 2 * d + d + c] = acc / static_cast<double>(k);
                }
            }
        return oracle_mlp(rows, n, lr.mlp, train);
    }
    if (kind == OperatorKind::GraphSAGE || kind == OperatorKind::GraphSAGE_N) {
        std::vector<double> nrows(n * k * d);
        for (std::size_t v = 0; v < n; ++v)
            for (std::size_t j = 0; j < k; ++j)
                for (std::size_t c = 0; c < d; ++c)
                    nrows[(v * k + j) * d + c] = hv(static_cast<std::size_t>(nbrs[v][j]), c);
        auto tr = oracle_mlp(nrows, n * k, lr.pre, train);
        const std::size_t e = lr.pre.back().out;
        std::vector<double> rows(n * (d + e));
        for (std::size_t v = 0; v < n; ++v) {
            for (std::size_t c = 0; c < d; ++c) rows[v * (d + e) + c] = hv(v, c);
            for (std::size_t c = 0; c < e; ++c) {
                double best = tr[(v * k) * e + c];
                for (std::size_t j = 1; j < k; ++j) best = std::max(best, tr[(v * k + j) * e + c]);
                rows[v * (d + e) + d + c] = best;
            }
        }
        auto y = oracle_mlp(rows, n, lr.mlp, train);
        if (kind == OperatorKind::GraphSAGE_N) {
            for (std::size_t v = 0; v < n; ++v) {
                double ss = 0;
                for (std::size_t c = 0; c < out; ++c) ss += y[v * out + c] * y[v * out + c];
                if (ss > 0) {
                    double inv = 1.0 / std::sqrt(ss);
                    for (std::size_t c = 0; c < out; ++c) y[v * out + c] *= inv;
                }
            }
        }
        return y;
    }
    // GIN
    std::vector<double> rows(n * d);
    for (std::size_t v = 0; v < n; ++v)
        for (std::size_t c = 0; c < d; ++c) {
            double acc = (1.0 + lr.eps) * hv(v, c);
            for (std::size_t j = 0; j < k; ++j) acc += hv(static_cast<std::size_t>(nbrs[v][j]), c);
            rows[v * d + c] = acc;
        }
    return oracle_mlp(rows, n, lr.mlp, train);
}

// ---------------------------------------------------------------------------

struct Instance {
    std::size_t n, d, k, out;
    Buffer<double> feats;
    std::vector<std::vector<int>> nbr_rows;
    NeighborTable table;
};

Instance random_instance(std::size_t n, std::size_t d, std::size_t k, std::size_t out,
                         std::uint64_t seed) {
    Instance in{n, d, k, out, dgcn::make_buffer<double>(n * d), {}, {}};
    testsup::fill_uniform(in.feats, RngStream(seed), -1.5, 1.5);
    RngStream trng(seed ^ 0xabcdef);
    for (std::size_t v = 0; v < n; ++v) {
        auto pick = trng.fork(v).sample_without_replacement(0, static_cast<int>(n - 1),
                                                            static_cast<int>(k));
        std::vector<int> row;
        for (int r : pick) row.push_back(r >= static_cast<int>(v) ? r + 1 : r);
        in.nbr_rows.push_back(row);
    }
    in.table = NeighborTable::from_rows(in.nbr_rows);
    return in;
}

const OperatorKind kAllOps[] = {OperatorKind::EdgeConv,    OperatorKind::MRGCN,
                                OperatorKind::GraphSAGE,   OperatorKind::GraphSAGE_N,
                                OperatorKind::GIN,         OperatorKind::MeanGCN};

void randomize_layer_state(ParamStore<double>& store, std::uint64_t seed) {
    RngStream rng(seed);
    for (std::size_t i = 0; i < store.entry_count(); ++i) {
        auto& p = store.entry(i);
        if (p.name.find("running_mean") != std::string::npos)
            for (std::size_t j = 0; j < p.size(); ++j)
                (*p.value)[j] = rng.fork(i).uniform(j) - 0.5;
        if (p.name.find("running_var") != std::string::npos)
            for (std::size_t j = 0; j < p.size(); ++j)
                (*p.value)[j] = 0.5 + rng.fork(i).uniform(j);
    }
}

}  // namespace

TEST_SUITE_BEGIN("gcn_ops");

TEST_CASE("every operator matches the per-vertex loop oracle") {
    for (OperatorKind kind : kAllOps) {
        for (std::uint64_t seed = 0; seed < 6; ++seed) {
            CAPTURE(operator_name(kind));
            CAPTURE(seed);
            Instance in = random_instance(6, 4, 3, 5, 100 + seed);
            ParamStore<double> store;
            auto lp = make_layer(store, "l", kind, in.d, in.out, RngStream(seed * 31 + 1));
            randomize_layer_state(store, seed + 7);
            LayerRef ref = snapshot_layer(lp);

            for (bool train : {false, true}) {
                PassContext<double> ctx{nullptr, train};
                // Oracle first: snapshot happens before running stats move.
                auto want = oracle_operator(kind, *in.feats, in.n, in.d, in.nbr_rows, ref, train);
                Tensor<double> got =
                    operator_forward(Graph<double>(Tensor<double>(Shape(in.n, in.d), in.feats), in.table),
                                     lp, ctx);
                REQUIRE(got.size() == want.size());
                for (std::size_t i = 0; i < want.size(); ++i)
                    CHECK(got.at(i) == doctest::Approx(want[i]).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("float instantiation stays within 1e-6 of the double oracle") {
    Instance in = random_instance(6, 4, 3, 4, 42);
    for (OperatorKind kind : kAllOps) {
        ParamStore<float> store;
        auto lp = make_layer(store, "l", kind, in.d, std::size_t(4), RngStream(5));
        // Mirror the float parameters into a double reference.
        ParamStore<double> dstore;
        auto dlp = make_layer(dstore, "l", kind, in.d, std::size_t(4), RngStream(5));
        for (std::size_t i = 0; i < store.entry_count(); ++i)
            for (std::size_t j = 0; j < store.entry(i).size(); ++j)
                (*dstore.entry(i).value)[j] = static_cast<double>((*store.entry(i).value)[j]);
        LayerRef ref = snapshot_layer(dlp);

        auto ffeats = dgcn::make_buffer<float>(in.n * in.d);
        for (std::size_t i = 0; i < ffeats->size(); ++i)
            (*ffeats)[i] = static_cast<float>((*in.feats)[i]);
        PassContext<float> ctx{nullptr, true};
        Tensor<float> got = operator_forward(
            Graph<float>(Tensor<float>(Shape(in.n, in.d), ffeats), in.table), lp, ctx);
        auto want = oracle_operator(kind, *in.feats, in.n, in.d, in.nbr_rows, ref, true);
        for (std::size_t i = 0; i < want.size(); ++i)
            CHECK(static_cast<double>(got.at(i)) == doctest::Approx(want[i]).epsilon(2e-6));
    }
}

TEST_CASE("degenerate neighborhoods") {
    // All rows identical: differences vanish, EdgeConv/MRGCN reduce to
    // mlp(concat(h_v, 0)).
    const std::size_t n = 4, d = 3;
    auto feats = dgcn::make_buffer<double>(n * d);
    for (std::size_t v = 0; v < n; ++v)
        for (std::size_t c = 0; c < d; ++c) (*feats)[v * d + c] = 0.3 * static_cast<double>(c) - 0.2;
    auto table = NeighborTable::from_rows({{1, 2}, {0, 3}, {3, 0}, {2, 1}});
    for (OperatorKind kind : {OperatorKind::EdgeConv, OperatorKind::MRGCN}) {
        ParamStore<double> store;
        auto lp = make_layer(store, "l", kind, d, std::size_t(4), RngStream(9));
        PassContext<double> ctx{nullptr, false};
        Tensor<double> got =
            operator_forward(Graph<double>(Tensor<double>(Shape(n, d), feats), table), lp, ctx);
        // Reference: one row through the mlp with zero aggregate.
        LayerRef ref = snapshot_layer(lp);
        std::vector<double> row(2 * d, 0.0);
        for (std::size_t c = 0; c < d; ++c) row[c] = (*feats)[c];
        auto want = oracle_mlp(row, 1, ref.mlp, false);
        for (std::size_t v = 0; v < n; ++v)
            for (std::size_t c = 0; c < 4; ++c)
                CHECK(got.at(v * 4 + c) == doctest::Approx(want[c]).epsilon(1e-9));
    }
}

TEST_CASE("mrgcn scalar aggregate: max of relative features") {
    // h_v = 0 with neighbor values {-2, 5}: aggregate is 5. With a probe
    // mlp (W selects the aggregate channel, BN in eval mode with unit
    // running stats) the output is agg / sqrt(1 + eps_bn).
    ParamStore<double> store;
    auto lp = make_layer(store, "l", OperatorKind::MRGCN, std::size_t(1), std::size_t(1),
                         RngStream(1));
    (*lp.mlp[0].weight->value) = {0.0, 1.0};
    (*lp.mlp[0].bias->value) = {0.0};
    auto feats = Tensor<double>::from(Shape(3, 1), {0, -2, 5});
    auto table = NeighborTable::from_rows({{1, 2}, {0, 2}, {0, 1}});
    PassContext<double> ctx{nullptr, false};
    auto y = mrgcn_forward(Graph<double>(feats, table), lp, ctx);
    CHECK(y.at(0) == doctest::Approx(5.0 / std::sqrt(1 + kBnEps)).epsilon(1e-12));
}

TEST_CASE("gin: epsilon 0 sums center and neighbors") {
    ParamStore<double> store;
    auto lp = make_layer(store, "l", OperatorKind::GIN, std::size_t(1), std::size_t(1),
                         RngStream(2));
    (*lp.mlp[0].weight->value) = {1.0};
    (*lp.mlp[0].bias->value) = {0.0};
    auto feats = Tensor<double>::from(Shape(3, 1), {3, 1, 2});
    auto table = NeighborTable::from_rows({{1, 2}, {0, 2}, {0, 1}});
    PassContext<double> ctx{nullptr, false};
    auto y = gin_forward(Graph<double>(feats, table), lp, ctx);
    CHECK(y.at(0) == doctest::Approx(6.0 / std::sqrt(1 + kBnEps)).epsilon(1e-12));

    // Zero neighbors: h' = mlp(h_v).
    auto z = gin_forward(Graph<double>(Tensor<double>::from(Shape(3, 1), {3, 0, 0}), table), lp, ctx);
    CHECK(z.at(0) == doctest::Approx(3.0 / std::sqrt(1 + kBnEps)).epsilon(1e-12));
}

TEST_CASE("graphsage: identity-probe aggregation and normalized variant") {
    ParamStore<double> store;
    auto lp = make_layer(store, "l", OperatorKind::GraphSAGE, std::size_t(1), std::size_t(1),
                         RngStream(3));
    (*lp.pre_mlp[0].weight->value) = {1.0};
    (*lp.mlp[0].weight->value) = {0.0, 1.0};
    auto feats = Tensor<double>::from(Shape(2, 1), {0.25, 0.75});
    auto table = NeighborTable::from_rows({{1}, {0}});
    PassContext<double> ctx{nullptr, false};
    auto y = graphsage_forward(Graph<double>(feats, table), lp, ctx, false);
    const double s = 1.0 / std::sqrt(1 + kBnEps);
    // Single neighbor: n_v = mlp1(h_u) = h_u * s; then the probe passes it through.
    CHECK(y.at(0) == doctest::Approx(0.75 * s * s).epsilon(1e-12));

    // Normalized variant: nonzero rows have unit norm.
    Instance in = random_instance(7, 3, 2, 5, 77);
    ParamStore<double> store2;
    auto lp2 = make_layer(store2, "l", OperatorKind::GraphSAGE_N, in.d, std::size_t(5),
                          RngStream(4));
    PassContext<double> ctx2{nullptr, true};
    auto yn = graphsage_forward(
        Graph<double>(Tensor<double>(Shape(in.n, in.d), in.feats), in.table), lp2, ctx2, true);
    for (std::size_t v = 0; v < in.n; ++v) {
        double ss = 0;
        for (std::size_t c = 0; c < 5; ++c) ss += yn.at(v * 5 + c) * yn.at(v * 5 + c);
        if (ss > 0) CHECK(std::sqrt(ss) == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("meangcn: single neighbor mean is that neighbor") {
    ParamStore<double> store;
    auto lp = make_layer(store, "l", OperatorKind::MeanGCN, std::size_t(1), std::size_t(1),
                         RngStream(6));
    (*lp.mlp[0].weight->value) = {0.0, 1.0};
    auto feats = Tensor<double>::from(Shape(2, 1), {0.1, 0.9});
    auto table = NeighborTable::from_rows({{1}, {0}});
    PassContext<double> ctx{nullptr, false};
    auto y = meangcn_forward(Graph<double>(feats, table), lp, ctx);
    CHECK(y.at(0) == doctest::Approx(0.9 / std::sqrt(1 + kBnEps)).epsilon(1e-12));
}

TEST_CASE("permutation equivariance") {
    Instance in = random_instance(8, 3, 3, 4, 0);
    std::vector<int> perm{3, 7, 0, 5, 1, 6, 2, 4};
    for (OperatorKind kind : kAllOps) {
        ParamStore<double> store;
        auto lp = make_layer(store, "l", kind, in.d, std::size_t(4), RngStream(11));
        PassContext<double> ctx{nullptr, true};
        auto base = operator_forward(
            Graph<double>(Tensor<double>(Shape(in.n, in.d), in.feats), in.table), lp, ctx);

        auto pfeats = dgcn::make_buffer<double>(in.n * in.d);
        std::vector<std::vector<int>> prows(in.n);
        for (std::size_t v = 0; v < in.n; ++v) {
            auto pv = static_cast<std::size_t>(perm[v]);
            for (std::size_t c = 0; c < in.d; ++c) (*pfeats)[pv * in.d + c] = (*in.feats)[v * in.d + c];
            std::vector<int> row;
            for (int u : in.nbr_rows[v]) row.push_back(perm[static_cast<std::size_t>(u)]);
            prows[pv] = row;
        }
        auto ptable = NeighborTable::from_rows(prows);
        PassContext<double> ctx2{nullptr, true};
        auto permuted = operator_forward(
            Graph<double>(Tensor<double>(Shape(in.n, in.d), pfeats), ptable), lp, ctx2);
        for (std::size_t v = 0; v < in.n; ++v)
            for (std::size_t c = 0; c < 4; ++c)
                CHECK(permuted.at(static_cast<std::size_t>(perm[v]) * 4 + c) ==
                      doctest::Approx(base.at(v * 4 + c)).epsilon(1e-6));
    }
}

TEST_CASE("edgeconv and mrgcn parameter parity") {
    for (std::size_t din : {3u, 16u})
        for (std::size_t dout : {8u, 32u}) {
            ParamStore<double> a, b;
            make_layer(a, "l", OperatorKind::EdgeConv, din, dout, RngStream(1));
            make_layer(b, "l", OperatorKind::MRGCN, din, dout, RngStream(1));
            CHECK(a.trainable_scalar_count() == b.trainable_scalar_count());
        }
}

TEST_CASE("full-layer gradcheck for every operator") {
    for (OperatorKind kind : kAllOps) {
        std::size_t checked = 0, skipped = 0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            CAPTURE(operator_name(kind));
            CAPTURE(seed);
            Instance in = random_instance(5, 3, 2, 4, 500 + seed);
            ParamStore<double> store;
            auto lp = make_layer(store, "l", kind, in.d, std::size_t(4), RngStream(seed));
            auto fgrad = dgcn::make_buffer<double>(in.n * in.d);

            auto weights = dgcn::make_buffer<double>(in.n * 4);
            testsup::fill_uniform(weights, RngStream(seed ^ 0xfeed), -1, 1);
            Tensor<double> wt(Shape(in.n, std::size_t(4)), weights);

            auto run = [&](Tape<double>* tape) {
                PassContext<double> ctx{tape, true};
                Tensor<double> feats = tape
                                           ? tape->leaf(Shape(in.n, in.d), in.feats, fgrad)
                                           : Tensor<double>(Shape(in.n, in.d), in.feats);
                auto y = operator_forward(Graph<double>(feats, in.table), lp, ctx);
                return sum_all(mul(y, wt));
            };

            store.zero_grads();
            std::fill(fgrad->begin(), fgrad->end(), 0.0);
            {
                Tape<double> tape;
                tape.backward(run(&tape));
            }
            std::vector<double*> ptrs;
            std::vector<double> analytic;
            for (std::size_t i = 0; i < in.feats->size(); ++i) {
                ptrs.push_back(in.feats->data() + i);
                analytic.push_back((*fgrad)[i]);
            }
            for (std::size_t e = 0; e < store.entry_count(); ++e) {
                auto& p = store.entry(e);
                if (!p.trainable) continue;
                for (std::size_t j = 0; j < p.size(); ++j) {
                    ptrs.push_back(p.value->data() + j);
                    analytic.push_back((*p.grad)[j]);
                }
            }
            auto r = fd::check([&] { return run(nullptr).at(0); }, ptrs, analytic, 1e-5);
            CHECK(r.max_rel_err < 1e-3);
            checked += r.checked;
            skipped += r.skipped;
        }
        REQUIRE(checked > 0);
        CHECK(static_cast<double>(skipped) < 0.05 * static_cast<double>(checked + skipped));
    }
}

TEST_CASE("operator parsing round-trips config names") {
    for (OperatorKind kind : kAllOps) CHECK(parse_operator(operator_name(kind)) == kind);
    CHECK_THROWS_AS(parse_operator("gat"), std::invalid_argument);
}

TEST_SUITE_END();
