#include <doctest.h>

#include <cmath>

#include "dgcn/graph.hpp"
#include "support/op_check.hpp"

using namespace dgcn;

namespace {
Tensor<double> t2(std::size_t n, std::size_t d, std::vector<double> v) {
    return Tensor<double>::from(Shape(n, d), std::move(v));
}
}  // namespace

TEST_SUITE_BEGIN("graph");

TEST_CASE("add_features examples and commutativity") {
    auto y = add_features(t2(1, 2, {1, 2}), t2(1, 2, {0, 0}));
    CHECK(y.at(0) == 1.0);
    CHECK(y.at(1) == 2.0);
    auto z = add_features(t2(1, 2, {1, 2}), t2(1, 2, {3, 4}));
    CHECK(z.at(0) == 4.0);
    CHECK(z.at(1) == 6.0);

    RngStream rng(11);
    auto a = make_buffer<double>(12), b = make_buffer<double>(12);
    testsup::fill_uniform(a, rng.fork(0), -3, 3);
    testsup::fill_uniform(b, rng.fork(1), -3, 3);
    auto ab = add_features(Tensor<double>(Shape(3, 4), a), Tensor<double>(Shape(3, 4), b));
    auto ba = add_features(Tensor<double>(Shape(3, 4), b), Tensor<double>(Shape(3, 4), a));
    for (std::size_t i = 0; i < 12; ++i) {
        CHECK(ab.at(i) == ba.at(i));
        CHECK(ab.at(i) == (*a)[i] + (*b)[i]);  // elementwise oracle
    }

    CHECK_THROWS_AS(add_features(t2(1, 2, {1, 2}), t2(2, 1, {1, 2})), DimensionError);
}

TEST_CASE("add_features gradient is all-ones under a sum loss") {
    Tape<double> tape;
    auto a = make_buffer<double>(6), b = make_buffer<double>(6);
    RngStream rng(3);
    testsup::fill_uniform(a, rng.fork(0), -1, 1);
    testsup::fill_uniform(b, rng.fork(1), -1, 1);
    auto ga = make_buffer<double>(6), gb = make_buffer<double>(6);
    auto ta = tape.leaf(Shape(2, 3), a, ga);
    auto tb = tape.leaf(Shape(2, 3), b, gb);
    tape.backward(sum_all(add_features(ta, tb)));
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK((*ga)[i] == 1.0);
        CHECK((*gb)[i] == 1.0);
    }
    // Finite differences agree.
    auto fwd = [&]() {
        return sum_all(add_features(Tensor<double>(Shape(2, 3), a), Tensor<double>(Shape(2, 3), b)))
            .at(0);
    };
    std::vector<double*> ptrs;
    std::vector<double> analytic;
    for (std::size_t i = 0; i < 6; ++i) {
        ptrs.push_back(a->data() + i);
        analytic.push_back(1.0);
    }
    auto r = fd::check(fwd, ptrs, analytic);
    CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("concat_features: examples, growth rule, round trip") {
    auto y = concat_features<double>({t2(1, 1, {1}), t2(1, 2, {2, 3})});
    CHECK(y.shape() == Shape(1, 3));

    auto single = concat_features<double>({t2(2, 2, {1, 2, 3, 4})});
    CHECK(single.shape() == Shape(2, 2));
    CHECK(single.at(3) == 4.0);

    // Dense growth: D0=6 plus three layers of D=32.
    std::vector<Tensor<double>> parts;
    parts.push_back(Tensor<double>::zeros(Shape(4, 6)));
    for (int l = 0; l < 3; ++l) parts.push_back(Tensor<double>::zeros(Shape(4, 32)));
    CHECK(concat_features(parts).shape() == Shape(4, 102));

    // Slicing recovers each part exactly.
    RngStream rng(17);
    std::vector<std::size_t> widths{2, 5, 1};
    std::vector<Buffer<double>> bufs;
    std::vector<Tensor<double>> rparts;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        auto b = make_buffer<double>(3 * widths[i]);
        testsup::fill_uniform(b, rng.fork(i), -2, 2);
        bufs.push_back(b);
        rparts.emplace_back(Shape(3, widths[i]), b);
    }
    auto cat = concat_features(rparts);
    std::size_t off = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t c = 0; c < widths[p]; ++c)
                CHECK(cat.at(r * 8 + off + c) == (*bufs[p])[r * widths[p] + c]);
        off += widths[p];
    }

    CHECK_THROWS_AS(concat_features<double>({t2(2, 1, {1, 2}), t2(3, 1, {1, 2, 3})}),
                    DimensionError);
    CHECK_THROWS_AS(concat_features<double>({}), std::invalid_argument);
}

TEST_CASE("neighbor table validation") {
    CHECK_THROWS_AS(NeighborTable::from_rows({{1}, {2}}), std::out_of_range);       // out of range
    CHECK_THROWS_AS(NeighborTable::from_rows({{0}, {0}}), std::invalid_argument);   // self-loop
    CHECK_THROWS_AS(NeighborTable::from_rows({{1, 1}, {0, 2}, {0, 1}}), std::invalid_argument);
    auto ok = NeighborTable::from_rows({{1, 2}, {0, 2}, {0, 1}});
    CHECK(ok.fan_in() == 2);
    auto padded = NeighborTable::from_rows({{1, 1}, {0, 0}}, /*allow_duplicates=*/true);
    CHECK(padded.at(0, 1) == 1);
}

TEST_CASE("gather_neighbors: swap, constant, loop oracle") {
    auto swap = gather_neighbors(t2(2, 1, {1, 2}), NeighborTable::from_rows({{1}, {0}}));
    CHECK(swap.shape() == Shape(2, 1, 1));
    CHECK(swap.at(0) == 2.0);
    CHECK(swap.at(1) == 1.0);

    auto all0 = gather_neighbors(t2(3, 2, {9, 8, 1, 2, 3, 4}),
                                 NeighborTable::from_rows({{1, 2}, {0, 2}, {0, 1}}));
    CHECK(all0.at(0) == 1.0);  // row 0 gathers row 1 then row 2

    RngStream rng(23);
    auto feats = make_buffer<double>(15);
    testsup::fill_uniform(feats, rng, -5, 5);
    Tensor<double> f(Shape(5, 3), feats);
    auto table = NeighborTable::from_rows({{1, 4}, {0, 2}, {3, 1}, {4, 0}, {2, 3}});
    auto out = gather_neighbors(f, table);
    for (std::size_t v = 0; v < 5; ++v)
        for (std::size_t j = 0; j < 2; ++j)
            for (std::size_t c = 0; c < 3; ++c)
                CHECK(out.at((v * 2 + j) * 3 + c) ==
                      (*feats)[static_cast<std::size_t>(table.at(v, j)) * 3 + c]);

    auto bad = std::make_shared<std::vector<int>>(std::vector<int>{0, 7});
    CHECK_THROWS_AS(gather_rows(f, bad, 1, 2), std::out_of_range);
}

TEST_CASE("gather_neighbors gradcheck (scatter-add backward)") {
    auto table = NeighborTable::from_rows({{1, 2}, {0, 2}, {0, 0}}, true);
    for (int seed = 0; seed < 20; ++seed) {
        auto r = testsup::gradcheck_op(
            {Shape(3, 4)},
            [&table](std::vector<Tensor<double>>& in) { return gather_neighbors(in[0], table); },
            400 + static_cast<std::uint64_t>(seed));
        CHECK(r.max_rel_err < 1e-4);
    }
}

TEST_CASE("feature_diversity: degenerate, pair, oracle") {
    CHECK(feature_diversity(t2(3, 2, {1, 2, 1, 2, 1, 2})) == 0.0);
    CHECK(feature_diversity(t2(2, 1, {0, 2})) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK_THROWS_AS(feature_diversity(t2(1, 2, {1, 2})), std::invalid_argument);

    RngStream rng(31);
    auto buf = make_buffer<double>(24);
    testsup::fill_uniform(buf, rng, -4, 4);
    Tensor<double> f(Shape(6, 4), buf);
    // Brute-force pairwise loop oracle.
    double total = 0;
    int pairs = 0;
    for (int i = 0; i < 6; ++i)
        for (int j = i + 1; j < 6; ++j) {
            double ss = 0;
            for (int c = 0; c < 4; ++c) {
                double d = (*buf)[static_cast<std::size_t>(i * 4 + c)] -
                           (*buf)[static_cast<std::size_t>(j * 4 + c)];
                ss += d * d;
            }
            total += std::sqrt(ss);
            ++pairs;
        }
    CHECK(feature_diversity(f) == doctest::Approx(total / pairs).epsilon(1e-12));
}

TEST_SUITE_END();
