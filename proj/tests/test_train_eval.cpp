#include <doctest.h>

#include <cmath>

#include "dgcn/dataset.hpp"
#include "dgcn/metrics.hpp"
#include "dgcn/train.hpp"
#include "support/op_check.hpp"

using namespace dgcn;

TEST_SUITE_BEGIN("train_eval");

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    ParamStore<double> store;
    auto& p = store.create("p", Shape(std::size_t(4)));
    (*p.value) = {1, 2, 3, 4};
    AdamState<double> st(store);
    adam_step(store, st, 0.1);
    CHECK(st.step == 1);
    CHECK((*p.value)[0] == 1.0);
    CHECK((*p.value)[3] == 4.0);
}

TEST_CASE("adam: first step on unit gradient moves by about -lr") {
    ParamStore<double> store;
    auto& p = store.create("p", Shape(std::size_t(1)));
    (*p.value) = {0.0};
    (*p.grad) = {1.0};
    AdamState<double> st(store);
    adam_step(store, st, 0.01);
    // mhat = vhat = 1 at t=1, so the step is lr/(1 + eps_adam) to 1e-6.
    CHECK((*p.value)[0] == doctest::Approx(-0.01).epsilon(1e-6));
}

TEST_CASE("adam: two steps match a hand-rolled two-iteration oracle") {
    const double g = 0.7, lr = 0.05;
    ParamStore<double> store;
    auto& p = store.create("p", Shape(std::size_t(1)));
    (*p.value) = {0.3};
    AdamState<double> st(store);
    for (int t = 1; t <= 2; ++t) {
        (*p.grad) = {g};
        adam_step(store, st, lr);
    }

    // Oracle: explicit recurrence.
    double m = 0, v = 0, x = 0.3;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (int t = 1; t <= 2; ++t) {
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        double mh = m / (1 - std::pow(b1, t));
        double vh = v / (1 - std::pow(b2, t));
        x -= lr * mh / (std::sqrt(vh) + eps);
    }
    CHECK((*p.value)[0] == doctest::Approx(x).epsilon(1e-12));
}

TEST_CASE("adam: bounded steps under a constant gradient direction") {
    ParamStore<double> store;
    auto& p = store.create("p", Shape(std::size_t(1)));
    (*p.value) = {0.0};
    AdamState<double> st(store);
    const double lr = 0.01;
    double prev = 0.0;
    for (int t = 0; t < 50; ++t) {
        (*p.grad) = {3.7};
        adam_step(store, st, lr);
        CHECK(std::abs((*p.value)[0] - prev) <= lr * 1.01);
        prev = (*p.value)[0];
    }
}

TEST_CASE("lr schedule: staircase values and monotonicity") {
    TrainConfig cfg;
    cfg.lr0 = 0.001;
    cfg.decay_factor = 0.5;
    cfg.decay_every = 300000;
    CHECK(lr_at(0, cfg) == 0.001);
    CHECK(lr_at(299999, cfg) == 0.001);
    CHECK(lr_at(300000, cfg) == doctest::Approx(0.0005).epsilon(1e-12));

    TrainConfig ppi;
    ppi.lr0 = 0.0002;
    ppi.decay_factor = 0.8;
    ppi.decay_every = 2000;
    CHECK(lr_at(4000, ppi) == doctest::Approx(1.28e-4).epsilon(1e-12));

    double prev = lr_at(0, ppi);
    for (std::size_t s = 1; s < 20000; s += 500) {
        CHECK(lr_at(s, ppi) <= prev + 1e-18);
        prev = lr_at(s, ppi);
    }
}

TEST_CASE("iou / miou / oa worked examples") {
    std::vector<int> perfect{0, 1, 2, 1};
    auto iou_p = iou_per_class(perfect, perfect, 3);
    for (double v : iou_p) CHECK(v == 1.0);
    CHECK(overall_accuracy(perfect, perfect) == 1.0);

    std::vector<int> preds{0, 0, 1, 1}, labels{0, 1, 1, 1};
    auto iou = iou_per_class(preds, labels, 2);
    CHECK(iou[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(iou[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(miou(preds, labels, 2) == doctest::Approx(7.0 / 12.0).epsilon(1e-12));
    CHECK(overall_accuracy(preds, labels) == doctest::Approx(0.75).epsilon(1e-12));

    // Disjoint single-class predictions vs labels.
    std::vector<int> p2{0, 0}, l2{1, 1};
    auto iou2 = iou_per_class(p2, l2, 2);
    CHECK(iou2[0] == 0.0);
    CHECK(iou2[1] == 0.0);

    // Classes absent from both sides are excluded from the mean.
    std::vector<int> p3{0, 1}, l3{0, 1};
    CHECK(miou(p3, l3, 10) == 1.0);
}

TEST_CASE("iou relabeling permutation invariance") {
    RngStream rng(4);
    std::vector<int> preds(60), labels(60);
    for (std::size_t i = 0; i < 60; ++i) {
        preds[i] = static_cast<int>(rng.below(2 * i, 4));
        labels[i] = static_cast<int>(rng.below(2 * i + 1, 4));
    }
    auto base = iou_per_class(preds, labels, 4);
    std::vector<int> perm{2, 3, 1, 0};
    std::vector<int> pp(60), pl(60);
    for (std::size_t i = 0; i < 60; ++i) {
        pp[i] = perm[static_cast<std::size_t>(preds[i])];
        pl[i] = perm[static_cast<std::size_t>(labels[i])];
    }
    auto permuted = iou_per_class(pp, pl, 4);
    for (std::size_t c = 0; c < 4; ++c) {
        if (std::isnan(base[c])) CHECK(std::isnan(permuted[static_cast<std::size_t>(perm[c])]));
        else CHECK(permuted[static_cast<std::size_t>(perm[c])] == doctest::Approx(base[c]).epsilon(1e-12));
    }
    CHECK(miou(pp, pl, 4) == doctest::Approx(miou(preds, labels, 4)).epsilon(1e-12));
}

TEST_CASE("micro F1 worked examples") {
    std::vector<std::uint8_t> t{1, 0, 1, 1, 0, 1};
    CHECK(micro_f1(t, t) == 1.0);

    // TP'=2, P'=3, T'=4: precision 2/3, recall 1/2, F1 = 4/7.
    std::vector<std::uint8_t> preds{1, 1, 1, 0, 0, 0};
    std::vector<std::uint8_t> targets{1, 1, 0, 1, 1, 0};
    CHECK(micro_f1(preds, targets) == doctest::Approx(4.0 / 7.0).epsilon(1e-12));

    std::vector<std::uint8_t> none(6, 0);
    CHECK(micro_f1(none, targets) == 0.0);
    CHECK(micro_f1(t, t) == micro_f1(t, t));
}

TEST_CASE("metrics match a count-and-divide oracle on random instances") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        RngStream rng(seed);
        const std::size_t n = 40 + rng.below(0, 60);
        const std::size_t c = 2 + rng.below(1, 5);
        std::vector<int> preds(n), labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            preds[i] = static_cast<int>(rng.below(10 + 2 * i, c));
            labels[i] = static_cast<int>(rng.below(11 + 2 * i, c));
        }
        auto got = iou_per_class(preds, labels, c);
        double osum = 0;
        std::size_t on = 0;
        for (std::size_t cls = 0; cls < c; ++cls) {
            std::size_t tp = 0, t = 0, p = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (labels[i] == static_cast<int>(cls)) ++t;
                if (preds[i] == static_cast<int>(cls)) ++p;
                if (preds[i] == static_cast<int>(cls) && labels[i] == static_cast<int>(cls)) ++tp;
            }
            if (t + p == 0) {
                CHECK(std::isnan(got[cls]));
            } else {
                double want = static_cast<double>(tp) / static_cast<double>(t + p - tp);
                CHECK(got[cls] == doctest::Approx(want).epsilon(1e-12));
                osum += want;
                ++on;
            }
        }
        CHECK(miou(preds, labels, c) == doctest::Approx(osum / static_cast<double>(on)).epsilon(1e-12));
    }
}

namespace {

ModelConfig toy_model_config() {
    ModelConfig cfg;
    cfg.depth = 3;
    cfg.width = 16;
    cfg.k = 8;
    cfg.op = OperatorKind::MRGCN;
    cfg.connection = Connection::Res;
    cfg.epsilon = 0.0;
    cfg.dynamic_knn = false;
    cfg.num_classes = 2;
    cfg.input_dim = 3;
    cfg.fusion_dim = 32;
    cfg.head_dim1 = 32;
    cfg.head_dim2 = 16;
    cfg.dilation_cap = 4;
    return cfg;
}

}  // namespace

TEST_CASE("training runs, stays finite, and is seed-deterministic") {
    auto clouds = gen_synthetic_parts(96, 2, 5, {2, 2, 0.01});
    ModelConfig mc = toy_model_config();
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 2;
    tc.seed = 9;
    tc.eval_every = 1;
    tc.dropout = 0.3;

    auto set = prepare_pointclouds<float>(clouds, mc, tc.seed);
    auto m1 = build_model<float>(mc, tc.seed);
    auto r1 = train(m1, set, set, tc);
    REQUIRE(!r1.diverged);
    REQUIRE(r1.trace.size() == 2);
    for (const auto& tr : r1.trace) CHECK(std::isfinite(tr.loss));

    auto m2 = build_model<float>(mc, tc.seed);
    auto r2 = train(m2, set, set, tc);
    REQUIRE(r2.trace.size() == r1.trace.size());
    for (std::size_t i = 0; i < r1.trace.size(); ++i)
        CHECK(r1.trace[i].loss == r2.trace[i].loss);  // bit-identical

    for (std::size_t e = 0; e < m1.params().entry_count(); ++e)
        for (std::size_t j = 0; j < m1.params().entry(e).size(); ++j)
            CHECK((*m1.params().entry(e).value)[j] == (*m2.params().entry(e).value)[j]);

    CHECK(trace_to_csv(r1) == trace_to_csv(r2));
    CHECK(trace_to_csv(r1).rfind("step,epoch,lr,loss,oa,miou,mf1\n", 0) == 0);
}

TEST_CASE("a separable toy task reaches high accuracy quickly") {
    auto clouds = gen_synthetic_parts(128, 8, 33, {2, 2, 0.01});
    ModelConfig mc = toy_model_config();
    TrainConfig tc;
    tc.epochs = 60;
    tc.batch_size = 4;
    tc.seed = 3;
    tc.lr0 = 0.005;
    tc.eval_every = 10;
    tc.dropout = 0.1;

    auto set = prepare_pointclouds<float>(clouds, mc, tc.seed);
    auto model = build_model<float>(mc, tc.seed);
    auto report = train(model, set, set, tc);
    REQUIRE(!report.diverged);
    CHECK(report.oa > 0.95);
}

TEST_SUITE_END();
