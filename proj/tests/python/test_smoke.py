"""Smoke tests for the python bindings against numpy references."""

import os
import tempfile

import numpy as np
import pytest

import dgcn


def test_version():
    assert dgcn.__version__


def test_knn_matches_numpy_argsort():
    rng = np.random.default_rng(7)
    pts = rng.uniform(-5, 5, size=(60, 3)).astype(np.float32)
    got = dgcn.knn_bruteforce(pts, 5)
    d2 = ((pts[:, None, :].astype(np.float64) - pts[None, :, :].astype(np.float64)) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    # Stable argsort reproduces the ascending-id tie rule.
    want = np.argsort(d2, axis=1, kind="stable")[:, :5]
    assert np.array_equal(got, want)


def test_dilated_knn_strides_the_sorted_list():
    pts = np.arange(10, dtype=np.float32).reshape(-1, 1)
    got = dgcn.dilated_knn(pts, k=2, d=2)
    assert list(got[0]) == [1, 3]
    plain = dgcn.dilated_knn(pts, k=3, d=1)
    assert np.array_equal(plain, dgcn.knn_bruteforce(pts, 3))


def test_metrics_worked_examples():
    iou = dgcn.iou_per_class([0, 0, 1, 1], [0, 1, 1, 1], 2)
    assert iou[0] == pytest.approx(0.5, abs=1e-12)
    assert iou[1] == pytest.approx(2 / 3, abs=1e-12)
    assert dgcn.miou([0, 0, 1, 1], [0, 1, 1, 1], 2) == pytest.approx(7 / 12, abs=1e-12)
    assert dgcn.micro_f1([1, 1, 1, 0, 0, 0], [1, 1, 0, 1, 1, 0]) == pytest.approx(4 / 7, abs=1e-12)
    assert dgcn.overall_accuracy([1, 2, 3], [1, 2, 3]) == 1.0


def test_feature_diversity():
    assert dgcn.feature_diversity(np.array([[0.0], [2.0]], dtype=np.float32)) == pytest.approx(2.0)
    same = np.ones((5, 4), dtype=np.float32)
    assert dgcn.feature_diversity(same) == 0.0


def test_synthetic_generation_deterministic():
    a = dgcn.gen_synthetic_parts(64, 2, seed=3)
    b = dgcn.gen_synthetic_parts(64, 2, seed=3)
    assert np.array_equal(a[0][0], b[0][0])
    assert np.array_equal(a[1][1], b[1][1])
    labels = np.asarray(a[0][1])
    assert labels.min() == 0
    assert labels.max() <= 3


def test_param_parity_via_bindings():
    base = {
        "model.depth": "7",
        "model.width": "16",
        "model.k": "4",
        "model.num_classes": "4",
        "model.fusion_dim": "32",
        "model.head_dim1": "32",
        "model.head_dim2": "16",
    }
    plain = dict(base, **{"model.connection": "plain"})
    res = dict(base, **{"model.connection": "res"})
    assert dgcn.param_count(plain) == dgcn.param_count(res)


def test_train_eval_round_trip():
    cfg = {
        "model.depth": "2",
        "model.width": "8",
        "model.k": "4",
        "model.operator": "mrgcn",
        "model.connection": "res",
        "model.dynamic_knn": "false",
        "model.num_classes": "2",
        "model.fusion_dim": "16",
        "model.head_dim1": "16",
        "model.head_dim2": "8",
        "train.epochs": "3",
        "train.batch_size": "2",
        "train.seed": "5",
        "train.eval_every": "1",
        "data.samples": "4",
        "data.points": "64",
        "data.min_parts": "2",
        "data.max_parts": "2",
    }
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "run")
        assert dgcn.train(cfg, out) == 0
        assert os.path.exists(os.path.join(out, "checkpoint.dgcn"))
        assert os.path.exists(os.path.join(out, "metrics.csv"))
        metrics = dgcn.evaluate(os.path.join(out, "checkpoint.dgcn"), cfg)
        assert 0.0 <= metrics["miou"] <= 1.0
        assert np.isfinite(metrics["loss"])


def test_bench_reports_rows():
    cfg = {
        "model.depth": "2",
        "model.width": "16",
        "model.k": "4",
        "data.points": "64",
    }
    rows = dgcn.bench_operators(cfg, ["edgeconv", "mrgcn"])
    assert [r["operator"] for r in rows] == ["edgeconv", "mrgcn"]
    assert rows[1]["saved_scalars"] < rows[0]["saved_scalars"]
