"""Deep graph-convolutional network engine (native core)."""

from dgcn._core import (
    __version__,
    bench_operators,
    dilated_knn,
    evaluate,
    feature_diversity,
    gen_synthetic_parts,
    gradcheck,
    iou_per_class,
    knn_bruteforce,
    micro_f1,
    miou,
    overall_accuracy,
    param_count,
    train,
)

__all__ = [
    "__version__",
    "bench_operators",
    "dilated_knn",
    "evaluate",
    "feature_diversity",
    "gen_synthetic_parts",
    "gradcheck",
    "iou_per_class",
    "knn_bruteforce",
    "micro_f1",
    "miou",
    "overall_accuracy",
    "param_count",
    "train",
]
