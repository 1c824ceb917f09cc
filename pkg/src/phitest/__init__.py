"""SHAP-screened surrogate regression with selective inference."""

__version__ = "0.1.0"

from .data import Dataset, SplitPlan, load_csv, make_split, sub_seed, synth_gaussian  # noqa: E402
from .pipeline import (  # noqa: E402
    FeatureTable,
    MetricsReport,
    PhiTestConfig,
    ablation_suite,
    baseline_shap_ht,
    baseline_spvim_boot,
    baseline_stable_shap,
    baseline_topk,
    benchmark,
    fidelity,
    phi_test,
    robustness,
    stability,
)
from .predictors import fit_gbt, fit_linear, predict_batch  # noqa: E402
from .shapley import ShapMatrix, exact_shap, kernel_shap, make_background  # noqa: E402

__all__ = [
    "Dataset", "SplitPlan", "load_csv", "make_split", "sub_seed", "synth_gaussian",
    "FeatureTable", "MetricsReport", "PhiTestConfig", "phi_test", "ablation_suite", "benchmark",
    "baseline_topk", "baseline_spvim_boot", "baseline_shap_ht", "baseline_stable_shap",
    "fidelity", "stability", "robustness", "fit_gbt", "fit_linear", "predict_batch",
    "ShapMatrix", "exact_shap", "kernel_shap", "make_background",
]
