"""Retraining and fine-tuning based evaluation of feature attributions."""

__version__ = "0.1.0"

from .data import LabeledDataset, SyntheticSpec, generate_synthetic, load_mnist  # noqa: E402
from .explainers import AttributionMap, Baseline, ExplainerConfig, explain, explain_batch  # noqa: E402
from .manipulate import ManipulationPlan, Replacement, apply_plan, build_plan  # noqa: E402
from .nn import Network, TrainConfig, fine_tune, train  # noqa: E402
from .schemes import EvalResult, SchemeConfig, compare_report, delta_acc, preset, run_scheme  # noqa: E402

__all__ = [
    "AttributionMap", "Baseline", "EvalResult", "ExplainerConfig", "LabeledDataset", "ManipulationPlan",
    "Network", "Replacement", "SchemeConfig", "SyntheticSpec", "TrainConfig", "apply_plan", "build_plan",
    "compare_report", "delta_acc", "explain", "explain_batch", "fine_tune", "generate_synthetic",
    "load_mnist", "preset", "run_scheme", "train",
]
