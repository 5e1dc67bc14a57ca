"""Reference baselines: acoustic functionals + SVM, and zero-shot TAF prompting."""

from .svm import SvmConfig, SvmModel, balanced_class_weights, resolve_gamma, svm_fit, svm_predict
from .zeroshot import ZeroShotError, parse_scores, zero_shot_classify

__all__ = [
    "SvmConfig",
    "SvmModel",
    "ZeroShotError",
    "balanced_class_weights",
    "parse_scores",
    "resolve_gamma",
    "svm_fit",
    "svm_predict",
    "zero_shot_classify",
]
