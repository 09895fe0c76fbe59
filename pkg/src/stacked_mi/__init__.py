"""Stacked multiple imputation: tests and missing-information estimates from stacked imputations."""

from stacked_mi.eomi import EomiResult, eomi_test, q_statistic, sample_Q0
from stacked_mi.omi import OmiEstimate, estimate_from_moments, estimate_omi
from stacked_mi.reference import MiTestResult, ReferenceSpec, d_hat_statistic, mi_test, pvalue_function
from stacked_mi.stacking import (
    Dataset,
    DeviceError,
    FunctionDevice,
    ImputationSet,
    SelectionRule,
    StackEvaluator,
    TestDevice,
    moment_estimates,
    selection_rule,
    smi_statistic,
    stack,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DeviceError", "EomiResult", "FunctionDevice", "ImputationSet", "MiTestResult",
    "OmiEstimate", "ReferenceSpec", "SelectionRule", "StackEvaluator", "TestDevice", "d_hat_statistic",
    "eomi_test", "estimate_from_moments", "estimate_omi", "mi_test", "moment_estimates", "pvalue_function",
    "q_statistic", "sample_Q0", "selection_rule", "smi_statistic", "stack",
]
