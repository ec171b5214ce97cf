from .analysis import (
    METRICS,
    AnalysisSample,
    InapplicableMetric,
    InsufficientSamples,
    MiReport,
    collect_analysis_batch,
    compression_efficiency,
    compute_metric_suite,
    metric_quartet,
    standardize,
)
from .estimators import EstimatorWarning, MiEstimate, jitter, jitter_pair, ksg_mi_cc, mi_cd
from .exact import codes, entropy_of, exact_cmi, exact_mi, exact_mi_discrete

__all__ = [
    "METRICS", "AnalysisSample", "MiReport", "MiEstimate", "InapplicableMetric", "InsufficientSamples",
    "EstimatorWarning", "collect_analysis_batch", "compute_metric_suite", "metric_quartet",
    "compression_efficiency", "standardize", "jitter", "jitter_pair", "ksg_mi_cc", "mi_cd", "exact_mi_discrete",
    "exact_mi", "exact_cmi", "entropy_of", "codes",
]
