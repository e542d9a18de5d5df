"""Graph anomaly detection under structural distribution shift.

Multi-relation graphs, homophily-biased splits, a small reverse-mode
autodiff engine, RGCN/GCN backbones and gradient-based feature separation.
"""

from .graph import CSR, MERGED, MultiRelationGraph, homophily_profile, load_graph, save_graph
from .metrics import MetricsReport, aggregate_runs, auc, evaluate, f1_macro, gmean
from .splits import SplitAssignment, biased_split, make_split, sds_report, stratified_split
from .synth import SynthSpec, generate

__version__ = "0.1.0"

__all__ = [
    "CSR",
    "MERGED",
    "MetricsReport",
    "MultiRelationGraph",
    "SplitAssignment",
    "SynthSpec",
    "aggregate_runs",
    "auc",
    "biased_split",
    "evaluate",
    "f1_macro",
    "generate",
    "gmean",
    "homophily_profile",
    "load_graph",
    "make_split",
    "save_graph",
    "sds_report",
    "stratified_split",
]
