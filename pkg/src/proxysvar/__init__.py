"""Proxy-SVAR estimation by indirect minimum distance, with a bootstrap relevance pre-test."""
from .var_core import TimeSeriesDataset, VarFit, IrfPath, fit_var, companion_matrix, irf, read_csv
from .proxy_model import ProxyMoments, RestrictionSet, build_restrictions, compute_moments
from .md_estimation import (IdentificationError, MdFit, MdOptions, map_restrictions_to_Bform, md_estimate,
                            md_estimate_Bform)
from .cmd_strength import ThetaFit, cmd_estimate
from .mbb import BootstrapEnsemble, bootstrap_var_proxy, block_length
from .relevance_test import PretestConfig, RelevanceTestResult, relevance_pretest
from .weak_robust import RobustSet, invert_wald
from .montecarlo import DgpSpec, simulate, run_table1, run_coverage

__version__ = "0.1.0"

__all__ = [
    "TimeSeriesDataset", "VarFit", "IrfPath", "fit_var", "companion_matrix", "irf", "read_csv",
    "ProxyMoments", "RestrictionSet", "build_restrictions", "compute_moments",
    "IdentificationError", "MdFit", "MdOptions", "map_restrictions_to_Bform", "md_estimate", "md_estimate_Bform",
    "ThetaFit", "cmd_estimate", "BootstrapEnsemble", "bootstrap_var_proxy", "block_length",
    "PretestConfig", "RelevanceTestResult", "relevance_pretest", "RobustSet", "invert_wald",
    "DgpSpec", "simulate", "run_table1", "run_coverage",
]
