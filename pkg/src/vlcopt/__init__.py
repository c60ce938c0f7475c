"""Multi-cell visible light communication: LED selection and ZF precoding
under hybrid dimming, with analog and digital dimming baselines."""

from .orchestrator import RunResult, evaluate_fr, prepare, run_ad, run_dd, run_tasp_hd
from .scenario import Scenario, SolverSettings, load_scenario, table2_scenario

__all__ = [
    "RunResult", "Scenario", "SolverSettings", "evaluate_fr", "load_scenario", "prepare",
    "run_ad", "run_dd", "run_tasp_hd", "table2_scenario",
]
__version__ = "0.1.0"
