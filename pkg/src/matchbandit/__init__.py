"""Bandit learning in two-sided matching markets with explore-then-Gale-Shapley."""
from .agents import EtgsAgent, OracleAgent, Phase, PointerOverflow, detect_ranking, subphase_schedule
from .environment import ABSTAIN, NoiseModel, RoundOutcome, Trace, run_episode, step
from .experiment import ExperimentConfig, MarketSpec, generate_market, run_experiment, run_replication
from .market import (
    UNMATCHED,
    DimensionViolation,
    DistinctnessViolation,
    InstanceTooLarge,
    PreferenceProfile,
    blocking_pairs,
    compute_gaps,
    enumerate_stable_matchings,
    gale_shapley,
    is_stable,
    optimal_and_pessimal,
    validate_profile,
)
from .metrics import RegretLedger, ellmax, theorem2_bound

__version__ = "0.1.0"
