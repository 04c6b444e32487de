"""Replicated ETGS experiments: market generation, episodes, aggregation, files."""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .agents import LABEL_MONITOR, LABEL_NAMES, make_etgs_agents, make_oracle_agents
from .environment import NoiseModel, RewardStreams, Trace, run_episode, substream
from .market import (
    DEFAULT_ORACLE_BOUND,
    GapProfile,
    Matching,
    PreferenceProfile,
    compute_gaps,
    gale_shapley,
    optimal_and_pessimal,
    validate_profile,
)
from .metrics import (
    RegretLedger,
    convergence_round,
    first_bad_round,
    theorem2_bound,
)

log = logging.getLogger(__name__)

MAX_ROW_ATTEMPTS = 10 ** 6
_BATCH = 4096

# Substream ids under each replication's seed.
_MARKET_STREAM = 0
_REWARD_STREAM = 1
_AGENT_STREAM = 2  # reserved; ETGS is deterministic given rewards


class InfeasibleGap(ValueError):
    pass


def generate_market(n_players: int, n_arms: int, min_gap: float, rng: np.random.Generator) -> PreferenceProfile:
    """Random market whose top min(N+1, K) arms are ``min_gap`` apart for every player.

    Each ``mu`` row is drawn uniformly from [0, 1]^K and redrawn until its top
    arms are separated by at least ``min_gap`` and all values are distinct.
    ``pi`` rows are uniform with distinct entries.
    """
    if not 1 <= n_players <= n_arms:
        raise ValueError("need 1 <= n_players <= n_arms")
    if not min_gap > 0:
        raise ValueError("min_gap must be positive")
    n_ranked = min(n_players + 1, n_arms)
    if min_gap * (n_ranked - 1) > 1:
        raise InfeasibleGap(f"{n_ranked - 1} gaps of {min_gap} do not fit in [0, 1]")
    mu = np.empty((n_players, n_arms))
    for i in range(n_players):
        attempts = 0
        while True:
            if attempts >= MAX_ROW_ATTEMPTS:
                raise InfeasibleGap(f"no row with gap {min_gap} after {MAX_ROW_ATTEMPTS} attempts")
            batch = min(_BATCH, MAX_ROW_ATTEMPTS - attempts)
            attempts += batch
            rows = rng.random((batch, n_arms))
            ordered = -np.sort(-rows, axis=1)
            steps = ordered[:, :-1] - ordered[:, 1:]
            ok = np.all(steps[:, : n_ranked - 1] >= min_gap, axis=1) & np.all(steps > 0, axis=1)
            hits = np.flatnonzero(ok)
            if len(hits):
                mu[i] = rows[hits[0]]
                break
    pi = np.empty((n_arms, n_players))
    for j in range(n_arms):
        row = rng.random(n_players)
        while len(np.unique(row)) != n_players:
            row = rng.random(n_players)
        pi[j] = row
    return validate_profile(PreferenceProfile(mu, pi))


@dataclass(frozen=True)
class MarketSpec:
    kind: str = "random"  # "random" or "explicit"
    min_gap: float = 0.1
    profile: Optional[PreferenceProfile] = None


@dataclass
class ExperimentConfig:
    n_players: int = 3
    n_arms: int = 5
    horizon: int = 10_000
    replications: int = 10
    master_seed: int = 0
    noise: NoiseModel = field(default_factory=NoiseModel)
    market: MarketSpec = field(default_factory=MarketSpec)
    agents: str = "etgs"
    oracle_bound: int = DEFAULT_ORACLE_BOUND
    output_dir: Optional[str] = None
    workers: int = 1
    trace_runs: Optional[int] = None  # how many runs get a trace CSV; None = all

    def validate(self) -> "ExperimentConfig":
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.agents not in ("etgs", "oracle"):
            raise ValueError(f"unknown agents {self.agents!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.market.kind == "random":
            if not self.market.min_gap > 0:
                raise ValueError("min_gap must be positive")
        elif self.market.kind == "explicit":
            p = self.market.profile
            if p is None:
                raise ValueError("explicit market needs a profile")
            if (p.n_players, p.n_arms) != (self.n_players, self.n_arms):
                raise ValueError("n_players / n_arms disagree with the profile")
        else:
            raise ValueError(f"unknown market kind {self.market.kind!r}")
        return self

    def describe(self) -> dict:
        d = asdict(self)
        d["noise"] = asdict(self.noise)
        d["market"] = {"kind": self.market.kind}
        if self.market.kind == "random":
            d["market"]["min_gap"] = self.market.min_gap
        else:
            d["market"]["profile"] = self.market.profile.to_dict()
        return d


def checkpoint_grid(horizon: int) -> List[int]:
    """Powers of two up to the horizon, plus the horizon itself."""
    grid = []
    c = 1
    while c <= horizon:
        grid.append(c)
        c *= 2
    if grid[-1] != horizon:
        grid.append(horizon)
    return grid


@dataclass
class ReplicationResult:
    replication: int
    profile: PreferenceProfile
    optimal: Matching
    pessimal: Optional[Matching]
    gaps: GapProfile
    bounds: np.ndarray  # regret bound per player; nan when horizon < 2
    checkpoints: List[int]
    opt_at: np.ndarray  # (N, C) cumulative optimal pseudo-regret at checkpoints
    pess_at: Optional[np.ndarray]
    realized_at: np.ndarray
    stable_at: np.ndarray  # (C,) matching equals m* at the checkpoint round
    final_matching: Matching
    converged: bool
    convergence_round: Optional[int]
    t2: Tuple[Optional[int], ...]
    indices: Tuple[Optional[int], ...]
    subphases: int
    bad_round: Optional[int]
    pointer_overflows: int
    dominance_ok: bool
    trace: Optional[Trace] = None
    ledger: Optional[RegretLedger] = None

    @property
    def final_opt(self) -> np.ndarray:
        return self.opt_at[:, -1]

    @property
    def clean(self) -> bool:
        return self.bad_round is None


def replication_profile(config: ExperimentConfig, r: int) -> PreferenceProfile:
    if config.market.kind == "explicit":
        return config.market.profile
    ss = substream(np.random.SeedSequence(config.master_seed), r, _MARKET_STREAM)
    return generate_market(config.n_players, config.n_arms, config.market.min_gap, np.random.default_rng(ss))


def run_replication(config: ExperimentConfig, r: int, keep_trace: bool = False) -> ReplicationResult:
    """One seeded episode and its regret summary."""
    profile = replication_profile(config, r)
    n, k, horizon = profile.n_players, profile.n_arms, config.horizon
    optimal = gale_shapley(profile)
    pessimal = None
    if n <= config.oracle_bound:
        _, pessimal = optimal_and_pessimal(profile, "oracle", config.oracle_bound)
    gaps = compute_gaps(profile, optimal)
    bounds = np.array(
        [theorem2_bound(n, k, horizon, gaps, i) if horizon >= 2 else math.nan for i in range(n)]
    )

    if config.agents == "etgs":
        agents = make_etgs_agents(n, k, horizon)
    else:
        agents = make_oracle_agents(profile)
    ss = substream(np.random.SeedSequence(config.master_seed), r, _REWARD_STREAM)
    streams = RewardStreams.from_seed(config.noise, ss, n, horizon)
    trace = run_episode(profile, agents, horizon, config.noise, streams)

    ledger = RegretLedger.from_trace(profile, optimal, pessimal, trace)
    grid = checkpoint_grid(horizon)
    idx = np.array(grid) - 1
    opt = ledger.optimal_pseudo
    pess = ledger.pessimal_pseudo
    stable = ledger.stable_round
    dominance_ok = True if pess is None else bool(np.all(opt >= pess))
    final = trace[-1].matched

    result = ReplicationResult(
        replication=r,
        profile=profile,
        optimal=optimal,
        pessimal=pessimal,
        gaps=gaps,
        bounds=bounds,
        checkpoints=grid,
        opt_at=opt[:, idx],
        pess_at=None if pess is None else pess[:, idx],
        realized_at=ledger.realized_optimal[:, idx],
        stable_at=stable[idx],
        final_matching=final,
        converged=final == optimal,
        convergence_round=convergence_round(ledger),
        t2=tuple(a.phase2_end for a in agents),
        indices=tuple(a.index for a in agents),
        subphases=int(np.sum(trace.labels[:, 0] == LABEL_MONITOR)),
        bad_round=first_bad_round(trace, profile, horizon) if horizon >= 2 else None,
        pointer_overflows=sum(a.pointer_overflows for a in agents),
        dominance_ok=dominance_ok,
    )
    if keep_trace:
        result.trace = trace
        result.ledger = ledger
    return result


@dataclass
class AggregateResult:
    checkpoints: List[int]
    mean_opt: np.ndarray  # (N, C)
    std_opt: np.ndarray
    mean_pess: Optional[np.ndarray]
    convergence_at: np.ndarray  # (C,) fraction of runs at m* in the checkpoint round
    convergence_rate: float
    mean_t2: float
    mean_subphases: float
    bad_event_frequency: float
    final_realized_mean: np.ndarray
    final_realized_std: np.ndarray
    mean_bound: np.ndarray
    runs: List[ReplicationResult]

    @property
    def final_mean(self) -> np.ndarray:
        return self.mean_opt[:, -1]

    @property
    def final_std(self) -> np.ndarray:
        return self.std_opt[:, -1]


def _std(x: np.ndarray) -> np.ndarray:
    return np.std(x, axis=0, ddof=1) if x.shape[0] > 1 else np.zeros(x.shape[1:])


def aggregate(runs: Sequence[ReplicationResult]) -> AggregateResult:
    runs = sorted(runs, key=lambda r: r.replication)
    opt = np.stack([r.opt_at for r in runs])
    pess = None
    if all(r.pess_at is not None for r in runs):
        pess = np.stack([r.pess_at for r in runs]).mean(axis=0)
    realized = np.stack([r.realized_at[:, -1] for r in runs])
    t2 = [r.t2[0] for r in runs if r.t2[0] is not None]
    return AggregateResult(
        checkpoints=list(runs[0].checkpoints),
        mean_opt=opt.mean(axis=0),
        std_opt=_std(opt),
        mean_pess=pess,
        convergence_at=np.mean([r.stable_at for r in runs], axis=0),
        convergence_rate=float(np.mean([r.converged for r in runs])),
        mean_t2=float(np.mean(t2)) if t2 else math.nan,
        mean_subphases=float(np.mean([r.subphases for r in runs])),
        bad_event_frequency=float(np.mean([not r.clean for r in runs])),
        final_realized_mean=realized.mean(axis=0),
        final_realized_std=_std(realized),
        mean_bound=np.mean([r.bounds for r in runs], axis=0),
        runs=list(runs),
    )


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return repr(float(x))


def _arm(j) -> str:
    return "" if j is None or j < 0 else str(int(j) + 1)


def write_trace_csv(path, trace: Trace, ledger: RegretLedger) -> None:
    """Long format: one row per (round, player); arms are 1-based, blank = none."""
    opt = ledger.optimal_pseudo
    pess = ledger.pessimal_pseudo
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "player", "proposed_arm", "matched_arm", "reward", "phase",
                    "cum_opt_pseudo_regret", "cum_pess_pseudo_regret"])
        props = trace.proposals.tolist()
        matched = trace.matched.tolist()
        rewards = trace.rewards.tolist()
        labels = trace.labels.tolist()
        opt_t = opt.T.tolist()
        pess_t = None if pess is None else pess.T.tolist()
        for t in range(trace.horizon):
            for i in range(trace.n_players):
                w.writerow([
                    t + 1, i + 1, _arm(props[t][i]), _arm(matched[t][i]), repr(rewards[t][i]),
                    LABEL_NAMES[labels[t][i]], repr(opt_t[t][i]),
                    "" if pess_t is None else repr(pess_t[t][i]),
                ])


def write_aggregate_csv(path, agg: AggregateResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["checkpoint", "player", "mean_opt_regret", "std_opt_regret",
                    "mean_pess_regret", "convergence_rate"])
        for c, checkpoint in enumerate(agg.checkpoints):
            for i in range(agg.mean_opt.shape[0]):
                w.writerow([
                    checkpoint, i + 1, _fmt(agg.mean_opt[i, c]), _fmt(agg.std_opt[i, c]),
                    "" if agg.mean_pess is None else _fmt(agg.mean_pess[i, c]),
                    _fmt(agg.convergence_at[c]),
                ])


def summary_dict(config: ExperimentConfig, agg: AggregateResult) -> dict:
    return {
        "config": config.describe(),
        "convergence_rate": agg.convergence_rate,
        "mean_t2": None if math.isnan(agg.mean_t2) else agg.mean_t2,
        "mean_subphases": agg.mean_subphases,
        "bad_event_frequency": agg.bad_event_frequency,
        "final_opt_regret_mean": agg.final_mean.tolist(),
        "final_opt_regret_std": agg.final_std.tolist(),
        "final_realized_regret_mean": agg.final_realized_mean.tolist(),
        "final_realized_regret_std": agg.final_realized_std.tolist(),
        "regret_bound": [None if math.isnan(b) else float(b) for b in agg.mean_bound],
    }


def _run_one(args):
    config, r, keep = args
    return run_replication(config, r, keep_trace=keep)


def run_experiment(config: ExperimentConfig, write: bool = True) -> AggregateResult:
    """Run all replications and, if ``output_dir`` is set, write the artifacts.

    Files: ``trace_run{r}.csv`` for the first ``trace_runs`` runs,
    ``aggregate.csv``, ``summary.json`` and ``regret.svg``.
    """
    config.validate()
    n_traces = config.replications if config.trace_runs is None else min(config.trace_runs, config.replications)
    out = Path(config.output_dir) if (write and config.output_dir) else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    jobs = [(config, r, out is not None and r < n_traces) for r in range(config.replications)]

    runs: List[ReplicationResult] = []

    def collect(res: ReplicationResult):
        if res.trace is not None:
            write_trace_csv(out / f"trace_run{res.replication:04d}.csv", res.trace, res.ledger)
            res.trace = res.ledger = None
        runs.append(res)
        log.debug("replication %d done: converged=%s", res.replication, res.converged)

    if config.workers > 1 and config.replications > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for res in pool.map(_run_one, jobs):
                collect(res)
    else:
        for job in jobs:
            collect(_run_one(job))

    agg = aggregate(runs)
    if out is not None:
        from .plot import plot_regret

        write_aggregate_csv(out / "aggregate.csv", agg)
        summary = summary_dict(config, agg)
        with open(out / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        plot_regret(agg.checkpoints, agg.mean_opt, summary["regret_bound"], out / "regret.svg")
    return agg
