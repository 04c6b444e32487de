"""Regret accounting, the clean-estimate replay, and the regret bound."""
from __future__ import annotations

import math
from typing import List, Optional

import numpy as np

from .agents import LABEL_EXPLORE
from .environment import RoundOutcome, Trace
from .market import GapProfile, Matching, PreferenceProfile


def _matched_means(mu: np.ndarray, matched: np.ndarray) -> np.ndarray:
    """Mean reward of each (round, player) cell; unmatched cells earn 0."""
    n = mu.shape[0]
    means = mu[np.arange(n)[None, :], np.maximum(matched, 0)]
    return np.where(matched >= 0, means, 0.0)


def _benchmark(mu: np.ndarray, matching: Matching) -> np.ndarray:
    return np.array([0.0 if j is None else mu[i, j] for i, j in enumerate(matching)])


class RegretLedger:
    """Cumulative per-player regret against the optimal and pessimal stable matchings.

    Series are (N, T) arrays: ``optimal_pseudo[i, t-1]`` is the sum over rounds
    1..t of ``mu[i, m*_i] - mu[i, matched_i]``. ``realized_optimal`` uses the
    sampled rewards instead of means. ``pessimal_pseudo`` is None when the
    pessimal matching is unavailable.
    """

    def __init__(self, profile: PreferenceProfile, optimal: Matching, pessimal: Optional[Matching] = None):
        self.profile = profile
        self.optimal = tuple(optimal)
        self.pessimal = None if pessimal is None else tuple(pessimal)
        self._opt_value = _benchmark(profile.mu, self.optimal)
        self._pess_value = None if pessimal is None else _benchmark(profile.mu, self.pessimal)
        self._matched: List[np.ndarray] = []
        self._rewards: List[np.ndarray] = []

    def accumulate(self, outcome: RoundOutcome) -> "RegretLedger":
        if outcome.round != len(self) + 1:
            raise ValueError(f"expected round {len(self) + 1}, got {outcome.round}")
        self._matched.append(np.array([[-1 if j is None else j for j in outcome.matched]]))
        self._rewards.append(np.array([outcome.rewards], dtype=float))
        return self

    @classmethod
    def from_trace(cls, profile, optimal, pessimal, trace: Trace) -> "RegretLedger":
        ledger = cls(profile, optimal, pessimal)
        ledger._matched = [trace.matched]
        ledger._rewards = [trace.rewards]
        return ledger

    def __len__(self):
        return sum(len(m) for m in self._matched)

    @property
    def matched(self) -> np.ndarray:
        n = self.profile.n_players
        return np.concatenate(self._matched) if self._matched else np.zeros((0, n), dtype=np.int64)

    @property
    def rewards(self) -> np.ndarray:
        n = self.profile.n_players
        return np.concatenate(self._rewards) if self._rewards else np.zeros((0, n))

    def _pseudo(self, value: np.ndarray) -> np.ndarray:
        inc = value[None, :] - _matched_means(self.profile.mu, self.matched)
        return np.cumsum(inc, axis=0).T

    @property
    def optimal_pseudo(self) -> np.ndarray:
        return self._pseudo(self._opt_value)

    @property
    def pessimal_pseudo(self) -> Optional[np.ndarray]:
        if self._pess_value is None:
            return None
        return self._pseudo(self._pess_value)

    @property
    def realized_optimal(self) -> np.ndarray:
        return np.cumsum(self._opt_value[None, :] - self.rewards, axis=0).T

    @property
    def stable_round(self) -> np.ndarray:
        target = np.array([-1 if j is None else j for j in self.optimal])
        return np.all(self.matched == target[None, :], axis=1)


def convergence_round(ledger: RegretLedger) -> Optional[int]:
    """First round from which the matching equals m* through the horizon."""
    stable = ledger.stable_round
    if len(stable) == 0 or not stable[-1]:
        return None
    bad = np.flatnonzero(~stable)
    return 1 if len(bad) == 0 else int(bad[-1]) + 2


def player_settled_rounds(ledger: RegretLedger) -> List[Optional[int]]:
    """Per player, the first round from which it stays matched to its m* arm."""
    target = np.array([-1 if j is None else j for j in ledger.optimal])
    hit = ledger.matched == target[None, :]
    out: List[Optional[int]] = []
    for i in range(hit.shape[1]):
        col = hit[:, i]
        if len(col) == 0 or not col[-1]:
            out.append(None)
            continue
        miss = np.flatnonzero(~col)
        out.append(1 if len(miss) == 0 else int(miss[-1]) + 2)
    return out


def first_bad_round(trace: Trace, profile: PreferenceProfile, horizon: Optional[int] = None) -> Optional[int]:
    """Replay the credited exploration rewards against the true means.

    Returns the first round in which some player's running mean for some arm
    leaves its confidence radius ``sqrt(6 ln T / count)``, or None when the
    estimates stayed clean for the whole trace.
    """
    horizon = trace.horizon if horizon is None else horizon
    log_t = math.log(horizon)
    mu = profile.mu
    credited = (trace.labels == LABEL_EXPLORE) & (trace.matched >= 0) & (trace.matched == trace.proposals)
    first = None
    for i in range(trace.n_players):
        rounds = np.flatnonzero(credited[:, i])
        if len(rounds) == 0:
            continue
        arms = trace.matched[rounds, i]
        rewards = trace.rewards[rounds, i]
        for j in np.unique(arms):
            sel = arms == j
            r = rewards[sel]
            n = np.arange(1, len(r) + 1)
            means = np.cumsum(r) / n
            viol = np.flatnonzero(np.abs(means - mu[i, j]) > np.sqrt(6.0 * log_t / n))
            if len(viol):
                t = int(rounds[sel][viol[0]]) + 1
                first = t if first is None else min(first, t)
    return first


def theorem2_bound(n_players: int, n_arms: int, horizon: int, gaps: GapProfile, player: int) -> float:
    """Regret bound of explore-then-Gale-Shapley for one player.

    ``(N + A + ln A + N**2 + 2NK) * mu[i, m*_i]`` with ``A = 192 K ln T / delta**2``.
    """
    if horizon < 2:
        raise ValueError("horizon must be >= 2")
    if not gaps.delta > 0:
        raise ValueError("delta must be positive")
    a = 192.0 * n_arms * math.log(horizon) / gaps.delta ** 2
    log_a = math.log(a) if a > 0 else 0.0
    factor = n_players + a + log_a + n_players ** 2 + 2 * n_players * n_arms
    return factor * float(gaps.delta_i_max[player])


def ellmax(n_arms: int, horizon: int, delta: float) -> int:
    """Smallest l with 2 + 4 + ... + 2**l >= 96 K ln T / delta**2."""
    if horizon < 2:
        raise ValueError("horizon must be >= 2")
    if not delta > 0:
        raise ValueError("delta must be positive")
    threshold = 96.0 * n_arms * math.log(horizon) / delta ** 2
    ell = 1
    while 2 ** (ell + 1) - 2 < threshold:
        ell += 1
    return ell
