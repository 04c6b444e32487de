"""Per-player controllers: explore-then-Gale-Shapley and a known-preference baseline."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Set

import numpy as np

from .environment import ABSTAIN, RoundOutcome


class Phase(enum.IntEnum):
    INDEX_ESTIMATION = 0
    EXPLORE = 1
    COMMITTED = 2


# Per-round activity codes recorded in traces.
LABEL_INDEX = 0
LABEL_EXPLORE = 1
LABEL_MONITOR = 2
LABEL_COMMITTED = 3
LABEL_NAMES = ("index_estimation", "explore", "monitor", "committed")


class PointerOverflow(RuntimeError):
    pass


class Schedule(NamedTuple):
    first: int
    last: int
    monitor: int


def subphase_schedule(ell: int, n_players: int) -> Schedule:
    """Rounds of sub-phase ``ell``: exploration ``first..last``, then ``monitor``.

    Sub-phase l has 2**l exploration rounds and one monitoring round, and the
    first sub-phase starts right after the N index-estimation rounds.
    """
    if ell < 1:
        raise ValueError("sub-phases are numbered from 1")
    if n_players < 1:
        raise ValueError("need at least one player")
    # N + sum_{l' < l} (2**l' + 1) = N + 2**l - 2 + (l - 1)
    offset = n_players + (2 ** ell - 2) + (ell - 1)
    return Schedule(offset + 1, offset + 2 ** ell, offset + 2 ** ell + 1)


@dataclass
class ConfidenceBounds:
    ucb: np.ndarray
    lcb: np.ndarray

    @property
    def midpoint(self) -> np.ndarray:
        finite = np.isfinite(self.ucb) & np.isfinite(self.lcb)
        mid = np.full(len(self.ucb), np.nan)
        mid[finite] = (self.ucb[finite] + self.lcb[finite]) / 2
        return mid


def confidence_radius(count: int, horizon: int) -> float:
    if count == 0:
        return math.inf
    return math.sqrt(6.0 * math.log(horizon) / count)


def bounds_from_estimates(mu_hat: Sequence[float], counts: Sequence[int], horizon: int) -> ConfidenceBounds:
    mu_hat = np.asarray(mu_hat, dtype=float)
    radius = np.array([confidence_radius(int(c), horizon) for c in counts])
    centre = np.where(np.isinf(radius), 0.0, mu_hat)
    return ConfidenceBounds(centre + radius, centre - radius)


def detect_ranking(bounds: ConfidenceBounds, n_players: int) -> Optional[List[int]]:
    """A permutation of arms whose top N are certified by the bounds, or None.

    The certificate requires each of the first N arms to have its LCB above the
    UCB of the next arm, and the N-th arm's LCB above the UCB of every arm
    ranked below N. Disjoint intervals order their midpoints the same way, so
    sorting by midpoint finds a certified order whenever one exists.
    """
    ucb, lcb = bounds.ucb, bounds.lcb
    k = len(ucb)
    mid = bounds.midpoint
    order = sorted(range(k), key=lambda j: (math.isnan(mid[j]), -mid[j] if not math.isnan(mid[j]) else 0.0, j))
    for pos in range(min(n_players, k - 1)):
        if not lcb[order[pos]] > ucb[order[pos + 1]]:
            return None
    if n_players <= k:
        floor = lcb[order[n_players - 1]]
        for pos in range(n_players, k):
            if not floor > ucb[order[pos]]:
                return None
    return order


class EtgsAgent:
    """Explore-then-Gale-Shapley, from the view of one player.

    Phase 1 (rounds 1..N): propose to arm 0 until accepted there; the round of
    that acceptance becomes the player's index, after which it proposes to arm
    1. Phase 2: sub-phases of 2**l round-robin exploration rounds, each followed
    by a monitoring round in which players holding a certified ranking claim
    their index arm. When N arms end up matched in a monitoring round everyone
    commits. Phase 3: walk down the estimated ranking, advancing on rejection.

    Attributes mirror the algorithm state: ``index`` is 1-based, ``sigma`` is a
    list of 0-based arms, ``pointer`` is 1-based into ``sigma``.
    """

    def __init__(self, player: int, n_players: int, n_arms: int, horizon: int):
        if n_players < 1 or n_arms < n_players:
            raise ValueError("need 1 <= n_players <= n_arms")
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.player = player
        self.n_players = n_players
        self.n_arms = n_arms
        self.horizon = horizon
        self.log_horizon = math.log(horizon)
        self.phase = Phase.INDEX_ESTIMATION
        self.index: Optional[int] = None
        self.mu_hat: List[float] = [0.0] * n_arms
        self.counts: List[int] = [0] * n_arms
        self.subphase = 1
        self.flag = False
        self.observed_arms: Set[int] = set()
        self.sigma: Optional[List[int]] = None
        self.pointer = 1
        self.phase2_end: Optional[int] = None
        self.pointer_overflows = 0
        self.label = LABEL_INDEX
        self._arm = 0
        self._next_t = 1
        self._proposal: Optional[int] = None
        self._schedule = subphase_schedule(1, n_players)

    @property
    def absorbing(self) -> bool:
        # Committed players change state only on rejection; the last proposal
        # must already be a committed one for it to repeat.
        return self.phase is Phase.COMMITTED and self.label == LABEL_COMMITTED

    def act(self, t: int) -> Optional[int]:
        if t != self._next_t:
            raise ValueError(f"expected round {self._next_t}, got {t}")
        if self.phase is Phase.INDEX_ESTIMATION:
            self.label = LABEL_INDEX
            arm = self._arm
        elif self.phase is Phase.EXPLORE:
            if t <= self._schedule.last:
                self.label = LABEL_EXPLORE
                arm = (self.index + t - 1) % self.n_arms
            else:
                self.label = LABEL_MONITOR
                arm = self.index - 1 if self.flag else ABSTAIN
        else:
            self.label = LABEL_COMMITTED
            arm = self.sigma[self.pointer - 1]
        self._proposal = arm
        return arm

    def observe(self, t: int, outcome: RoundOutcome) -> None:
        if t != self._next_t:
            raise ValueError(f"expected round {self._next_t}, got {t}")
        self._next_t += 1
        got = outcome.matched[self.player]
        accepted = got is not None and got == self._proposal

        if self.phase is Phase.INDEX_ESTIMATION:
            if accepted and got == 0 and self.index is None:
                self.index = t
                self._arm = min(1, self.n_arms - 1)
            if t == self.n_players:
                self.phase = Phase.EXPLORE
            return

        if self.phase is Phase.EXPLORE:
            sched = self._schedule
            if t <= sched.last:
                if accepted:
                    self._credit(got, outcome.rewards[self.player])
                if t == sched.last:
                    sigma = detect_ranking(self.confidence_bounds(), self.n_players)
                    self.flag = sigma is not None
                    if sigma is not None:
                        self.sigma = sigma
                return
            # monitoring round
            self.observed_arms = {j for j in outcome.matched if j is not None}
            if len(self.observed_arms) == self.n_players:
                self.phase = Phase.COMMITTED
                self.phase2_end = t
                self.pointer = 1
            else:
                self.subphase += 1
                self.flag = False
                self._schedule = subphase_schedule(self.subphase, self.n_players)
            return

        if got is None:
            if self.pointer < self.n_arms:
                self.pointer += 1
            else:
                self.pointer_overflows += 1

    def skip_to(self, t: int) -> None:
        """Advance the round counter over rounds that cannot change the state."""
        if not self.absorbing:
            raise RuntimeError("only absorbing controllers can skip rounds")
        self._next_t = t

    def _credit(self, arm: int, reward: float) -> None:
        c = self.counts[arm]
        self.mu_hat[arm] = (self.mu_hat[arm] * c + reward) / (c + 1)
        self.counts[arm] = c + 1

    def confidence_bounds(self) -> ConfidenceBounds:
        return bounds_from_estimates(self.mu_hat, self.counts, self.horizon)


class OracleAgent:
    """Decentralized Gale-Shapley with the true ranking, from round 1."""

    def __init__(self, player: int, ranking: Sequence[int]):
        self.player = player
        self.ranking = list(ranking)
        self.pointer = 1
        self.label = LABEL_COMMITTED
        self.phase = Phase.COMMITTED
        self.index = None
        self.phase2_end = 0
        self.subphase = 0
        self.pointer_overflows = 0
        self.absorbing = True

    def act(self, t: int) -> int:
        return oracle_act(self.ranking, self.pointer)

    def observe(self, t: int, outcome: RoundOutcome) -> None:
        if outcome.matched[self.player] is None:
            self.pointer += 1

    def skip_to(self, t: int) -> None:
        pass


def oracle_act(true_ranking: Sequence[int], pointer: int) -> int:
    if not 1 <= pointer <= len(true_ranking):
        raise PointerOverflow(f"pointer {pointer} outside 1..{len(true_ranking)}")
    return true_ranking[pointer - 1]


def make_etgs_agents(n_players: int, n_arms: int, horizon: int) -> List[EtgsAgent]:
    return [EtgsAgent(i, n_players, n_arms, horizon) for i in range(n_players)]


def make_oracle_agents(profile) -> List[OracleAgent]:
    return [OracleAgent(i, profile.player_ranking(i)) for i in range(profile.n_players)]
