"""Ground-truth two-sided market: preference profiles, stability, Gale-Shapley.

Players and arms are 0-based internally. A matching is a tuple with one entry
per player holding an arm index, or ``None`` (:data:`UNMATCHED`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Set, Tuple

import numpy as np

UNMATCHED = None

Matching = Tuple[Optional[int], ...]

DEFAULT_ORACLE_BOUND = 8


class ProfileError(ValueError):
    """Base class for invalid preference profiles."""


class DistinctnessViolation(ProfileError):
    pass


class DimensionViolation(ProfileError):
    pass


class InstanceTooLarge(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PreferenceProfile:
    """True market preferences.

    ``mu[i, j]`` is player i's value for arm j, ``pi[j, i]`` is arm j's value
    for player i. Larger means more preferred on both sides.
    """

    mu: np.ndarray
    pi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", np.array(self.mu, dtype=float, ndmin=2))
        object.__setattr__(self, "pi", np.array(self.pi, dtype=float, ndmin=2))
        self.mu.setflags(write=False)
        self.pi.setflags(write=False)

    @property
    def n_players(self) -> int:
        return self.mu.shape[0]

    @property
    def n_arms(self) -> int:
        return self.mu.shape[1]

    def player_ranking(self, i: int) -> List[int]:
        """Arms in player i's order of preference, best first."""
        return sorted(range(self.n_arms), key=lambda j: -self.mu[i, j])

    def arm_ranking(self, j: int) -> List[int]:
        """Players in arm j's order of preference, best first."""
        return sorted(range(self.n_players), key=lambda i: -self.pi[j, i])

    def __eq__(self, other):
        if not isinstance(other, PreferenceProfile):
            return NotImplemented
        return np.array_equal(self.mu, other.mu) and np.array_equal(self.pi, other.pi)

    def to_dict(self) -> dict:
        return {
            "n_players": self.n_players,
            "n_arms": self.n_arms,
            "mu": self.mu.tolist(),
            "pi": self.pi.tolist(),
        }


def validate_profile(profile: PreferenceProfile) -> PreferenceProfile:
    """Check the market assumptions and return the profile unchanged.

    Raises:
        DimensionViolation: empty market, shape mismatch, or more players than arms.
        DistinctnessViolation: a tie inside a row of ``mu`` or ``pi``.
        ProfileError: ``mu`` entries outside [0, 1] or non-finite values.
    """
    mu, pi = profile.mu, profile.pi
    if mu.ndim != 2 or mu.size == 0:
        raise DimensionViolation("mu must be a non-empty N x K matrix")
    n, k = mu.shape
    if n > k:
        raise DimensionViolation(f"need n_players <= n_arms, got N={n}, K={k}")
    if pi.shape != (k, n):
        raise DimensionViolation(f"pi must have shape ({k}, {n}), got {pi.shape}")
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(pi))):
        raise ProfileError("preference values must be finite")
    if np.any(mu < 0.0) or np.any(mu > 1.0):
        raise ProfileError("mu entries must lie in [0, 1]")
    for name, mat in (("mu", mu), ("pi", pi)):
        for r, row in enumerate(mat):
            if len(np.unique(row)) != len(row):
                raise DistinctnessViolation(f"tie in row {r} of {name}: {row.tolist()}")
    return profile


def _partner_of_arms(matching: Matching, n_arms: int) -> List[Optional[int]]:
    partner: List[Optional[int]] = [None] * n_arms
    for i, j in enumerate(matching):
        if j is None:
            continue
        if partner[j] is not None:
            raise ValueError(f"matching is not injective: arm {j} used twice")
        partner[j] = i
    return partner


def blocking_pairs(profile: PreferenceProfile, matching: Matching) -> List[Tuple[int, int]]:
    """All (player, arm) pairs that prefer each other to their partners."""
    mu, pi = profile.mu, profile.pi
    partner = _partner_of_arms(matching, profile.n_arms)
    pairs = []
    for i in range(profile.n_players):
        own = matching[i]
        own_value = -math.inf if own is None else mu[i, own]
        for j in range(profile.n_arms):
            if j == own or mu[i, j] <= own_value:
                continue
            p = partner[j]
            if p is None or pi[j, i] > pi[j, p]:
                pairs.append((i, j))
    return pairs


def is_stable(profile: PreferenceProfile, matching: Matching) -> bool:
    return not blocking_pairs(profile, matching)


class GaleShapleyResult(NamedTuple):
    matching: Matching
    steps: int
    proposals: int


def deferred_acceptance(profile: PreferenceProfile) -> GaleShapleyResult:
    """Player-proposing deferred acceptance, run in synchronous steps.

    In each step every player without a tentative partner proposes to its best
    arm that has not rejected it; every arm keeps its favourite proposer. The
    procedure stops at the first step without a rejection. ``steps`` counts
    those synchronous steps, ``proposals`` counts individual proposals.
    """
    n, k = profile.n_players, profile.n_arms
    pi = profile.pi
    rankings = [profile.player_ranking(i) for i in range(n)]
    next_choice = [0] * n
    held: List[Optional[int]] = [None] * k
    free = list(range(n))
    steps = proposals = 0
    while free:
        steps += 1
        offers: Dict[int, List[int]] = {}
        for i in free:
            if next_choice[i] >= k:
                continue
            offers.setdefault(rankings[i][next_choice[i]], []).append(i)
            proposals += 1
        rejected = []
        for j, suitors in offers.items():
            if held[j] is not None:
                suitors = suitors + [held[j]]
            best = max(suitors, key=lambda i: pi[j, i])
            held[j] = best
            rejected.extend(i for i in suitors if i != best)
        for i in rejected:
            next_choice[i] += 1
        free = sorted(i for i in rejected if next_choice[i] < k)
    matching: List[Optional[int]] = [None] * n
    for j, i in enumerate(held):
        if i is not None:
            matching[i] = j
    return GaleShapleyResult(tuple(matching), steps, proposals)


def gale_shapley(profile: PreferenceProfile) -> Matching:
    """The player-optimal stable matching."""
    return deferred_acceptance(profile).matching


def enumerate_stable_matchings(
    profile: PreferenceProfile, max_players: int = DEFAULT_ORACLE_BOUND
) -> Set[Matching]:
    """Brute-force the set of stable matchings, partial ones included.

    Every injective assignment of players to arms-or-nothing is visited by
    depth-first search. A branch is cut only when a blocking pair is already
    certain: a player and an arm whose partner has been fixed earlier in the
    search. Leaves are confirmed with :func:`is_stable`.
    """
    n, k = profile.n_players, profile.n_arms
    if n > max_players:
        raise InstanceTooLarge(f"N={n} exceeds the enumeration bound {max_players}")
    mu, pi = profile.mu, profile.pi
    found: Set[Matching] = set()
    assign: List[Optional[int]] = [None] * n
    owner: List[Optional[int]] = [None] * k

    def prefers_player(j: int, i: int) -> bool:
        o = owner[j]
        return o is None or pi[j, i] > pi[j, o]

    def certain_block(i: int) -> bool:
        # i has just been fixed; check i against owned arms, and owners against i's arm.
        own = assign[i]
        own_value = -math.inf if own is None else mu[i, own]
        for j in range(k):
            o = owner[j]
            if o is None or o == i:
                continue
            if mu[i, j] > own_value and pi[j, i] > pi[j, o]:
                return True
        if own is not None:
            for p in range(i):
                pj = assign[p]
                p_value = -math.inf if pj is None else mu[p, pj]
                if mu[p, own] > p_value and pi[own, p] > pi[own, i]:
                    return True
        return False

    def visit(i: int):
        if i == n:
            m = tuple(assign)
            if is_stable(profile, m):
                found.add(m)
            return
        for j in [*range(k), None]:
            if j is not None and owner[j] is not None:
                continue
            assign[i] = j
            if j is not None:
                owner[j] = i
            if not certain_block(i):
                visit(i + 1)
            if j is not None:
                owner[j] = None
            assign[i] = None

    visit(0)
    return found


def optimal_and_pessimal(
    profile: PreferenceProfile,
    mode: str = "oracle",
    max_players: int = DEFAULT_ORACLE_BOUND,
) -> Tuple[Matching, Optional[Matching]]:
    """Player-optimal and player-pessimal stable matchings.

    In ``"oracle"`` mode both are read off the enumerated stable set: the
    per-player best and worst stable partners, which must themselves form
    stable matchings. In ``"gs"`` mode only the Gale-Shapley matching is
    computed and the pessimal one is ``None``.
    """
    if mode == "gs":
        return gale_shapley(profile), None
    if mode != "oracle":
        raise ValueError(f"unknown mode {mode!r}")
    stable = enumerate_stable_matchings(profile, max_players)
    mu = profile.mu

    def value(i: int, j: Optional[int]) -> float:
        return -math.inf if j is None else mu[i, j]

    best = tuple(max((m[i] for m in stable), key=lambda j: value(i, j)) for i in range(profile.n_players))
    worst = tuple(min((m[i] for m in stable), key=lambda j: value(i, j)) for i in range(profile.n_players))
    for name, m in (("optimal", best), ("pessimal", worst)):
        if m not in stable:
            raise AssertionError(f"per-player {name} partners do not form a stable matching")
    return best, worst


@dataclass(frozen=True)
class GapProfile:
    delta: float
    delta_i_max: np.ndarray
    pairwise: np.ndarray  # (N, K, K) absolute differences of mu within each player's row
    rho: np.ndarray  # (N, K) arms by rank, best first
    n_ranked: int  # number of top arms the minimum gap is taken over


def compute_gaps(profile: PreferenceProfile, optimal: Optional[Matching] = None) -> GapProfile:
    """Minimum preference gap over each player's top min(N+1, K) arms.

    ``delta`` is ``inf`` when a single arm is ranked (N = K = 1).
    """
    mu = profile.mu
    n, k = mu.shape
    rho = np.argsort(-mu, axis=1, kind="stable")
    n_ranked = min(n + 1, k)
    top = np.take_along_axis(mu, rho[:, :n_ranked], axis=1)
    delta = float(np.min(top[:, :-1] - top[:, 1:])) if n_ranked > 1 else math.inf
    if optimal is None:
        optimal = gale_shapley(profile)
    delta_i_max = np.array([0.0 if j is None else mu[i, j] for i, j in enumerate(optimal)])
    pairwise = np.abs(mu[:, :, None] - mu[:, None, :])
    return GapProfile(delta, delta_i_max, pairwise, rho, n_ranked)


def format_matching(matching: Matching) -> str:
    """1-based human-readable form, e.g. ``{p1->a1, p2->unmatched}``."""
    parts = [f"p{i + 1}->{'unmatched' if j is None else f'a{j + 1}'}" for i, j in enumerate(matching)]
    return "{" + ", ".join(parts) + "}"
