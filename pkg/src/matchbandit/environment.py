"""The repeated market: proposals in, acceptances and rewards out.

Rounds are 1-based as in the protocol. A proposal list has one entry per
player: an arm index or :data:`ABSTAIN`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .market import PreferenceProfile

ABSTAIN = None

GAUSSIAN = "gaussian"
BERNOULLI = "bernoulli"
DETERMINISTIC = "deterministic"


@dataclass(frozen=True)
class NoiseModel:
    """Reward noise around the true mean.

    Gaussian with ``sigma <= 1`` and Bernoulli rewards are 1-subgaussian.
    """

    kind: str = GAUSSIAN
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, BERNOULLI, DETERMINISTIC):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == GAUSSIAN and not self.sigma >= 0:
            raise ValueError("sigma must be non-negative")

    def variates(self, rng: np.random.Generator, size) -> np.ndarray:
        """Base draws that :meth:`reward` turns into rewards."""
        if self.kind == GAUSSIAN:
            return rng.standard_normal(size)
        if self.kind == BERNOULLI:
            return rng.random(size)
        return np.zeros(size)

    def reward(self, mean: float, u: float) -> float:
        if self.kind == GAUSSIAN:
            return mean + self.sigma * u
        if self.kind == BERNOULLI:
            return 1.0 if u < mean else 0.0
        return mean

    def rewards(self, means: np.ndarray, u: np.ndarray) -> np.ndarray:
        if self.kind == GAUSSIAN:
            return means + self.sigma * u
        if self.kind == BERNOULLI:
            return (u < means).astype(float)
        return np.array(means, dtype=float)


class RewardStreams:
    """Pre-drawn noise with one independent stream per player.

    The reward of player i in round t depends only on ``(seed, i, t)``, never on
    what other players did or on how many rewards were drawn before.
    """

    def __init__(self, noise: NoiseModel, draws: np.ndarray):
        self.noise = noise
        self.draws = draws
        self._rows = [row.tolist() for row in draws]

    @classmethod
    def from_seed(cls, noise: NoiseModel, seed: Union[int, np.random.SeedSequence], n_players: int, horizon: int):
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        rows = [
            noise.variates(np.random.default_rng(substream(ss, i)), horizon)
            for i in range(n_players)
        ]
        return cls(noise, np.array(rows, dtype=float).reshape(n_players, horizon))

    @classmethod
    def from_generator(cls, noise: NoiseModel, rng: np.random.Generator, n_players: int, horizon: int):
        return cls(noise, noise.variates(rng, (n_players, horizon)))

    def draw(self, player: int, t: int, mean: float) -> float:
        return self.noise.reward(mean, self._rows[player][t - 1])


def substream(ss: np.random.SeedSequence, *key: int) -> np.random.SeedSequence:
    """Child seed addressed by ``key``; unlike ``spawn`` this is stateless."""
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(key))


@dataclass(frozen=True)
class RoundOutcome:
    round: int
    matched: Tuple[Optional[int], ...]
    rewards: Tuple[float, ...]
    proposals: Tuple[Optional[int], ...]

    def accepted(self, player: int) -> bool:
        return self.matched[player] is not None


class _Tables:
    """Profile values as nested lists; faster than numpy for scalar lookups."""

    def __init__(self, profile: PreferenceProfile):
        self.n_players = profile.n_players
        self.n_arms = profile.n_arms
        self.mu = profile.mu.tolist()
        self.pi = profile.pi.tolist()

    def resolve(self, proposals: Sequence[Optional[int]]) -> List[Optional[int]]:
        holder: dict = {}
        pi = self.pi
        for i, j in enumerate(proposals):
            if j is None:
                continue
            if not 0 <= j < self.n_arms:
                raise ValueError(f"player {i} proposed to invalid arm {j}")
            h = holder.get(j)
            if h is None:
                holder[j] = i
            else:
                assert pi[j][i] != pi[j][h], "arm preferences must be distinct"
                if pi[j][i] > pi[j][h]:
                    holder[j] = i
        matched: List[Optional[int]] = [None] * self.n_players
        for j, i in holder.items():
            matched[i] = j
        return matched


def _step(tables: _Tables, t: int, proposals, sampler) -> RoundOutcome:
    if len(proposals) != tables.n_players:
        raise ValueError(f"expected {tables.n_players} proposals, got {len(proposals)}")
    matched = tables.resolve(proposals)
    mu = tables.mu
    rewards = tuple(0.0 if j is None else sampler(i, t, mu[i][j]) for i, j in enumerate(matched))
    return RoundOutcome(t, tuple(matched), rewards, tuple(proposals))


def step(
    profile: PreferenceProfile,
    t: int,
    proposals: Sequence[Optional[int]],
    noise: NoiseModel,
    rng: Union[np.random.Generator, RewardStreams],
) -> RoundOutcome:
    """Resolve one round.

    Each arm accepts its most preferred proposer; everyone else, abstainers
    included, is unmatched and earns 0. ``rng`` is either a generator, from
    which accepted players draw in ascending order, or a :class:`RewardStreams`.
    """
    if isinstance(rng, RewardStreams):
        sampler = rng.draw
    else:
        def sampler(i, t, mean):
            return noise.reward(mean, float(noise.variates(rng, 1)[0]))
    return _step(_Tables(profile), t, list(proposals), sampler)


class ControllerError(RuntimeError):
    def __init__(self, round: int, player: int, cause: BaseException):
        super().__init__(f"controller of player {player} failed in round {round}: {cause!r}")
        self.round = round
        self.player = player


class Trace:
    """Dense record of an episode; indexing yields :class:`RoundOutcome`.

    Arrays have shape (T, N); ``-1`` encodes ABSTAIN / UNMATCHED. ``labels``
    stores each controller's phase code for the round.
    """

    def __init__(self, proposals: np.ndarray, matched: np.ndarray, rewards: np.ndarray, labels: np.ndarray):
        self.proposals = proposals
        self.matched = matched
        self.rewards = rewards
        self.labels = labels

    @property
    def horizon(self) -> int:
        return self.matched.shape[0]

    @property
    def n_players(self) -> int:
        return self.matched.shape[1]

    def __len__(self):
        return self.horizon

    def __getitem__(self, idx: int) -> RoundOutcome:
        if idx < 0:
            idx += len(self)
        if not 0 <= idx < len(self):
            raise IndexError(idx)
        def unpack(row):
            return tuple(None if v < 0 else int(v) for v in row)
        return RoundOutcome(idx + 1, unpack(self.matched[idx]), tuple(self.rewards[idx].tolist()), unpack(self.proposals[idx]))

    def __iter__(self):
        for idx in range(len(self)):
            yield self[idx]

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("proposals", "matched", "rewards", "labels")
        )


def run_episode(
    profile: PreferenceProfile,
    agents: Sequence,
    horizon: int,
    noise: NoiseModel,
    rng: Union[int, np.random.SeedSequence, np.random.Generator, RewardStreams],
    fast_forward: bool = True,
) -> Trace:
    """Play ``horizon`` rounds with one controller per player.

    A controller provides ``act(t)`` and ``observe(t, outcome)``; every
    controller sees the full outcome of every round.

    With ``fast_forward`` the loop stops calling controllers once all of them
    report ``absorbing`` and the last round accepted every proposal: from then
    on proposals, acceptances and controller states are fixed, so the rest of
    the trace is filled in bulk. The result is identical to the plain loop.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    n = profile.n_players
    if len(agents) != n:
        raise ValueError(f"need one controller per player: {n} players, {len(agents)} controllers")
    if isinstance(rng, RewardStreams):
        streams = rng
    elif isinstance(rng, np.random.Generator):
        streams = RewardStreams.from_generator(noise, rng, n, horizon)
    else:
        streams = RewardStreams.from_seed(noise, rng, n, horizon)
    if streams.draws.shape[1] < horizon:
        raise ValueError("reward streams shorter than the horizon")

    tables = _Tables(profile)
    proposals = np.full((horizon, n), -1, dtype=np.int64)
    matched = np.full((horizon, n), -1, dtype=np.int64)
    rewards = np.zeros((horizon, n))
    labels = np.zeros((horizon, n), dtype=np.int8)
    rows: List[tuple] = []
    label_rows: List[list] = []
    draw = streams.draw

    t = 0
    for t in range(1, horizon + 1):
        props = []
        for i, agent in enumerate(agents):
            try:
                props.append(agent.act(t))
            except Exception as exc:
                raise ControllerError(t, i, exc) from exc
        outcome = _step(tables, t, props, draw)
        for i, agent in enumerate(agents):
            try:
                agent.observe(t, outcome)
            except Exception as exc:
                raise ControllerError(t, i, exc) from exc
        rows.append((outcome.proposals, outcome.matched, outcome.rewards))
        label_rows.append([getattr(a, "label", 0) for a in agents])
        if (
            fast_forward
            and t < horizon
            and all(getattr(a, "absorbing", False) for a in agents)
            and outcome.matched == outcome.proposals
        ):
            break

    done = len(rows)
    if done:
        def encode(seq):
            return [[-1 if v is None else v for v in row] for row in seq]
        proposals[:done] = encode(r[0] for r in rows)
        matched[:done] = encode(r[1] for r in rows)
        rewards[:done] = [r[2] for r in rows]
        labels[:done] = label_rows
    if done < horizon:
        last = matched[done - 1]
        proposals[done:] = proposals[done - 1]
        matched[done:] = last
        labels[done:] = labels[done - 1]
        mu = profile.mu
        for i in range(n):
            if last[i] >= 0:
                rewards[done:, i] = streams.noise.rewards(
                    np.full(horizon - done, mu[i, last[i]]), streams.draws[i, done:horizon]
                )
        for agent in agents:
            agent.skip_to(horizon + 1)
    return Trace(proposals, matched, rewards, labels)
