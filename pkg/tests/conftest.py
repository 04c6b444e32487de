import itertools

import numpy as np
import pytest
from hypothesis import strategies as st

from matchbandit.market import PreferenceProfile


M2_MU = [[0.9, 0.6], [0.6, 0.9]]
M2_PI = [[0.2, 0.8], [0.8, 0.2]]  # a1 prefers p2, a2 prefers p1


@pytest.fixture
def m2():
    return PreferenceProfile(M2_MU, M2_PI)


def random_profile(rng, n, k):
    mu = np.array([rng.permutation(k) for _ in range(n)], dtype=float) / k + rng.random() * 1e-3
    pi = np.array([rng.permutation(n) for _ in range(k)], dtype=float)
    return PreferenceProfile(mu, pi)


@st.composite
def profiles(draw, max_players=4, max_arms=5):
    seed = draw(st.integers(0, 2 ** 32 - 1))
    n = draw(st.integers(1, max_players))
    k = draw(st.integers(n, max_arms))
    return random_profile(np.random.default_rng(seed), n, k)


def naive_blocking_pairs(profile, matching):
    """Test-side oracle: literal reading of the blocking condition."""
    mu, pi = profile.mu, profile.pi
    ninf = float("-inf")
    pairs = []
    for i in range(profile.n_players):
        for j in range(profile.n_arms):
            mine = ninf if matching[i] is None else mu[i, matching[i]]
            partner = [p for p in range(profile.n_players) if matching[p] == j]
            theirs = ninf if not partner else pi[j, partner[0]]
            if mu[i, j] > mine and pi[j, i] > theirs:
                pairs.append((i, j))
    return pairs


def all_injective_matchings(n, k):
    """Every injective map from players to arms-or-None."""
    options = [*range(k), None]
    for combo in itertools.product(options, repeat=n):
        used = [j for j in combo if j is not None]
        if len(used) == len(set(used)):
            yield combo


def naive_stable_set(profile):
    return {
        m for m in all_injective_matchings(profile.n_players, profile.n_arms)
        if not naive_blocking_pairs(profile, m)
    }


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
