import csv
import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from matchbandit.environment import NoiseModel
from matchbandit.experiment import (
    ExperimentConfig,
    InfeasibleGap,
    MarketSpec,
    aggregate,
    checkpoint_grid,
    generate_market,
    run_experiment,
    run_replication,
)
from matchbandit.io import ConfigError, read_config, read_profile, write_profile
from matchbandit.market import compute_gaps, validate_profile


def m2_config(m2, **kw):
    base = dict(n_players=2, n_arms=2, horizon=2000, replications=3, master_seed=7,
                market=MarketSpec(kind="explicit", profile=m2))
    base.update(kw)
    return ExperimentConfig(**base)


class TestGenerateMarket:
    def test_gap_respected(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            p = generate_market(3, 5, 0.2, rng)
            assert compute_gaps(p).delta >= 0.2

    def test_infeasible(self):
        with pytest.raises(InfeasibleGap):
            generate_market(2, 3, 0.6, np.random.default_rng(0))

    def test_same_seed_same_profile(self):
        a = generate_market(3, 5, 0.2, np.random.default_rng(11))
        b = generate_market(3, 5, 0.2, np.random.default_rng(11))
        assert a == b

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 4), st.integers(0, 3), st.floats(0.01, 0.3), st.integers(0, 2 ** 31))
    def test_always_valid(self, n, extra, gap, seed):
        k = n + extra
        # near the feasibility edge the acceptance rate vanishes and the attempt cap applies
        if gap * (min(n + 1, k) - 1) > 0.6:
            return
        p = generate_market(n, k, gap, np.random.default_rng(seed))
        validate_profile(p)
        assert compute_gaps(p).delta >= gap

    def test_attempt_cap_at_feasibility_edge(self):
        with pytest.raises(InfeasibleGap):
            generate_market(4, 5, 0.25, np.random.default_rng(0))

    def test_bad_args(self):
        with pytest.raises(ValueError):
            generate_market(3, 2, 0.1, np.random.default_rng(0))
        with pytest.raises(ValueError):
            generate_market(2, 3, 0.0, np.random.default_rng(0))


def test_checkpoint_grid():
    assert checkpoint_grid(1) == [1]
    assert checkpoint_grid(8) == [1, 2, 4, 8]
    assert checkpoint_grid(10) == [1, 2, 4, 8, 10]


class TestConfig:
    @pytest.mark.parametrize("change", [
        {"horizon": 0}, {"replications": 0}, {"agents": "greedy"}, {"workers": 0},
        {"market": MarketSpec(min_gap=0.0)}, {"market": MarketSpec(kind="explicit")},
        {"market": MarketSpec(kind="file")},
    ])
    def test_invalid(self, change):
        with pytest.raises(ValueError):
            dataclasses.replace(ExperimentConfig(), **change).validate()

    def test_profile_shape_mismatch(self, m2):
        with pytest.raises(ValueError):
            m2_config(m2, n_players=3).validate()

    def test_read_explicit(self, tmp_path, m2):
        write_profile(m2, tmp_path / "m2.yaml")
        (tmp_path / "exp.yaml").write_text(
            "horizon: 500\nreplications: 2\nnoise: {kind: gaussian, sigma: 0.5}\n"
            "market: {kind: explicit, profile: m2.yaml}\n"
        )
        cfg = read_config(tmp_path / "exp.yaml")
        assert (cfg.n_players, cfg.n_arms, cfg.horizon) == (2, 2, 500)
        assert cfg.noise == NoiseModel("gaussian", 0.5)
        assert cfg.market.profile == m2

    def test_read_random_string_noise(self, tmp_path):
        (tmp_path / "c.yaml").write_text("noise: bernoulli\nmarket: {kind: random, min_gap: 0.15}\n")
        cfg = read_config(tmp_path / "c.yaml")
        assert cfg.noise.kind == "bernoulli" and cfg.market.min_gap == 0.15

    @pytest.mark.parametrize("text", ["bogus: 1\n", "market: {kind: sideways}\n",
                                      "market: {kind: explicit}\n", "noise: {colour: red}\n", "- 1\n"])
    def test_read_rejects(self, tmp_path, text):
        (tmp_path / "c.yaml").write_text(text)
        with pytest.raises(ConfigError):
            read_config(tmp_path / "c.yaml")

    def test_profile_roundtrip(self, tmp_path, m2):
        write_profile(m2, tmp_path / "p.yaml")
        assert read_profile(tmp_path / "p.yaml") == m2


class TestRuns:
    def test_etgs_on_m2_converges(self, m2):
        agg = run_experiment(m2_config(m2, horizon=10_000, replications=50), write=False)
        assert agg.convergence_rate == 1.0
        assert agg.convergence_at[-1] == 1.0

    def test_oracle_on_m2_zero_regret(self, m2):
        agg = run_experiment(m2_config(m2, agents="oracle", horizon=300), write=False)
        assert np.all(agg.mean_opt == 0.0)
        assert agg.convergence_rate == 1.0
        assert all(r.convergence_round == 1 for r in agg.runs)

    def test_replication_order_invariance(self):
        cfg = ExperimentConfig(n_players=2, n_arms=3, horizon=1500, replications=4, master_seed=3,
                               market=MarketSpec(min_gap=0.2))
        runs = [run_replication(cfg, r) for r in range(4)]
        a, b = aggregate(runs), aggregate(runs[::-1])
        np.testing.assert_array_equal(a.mean_opt, b.mean_opt)
        np.testing.assert_array_equal(a.std_opt, b.std_opt)

    def test_replication_independent_of_siblings(self):
        cfg = ExperimentConfig(n_players=2, n_arms=3, horizon=800, replications=3, master_seed=5,
                               market=MarketSpec(min_gap=0.2))
        alone = run_replication(cfg, 2)
        among = run_experiment(cfg, write=False).runs[2]
        np.testing.assert_array_equal(alone.opt_at, among.opt_at)
        assert alone.profile == among.profile

    def test_workers_match_serial(self):
        cfg = ExperimentConfig(n_players=2, n_arms=3, horizon=800, replications=3, master_seed=5,
                               market=MarketSpec(min_gap=0.2))
        serial = run_experiment(cfg, write=False)
        parallel = run_experiment(dataclasses.replace(cfg, workers=2), write=False)
        np.testing.assert_array_equal(serial.mean_opt, parallel.mean_opt)
        assert serial.convergence_rate == parallel.convergence_rate

    def test_result_fields(self, m2):
        res = run_replication(m2_config(m2, horizon=40_000), 0, keep_trace=True)
        assert res.indices == (2, 1)
        assert res.t2[0] is not None and len(set(res.t2)) == 1
        assert res.dominance_ok and res.clean
        assert res.final_opt.shape == (2,)
        np.testing.assert_array_equal(res.final_opt, res.ledger.optimal_pseudo[:, -1])


class TestFiles:
    def cfg(self, m2, out, **kw):
        kw = {"replications": 2, "horizon": 700, **kw}
        return m2_config(m2, output_dir=str(out), **kw)

    def test_layout_and_row_counts(self, tmp_path, m2):
        agg = run_experiment(self.cfg(m2, tmp_path))
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["aggregate.csv", "regret.svg", "summary.json", "trace_run0000.csv", "trace_run0001.csv"]
        with open(tmp_path / "trace_run0000.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 700 * 2
        assert list(rows[0]) == ["round", "player", "proposed_arm", "matched_arm", "reward", "phase",
                                 "cum_opt_pseudo_regret", "cum_pess_pseudo_regret"]
        assert rows[0]["round"] == "1" and rows[0]["phase"] == "index_estimation"
        with open(tmp_path / "aggregate.csv") as fh:
            agg_rows = list(csv.DictReader(fh))
        assert len(agg_rows) == len(agg.checkpoints) * 2
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["convergence_rate"] == agg.convergence_rate

    def test_trace_csv_matches_ledger(self, tmp_path, m2):
        run_experiment(self.cfg(m2, tmp_path, replications=1))
        res = run_replication(self.cfg(m2, tmp_path, replications=1), 0, keep_trace=True)
        with open(tmp_path / "trace_run0000.csv") as fh:
            rows = list(csv.DictReader(fh))
        last = [r for r in rows if r["round"] == "700"]
        for i, row in enumerate(last):
            assert float(row["cum_opt_pseudo_regret"]) == res.ledger.optimal_pseudo[i, -1]
            assert float(row["reward"]) == res.trace.rewards[-1, i]

    def test_trace_runs_limit(self, tmp_path, m2):
        run_experiment(self.cfg(m2, tmp_path, trace_runs=1))
        assert not (tmp_path / "trace_run0001.csv").exists()
        assert (tmp_path / "trace_run0000.csv").exists()

    def test_byte_identical_reruns(self, tmp_path, m2):
        names = ("trace_run0000.csv", "aggregate.csv", "summary.json", "regret.svg")
        run_experiment(self.cfg(m2, tmp_path, replications=1))
        first = {n: (tmp_path / n).read_bytes() for n in names}
        run_experiment(self.cfg(m2, tmp_path, replications=1))
        for name in names:
            assert (tmp_path / name).read_bytes() == first[name], name

    def test_no_files_without_output_dir(self, tmp_path, m2, monkeypatch):
        monkeypatch.chdir(tmp_path)
        run_experiment(m2_config(m2, replications=1, horizon=50))
        assert list(tmp_path.iterdir()) == []
