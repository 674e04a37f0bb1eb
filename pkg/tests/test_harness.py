import json
import math

import numpy as np
import pytest

from maskdiff import cli
from maskdiff.experiments import (
    EXPERIMENTS,
    ConfigError,
    ExperimentConfig,
    OverwriteError,
    build_q0_list,
    exp_beta_marginals,
    exp_euler_scaling,
    exp_fhs_exactness,
    exp_prop2_identity,
    exp_thm1_decomposition,
    load_config,
    loglog_slope,
    run,
    run_config,
    path_tv_sides,
)
from maskdiff.predictors import exact_predictor, mixture_corrupted_predictor
from maskdiff.state import DenseDistribution, Vocab, random_distribution


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc, indent=2))
    return p


BASE = {
    "experiment": "prop2_identity",
    "vocab": {"d": 2, "S": 3},
    "q0": {"kind": "dirichlet", "count": 2},
    "predictors": [{"kind": "exact"}, {"kind": "mixture", "lambda": 0.2}],
    "seed": 3,
}


class TestConfig:
    def test_unknown_experiment_lists_names(self):
        with pytest.raises(ConfigError) as e:
            ExperimentConfig.from_dict({**BASE, "experiment": "nope"})
        for name in EXPERIMENTS:
            assert name in str(e.value)

    @pytest.mark.parametrize("patch", [
        {"vocab": {"d": 2}},
        {"q0": {"kind": "gaussian"}},
        {"predictors": [{"kind": "neural"}]},
        {"predictors": [{"kind": "mixture", "lambda": 2.0}]},
        {"schedule": {"kappa": [1.5]}},
        {"schedule": {"kind": "cosine"}},
        {"trials": 0},
        {"seed": -1},
        {"colour": "blue"},
    ])
    def test_validation(self, patch):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({**BASE, **patch})

    def test_parse_error_has_line(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{\n  "experiment": "prop2_identity",\n  "seed": ,\n}')
        with pytest.raises(ConfigError, match=r"bad.json:3:"):
            load_config(p)

    def test_missing_q0_file(self, tmp_path):
        cfg = ExperimentConfig.from_dict({**BASE, "q0": {"kind": "file", "path": "missing.json"}}, tmp_path)
        with pytest.raises(FileNotFoundError, match="missing.json"):
            build_q0_list(cfg)

    def test_q0_file_relative_to_config(self, tmp_path):
        (tmp_path / "q.json").write_text(json.dumps({"d": 2, "S": 3, "entries": [{"tokens": [0, 1], "p": 1.0}]}))
        cfg = load_config(_write(tmp_path, {**BASE, "q0": {"kind": "file", "path": "q.json"}}))
        assert build_q0_list(cfg)[0][(0, 1)] == 1.0

    def test_overrides(self, tmp_path):
        cfg = load_config(_write(tmp_path, BASE), {"seed": 9, "trials": 50, "kappa": [0.3, 0.1]})
        assert cfg.seed == 9 and cfg.trials == 50 and cfg.schedule["kappa"] == [0.3, 0.1]

    def test_hash_ignores_output_path(self):
        a = ExperimentConfig.from_dict({**BASE, "out": "a.csv"})
        b = ExperimentConfig.from_dict({**BASE, "out": "b.csv"})
        c = ExperimentConfig.from_dict({**BASE, "seed": 4})
        assert a.config_hash() == b.config_hash() != c.config_hash()

    def test_q0_draws_follow_seed(self):
        a = build_q0_list(ExperimentConfig.from_dict(BASE))
        b = build_q0_list(ExperimentConfig.from_dict(BASE))
        c = build_q0_list(ExperimentConfig.from_dict({**BASE, "seed": 4}))
        assert all(np.array_equal(x.probs, y.probs) for x, y in zip(a, b))
        assert not np.array_equal(a[0].probs, c[0].probs)


class TestResults:
    def test_byte_identical_rerun(self, tmp_path):
        cfg = _write(tmp_path, {**BASE, "experiment": "mc_crosscheck", "trials": 2000,
                                "schedule": {"T": 2.0, "delta": 0.1, "kappa": [0.2]}})
        assert run(cfg, {"out": tmp_path / "a.csv"}, echo=lambda s: None) in (0, 1)
        assert run(cfg, {"out": tmp_path / "b.csv"}, echo=lambda s: None) in (0, 1)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        side = json.loads((tmp_path / "a.json").read_text())
        assert {"config_hash", "seed", "wall_time_s"} <= set(side["metadata"])

    def test_refuses_foreign_overwrite(self, tmp_path):
        out = tmp_path / "r.csv"
        a = _write(tmp_path, BASE, "a.json")
        b = _write(tmp_path, {**BASE, "seed": 5}, "b.json")
        assert run(a, {"out": out}, echo=lambda s: None) == 0
        assert run(a, {"out": out}, echo=lambda s: None) == 0
        with pytest.raises(OverwriteError):
            run(b, {"out": out}, echo=lambda s: None)
        assert run(b, {"out": out}, force=True, echo=lambda s: None) == 0

    def test_csv_layout(self):
        res = run_config(ExperimentConfig.from_dict(BASE))
        lines = res.to_csv().splitlines()
        assert lines[0] == "point,metric,value,error"
        assert len(lines) == 1 + len(res.rows)
        assert float(lines[1].split(",")[2]) == res.rows[0][2]

    def test_slope(self):
        k = np.array([0.2, 0.1, 0.05])
        assert loglog_slope(k, 3 * k**1.5) == pytest.approx(1.5)


class TestExperiments:
    def test_euler_instance(self):
        cfg = ExperimentConfig.from_dict({"experiment": "euler_scaling", "vocab": {"d": 3, "S": 3},
                                          "instance": {"anchor": [0, 1, 0], "epsilon": 0.01},
                                          "schedule": {"kappa": [0.2, 0.1, 0.05, 0.025]}})
        res = exp_euler_scaling(cfg)
        assert res.passed, [a.line() for a in res.assertions]
        assert res.value("all", "gamma") == pytest.approx(0.01**0.25 / 3)
        assert res.value("all", "T") == pytest.approx(math.log(30))

    def test_euler_configured_q0(self):
        cfg = ExperimentConfig.from_dict({"experiment": "euler_scaling", "vocab": {"d": 2, "S": 3},
                                          "schedule": {"T": 3.0, "delta": 0.01, "kappa": [0.1, 0.05]}})
        res = exp_euler_scaling(cfg)
        a, b = res.column("tv_q_delta")
        assert b < a
        # tv to q0 includes the early-stopping bias, bounded by the d * delta + d * e^-T envelope
        assert max(res.column("tv_q0")) <= res.value("q0=0", "floor_envelope") + a

    def test_fhs(self):
        res = exp_fhs_exactness(ExperimentConfig.from_dict({**BASE, "experiment": "fhs_exactness"}))
        assert res.passed
        ex = res.value("q0=0;pred=exact", "kl")
        mix = res.value("q0=0;pred=mixture0.2", "slack")
        assert ex <= 1e-10 and mix > 0

    def test_fhs_instance(self):
        cfg = ExperimentConfig.from_dict({"experiment": "fhs_exactness", "vocab": {"d": 3, "S": 3},
                                          "instance": {"epsilon": 0.3}})
        res = exp_fhs_exactness(cfg)
        assert res.passed
        assert res.value("rho", "closed_form") == pytest.approx(0.3, abs=1e-15)

    def test_fhs_rejects_mask_mass(self):
        cfg = ExperimentConfig.from_dict({**BASE, "experiment": "fhs_exactness",
                                          "q0": {"kind": "dirichlet", "mask_free": False}})
        with pytest.raises(ValueError, match="mask-free"):
            exp_fhs_exactness(cfg)

    def test_identity_experiment(self):
        res = exp_prop2_identity(ExperimentConfig.from_dict(BASE))
        assert res.passed
        assert len(res.assertions) == 2 * 2 + 2

    def test_beta_requires_trials(self):
        cfg = ExperimentConfig.from_dict({**BASE, "experiment": "beta_marginals", "trials": 100})
        with pytest.raises(ConfigError):
            exp_beta_marginals(cfg)

    def test_path_bound_exact_both_zero(self):
        q0 = random_distribution(Vocab(3, 2), np.random.default_rng(1))
        r = path_tv_sides(q0, exact_predictor(q0), 2.0, 0.05)
        assert r["lhs"] <= 1e-8 and r["rhs"] <= 1e-8

    def test_path_bound_all_mask_init(self):
        q0 = random_distribution(Vocab(3, 2), np.random.default_rng(1))
        cfg = ExperimentConfig.from_dict({**BASE, "experiment": "thm1_decomposition", "q0": {"kind": "dirichlet"},
                                          "predictors": [{"kind": "mixture", "lambda": 0.1}],
                                          "schedule": {"T": 3.0, "delta": 0.1}, "options": {"init": "all_mask"}})
        res = exp_thm1_decomposition(cfg)
        assert res.passed, [a.line() for a in res.assertions]
        assert res.value("q0=0;pred=mixture0.1", "slack") > 0


class TestCli:
    def test_list(self, capsys):
        assert cli.main(["list"]) == 0
        out = capsys.readouterr().out
        for name in EXPERIMENTS:
            assert name in out

    def test_run_pass_lines(self, tmp_path, capsys):
        cfg = _write(tmp_path, BASE)
        assert cli.main(["run", str(cfg), "--out", str(tmp_path / "o.csv"), "--seed", "1"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert sum(line.startswith("PASS") for line in out) == 6
        assert (tmp_path / "o.csv").exists() and (tmp_path / "o.json").exists()

    def test_run_failure_exit(self, tmp_path, capsys):
        # two coarse kappas on a tiny horizon: the slope assertion is expected to fail
        cfg = _write(tmp_path, {"experiment": "euler_scaling", "vocab": {"d": 1, "S": 2},
                                "instance": {"epsilon": 0.01, "T": 0.5}, "schedule": {"kappa": [0.9, 0.8]}})
        code = cli.main(["run", str(cfg), "--out", str(tmp_path / "o.csv")])
        out = capsys.readouterr().out
        assert code == 1 and "FAIL" in out

    def test_errors_exit_2(self, tmp_path, capsys):
        assert cli.main(["run", str(tmp_path / "none.json")]) == 2
        assert "none.json" in capsys.readouterr().err
        bad = _write(tmp_path, {**BASE, "experiment": "bogus"})
        assert cli.main(["run", str(bad)]) == 2

    def test_kappa_flag(self, tmp_path):
        cfg = _write(tmp_path, {"experiment": "euler_scaling", "vocab": {"d": 2, "S": 3},
                                "instance": {"epsilon": 0.01}})
        assert cli.main(["run", str(cfg), "--out", str(tmp_path / "o.csv"), "--kappa", "0.2,0.1,0.05"]) == 0
        text = (tmp_path / "o.csv").read_text()
        assert "kappa=0.05" in text and "kappa=0.025" not in text
