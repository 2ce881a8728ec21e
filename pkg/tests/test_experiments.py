import json
import math

import pytest
from scipy import stats

from selfnorm.errors import ConfigError
from selfnorm.experiments import cli, runner
from selfnorm.experiments.config import (ExperimentConfig, config_from_mapping, load_config,
                                         resolve_seed)
from selfnorm.experiments.runner import (CSV_HEADER, fitted_constants, json_report, ratio_csv,
                                         run_bound_report, run_decompose, run_kernel_check,
                                         run_ratio_curve, wilson_interval)


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


SMALL = dict(n_list=[10], x_grid=[0.0, 1.0, 2.0], reps=4000, block_size=1000, seed=5)


class TestConfig:
    def test_defaults_valid(self):
        cfg = load_config(None)
        assert cfg.statistic == "self-normalized-sum"

    def test_unknown_key_line(self, tmp_path):
        p = write(tmp_path, 'reps = 2000\n\nmystery = 3\n')
        with pytest.raises(ConfigError) as e:
            load_config(p)
        assert e.value.line == 3 and e.value.field == "mystery"

    def test_bad_value_line(self, tmp_path):
        p = write(tmp_path, 'seed = 1\nx_grid = [2.0, 1.0]\n')
        with pytest.raises(ConfigError) as e:
            load_config(p)
        assert e.value.line == 2 and e.value.field == "x_grid"

    def test_type_error(self, tmp_path):
        p = write(tmp_path, 'reps = "many"\n')
        with pytest.raises(ConfigError) as e:
            load_config(p)
        assert e.value.field == "reps"

    def test_malformed(self, tmp_path):
        p = write(tmp_path, 'reps = = 3\n')
        with pytest.raises(ConfigError) as e:
            load_config(p)
        assert e.value.line == 1

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.toml")

    @pytest.mark.parametrize("data,field", [
        ({"statistic": "median"}, "statistic"),
        ({"dist": "cauchy"}, "dist"),
        ({"dist": "pareto-centered", "dist_params": {"alpha": 1.5}}, "dist_params"),
        ({"statistic": "studentized-u", "kernel": "gini", "n_list": [4]}, "n_list"),
        ({"statistic": "studentized-u", "kernel": "nope"}, "kernel"),
        ({"envelope_p": 2.0}, "envelope_p"),
        ({"statistic": "generic"}, "generic"),
        ({"seed": -1}, "seed"),
    ])
    def test_validation(self, data, field):
        with pytest.raises(ConfigError) as e:
            config_from_mapping(data)
        assert e.value.field == field

    def test_hashable(self):
        a = config_from_mapping({"dist_params": {"sigma": 2.0}})
        b = config_from_mapping({"dist_params": {"sigma": 2.0}})
        assert hash(a) == hash(b) and a == b
        assert a.distribution().variance == 4.0


class TestSeed:
    def test_precedence(self):
        cfg = ExperimentConfig(seed=1)
        assert resolve_seed(cfg, None, {}).seed == 1
        assert resolve_seed(cfg, None, {"SELFNORM_SEED": "2"}).seed == 2
        assert resolve_seed(cfg, 3, {"SELFNORM_SEED": "2"}).seed == 3

    def test_bad_env(self):
        with pytest.raises(ConfigError):
            resolve_seed(ExperimentConfig(), None, {"SELFNORM_SEED": "abc"})

    def test_range(self):
        with pytest.raises(ConfigError):
            resolve_seed(ExperimentConfig(), 1 << 64, {})


class TestRatioCurve:
    def test_csv_format(self):
        rows = run_ratio_curve(config_from_mapping(SMALL))
        text = ratio_csv(rows)
        lines = text.split("\n")
        assert lines[0] == ",".join(CSV_HEADER)
        assert "\r" not in text and text.endswith("\n")
        first = lines[1].split(",")
        assert float(first[2]) == rows[0].tail_hat
        assert first[-1] in ("true", "false")

    def test_ratio_times_gauss(self):
        for r in run_ratio_curve(config_from_mapping(SMALL)):
            assert abs(r.ratio * r.gauss_tail - r.tail_hat) <= 1e-12 * max(r.tail_hat, 1e-300)
            assert r.ratio_lo <= r.ratio <= r.ratio_hi

    def test_workers_bit_identical(self):
        cfg = config_from_mapping(SMALL)
        a = ratio_csv(run_ratio_curve(cfg, workers=1))
        b = ratio_csv(run_ratio_curve(cfg, workers=4))
        assert a == b

    def test_tilted_rows(self):
        rows = run_ratio_curve(config_from_mapping({**SMALL, "estimator": "tilted"}))
        assert [r.method for r in rows] == ["plain", "tilted", "tilted"]

    def test_student_oracle(self):
        cfg = config_from_mapping({"n_list": [10], "x_grid": [0.5, 1.0, 1.5], "reps": 100_000, "seed": 9})
        for r in run_ratio_curve(cfg):
            exact = stats.t.sf(r.x * math.sqrt(9 / (10 - r.x**2)), 9)
            assert abs(r.tail_hat - exact) < 3 * r.tail_se

    def test_symmetric_zero_row(self):
        cfg = config_from_mapping({"statistic": "studentized-u", "kernel": "t", "n_list": [20],
                                   "x_grid": [0.0], "reps": 20_000, "seed": 2})
        r = run_ratio_curve(cfg)[0]
        assert r.ratio == pytest.approx(2 * r.tail_hat)
        assert r.ratio_lo <= 1.0 <= r.ratio_hi

    def test_generic_statistic(self):
        cfg = config_from_mapping({**SMALL, "statistic": "generic",
                                   "generic": "selfnorm.tilting:self_normalized_sum"})
        plain = config_from_mapping(SMALL)
        assert ratio_csv(run_ratio_curve(cfg)) == ratio_csv(run_ratio_curve(plain))

    def test_fitted_constants(self):
        rows = run_ratio_curve(config_from_mapping({**SMALL, "n_list": [20, 40]}))
        fit = fitted_constants(rows)
        assert set(fit["C_hat_by_n"]) <= {"20", "40"}
        assert fit["C_hat"] == max(fit["C_hat_by_n"].values())


class TestWilson:
    def test_contains_estimate(self):
        lo, hi = wilson_interval(0.3, 100)
        assert lo < 0.3 < hi

    def test_edges(self):
        assert wilson_interval(0.0, 50)[0] == 0.0
        assert wilson_interval(1.0, 50)[1] == 1.0


class TestOtherCommands:
    def test_bound_report_rademacher(self):
        cfg = config_from_mapping({"dist": "rademacher", "n_list": [100], "x_grid": [1.0, 2.0],
                                   "envelope_fit": False})
        rep = run_bound_report(cfg)
        for r in rep["reports"]:
            assert r["L_nx"] == pytest.approx(r["x"] ** 3 / 10, rel=1e-14)

    def test_bound_report_c1_flag(self):
        cfg = config_from_mapping({"dist": "rademacher", "n_list": [4], "x_grid": [3.0],
                                   "envelope_fit": False})
        assert run_bound_report(cfg)["reports"][0]["c1_condition"] is False

    def test_kernel_check(self):
        cfg = config_from_mapping({"kernel": "gini", "kc_trials": 20_000})
        res = run_kernel_check(cfg)
        assert res["violations"] == 0 and res["c0"] == 8.0

    def test_decompose_residuals(self):
        res = run_decompose(config_from_mapping({"kernel": "wilcoxon", "decompose_n": 16}))
        assert all(abs(v) < 1e-10 for v in res["identity_residuals"].values())

    def test_json_report(self):
        cfg = config_from_mapping(SMALL)
        doc = json.loads(json_report(cfg, [{"a": float("inf")}], None, {"ok": True}))
        assert set(doc) == {"config_echo", "results", "fitted_constants", "verdicts",
                            "runtime_seconds", "seed"}
        assert doc["results"][0]["a"] == "inf"
        assert doc["config_echo"]["n_list"] == [10]


class TestCli:
    def test_ratio_curve_both(self, tmp_path):
        p = write(tmp_path, "n_list = [10]\nx_grid = [1.0]\nreps = 2000\nestimator = \"both\"\n")
        out = tmp_path / "out"
        assert cli.main(["ratio-curve", "--config", str(p), "--out", str(out)]) == 0
        assert (out / "ratio_curve_plain.csv").exists() and (out / "ratio_curve_tilted.csv").exists()

    def test_json_format(self, tmp_path):
        p = write(tmp_path, "n_list = [10]\nx_grid = [1.0]\nreps = 2000\n")
        out = tmp_path / "out"
        assert cli.main(["ratio-curve", "--config", str(p), "--out", str(out), "--format", "json"]) == 0
        doc = json.loads((out / "ratio_curve.json").read_text())
        assert "plain" in doc["results"]

    def test_seed_flag_overrides(self, tmp_path, monkeypatch):
        p = write(tmp_path, "n_list = [10]\nx_grid = [1.0]\nreps = 2000\nseed = 1\n")
        monkeypatch.setenv("SELFNORM_SEED", "7")
        for seed, name in ((None, "env"), ("7", "flag")):
            args = ["ratio-curve", "--config", str(p), "--out", str(tmp_path / name)]
            if seed:
                args += ["--seed", seed]
            assert cli.main(args) == 0
        assert (tmp_path / "env" / "ratio_curve.csv").read_bytes() == \
            (tmp_path / "flag" / "ratio_curve.csv").read_bytes()

    def test_config_error_exit(self, tmp_path, capsys):
        p = write(tmp_path, "reps = 5\n")
        assert cli.main(["tail", "--config", str(p)]) == 2
        assert "line 1" in capsys.readouterr().err

    def test_bad_env_seed_exit(self, monkeypatch, tmp_path):
        monkeypatch.setenv("SELFNORM_SEED", "x")
        assert cli.main(["decompose", "--out", str(tmp_path)]) == 2

    def test_verdict_exit(self, tmp_path, monkeypatch):
        monkeypatch.setattr(runner, "run_concentration_suite",
                            lambda cfg: {"results": [{"label": "a", "verdict": False}],
                                         "verdicts": {"a": False}})
        assert cli.main(["concentration", "--out", str(tmp_path)]) == 3

    @pytest.mark.parametrize("cmd", ["bounds", "tail", "kernel-check", "decompose"])
    @pytest.mark.parametrize("fmt", ["csv", "json"])
    def test_commands(self, cmd, fmt, tmp_path):
        p = write(tmp_path, "n_list = [12]\nx_grid = [1.0]\nreps = 2000\nkc_trials = 1000\n"
                            "statistic = \"studentized-u\"\nkernel = \"gini\"\n")
        assert cli.main([cmd, "--config", str(p), "--out", str(tmp_path / "o"), "--format", fmt]) == 0
        assert any((tmp_path / "o").iterdir())
