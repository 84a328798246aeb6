import csv
import io
import json
import math

import numpy as np
import pytest

from logpolymer import cli
from logpolymer.config import ConfigFileError, parse_config_text, parse_value, split_settings
from logpolymer.couplings import northeast_boundary, southwest_boundary
from logpolymer.environment import WeightField
from logpolymer.experiments import (
    ConfigError,
    ExperimentConfig,
    burke_verdicts,
    coarse_points,
    crossing_verdicts,
    exit_verdicts,
    gibbs_instance,
    gibbs_kernel_matrix,
    gibbs_verdicts,
    interpolated_median,
    kpz_verdicts,
    replica_map,
    run_experiment,
    sup_crossing,
    walk_verdicts,
)
from logpolymer.polymer import gibbs_resample, sample_path, log_partition_forward
from logpolymer.rng import RngStream


# configuration


def test_parse_config_text():
    vals = parse_config_text("# comment\nseed = 7\nsizes = 8, 16  # trailing\neps=0.25\nname = abc\nflag = yes\n")
    assert vals == {"seed": 7, "sizes": [8, 16], "eps": 0.25, "name": "abc", "flag": True}
    run, params = split_settings(vals)
    assert run == {"seed": 7, "sizes": [8, 16]}
    assert params == {"eps": 0.25, "name": "abc", "flag": True}


def test_parse_config_errors():
    with pytest.raises(ConfigFileError):
        parse_config_text("just words")
    with pytest.raises(ConfigFileError):
        parse_config_text(" = 3")


def test_single_size_becomes_list():
    assert split_settings({"sizes": 64})[0]["sizes"] == [64]
    assert parse_value("1,2,") == [1, 2]


@pytest.mark.parametrize(
    "kw",
    [
        {"sizes": []},
        {"sizes": [16, 8]},
        {"replicas": 0},
        {"threads": 0},
        {"seed": -1},
    ],
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        ExperimentConfig.default("crossing-decay", **kw)


def test_unknown_experiment():
    with pytest.raises(ConfigError):
        ExperimentConfig.default("nope")


def test_echo_excludes_threads_and_output():
    a = ExperimentConfig.default("gibbs", threads=1, output_path="a.json")
    b = ExperimentConfig.default("gibbs", threads=3, output_path="b.json")
    assert a.echo() == b.echo()


def test_runner_parameter_guards():
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig.default("crossing-decay", sizes=[8], replicas=1, params={"eps": 1.5}))
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig.default("kpz-wandering", sizes=[63], replicas=1))
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig.default("gibbs", sizes=[5], replicas=1))
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig.default("walk-max", sizes=[10], replicas=1, params={"alpha": 1.5}))
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig.default("exit-tail", sizes=[8], replicas=1, params={"alpha": 2.0}))


# CLI


def test_cli_usage_errors(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["not-an-experiment"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        cli.main(["gibbs", "--sizes", "a,b"])
    assert e.value.code == 2
    assert cli.main(["gibbs", "--set", "bogus=1"]) == 2
    assert cli.main(["gibbs", "--set", "novalue"]) == 2
    assert cli.main(["gibbs", "--sizes", "3,2"]) == 2
    assert cli.main(["all", "--set", "alpha=0.1"]) == 2
    assert cli.main(["gibbs", "--config", "/nonexistent/file.cfg"]) == 2


def test_cli_pass_and_fail_exit_codes(tmp_path, capsys):
    out = tmp_path / "g.json"
    assert cli.main(["gibbs", "--replicas", "3000", "--seed", "3", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["passed"] is True and doc["experiment"] == "gibbs" and doc["schema_version"] == 1
    assert "timings" not in doc
    # an impossible acceptance level forces a failing verdict
    assert cli.main(["gibbs", "--replicas", "3000", "--set", "alpha=1.0", "--out", str(out)]) == 1
    assert "FAIL chi_square" in capsys.readouterr().err


def test_cli_config_file_and_flag_precedence(tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("sizes = 8, 16\nreplicas = 5\nseed = 2\neps = 0.5\n")
    out = tmp_path / "c.json"
    assert cli.main(["crossing-decay", "--config", str(cfgfile), "--replicas", "4", "--out", str(out)]) in (0, 1)
    doc = json.loads(out.read_text())
    assert doc["config"]["replicas"] == 4 and doc["config"]["sizes"] == [8, 16] and doc["config"]["seed"] == 2


def test_cli_timings_flag(tmp_path):
    out = tmp_path / "t.json"
    cli.main(["gibbs", "--replicas", "500", "--timings", "--out", str(out)])
    assert "timings" in json.loads(out.read_text())


def test_cli_csv(tmp_path):
    out = tmp_path / "c.csv"
    cli.main(["crossing-decay", "--sizes", "8,16", "--replicas", "3", "--format", "csv", "--out", str(out)])
    rows = list(csv.reader(io.StringIO(out.read_text())))
    assert rows[0] == ["experiment", "size", "replica", "statistic", "value"]
    assert len(rows) == 1 + 6
    assert {r[3] for r in rows[1:]} == {"sup_p0"}
    assert all(float(r[4]) > 0 for r in rows[1:])


@pytest.mark.parametrize(
    "argv",
    [
        ["crossing-decay", "--sizes", "8,16,32", "--replicas", "40"],
        ["burke", "--replicas", "3000", "--set", "chunk=1000"],
        ["walk-max", "--sizes", "100,1000", "--replicas", "600"],
    ],
    ids=["crossing", "burke", "walk"],
)
def test_reports_byte_identical_across_threads(tmp_path, argv):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    cli.main(argv + ["--threads", "1", "--out", str(a)])
    cli.main(argv + ["--threads", "2", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_replica_map_order_and_chunking():
    cfg = ExperimentConfig.default("gibbs", replicas=37, threads=1)
    single = replica_map(_square, cfg, 0, chunk=5)
    cfg2 = ExperimentConfig.default("gibbs", replicas=37, threads=2)
    assert single == replica_map(_square, cfg2, 0, chunk=7) == [r * r for r in range(37)]


def _square(cfg, size, r):
    return r * r


# verdict functions on synthetic statistics


def test_kpz_verdicts():
    params = {"exponent_low": 0.55, "exponent_high": 0.78, "miss_exponent_max": -2.0}
    stat = {"per_size": {"64": {"median_abs_deviation": 5.0}}}
    v = kpz_verdicts(stat, {"deviation_exponent": {"slope": 0.66}, "miss_exponent": {"slope": -3.0}}, params)
    assert all(v.values())
    v = kpz_verdicts(stat, {"deviation_exponent": {"slope": 0.5}, "miss_exponent": {"slope": -1.0}}, params)
    assert not v["deviation_exponent_in_window"] and not v["miss_exponent_below_max"]
    assert not kpz_verdicts({"per_size": {"64": {"median_abs_deviation": 40.0}}}, {}, params)["median_in_range_N64"]


def test_exit_verdicts():
    params = {"tail_exponent_max": -2.0, "balance_se": 4.0}
    s = {"total_mass_error": 0.0, "balance_difference": 0.01, "balance_se": 0.01}
    assert all(exit_verdicts({"per_size": {"512": s}}, {"512": {"slope": -2.5}}, params).values())
    s_bad = dict(s, balance_difference=0.1)
    v = exit_verdicts({"per_size": {"512": s_bad}}, {"512": {"slope": -1.5}}, params)
    assert not v["balance_N512"] and not v["tail_exponent_N512"]


def test_crossing_verdicts_within_two_se():
    params = {"monotone_se": 2.0}
    ps = {"32": {"mean_sup_p0": 0.50, "se": 0.01, "prob_sup_above_one": 0.0},
          "64": {"mean_sup_p0": 0.52, "se": 0.01, "prob_sup_above_one": 0.0}}
    assert crossing_verdicts({"per_size": ps}, params)["non_increasing_32_64"]  # 0.02 < 2 * 0.0141
    ps["64"]["mean_sup_p0"] = 0.54
    assert not crossing_verdicts({"per_size": ps}, params)["non_increasing_32_64"]


def test_burke_verdicts():
    stat = {"pvalues": {"a": 0.5, "b": 1e-5}, "per_test_level": 0.01 / 28, "involution_max_residual": 1e-15,
            "order_violations": 0}
    v = burke_verdicts(stat)
    assert v["a"] and not v["b"] and v["involution_residual"] and v["order"]


def test_gibbs_verdicts():
    stat = {"per_size": {"2": {"pvalue": 0.2, "kernel_invariance_error": 1e-15}}}
    assert all(gibbs_verdicts(stat, {"alpha": 0.001}).values())


def test_walk_verdicts_envelope_and_warning():
    params = {"se_slack": 2.0}
    ps = {"100": {"probability": 0.5, "se": 0.01, "envelope": 1.0},
          "1000": {"probability": 0.4, "se": 0.01, "envelope": 0.9}}
    stat = {"per_size": ps, "fitted_c": 0.5, "warnings": []}
    assert all(walk_verdicts(stat, params).values())
    ps["1000"]["probability"] = 0.6
    v = walk_verdicts(stat, params)
    assert not v["envelope_N1000"] and not v["decreasing_100_1000"]
    stat["warnings"] = ["drift"]
    assert set(walk_verdicts(stat, params)) == {"bounds_N100", "bounds_N1000"}


def test_walk_drift_warning_end_to_end():
    cfg = ExperimentConfig.default("walk-max", sizes=[100, 1000], replicas=250, params={"alpha": 0.3, "beta": 0.6})
    rep = run_experiment(cfg)
    assert len(rep.statistics["warnings"]) == 2
    assert set(rep.verdicts) == {"bounds_N100", "bounds_N1000"}


def test_interpolated_median():
    assert interpolated_median(np.array([0.2, 0.2, 0.6])) == pytest.approx(1 + 0.1 / 0.6)
    assert interpolated_median(np.array([1.0])) == pytest.approx(-0.5)
    assert interpolated_median(np.array([0.0, 1.0])) == pytest.approx(0.5)


# crossing sup against closed-form binomials on unit weights


def _log_binom_paths(a, b):
    dx, dy = b[0] - a[0], b[1] - a[1]
    return math.log(math.comb(dx + dy, dx))


def test_sup_crossing_unit_weight_oracle():
    n, eps = 8, 0.5
    f = WeightField((-n, -n), (n, n), np.zeros((2 * n + 1, 2 * n + 1)), 1.0)
    step = int(round(n ** (2 / 3)))
    best = 0.0
    for u in coarse_points(southwest_boundary(n, eps), step):
        for v in coarse_points(northeast_boundary(n, eps), step):
            lp = _log_binom_paths(u, (0, 0)) + _log_binom_paths((1, 0), v) - _log_binom_paths(u, v)
            best = max(best, math.exp(lp))
    assert sup_crossing(f, n, eps) == pytest.approx(best, rel=1e-12)


def test_coarse_points_keeps_both_ends():
    pts = list(range(10))
    assert coarse_points(pts, 4) == [0, 4, 8, 9]
    assert coarse_points(pts, 3) == [0, 3, 6, 9]


# Gibbs kernel edge cases


def test_gibbs_kernel_identity_and_full_segment():
    cfg = ExperimentConfig.default("gibbs", seed=4)
    field, paths, q = gibbs_instance(cfg, 3)
    n = len(paths[0]) - 1
    for k in range(n + 1):
        assert np.allclose(gibbs_kernel_matrix(field, paths, k, k), np.eye(len(paths)))
    full = gibbs_kernel_matrix(field, paths, 0, n)
    assert np.allclose(full, np.tile(q, (len(paths), 1)), atol=1e-14)
    for k in range(n + 1):
        for l in range(k, n + 1):
            K = gibbs_kernel_matrix(field, paths, k, l)
            assert np.allclose(K.sum(axis=1), 1.0) and np.allclose(q @ K, q, atol=1e-14)


def test_gibbs_resample_degenerate_segment_is_identity():
    cfg = ExperimentConfig.default("gibbs", seed=4)
    field, _, _ = gibbs_instance(cfg, 3)
    rng = RngStream(4, 1)
    x = sample_path(log_partition_forward(field, (0, 0)), field, (2, 2), rng)
    for k in range(len(x)):
        assert gibbs_resample(x, k, k, field, rng) == x
        if k + 1 < len(x):
            assert gibbs_resample(x, k, k + 1, field, rng) == x  # one step has a single choice
