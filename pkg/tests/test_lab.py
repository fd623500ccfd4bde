import csv
import io

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from anosov_lab.asymptotics import AsymptoticParams, predict_counts
from anosov_lab.configs import bundled_config_path, bundled_config_paths
from anosov_lab.hypertube import OffsetFunction
from anosov_lab.lab.cli import SUBCOMMANDS, main
from anosov_lab.lab.config import ConfigError, config_from_dict, emit_config, ingest_config
from anosov_lab.lab.experiment import (
    CountSeries,
    Experiment,
    ExperimentError,
    box_counts,
    holonomy_group,
    run_correlation_count,
    run_truncation_count,
    theta_fraction,
)
from anosov_lab.lab.fitting import FitError, compare_to_prediction, fit_exponent, poly_exponent
from anosov_lab.lab.report import COUNT_COLUMNS, PREDICTION_COLUMNS, counts_csv, emit_report, run_report
from anosov_lab.spectra import cartan_projection, evaluate, jordan_projection
from anosov_lab.words import GeneratorAlphabet, enumerate_conjugacy_classes, enumerate_words

from conftest import BUNDLED, hyperbolic


def small(name, L=8, **changes):
    return ingest_config(bundled_config_path(name)).replace(max_word_length=L, **changes)


@pytest.fixture(scope="module")
def small_schottky():
    return Experiment(small("schottky_pair", 8))


def sl2_config(L=7, **extra):
    raw = {
        "name": "sl2_length",
        "representations": [
            {"name": "schottky", "generators": [hyperbolic(2.0, 0.0).tolist(), hyperbolic(3.0, np.pi / 4).tolist()]}
        ],
        "phi_rows": [[1.0, -1.0]],
        "r": [1.0],
        "epsilon": [1.0],
        "T_grid": {"start": 0.513, "step": 0.5, "num": 30},
        "max_word_length": L,
        "shard_count": 2,
        "seed": 0,
        "cache_dir": "",
    }
    raw.update(extra)
    return config_from_dict(raw)


# -- configuration ------------------------------------------------------------


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_config_round_trip_is_bit_identical(name):
    path = bundled_config_path(name)
    cfg = ingest_config(path)
    text = emit_config(cfg)
    assert text == path.read_text()
    assert config_from_dict(yaml.safe_load(text), str(path.parent)) == cfg


def test_bundled_configs_are_listed():
    assert set(BUNDLED) <= set(bundled_config_paths())
    with pytest.raises(KeyError):
        bundled_config_path("nope")


def test_missing_epsilon_is_named(tmp_path):
    raw = yaml.safe_load(bundled_config_path("sl3_hilbert").read_text())
    del raw["epsilon"]
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(raw))
    with pytest.raises(ConfigError) as exc:
        ingest_config(path)
    assert exc.value.problems == ["missing field: epsilon"]


def test_malformed_fields_are_listed_individually():
    raw = yaml.safe_load(bundled_config_path("sl3_gaps").read_text())
    raw.update({"r": [1.0], "epsilon": [1.0, -2.0], "seed": "x", "colour": 3})
    with pytest.raises(ConfigError) as exc:
        config_from_dict(raw)
    problems = exc.value.problems
    assert "unknown field: colour" in problems
    assert "r: expected 2 entries" in problems
    assert "epsilon: entries must be positive" in problems
    assert "seed: expected an integer" in problems


def test_dimension_mismatch_is_reported():
    raw = yaml.safe_load(bundled_config_path("sl3_hilbert").read_text())
    raw["phi_rows"] = [[1.0, -1.0]]
    with pytest.raises(ConfigError, match="phi_rows: expected rows of length 3"):
        config_from_dict(raw)


def test_matrix_files_are_loaded_relative_to_config(tmp_path):
    np.savetxt(tmp_path / "a.txt", hyperbolic(2.0, 0.0))
    np.savetxt(tmp_path / "b.txt", hyperbolic(3.0, np.pi / 4))
    raw = yaml.safe_load(emit_config(sl2_config()))
    raw["representations"][0]["generators"] = ["a.txt", "b.txt"]
    (tmp_path / "cfg.yaml").write_text(yaml.safe_dump(raw))
    cfg = ingest_config(tmp_path / "cfg.yaml")
    assert np.allclose(cfg.reps()[0].generators[1], sl2_config().reps()[0].generators[1])


# -- counting -------------------------------------------------------------------


@given(
    st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=1, max_size=60),
    st.floats(0.2, 2.0),
    st.floats(0.1, 3.0),
)
@settings(max_examples=80, deadline=None)
def test_box_counts_match_direct_filter(points, r2, e1):
    y = np.array(points)
    r, eps = np.array([1.0, r2]), np.array([e1, 1.0])
    T = np.linspace(0, 8, 17)
    direct = [sum(all(r[i] * t <= p[i] <= r[i] * t + eps[i] for i in range(2)) for p in y) for t in T]
    assert box_counts(y, r, eps, T).tolist() == direct


def test_sl2_counts_match_independent_scan():
    cfg = sl2_config(L=7)
    series = run_correlation_count(cfg, "jordan")
    rep = cfg.reps()[0]
    lengths = [float(np.diff(jordan_projection(evaluate(rep, c.representative)))[0]) * -1
               for c in enumerate_conjugacy_classes(GeneratorAlphabet(2), 7)]
    expect = [sum(T <= x <= T + 1 for x in lengths) for T in cfg.T_grid]
    assert series.jordan_count.tolist() == expect

    cfg6 = sl2_config(L=6)
    series = run_correlation_count(cfg6, "cartan")
    norms = [-float(np.diff(cartan_projection(evaluate(rep, w)))[0]) for w in enumerate_words(GeneratorAlphabet(2), 6)]
    expect = [sum(T <= x <= T + 1 for x in norms) for T in cfg6.T_grid]
    assert series.cartan_count.tolist() == expect


def test_first_grid_point_below_spectrum_counts_zero():
    cfg = sl2_config(T_grid=[0.01, 0.02, 5.0], epsilon=[0.001])
    assert run_correlation_count(cfg, "jordan").jordan_count[:2].tolist() == [0, 0]


def test_widening_epsilon_never_decreases_counts():
    base = sl2_config()
    narrow = run_correlation_count(base, "jordan").jordan_count
    wide = run_correlation_count(base.replace(epsilon=(1.7,)), "jordan").jordan_count
    assert np.all(wide >= narrow)


def test_counts_are_censored_beyond_the_horizon(small_schottky):
    s = small_schottky.counts()
    assert np.isfinite(s.T_complete) and s.T_complete > 0
    assert np.array_equal(s.censored, s.T > s.T_complete)
    assert s.censored.any() and (~s.censored).any()


def test_shard_count_does_not_change_counts():
    a = Experiment(small("sl3_gaps", 7), shard_count=1).counts()
    b = Experiment(small("sl3_gaps", 7), shard_count=3).counts()
    for col in ("jordan_count", "cartan_count", "theta_count"):
        assert np.array_equal(getattr(a, col), getattr(b, col))


def test_reports_are_byte_identical(tmp_path):
    paths = []
    for k in range(2):
        files = emit_report(run_report(Experiment(small("schottky_pair", 7))), tmp_path / str(k))
        paths.append(files)
    for key in paths[0]:
        assert paths[0][key].read_bytes() == paths[1][key].read_bytes()


@pytest.mark.parametrize("t", [0.5, 2.0, 3.7])
def test_joint_scaling_preserves_counts(t):
    cfg = small("sl3_gaps", 7)
    scaled = cfg.replace(
        phi_rows=tuple(tuple(t * x for x in row) for row in cfg.phi_rows),
        r=tuple(t * x for x in cfg.r),
        epsilon=tuple(t * x for x in cfg.epsilon),
    )
    a, b = Experiment(cfg).counts(), Experiment(scaled).counts()
    for col in ("jordan_count", "cartan_count", "theta_count"):
        assert np.array_equal(getattr(a, col), getattr(b, col))


def test_truncation_difference_matches_box_counts(small_schottky):
    g = small_schottky.geometry
    for kind in ("jordan", "cartan"):
        box = small_schottky.count(kind).column(kind)
        diff = (
            run_truncation_count(small_schottky, g.b1, kind).column(kind)
            - run_truncation_count(small_schottky, g.b2, kind).column(kind)
        )
        extra = small_schottky.exceptional(kind).per_T
        assert np.array_equal(box, diff + extra)


def test_unit_slab_difference(small_schottky):
    exp = small_schottky
    h = exp.geometry.hypertube
    zero, one = OffsetFunction.constant(0.0, h.w_dim), OffsetFunction.constant(1.0, h.w_dim)
    diff = exp.truncation_count(one, "jordan").jordan_count - exp.truncation_count(zero, "jordan").jordan_count
    x = exp.classes.vectors
    dec = h.decompose(x)
    inside = h.cone.contains(x) & h.in_q(dec.q)
    t = dec.t[inside]
    expect = [int(np.sum((t > T) & (t <= T + 1))) for T in exp.T]
    assert diff.tolist() == expect


def test_truncation_counts_are_monotone(small_schottky):
    counts = small_schottky.truncation_count(small_schottky.geometry.b1, "jordan").jordan_count
    assert np.all(np.diff(counts) >= 0)


def test_improper_phi_is_rejected():
    cfg = small("sl3_hilbert", 6).replace(phi_rows=((1.0, -2.0, 1.0),))
    with pytest.raises(ExperimentError):
        Experiment(cfg).count("jordan")


def test_r_outside_projected_cone_is_rejected():
    cfg = small("sl2_sl3_product", 6).replace(r=(1.0, 40.0))
    with pytest.raises(ExperimentError, match="interior"):
        Experiment(cfg).count("jordan")


# -- holonomy -------------------------------------------------------------------


def test_holonomy_group_generation():
    pats = np.array([[1, -1, -1], [1, 1, 1]])
    assert holonomy_group(pats, (3,)) == {(1, 1, 1), (1, -1, -1)}
    pats = np.array([[1, -1, -1], [1, 1, -1]])
    group = holonomy_group(pats, (3,))
    assert group == {(1, 1, 1), (1, -1, -1), (1, 1, -1), (1, -1, 1)}
    assert theta_fraction([(1, 1, 1)], group) == 0.25
    assert theta_fraction(None, group) == 1.0
    prod = holonomy_group(np.array([[1, 1, 1, -1, -1]]), (2, 3))
    assert prod == {(1, 1, 1, 1, 1), (1, 1, 1, -1, -1)}


def test_schottky_holonomy_is_trivial(small_schottky):
    assert small_schottky.holonomy() == {(1, 1, 1, 1)}
    assert small_schottky.theta_fraction() == 1.0
    s = small_schottky.counts()
    assert np.array_equal(s.theta_count, s.jordan_count)


# -- fitting --------------------------------------------------------------------


def synthetic_series(delta, d, T=None, T_complete=np.inf):
    T = np.linspace(2, 30, 40) if T is None else T
    p = AsymptoticParams(delta)
    j = predict_counts("jordan", p, T, d, c=3.0)
    c = predict_counts("cartan", p, T, d, c=2.0)
    return CountSeries(T, j, c, j, T_complete=T_complete)


def test_fit_recovers_exponent_exactly():
    s = synthetic_series(0.7, 2)
    for kind in ("jordan", "cartan", "theta"):
        fit = fit_exponent(s, kind, 2)
        assert abs(fit.delta_hat - 0.7) < 1e-9
        assert fit.rms_residual < 1e-9
    assert poly_exponent("jordan", 2) - poly_exponent("cartan", 2) == 1


def test_censored_points_do_not_move_the_fit():
    T = np.linspace(2, 30, 40)
    clean = synthetic_series(0.7, 2, T)
    fit = fit_exponent(clean, "cartan", 2, window=(10, 20))
    noisy = synthetic_series(0.7, 2, T, T_complete=20.0)
    noisy.cartan_count = np.where(T > 20, 1.0, noisy.cartan_count)
    assert fit_exponent(noisy, "cartan", 2, window=(10, 30)).delta_hat == pytest.approx(fit.delta_hat, abs=1e-12)


def test_fit_needs_four_points():
    s = synthetic_series(0.7, 1, np.array([1.0, 2.0, 3.0]))
    with pytest.raises(FitError):
        fit_exponent(s, "jordan", 1)
    with pytest.raises(FitError):
        fit_exponent(synthetic_series(0.7, 1), "jordan", 1, window=(100, 200))


def test_fit_bound_flag():
    s = synthetic_series(0.7, 2)
    assert fit_exponent(s, "cartan", 2, bound=0.68).bound_satisfied
    assert not fit_exponent(s, "cartan", 2, bound=0.6).bound_satisfied
    assert fit_exponent(s, "cartan", 2, bound=0.8).margin == pytest.approx(0.1)


def test_comparison_ratios_are_one_on_exact_predictions():
    T = np.linspace(2, 30, 40)
    p = AsymptoticParams(0.6, kappa_v=1.0, m_X_norm=1.0)
    unit_j = predict_counts("correlation-jordan", p, T, 2, c_b1=1.0, c_b2=0.25)
    unit_c = predict_counts("correlation-cartan", p, T, 2, c_b1=1.0, c_b2=0.25)
    kappa, m = 3.0, 4.0
    series = CountSeries(T, kappa * unit_j, kappa / m * unit_c)
    cmp = compare_to_prediction(series, unit_j, unit_c)
    assert np.allclose(cmp.ratio_jordan, 1) and np.allclose(cmp.ratio_cartan, 1)
    assert cmp.kappa == pytest.approx(kappa) and cmp.m_norm == pytest.approx(m)
    assert cmp.non_falsifiable
    assert cmp.summary()["jordan_max_deviation"] < 1e-12


# -- report files ---------------------------------------------------------------


def test_csv_schemas(small_schottky):
    art = run_report(small_schottky)
    rows = list(csv.reader(io.StringIO(counts_csv(art.series))))
    assert tuple(rows[0]) == COUNT_COLUMNS == ("T", "jordan_count", "cartan_count", "theta_count", "censored")
    assert len(rows) == len(small_schottky.T) + 1
    assert {r[4] for r in rows[1:]} <= {"0", "1"}
    assert all(int(r[1]) >= 0 and int(r[2]) >= 0 for r in rows[1:])


def test_report_files(tmp_path, small_schottky):
    files = emit_report(run_report(small_schottky), tmp_path)
    assert set(files) == {"counts", "summary", "config", "predictions"}
    head = files["predictions"].read_text().splitlines()[0]
    assert tuple(head.split(",")) == PREDICTION_COLUMNS
    summary = files["summary"].read_text()
    for key in ("v_star:", "delta_model:", "bound_min_delta_r:", "holonomy_group_order: 1", "T_complete:"):
        assert key in summary
    assert ingest_config(files["config"]) == small_schottky.cfg


# -- command line ---------------------------------------------------------------


@pytest.fixture(scope="module")
def cli_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.yaml"
    emit_config(small("schottky_pair", 7, shard_count=2), path)
    return path


@pytest.mark.parametrize("command", SUBCOMMANDS)
def test_cli_subcommands(command, cli_config, tmp_path, capsys):
    extra = ["--samples", "500"] if command == "tube" else []
    assert main([command, "--config", str(cli_config), "--out", str(tmp_path)] + extra) == 0
    printed = capsys.readouterr().out.split()
    assert printed and all((tmp_path / p.split("/")[-1]).exists() for p in printed)


def test_cli_uses_cache_dir(cli_config, tmp_path, capsys):
    cache = tmp_path / "cache"
    assert main(["count", "--config", str(cli_config), "--out", str(tmp_path), "--cache-dir", str(cache)]) == 0
    first = (tmp_path / "schottky_pair-counts.csv").read_bytes()
    assert len(list(cache.glob("spectra-*.txt"))) == 2
    assert main(["count", "--config", str(cli_config), "--out", str(tmp_path), "--cache-dir", str(cache), "--shards", "5"]) == 0
    assert (tmp_path / "schottky_pair-counts.csv").read_bytes() == first


def test_cli_reports_config_errors(tmp_path, capsys):
    raw = yaml.safe_load(bundled_config_path("sl3_hilbert").read_text())
    del raw["epsilon"]
    del raw["seed"]
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(raw))
    assert main(["count", "--config", str(path)]) == 2
    err = capsys.readouterr().err.splitlines()
    assert err == ["config error: missing field: epsilon", "config error: missing field: seed"]


def test_cli_reports_experiment_errors(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    emit_config(small("sl2_sl3_product", 6).replace(r=(1.0, 40.0)), path)
    assert main(["count", "--config", str(path), "--out", str(tmp_path)]) == 1
    assert "interior" in capsys.readouterr().err
