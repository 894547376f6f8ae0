import json
import math

import jsonschema
import numpy as np
import pytest

from phasecut.phaseshift import wrap
from phasecut.raster import ScalarField
from phasecut.simbench import (REPORT_SCHEMA, BenchConfig, DoubleGaussianSpec, GaussianComponent,
                               NoiseSpec, OracleSizeError, add_noise, brute_force_unwrap,
                               count_errors, gen_double_gaussian, l2_error, run_benchmark,
                               strip_timing)
from phasecut.unwrap import UnwrapConfig, unwrap_graphcut

TWO_PI = 2 * np.pi


def small_surface(size=48):
    f = size / 512
    s = 0.09 * size
    return DoubleGaussianSpec(size, size, (
        GaussianComponent(0.35 * size, 0.5 * size, s, 14 * TWO_PI * f),
        GaussianComponent(0.65 * size, 0.5 * size, s, -10 * TWO_PI * f)))


def test_gaussian_center_and_sigma():
    c = GaussianComponent(10.0, 7.0, 3.0, 5.0)
    phi = gen_double_gaussian(DoubleGaussianSpec(20, 15, (c,))).values
    assert phi[7, 10] == 5.0
    assert phi[7, 13] == pytest.approx(5.0 * math.exp(-0.5), rel=1e-12)
    assert phi[10, 10] == pytest.approx(5.0 * math.exp(-0.5), rel=1e-12)


def test_default_spec_gradient():
    # the documented defaults give a slope near 1.16 rad/px, under pi
    spec = DoubleGaussianSpec()
    phi = gen_double_gaussian(spec).values
    # the bumps add between the centres, so the field slope exceeds one component's
    assert np.abs(np.diff(phi, axis=0)).max() == pytest.approx(spec.max_gradient(), rel=0.01)
    assert spec.max_gradient() <= np.abs(np.diff(phi, axis=1)).max() < np.pi
    assert np.ptp(phi) / TWO_PI > 20


def test_spec_validation():
    with pytest.raises(ValueError):
        GaussianComponent(0, 0, 0.0, 1.0)
    with pytest.raises(ValueError):
        DoubleGaussianSpec(1, 5)
    with pytest.raises(ValueError):
        NoiseSpec(-0.1)


def test_noise_zero_identity():
    truth = gen_double_gaussian(small_surface())
    assert np.array_equal(add_noise(truth, NoiseSpec(0.0, 3)).values, truth.values)


def test_noise_deterministic_and_unbiased():
    zero = ScalarField(np.zeros((512, 512)))
    a = add_noise(zero, NoiseSpec(0.5, 11)).values
    b = add_noise(zero, NoiseSpec(0.5, 11)).values
    assert np.array_equal(a, b)
    assert abs(a.mean()) < 3 * 0.5 / 512
    assert a.std() == pytest.approx(0.5, rel=0.01)


def test_l2_examples():
    truth = ScalarField(np.linspace(0, 30, 64).reshape(8, 8))
    assert l2_error(truth, truth) == 0
    assert l2_error(truth.with_values(truth.values + TWO_PI), truth) == pytest.approx(0, abs=1e-12)
    half = truth.values.copy()
    half.flat[::2] += 1.0
    assert l2_error(truth.with_values(half), truth) == pytest.approx(math.sqrt(0.5), rel=1e-12)


def test_l2_gauge_invariance(rng):
    truth = ScalarField(rng.normal(0, 3, (10, 12)))
    est = truth.with_values(truth.values + rng.normal(0, 0.2, (10, 12)))
    e = l2_error(est, truth)
    for c in (-3, 1, 5):
        assert l2_error(est.with_values(est.values + TWO_PI * c), truth) == pytest.approx(e, abs=1e-12)


def test_l2_empty_mask_raises():
    t = ScalarField(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        l2_error(t, t, np.zeros((3, 3), bool))


def test_count_errors():
    truth = ScalarField(np.zeros((4, 4)))
    est = truth.values + TWO_PI * 2
    est[0, 0] += TWO_PI
    assert count_errors(truth.with_values(est), truth) == 1


def test_brute_force_examples():
    k, e = brute_force_unwrap(ScalarField(np.full((3, 3), 1.3)), 2)
    assert not k.labels.any() and e == 0
    # the 1x2 example of phi=(3, -3), duplicated into two rows
    k, e = brute_force_unwrap(ScalarField(np.array([[3.0, -3.0], [3.0, -3.0]])), 2)
    assert k.labels.tolist() == [[0, 1], [0, 1]]
    assert e == pytest.approx(2 * 0.0801, abs=1e-3)


def test_brute_force_refuses_large():
    with pytest.raises(OracleSizeError):
        brute_force_unwrap(ScalarField(np.zeros((4, 4))), 2)
    with pytest.raises(OracleSizeError):
        brute_force_unwrap(ScalarField(np.zeros((2, 2))), 3)


def test_brute_force_lower_bound(rng):
    for _ in range(10):
        phi = ScalarField(rng.uniform(-np.pi, np.pi, (3, 3)))
        _, e = brute_force_unwrap(phi, 2)
        assert e <= unwrap_graphcut(phi, UnwrapConfig(k_max=2)).energy + 1e-9


@pytest.fixture(scope="module")
def table2_clean():
    cfg = BenchConfig(trials=2, noise_sigma=0.0, surface=small_surface(48))
    return run_benchmark("table2", cfg)


def test_table2_noiseless(table2_clean):
    rows = [r for r in table2_clean.rows if r["trial"] != "avg"]
    assert len(rows) == 2 * 7
    for r in rows:
        assert r["l2"] <= 1e-6, r
        assert r["count_errors"] == 0


def test_report_schema_and_timing_strip(table2_clean):
    doc = json.loads(table2_clean.to_json())
    jsonschema.validate(doc, REPORT_SCHEMA)
    bare = json.loads(table2_clean.to_json(include_timing=False))
    assert all("seconds" not in r for r in bare["rows"])
    assert bare == strip_timing(doc)
    assert "trial 1" in table2_clean.table()


def test_table2_noisy_ordering_smoke():
    cfg = BenchConfig(trials=1, noise_sigma=0.3, surface=small_surface(48),
                      methods=("itoh", "graphcut", "goldstein"))
    rep = run_benchmark("table2", cfg)
    avg = rep.summary["avg_l2"]
    assert avg["graphcut"] <= avg["itoh"]
    assert all(np.isfinite(v) for v in avg.values())


def test_table1_speedup_arithmetic(tmp_path):
    cfg = BenchConfig(size=64, periods=(4, 8), repeats=1, levels=2)
    rep = run_benchmark("table1", cfg)
    jsonschema.validate(json.loads(rep.to_json()), REPORT_SCHEMA)
    for p in (4, 8):
        t = {r["method"]: r for r in rep.rows if r["period"] == p}
        assert t["graphcut"]["l2"] < 1e-6 and t["hier"]["l2"] < 1e-6
        assert rep.summary["speedup"][str(p)] == pytest.approx(
            t["graphcut"]["seconds"] / t["hier"]["seconds"])
    js, txt = rep.write(tmp_path / "t1")
    assert json.loads(open(js).read())["suite"] == "table1"
    assert open(txt).read().startswith(" periods")


def test_unknown_suite_and_method():
    with pytest.raises(ValueError):
        run_benchmark("table3", BenchConfig())
    with pytest.raises(ValueError):
        BenchConfig(methods=("maskcut",))
