import numpy as np
import pytest

from phasecut.baselines import (compute_residues, least_squares_phase, loop_circulation,
                                unwrap_goldstein, unwrap_itoh, unwrap_least_squares,
                                unwrap_quality_guided)
from phasecut.phaseshift import wrap
from phasecut.raster import ScalarField
from oracles import boundary_circulation

TWO_PI = 2 * np.pi


def gauge_rms(est, truth, mask=None):
    m = np.ones(truth.shape, bool) if mask is None else mask
    d = (est - truth)[m]
    d = d - TWO_PI * np.rint(np.median(d) / TWO_PI)
    return float(np.sqrt(np.mean(d ** 2)))


def vortex(h=9, w=9, cx=4.5, cy=4.5):
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    return np.arctan2(yy - cy, xx - cx)


def test_itoh_ramp():
    xx = np.tile(np.arange(40.0), (30, 1))
    truth = 0.3 * xx + 0.1
    res = unwrap_itoh(ScalarField(wrap(truth)))
    assert gauge_rms(res.phi_abs.values, truth) < 1e-12


def test_itoh_smooth(smooth):
    truth, phi = smooth
    res = unwrap_itoh(phi)
    assert gauge_rms(res.phi_abs.values, truth.values) < 1e-10


def test_residues_smooth_are_zero(smooth):
    _, phi = smooth
    assert not compute_residues(phi).charge.any()


def test_vortex_single_residue():
    res = compute_residues(ScalarField(vortex()))
    assert res.positions.tolist() == [[4, 4]]
    assert res.charge[4, 4] == 1


def test_dipole_total_zero():
    phi = wrap(vortex(12, 16, 4.5, 5.5) - vortex(12, 16, 10.5, 5.5))
    res = compute_residues(ScalarField(phi))
    assert np.abs(res.charge).sum() == 2
    assert res.total == 0


def test_residue_theorem(rng):
    for _ in range(100):
        h, w = rng.integers(2, 12, 2)
        phi = rng.uniform(-np.pi, np.pi, (h, w))
        enclosed = np.rint(loop_circulation(phi) / TWO_PI).sum()
        assert boundary_circulation(phi) == pytest.approx(TWO_PI * enclosed, abs=1e-9)


def test_residues_respect_mask():
    m = np.ones((9, 9), bool)
    m[4, 4] = False
    res = compute_residues(ScalarField(vortex(), m))
    assert not res.charge.any()


def test_goldstein_residue_free_equals_itoh(smooth):
    _, phi = smooth
    g = unwrap_goldstein(phi)
    i = unwrap_itoh(phi)
    assert g.info["cuts"] == 0
    assert g.phi_abs.mask.all()
    assert gauge_rms(g.phi_abs.values, i.phi_abs.values) < 1e-12


def test_goldstein_dipole_loops_consistent():
    truth = vortex(16, 20, 6.5, 7.5) - vortex(16, 20, 12.5, 7.5)
    phi = ScalarField(wrap(truth))
    res = unwrap_goldstein(phi)
    assert res.info["cuts"] == 1
    out = res.phi_abs
    assert np.allclose(wrap(out.values - phi.values)[out.mask], 0, atol=1e-12)
    # every elementary loop of valid pixels that avoids the cut integrates to zero
    m = out.mask
    lm = m[:-1, :-1] & m[:-1, 1:] & m[1:, 1:] & m[1:, :-1]
    v = out.values
    a, b, c, d = v[:-1, :-1], v[:-1, 1:], v[1:, 1:], v[1:, :-1]
    jumps = np.maximum.reduce([abs(b - a), abs(c - b), abs(d - c), abs(a - d)])
    assert lm.sum() > 0.8 * lm.size
    assert (jumps[lm] < np.pi).mean() > 0.95


def test_goldstein_congruent_on_noise(rng):
    truth = 12 * np.exp(-((np.mgrid[0:40, 0:40] - 20.0) ** 2).sum(0) / 150)
    phi = ScalarField(wrap(truth + rng.normal(0, 0.8, truth.shape)))
    res = unwrap_goldstein(phi)
    m = res.phi_abs.mask
    assert res.info["residues"] > 0
    assert np.allclose(wrap(res.phi_abs.values - phi.values)[m], 0, atol=1e-9)


def test_qguide_smooth(smooth):
    truth, phi = smooth
    res = unwrap_quality_guided(phi)
    assert gauge_rms(res.phi_abs.values, truth.values) < 1e-10


def test_qguide_priority_contract(rng):
    phi = ScalarField(wrap(rng.normal(0, 1.5, (14, 17)).cumsum(1)))
    res = unwrap_quality_guided(phi, record_order=True)
    order = res.info["order"]
    assert len(order) == phi.values.size - 1
    # the popped pixel is always the best one on the frontier
    for popped, frontier in order:
        assert popped >= frontier


def test_qguide_monotone_with_explicit_quality():
    # a quality that falls off from the centre: popped values never increase
    yy, xx = np.mgrid[0:11, 0:11]
    q = -np.hypot(yy - 5, xx - 5) + 0.001 * (yy * 11 + xx) / 121
    phi = ScalarField(np.zeros((11, 11)))
    order = unwrap_quality_guided(phi, quality=q, record_order=True).info["order"]
    pops = [p for p, _ in order]
    assert all(b <= a for a, b in zip(pops, pops[1:]))


def test_lsq_matches_itoh_residue_free(smooth):
    truth, phi = smooth
    res = unwrap_least_squares(phi)
    assert gauge_rms(res.phi_abs.values, unwrap_itoh(phi).phi_abs.values) < 1e-6
    assert res.info["congruence_rms"] < 1e-6


def test_lsq_dense_oracle(rng):
    h = w = 16
    phi = rng.uniform(-np.pi, np.pi, (h, w))
    n = h * w
    rows, rhs = [], []
    idx = np.arange(n).reshape(h, w)
    for (a, b) in ((idx[:, :-1], idx[:, 1:]), (idx[:-1], idx[1:])):
        for i, j in zip(a.ravel(), b.ravel()):
            r = np.zeros(n)
            r[j], r[i] = 1, -1
            rows.append(r)
            rhs.append(wrap(phi.ravel()[j] - phi.ravel()[i]))
    D = np.array(rows)
    g = np.array(rhs)
    ref, *_ = np.linalg.lstsq(D, g, rcond=None)
    ours = least_squares_phase(phi).ravel()
    ref = ref - ref.mean()
    ours = ours - ours.mean()
    assert np.max(np.abs(ours - ref)) < 1e-8
    # and it is a minimizer: the residual is orthogonal to the column space
    assert np.max(np.abs(D.T @ (D @ ours - g))) < 1e-8
