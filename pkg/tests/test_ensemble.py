import numpy as np
import pytest

from phasecut.diffeo import MobiusParams, conformal_map
from phasecut.ensemble import (EnsembleConfig, MemberError, _vote_arrays, default_ensemble,
                               id_invariance_check, majority_vote, run_ensemble)
from phasecut.phaseshift import wrap
from phasecut.raster import read_pfm
from phasecut.unwrap import UnwrapConfig, unwrap_hierarchical
from surfaces import scaled_double_gaussian


@pytest.fixture(scope="module")
def dg64():
    truth = scaled_double_gaussian(64)
    return truth, truth.with_values(wrap(truth.values))


@pytest.mark.parametrize("cands, winner, tie", [
    ((7,), 7, False),
    ((1, 1, 2), 1, False),
    ((2, 2, 5), 2, False),
    ((0, 1, 2), 1, True),
    ((4, 4, 4), 4, False),
])
def test_majority_vote_examples(cands, winner, tie):
    assert majority_vote(cands) == (winner, tie)


def test_majority_vote_prefers_identity():
    assert majority_vote((2, 0, 1), identity_index=0) == (2, True)
    assert majority_vote((5, 1, 9, 1, 9), identity_index=0) == (1, True)


def test_majority_vote_empty():
    with pytest.raises(ValueError):
        majority_vote(())


def test_majority_vote_permutation_and_gauge(rng):
    for _ in range(200):
        c = rng.integers(-3, 4, 5)
        w, t = majority_vote(c)
        assert majority_vote(rng.permutation(c)) == (w, t)
        assert majority_vote(c + 7) == (w + 7, t)
        assert w in c


def test_vote_arrays_match_scalar(rng):
    k = rng.integers(-2, 3, (5, 6, 7))
    valid = rng.random((5, 6, 7)) > 0.2
    winner, tie, nvalid = _vote_arrays(k, valid, 0)
    for y in range(6):
        for x in range(7):
            members = np.nonzero(valid[:, y, x])[0]
            if len(members) == 0:
                continue
            idx = 0 if valid[0, y, x] else None
            w, t = majority_vote(k[members, y, x], idx)
            assert (winner[y, x], tie[y, x]) == (w, t)
            assert nvalid[y, x] == len(members)


def test_config_validation():
    with pytest.raises(ValueError):
        EnsembleConfig(members=2)
    with pytest.raises(ValueError):
        EnsembleConfig(members=3, mobius=(MobiusParams(0.1, 0j),))
    with pytest.raises(ValueError):
        EnsembleConfig(kind="affine")


def test_n1_identity_equals_hier(dg64):
    _, phi = dg64
    res, trace = run_ensemble(phi, EnsembleConfig(members=1))
    ref = unwrap_hierarchical(phi, UnwrapConfig())
    assert np.array_equal(res.k.labels, ref.k.labels)
    assert np.array_equal(res.phi_abs.values, ref.phi_abs.values)
    assert not trace.tie.any()


def test_default_ensemble_smooth(dg64, tmp_path):
    truth, phi = dg64
    res, trace = run_ensemble(phi, default_ensemble(phi.values.shape))
    m = res.phi_abs.mask
    d = (res.phi_abs.values - truth.values)[m]
    assert np.allclose(d - d[0], 0, atol=1e-9)
    assert trace.members == ["identity", "conformal", "ot"]
    # the winner is always one of the valid candidates
    hit = ((trace.candidates == trace.winner) & trace.valid).any(0)
    assert hit[trace.mask].all()
    trace.dump(tmp_path / "votes.pfm")
    data = read_pfm(tmp_path / "votes.pfm")
    assert data.shape == (64, 64, 3)


def test_ensemble_member_order_irrelevant(dg64):
    _, phi = dg64
    mob = (MobiusParams(0.2, 0.1 + 0.05j), MobiusParams(-0.4, -0.1j))
    a, _ = run_ensemble(phi, EnsembleConfig(3, "conformal", mob))
    b, _ = run_ensemble(phi, EnsembleConfig(3, "conformal", mob[::-1], threads=2))
    assert np.array_equal(a.k.labels, b.k.labels)


def test_id_invariance_same_map(dg64):
    _, phi = dg64
    g = conformal_map(phi.values.shape, MobiusParams(0.3, 0.1j))
    assert id_invariance_check(phi, g, g) == 1.0


def test_id_invariance_two_members(dg64):
    _, phi = dg64
    shape = phi.values.shape
    g1 = conformal_map(shape, MobiusParams(0.3, 0.12 + 0.08j))
    g2 = conformal_map(shape, MobiusParams(-0.5, -0.1 + 0.15j))
    assert id_invariance_check(phi, g1, g2) >= 0.999


def test_member_error_names_member(dg64):
    _, phi = dg64
    cfg = EnsembleConfig(3, "conformal", (MobiusParams(0.1, 0j), MobiusParams(0.2, 0j)))
    with pytest.raises(MemberError, match="member 1"):
        run_ensemble(phi, cfg, maps=[None, "not a map", None])
