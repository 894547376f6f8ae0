import itertools

import numpy as np
import pytest

from oracles import edmonds_karp, random_network
from phasecut.mincut import (FlowNetwork, SubmodularityError, binary_energy, build_grid_network,
                             cut_capacity, solve_maxflow)


def random_tables(rng, shape):
    t = rng.normal(size=shape + (2, 2))
    # make E01 + E10 >= E00 + E11
    gap = t[..., 0, 0] + t[..., 1, 1] - t[..., 0, 1] - t[..., 1, 0]
    t[..., 0, 1] += np.maximum(gap, 0) + rng.random(shape)
    return t


def test_single_pixel():
    net, const = build_grid_network(np.ones((1, 1), bool), np.array([[[0.0, 5.0]]]),
                                    np.zeros((1, 0, 2, 2)), np.zeros((0, 1, 2, 2)))
    flow, side = solve_maxflow(net)
    assert side[0, 0] == 0 and flow + const == 0


def test_two_pixel_potts():
    unary = np.array([[[0.0, 3.0], [2.0, 0.0]]])
    pot = np.array([[[[0.0, 10.0], [10.0, 0.0]]]])
    mask = np.ones((1, 2), bool)
    net, const = build_grid_network(mask, unary, pot, np.zeros((0, 2, 2, 2)))
    flow, side = solve_maxflow(net)
    energies = {lab: binary_energy(mask, unary, pot, np.zeros((0, 2, 2, 2)), np.array([lab]))
                for lab in itertools.product((0, 1), repeat=2)}
    assert flow + const == pytest.approx(min(energies.values()))
    assert tuple(side[0]) == (0, 0)  # 0 + 2 beats 3 + 0 and any split pays 10


def test_all_zero_and_bottleneck():
    flow, _ = solve_maxflow(FlowNetwork.zeros(3, 3))
    assert flow == 0
    net = FlowNetwork(np.array([[3.0, 0]]), np.array([[0, 7.0]]),
                      np.array([[[100.0, 0]]]), np.zeros((0, 2, 2)))
    assert solve_maxflow(net)[0] == 3


@pytest.mark.parametrize("seed", range(100))
def test_3x3_submodular_vs_bruteforce(seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((3, 3)) > 0.1
    unary = rng.normal(size=(3, 3, 2))
    ht, vt = random_tables(rng, (3, 2)), random_tables(rng, (2, 3))
    net, const = build_grid_network(mask, unary, ht, vt)
    flow, side = solve_maxflow(net)
    best = min(binary_energy(mask, unary, ht, vt, np.array(b).reshape(3, 3))
               for b in itertools.product((0, 1), repeat=9))
    assert flow + const == pytest.approx(best, abs=1e-9)
    assert binary_energy(mask, unary, ht, vt, side) == pytest.approx(best, abs=1e-9)


def test_energy_identity_every_labeling(rng):
    mask = np.ones((2, 3), bool)
    unary = rng.normal(size=(2, 3, 2))
    ht, vt = random_tables(rng, (2, 2)), random_tables(rng, (1, 3))
    net, const = build_grid_network(mask, unary, ht, vt)
    for b in itertools.product((0, 1), repeat=6):
        lab = np.array(b).reshape(2, 3)
        assert cut_capacity(net, lab) + const == pytest.approx(
            binary_energy(mask, unary, ht, vt, lab), abs=1e-12)


@pytest.mark.parametrize("seed", range(200))
def test_4x4_vs_edmonds_karp(seed):
    rng = np.random.default_rng(10_000 + seed)
    net = random_network(rng, 4, 4)
    flow, side = solve_maxflow(net)
    assert flow == pytest.approx(edmonds_karp(net), abs=1e-9)
    assert cut_capacity(net, side) == pytest.approx(flow, abs=1e-9)


def test_infinite_terminal_links(rng):
    net = random_network(rng, 4, 5, p_inf=0.2)
    flow, side = solve_maxflow(net)
    assert np.all(side[np.isinf(net.source_cap)] == 0)
    assert np.isfinite(flow)


def test_non_submodular_rejected():
    t = np.zeros((1, 1, 2, 2))
    t[0, 0, 0, 0] = 5.0
    with pytest.raises(SubmodularityError, match="x=0, y=0"):
        build_grid_network(np.ones((1, 2), bool), np.zeros((1, 2, 2)), t, np.zeros((0, 2, 2, 2)))


def test_negative_capacity_rejected():
    with pytest.raises(ValueError):
        FlowNetwork(-np.ones((2, 2)), np.zeros((2, 2)), np.zeros((2, 1, 2)), np.zeros((1, 2, 2)))
