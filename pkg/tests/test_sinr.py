import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sinrcolor import (PhysicalParams, Point, TransmissionIntent, build_topology,
                       proximity_range, resolve_slot, save_topology,
                       load_positions, sinr_feasible, transmission_range)
from sinrcolor.sinr import Channel


# ---------------------------------------------------------------------------
# Ranges
# ---------------------------------------------------------------------------

def test_transmission_range_all_ones():
    p = PhysicalParams(alpha=3, beta=1, noise=1, power=1, epsilon=0.1, r_b=0.5)
    assert transmission_range(p) == 1.0


def test_transmission_range_closed_form():
    p = PhysicalParams(alpha=3, beta=1.5, noise=0.1, power=1, epsilon=0.1, r_b=1.0)
    assert transmission_range(p) == pytest.approx(1.8820720577620569, rel=1e-12)
    p = PhysicalParams(alpha=4, beta=2, noise=1, power=16, epsilon=0.1, r_b=1.0)
    assert transmission_range(p) == pytest.approx(8.0 ** 0.25, rel=1e-12)


def test_proximity_range_closed_form():
    p = PhysicalParams(alpha=3, beta=1.5, noise=0.001, power=10, epsilon=0.1, r_b=1.0)
    assert proximity_range(p) == pytest.approx(648.0, rel=1e-12)
    p = PhysicalParams(alpha=4, beta=1.5, noise=1, power=4, epsilon=0.1, r_b=1.0)
    assert proximity_range(p) == pytest.approx(math.sqrt(972.0), rel=1e-12)


def test_proximity_range_scales_linearly_in_rb():
    p1 = PhysicalParams(alpha=4, beta=1.5, noise=1, power=4, epsilon=0.1, r_b=1.0)
    p2 = PhysicalParams(alpha=4, beta=1.5, noise=0.0625, power=4, epsilon=0.1, r_b=2.0)
    assert proximity_range(p2) == pytest.approx(2 * proximity_range(p1), rel=1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        PhysicalParams(alpha=2.0, beta=1, noise=1, power=1, epsilon=0.1, r_b=0.1)
    with pytest.raises(ValueError):
        PhysicalParams(alpha=3, beta=-1, noise=1, power=1, epsilon=0.1, r_b=0.1)
    with pytest.raises(ValueError):
        PhysicalParams(alpha=3, beta=1, noise=1, power=1, epsilon=1.5, r_b=0.1)
    # r_b beyond (1-epsilon) * r_T leaves no spatial reuse
    with pytest.raises(ValueError):
        PhysicalParams(alpha=3, beta=1, noise=1, power=1, epsilon=0.1, r_b=0.95)


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------

def test_two_nodes_in_range(params, pair_topology):
    assert pair_topology.neighbors[0] == (1,)
    assert pair_topology.neighbors[1] == (0,)
    assert pair_topology.delta == 1


def test_two_nodes_out_of_range(params):
    topo = build_topology({0: (0, 0), 1: (1.5, 0)}, params)
    assert topo.delta == 0
    assert topo.neighbors[0] == ()


def test_line_is_path(line_topology):
    assert line_topology.neighbors[1] == (0, 2)
    assert line_topology.neighbors[0] == (1,)
    assert line_topology.delta == 2


def test_colocated_nodes_warn(params):
    with pytest.warns(UserWarning, match="colocated"):
        build_topology({0: (0, 0), 1: (0, 0)}, params)


def test_bad_positions(params):
    with pytest.raises(ValueError):
        build_topology({}, params)
    with pytest.raises(ValueError):
        build_topology({0: (math.nan, 0)}, params)


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)),
                min_size=1, max_size=12))
@settings(max_examples=60, deadline=None)
def test_topology_symmetric_no_self_loops(points):
    p = PhysicalParams(alpha=4.0, beta=1.5, noise=1.0, power=4.0, epsilon=0.1, r_b=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        topo = build_topology({i: q for i, q in enumerate(points)}, p)
    for v in topo.ids:
        assert v not in topo.neighbors[v]
        for w in topo.neighbors[v]:
            assert v in topo.neighbors[w]
    assert topo.delta_a >= topo.delta


def test_topology_file_roundtrip(tmp_path, params, line_topology):
    path = tmp_path / "topo.txt"
    save_topology(line_topology, path)
    positions, rb = load_positions(path)
    assert rb == line_topology.r_b
    assert positions == line_topology.positions


def test_topology_file_requires_header(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("0 1 2\n")
    with pytest.raises(ValueError, match="header"):
        load_positions(bad)


# ---------------------------------------------------------------------------
# sinr_feasible
# ---------------------------------------------------------------------------

def noise_only_params():
    return PhysicalParams(alpha=3, beta=1.5, noise=0.1, power=1, epsilon=0.1, r_b=1.0)


def test_feasible_noise_only():
    p = noise_only_params()
    topo = build_topology({0: (0, 0), 1: (1.0, 0)}, p)
    # SINR = (1/1) / 0.1 = 10 >= 1.5
    assert sinr_feasible(0, 1, {0}, topo, p) is True


def test_feasible_killed_by_equidistant_interferer():
    p = noise_only_params()
    topo = build_topology({0: (0, 0), 1: (1.0, 0), 2: (1.0, 1.0)}, p)
    # interferer at distance 1 from the receiver: 1 / 1.1 < 1.5
    assert sinr_feasible(0, 1, {0, 2}, topo, p) is False


def test_feasible_rejects_receiver_transmitting():
    p = noise_only_params()
    topo = build_topology({0: (0, 0), 1: (1.0, 0)}, p)
    with pytest.raises(ValueError):
        sinr_feasible(0, 1, {0, 1}, topo, p)
    with pytest.raises(ValueError):
        sinr_feasible(0, 0, {0}, topo, p)


def test_feasible_colocated_cases():
    p = noise_only_params()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        topo = build_topology({0: (0, 0), 1: (1.0, 0), 2: (1.0, 0)}, p)
    # colocated interferer always kills reception
    assert sinr_feasible(0, 1, {0, 2}, topo, p) is False
    # colocated sender is degenerate
    with pytest.raises(ValueError):
        sinr_feasible(2, 1, {2}, topo, p)


@given(st.data())
@settings(max_examples=60, deadline=None)
def test_feasible_monotone_in_interferers(data):
    p = PhysicalParams(alpha=4.0, beta=1.5, noise=1.0, power=4.0, epsilon=0.1, r_b=1.0)
    n = data.draw(st.integers(3, 7))
    pts = {i: (data.draw(st.floats(0, 3)), data.draw(st.floats(0, 3)))
           for i in range(n)}
    pts[0], pts[1] = (0.0, 0.0), (0.8, 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        topo = build_topology(pts, p)
    if topo.distance(0, 1) == 0:
        return
    others = [i for i in range(2, n) if topo.distance(i, 1) > 0]
    subset = set(data.draw(st.sets(st.sampled_from(others)))) if others else set()
    superset = set(others)
    if not sinr_feasible(0, 1, {0} | subset, topo, p):
        assert not sinr_feasible(0, 1, {0} | superset, topo, p)


# ---------------------------------------------------------------------------
# resolve_slot
# ---------------------------------------------------------------------------

def test_resolve_single_transmitter(pair_topology, params):
    out = resolve_slot([TransmissionIntent(0, 1.0, "m")], pair_topology, params,
                       np.random.default_rng(0))
    assert out.transmitted == {0}
    assert out.delivered == {1: [(0, "m")]}


def test_resolve_probability_zero(pair_topology, params):
    out = resolve_slot([TransmissionIntent(0, 0.0, "m")], pair_topology, params,
                       np.random.default_rng(0))
    assert out.transmitted == set()
    assert out.delivered == {}


def test_resolve_colocated_transmitters_kill_each_other():
    p = PhysicalParams(alpha=3, beta=1.0, noise=0.1, power=1, epsilon=0.1, r_b=1.5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        topo = build_topology({0: (0, 0), 1: (0, 0), 2: (1.5, 0)}, p)
    # each signal equals the other's interference: SINR = s/(s+N) < 1 = beta
    out = resolve_slot([TransmissionIntent(0, 1.0, "a"), TransmissionIntent(1, 1.0, "b")],
                       topo, p, np.random.default_rng(0))
    assert out.transmitted == {0, 1}
    assert out.delivered == {}
    # sanity: alone, the transmission would have been decodable
    out = resolve_slot([TransmissionIntent(0, 1.0, "a")], topo, p,
                       np.random.default_rng(0))
    assert 2 in out.delivered


def test_resolve_respects_rssi_range():
    # receiver between r_b and r_T hears nothing despite a clean channel
    p = PhysicalParams(alpha=3, beta=1.5, noise=0.1, power=1, epsilon=0.1, r_b=1.0)
    assert transmission_range(p) > 1.5
    topo = build_topology({0: (0, 0), 1: (1.2, 0)}, p)
    assert sinr_feasible(0, 1, {0}, topo, p) is True
    out = resolve_slot([TransmissionIntent(0, 1.0, "m")], topo, p,
                       np.random.default_rng(0))
    assert out.delivered == {}


def test_resolve_rejects_duplicate_senders(pair_topology, params):
    with pytest.raises(ValueError):
        resolve_slot([TransmissionIntent(0, 0.5, "a"), TransmissionIntent(0, 0.5, "b")],
                     pair_topology, params, np.random.default_rng(0))


def test_resolve_deterministic(line_topology, params):
    intents = [TransmissionIntent(i, 0.5, f"m{i}") for i in line_topology.ids]
    a = resolve_slot(intents, line_topology, params, np.random.default_rng(7))
    b = resolve_slot(intents, line_topology, params, np.random.default_rng(7))
    assert a.transmitted == b.transmitted
    assert a.delivered == b.delivered


def test_channel_cache_matches_fresh(params):
    rng = np.random.default_rng(5)
    pts = {i: (x, y) for i, (x, y) in enumerate(rng.random((8, 2)) * 3)}
    topo = build_topology(pts, params)
    intents = [TransmissionIntent(i, 0.7, i) for i in topo.ids]
    cached = Channel(topo, params)
    a = resolve_slot(intents, topo, params, np.random.default_rng(3), channel=cached)
    b = resolve_slot(intents, topo, params, np.random.default_rng(3))
    assert a.transmitted == b.transmitted and a.delivered == b.delivered


def brute_force_deliveries(topo, params, transmitted):
    """Independent oracle: direct per-link evaluation of the SINR formula."""
    delivered = {}
    for u in sorted(transmitted):
        for v in topo.ids:
            if v == u or v in transmitted:
                continue
            d = math.sqrt((topo.positions[u].x - topo.positions[v].x) ** 2
                          + (topo.positions[u].y - topo.positions[v].y) ** 2)
            if d > params.r_b or d == 0.0:
                continue
            interference = 0.0
            for w in sorted(transmitted):
                if w == u:
                    continue
                dw = math.sqrt((topo.positions[w].x - topo.positions[v].x) ** 2
                               + (topo.positions[w].y - topo.positions[v].y) ** 2)
                interference += math.inf if dw == 0.0 else params.power / dw ** params.alpha
            signal = params.power / d ** params.alpha
            if signal / (interference + params.noise) >= params.beta:
                delivered.setdefault(v, []).append(u)
    return delivered


def test_resolve_matches_brute_force_small(params):
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(1, 7))
        pts = {i: tuple(rng.random(2) * 3.0) for i in range(n)}
        topo = build_topology(pts, params)
        intents = [TransmissionIntent(i, float(rng.random()), i) for i in range(n)]
        out = resolve_slot(intents, topo, params, rng)
        expect = brute_force_deliveries(topo, params, out.transmitted)
        got = {v: [s for s, _ in pairs] for v, pairs in out.delivered.items()}
        assert got == expect
