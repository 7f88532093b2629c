import json

import numpy as np
import pytest

from causalcast.discovery import (ARROW, CIRCLE, CONFIRMED, TAIL, UNCONFIRMED, DiscoveryConfig,
                                  Edge, LaggedGraph, discover, export_graph, full_edge_keys,
                                  initial_lpcmci_graph, mci_matrix, pc1_select_parents,
                                  run_lpcmci, run_pcmci, temporal_violations)
from causalcast.errors import ConfigurationError, NotFinalizedError, SampleSizeError

from synth import LINEAR_TRUTH, adjacency_f1, latent_confounder, linear_scm, make_panel


def ar1_panel(seed, T=500, phi=0.8):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(T + 100)
    x = np.zeros(T + 100)
    for t in range(1, T + 100):
        x[t] = phi * x[t - 1] + e[t]
    return make_panel({"x": x[100:]})


def test_config_validation():
    with pytest.raises(ConfigurationError):
        DiscoveryConfig(alpha_pc=0)
    with pytest.raises(ConfigurationError):
        DiscoveryConfig(ci_test="kci")
    with pytest.raises(ConfigurationError):
        DiscoveryConfig(mode="fci")
    with pytest.raises(ConfigurationError):
        DiscoveryConfig(tau_max=0)


def test_too_short_series():
    with pytest.raises(SampleSizeError):
        run_pcmci(ar1_panel(0, T=40), DiscoveryConfig(tau_max=4))


# ---- PC1

def test_pc1_ar1_parent():
    cfg = DiscoveryConfig(alpha_pc=0.005)
    hits = sum(pc1_select_parents(ar1_panel(s), cfg).named()["x"] == [("x", 1)]
               for s in range(50))
    assert hits >= 45


def test_pc1_white_noise_rate():
    # 16 candidates tested at level 0 with calibrated p-values: all rejected
    # with probability 0.95**16 ~= 0.44
    cfg = DiscoveryConfig(alpha_pc=0.05)
    empty = 0
    for s in range(50):
        w = np.random.default_rng(s).standard_normal((500, 2))
        ps = pc1_select_parents(make_panel({"a": w[:, 0], "b": w[:, 1]}), cfg).named()
        empty += ps["a"] == [] and ps["b"] == []
    assert 0.25 <= empty / 50 <= 0.65


def test_pc1_chain():
    # x keeps no false parent among its 8 candidates with probability ~ (1 - alpha)**8
    cfg = DiscoveryConfig(alpha_pc=0.005)
    hits = 0
    for s in range(50):
        rng = np.random.default_rng(s)
        e = rng.standard_normal((600, 2))
        x = e[:, 0]
        y = np.zeros(600)
        for t in range(1, 600):
            y[t] = 0.6 * x[t - 1] + e[t, 1]
        ps = pc1_select_parents(make_panel({"x": x[100:], "y": y[100:]}), cfg).named()
        hits += ("x", 1) in ps["y"] and ps["x"] == []
    assert hits >= 45


# ---- MCI

def test_mci_zero_link_and_power():
    cfg = DiscoveryConfig()
    null_ok = power_ok = 0
    for s in range(50):
        panel = linear_scm(T=1000, seed=s)
        parents = pc1_select_parents(panel, cfg)
        p = mci_matrix(panel, parents, cfg).p_matrix
        # y -> x has coefficient 0 at every lag; check lag 1
        null_ok += p[1, 1, 0] > 0.05
        power_ok += p[0, 1, 0] < 0.01
    assert null_ok >= 45
    assert power_ok >= 48


def test_mci_contemporaneous_symmetric():
    panel = linear_scm(T=300, seed=1)
    cfg = DiscoveryConfig()
    mci = mci_matrix(panel, pc1_select_parents(panel, cfg), cfg)
    assert mci.results[0, 0, 1] is mci.results[1, 0, 0]
    assert mci.results[0, 0, 0] is None
    np.testing.assert_array_equal(mci.p_matrix[:, 0, :], mci.p_matrix[:, 0, :].T)


# ---- PCMCI end to end

def test_pcmci_linear_f1():
    f1 = [adjacency_f1(run_pcmci(linear_scm(seed=s), DiscoveryConfig()).named_adjacencies(),
                       LINEAR_TRUTH) for s in range(20)]
    assert np.mean(f1) >= 0.8


def test_pcmci_white_noise_false_edges():
    cfg = DiscoveryConfig()
    cells = len(full_edge_keys(4, cfg.tau_max))
    counts = []
    for s in range(50):
        w = np.random.default_rng(s).standard_normal((300, 4))
        panel = make_panel({f"v{k}": w[:, k] for k in range(4)})
        counts.append(len(run_pcmci(panel, cfg).edges))
    assert np.mean(counts) <= cfg.alpha_mci * cells * 2


@pytest.mark.parametrize("test", ["parcorr", "gpdc"])
def test_column_order_independence(test):
    panel = linear_scm(T=200 if test == "gpdc" else 500, seed=3)
    cfg = DiscoveryConfig(tau_max=2, ci_test=test, n_perm=99)
    a = run_pcmci(panel, cfg)
    b = run_pcmci(panel.select(["y", "x"]), cfg)
    assert a.named_adjacencies() == b.named_adjacencies()


def test_pcmci_lagged_edges_are_directed():
    g = run_pcmci(linear_scm(seed=0), DiscoveryConfig())
    for e in g.edges:
        if e.lag:
            assert (e.mark_src, e.mark_dst) == (TAIL, ARROW)
        else:
            assert (e.mark_src, e.mark_dst) == (CIRCLE, CIRCLE)
    assert g.metadata["parents"]["y"][0] in ("x:2", "y:1")


def test_threads_do_not_change_results():
    panel = linear_scm(T=200, seed=5)
    cfg = DiscoveryConfig(tau_max=2, ci_test="gpdc", n_perm=99)
    assert run_pcmci(panel, cfg, threads=1).to_json() == run_pcmci(panel, cfg, threads=4).to_json()


# ---- LPCMCI-lite

def test_lpcmci_initial_graph():
    g = initial_lpcmci_graph(["a", "b", "c"], 2)
    assert len(g.edges) == 9 * 2 + 3
    assert all(e.middle_mark == UNCONFIRMED for e in g.edges)
    assert not temporal_violations(g)
    with pytest.raises(NotFinalizedError):
        g.to_json()


def test_lpcmci_matches_pcmci():
    f1 = []
    for s in range(20):
        panel = linear_scm(seed=s)
        a = run_pcmci(panel, DiscoveryConfig()).adjacencies()
        b = run_lpcmci(panel, DiscoveryConfig(mode="lpcmci")).adjacencies()
        f1.append(adjacency_f1(b, a))
    assert np.mean(f1) >= 0.8


def test_lpcmci_latent_never_direct():
    cfg = DiscoveryConfig(mode="lpcmci")
    for s in range(20):
        g = run_lpcmci(latent_confounder(seed=s), cfg)
        for e in g.edges:
            if {e.src[0], e.dst[0]} == {0, 1}:
                assert not (e.mark_src == TAIL and e.mark_dst == TAIL)
                assert TAIL not in (e.mark_src, e.mark_dst)


def test_lpcmci_latent_bidirected():
    g = run_lpcmci(latent_confounder(seed=0), DiscoveryConfig(mode="lpcmci"))
    contemp = [e for e in g.edges if e.lag == 0]
    assert [(e.mark_src, e.mark_dst) for e in contemp] == [(ARROW, ARROW)]


def test_lpcmci_label_and_finalized():
    g = discover(linear_scm(T=300, seed=2), DiscoveryConfig(mode="lpcmci"))
    assert g.mode == "lpcmci-lite"
    assert json.loads(g.to_json())["mode"] == "lpcmci-lite"
    assert g.is_finalized()


# ---- graph object and export

def test_graph_validation():
    with pytest.raises(ValueError):
        LaggedGraph(["x", "y"], 2, "pcmci", 0.05, [Edge((0, 0), (1, 1), TAIL, ARROW)])
    with pytest.raises(ValueError):
        LaggedGraph(["x", "y"], 2, "pcmci", 0.05, [Edge((0, 1), (1, 0), ARROW, TAIL)])
    with pytest.raises(ValueError):
        LaggedGraph(["x", "y"], 2, "pcmci", 0.05, [Edge((1, 0), (0, 0), CIRCLE, CIRCLE)])


def test_dot_empty_graph():
    dot = LaggedGraph(["x"], 1, "pcmci", 0.05).to_dot()
    assert "->" not in dot
    assert '"x(t)";' in dot and '"x(t-1)";' in dot


def test_dot_single_edge():
    g = LaggedGraph(["x", "y"], 1, "pcmci", 0.05,
                    [Edge((0, 1), (1, 0), TAIL, ARROW, CONFIRMED, 0.5, 0.001)])
    lines = [ln for ln in export_graph(g, "dot").splitlines() if "->" in ln]
    assert len(lines) == 1
    assert '"x(t-1)" -> "y(t)"' in lines[0] and "p=0.001" in lines[0]


def test_json_round_trip_bytes():
    g = run_pcmci(linear_scm(T=300, seed=4), DiscoveryConfig())
    text = g.to_json()
    assert LaggedGraph.from_json(text).to_json() == text
    with pytest.raises(ConfigurationError):
        export_graph(g, "graphml")


def test_temporal_violation_detector():
    g = LaggedGraph(["x", "y"], 1, "pcmci", 0.05,
                    [Edge((0, 1), (1, 0), TAIL, ARROW, CONFIRMED, 0.5, 0.001)])
    g.edges[0].mark_dst = TAIL
    assert temporal_violations(g) == [g.edges[0]]
    g.edges[0].mark_dst = ARROW
