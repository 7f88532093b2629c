"""Time-lagged causal discovery.

``run_pcmci`` performs PC1 condition selection followed by momentary
conditional independence (MCI) tests.  ``run_lpcmci`` is a reduced,
latent-aware variant ("LPCMCI-lite"): it starts from the fully connected
lagged graph, restricts conditioning sets to possible ancestors of the tested
pair, adds the parents found in a preliminary sweep as default conditions,
and orients only what time order and unshielded colliders imply.

Nodes are ``(variable index, lag)`` pairs; lag ``tau`` denotes time
``t - tau``.  Every edge ends in a lag-0 node.
"""

from __future__ import annotations

import json
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import citest
from .errors import ConfigurationError, NotFinalizedError, SampleSizeError
from .panel import TimeSeriesPanel, longest_observed_span

TAIL, ARROW, CIRCLE = "tail", "arrow", "circle"
UNCONFIRMED, CONFIRMED = "unconfirmed", "confirmed"
MARKS = (TAIL, ARROW, CIRCLE)


@dataclass(frozen=True)
class DiscoveryConfig:
    tau_max: int = 4
    alpha_pc: float = 0.2
    alpha_mci: float = 0.05
    ci_test: str = "parcorr"
    max_cond_dim: int | None = None
    mode: str = "pcmci"
    seed: int = 0
    n_perm: int = citest.DEFAULT_N_PERM

    def __post_init__(self):
        if self.tau_max < 1:
            raise ConfigurationError("tau_max must be >= 1")
        for name in ("alpha_pc", "alpha_mci"):
            a = getattr(self, name)
            if not 0 < a < 1:
                raise ConfigurationError(f"{name} must lie in (0, 1), got {a}")
        if self.ci_test not in citest.TESTS:
            raise ConfigurationError(f"unknown ci_test {self.ci_test!r}")
        if self.mode not in ("pcmci", "lpcmci"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.max_cond_dim is not None and self.max_cond_dim < 0:
            raise ConfigurationError("max_cond_dim must be >= 0")


# --------------------------------------------------------------------------
# Graph


@dataclass
class Edge:
    src: tuple
    dst: tuple
    mark_src: str
    mark_dst: str
    middle_mark: str = CONFIRMED
    stat: float = float("nan")
    pval: float = float("nan")

    @property
    def lag(self) -> int:
        return self.src[1]


@dataclass
class LaggedGraph:
    names: list
    tau_max: int
    mode: str
    alpha: float
    edges: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for e in self.edges:
            self._check_edge(e)

    def _check_edge(self, e: Edge):
        (i, tau), (j, dst_lag) = e.src, e.dst
        if dst_lag != 0:
            raise ValueError(f"edge target must be a lag-0 node, got {e.dst}")
        if not 0 <= tau <= self.tau_max:
            raise ValueError(f"lag {tau} outside [0, {self.tau_max}]")
        if e.mark_src not in MARKS or e.mark_dst not in MARKS:
            raise ValueError(f"bad marks {e.mark_src}/{e.mark_dst}")
        if tau == 0:
            if i == j:
                raise ValueError("self-edge at lag 0")
            if i > j:
                raise ValueError("contemporaneous edges are stored with src index < dst index")
        elif e.mark_dst != ARROW:
            raise ValueError("lagged edges must carry an arrowhead at the later node")

    @property
    def nodes(self) -> list:
        return [(i, tau) for i in range(len(self.names)) for tau in range(self.tau_max + 1)]

    def adjacencies(self) -> set:
        return {(e.src[0], e.src[1], e.dst[0]) for e in self.edges}

    def named_adjacencies(self) -> set:
        return {(self.names[i], tau, self.names[j]) for i, tau, j in self.adjacencies()}

    def is_finalized(self) -> bool:
        return all(e.middle_mark == CONFIRMED for e in self.edges)

    def node_label(self, node) -> str:
        i, tau = node
        return f"{self.names[i]}(t)" if tau == 0 else f"{self.names[i]}(t-{tau})"

    # ---- serialisation

    def to_dict(self) -> dict:
        if not self.is_finalized():
            raise NotFinalizedError("graph still contains unconfirmed middle marks")
        return {
            "mode": self.mode,
            "tau_max": self.tau_max,
            "alpha": self.alpha,
            "nodes": [{"var": self.names[i], "lag": tau} for i, tau in self.nodes],
            "edges": [
                {
                    "src": {"var": self.names[e.src[0]], "lag": e.src[1]},
                    "dst": {"var": self.names[e.dst[0]], "lag": e.dst[1]},
                    "mark_src": e.mark_src,
                    "mark_dst": e.mark_dst,
                    "stat": e.stat,
                    "pval": e.pval,
                }
                for e in self.edges
            ],
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "LaggedGraph":
        d = json.loads(text)
        names = []
        for node in d["nodes"]:
            if node["var"] not in names:
                names.append(node["var"])
        pos = {n: k for k, n in enumerate(names)}
        edges = [
            Edge((pos[e["src"]["var"]], e["src"]["lag"]), (pos[e["dst"]["var"]], e["dst"]["lag"]),
                 e["mark_src"], e["mark_dst"], CONFIRMED, e["stat"], e["pval"])
            for e in d["edges"]
        ]
        return cls(names, d["tau_max"], d["mode"], d["alpha"], edges, d.get("metadata", {}))

    def to_dot(self) -> str:
        if not self.is_finalized():
            raise NotFinalizedError("graph still contains unconfirmed middle marks")
        dot_mark = {TAIL: "none", ARROW: "normal", CIRCLE: "odot"}
        lines = ["digraph lagged {", "  rankdir=LR;"]
        for node in self.nodes:
            lines.append(f'  "{self.node_label(node)}";')
        for e in self.edges:
            lines.append(
                f'  "{self.node_label(e.src)}" -> "{self.node_label(e.dst)}" '
                f'[dir=both, arrowtail={dot_mark[e.mark_src]}, arrowhead={dot_mark[e.mark_dst]}, '
                f'label="stat={e.stat:.3f} p={e.pval:.3g}"];'
            )
        lines.append("}")
        return "\n".join(lines) + "\n"


def export_graph(graph: LaggedGraph, format: str = "json") -> str:
    if format == "json":
        return graph.to_json()
    if format == "dot":
        return graph.to_dot()
    raise ConfigurationError(f"unknown graph format {format!r}")


def temporal_violations(graph: LaggedGraph) -> list:
    """Edges that point from a later node into an earlier one, or lagged
    edges without an arrowhead at their later (lag-0) end."""
    bad = []
    for e in graph.edges:
        later_mark = e.mark_src if e.src[1] < e.dst[1] else e.mark_dst
        if e.src[1] != e.dst[1] and later_mark != ARROW:
            bad.append(e)
    return bad


# --------------------------------------------------------------------------
# Data access and test dispatch


class _LaggedData:
    """Aligned view: every lagged series covers rows ``tau_max .. T-1``."""

    def __init__(self, panel: TimeSeriesPanel, tau_max: int):
        if panel.mask.any():
            raise ConfigurationError("discovery needs a fully observed panel span")
        self.values = np.asarray(panel.values, dtype=float)
        self.names = list(panel.names)
        self.tau_max = tau_max
        self.T, self.N = self.values.shape
        self.n_eff = self.T - tau_max

    def series(self, node) -> np.ndarray:
        i, tau = node
        return self.values[self.tau_max - tau:self.T - tau, i]

    def matrix(self, nodes) -> np.ndarray:
        if not nodes:
            return np.empty((self.n_eff, 0))
        return np.column_stack([self.series(n) for n in nodes])


class _Tester:
    def __init__(self, data: _LaggedData, config: DiscoveryConfig, threads: int = 1):
        self.data = data
        self.config = config
        self.threads = max(1, int(threads))

    def _seed(self, x, y, Z) -> int:
        # keyed on variable names so results do not depend on column order
        nm = self.data.names
        key = "|".join([f"{nm[x[0]]}:{x[1]}", f"{nm[y[0]]}:{y[1]}"]
                       + sorted(f"{nm[i]}:{tau}" for i, tau in Z))
        ss = np.random.SeedSequence([int(self.config.seed) & 0xFFFFFFFF, zlib.crc32(key.encode())])
        return int(ss.generate_state(1)[0])

    def __call__(self, task):
        x, y, Z = task
        d = self.data
        if d.n_eff < len(Z) + 4:
            raise SampleSizeError(
                f"effective sample {d.n_eff} too small for conditioning dimension {len(Z)}")
        Zm = d.matrix(Z)
        if self.config.ci_test == "gpdc":
            return citest.gpdc_test(d.series(x), d.series(y), Zm,
                                    n_perm=self.config.n_perm, seed=self._seed(x, y, Z))
        return citest.parcorr_test(d.series(x), d.series(y), Zm)

    def map(self, tasks) -> list:
        if self.threads == 1 or len(tasks) < 2:
            return [self(t) for t in tasks]
        with ThreadPoolExecutor(self.threads) as pool:
            return list(pool.map(self, tasks))


def _prepare(panel: TimeSeriesPanel, config: DiscoveryConfig):
    start, stop = 0, panel.T
    if panel.mask.any():
        start, stop = longest_observed_span(panel)
        panel = panel.slice(start, stop)
    if panel.T <= 10 * config.tau_max:
        raise SampleSizeError(
            f"need T > 10 * tau_max = {10 * config.tau_max} observations, got {panel.T}")
    span = {"start": panel.index[0], "stop": panel.index[-1], "T": panel.T,
            "rows": [start, stop]}
    return _LaggedData(panel, config.tau_max), span


def _strength_key(strength: dict):
    return lambda node: (-strength[node], node[0], node[1])


# --------------------------------------------------------------------------
# PC1 + MCI


@dataclass
class ParentSets:
    """Selected lagged parents per variable, strongest first.

    ``links[j]`` is a list of ``(node, min |statistic|, max p-value)``.
    """

    names: list
    links: dict

    def nodes(self, j: int) -> list:
        return [node for node, _, _ in self.links[j]]

    def named(self) -> dict:
        return {self.names[j]: [(self.names[i], tau) for (i, tau), _, _ in lst]
                for j, lst in self.links.items()}


def _pc1_single(j: int, tester: _Tester, config: DiscoveryConfig) -> list:
    d = tester.data
    cands = [(i, tau) for i in range(d.N) for tau in range(1, config.tau_max + 1)]
    strength = {c: np.inf for c in cands}
    pmax = {c: 0.0 for c in cands}
    p = 0
    while True:
        if p > len(cands) - 1:
            break
        if config.max_cond_dim is not None and p > config.max_cond_dim:
            break
        tasks = []
        for c in cands:
            Z = [o for o in cands if o != c][:p]
            tasks.append((c, (j, 0), Z))
        results = tester.map(tasks)
        keep = []
        for c, res in zip(cands, results):
            strength[c] = min(strength[c], abs(res.statistic))
            pmax[c] = max(pmax[c], res.p_value)
            if res.p_value <= config.alpha_pc:
                keep.append(c)
        cands = sorted(keep, key=_strength_key(strength))
        p += 1
    return [(c, float(strength[c]), float(pmax[c])) for c in cands]


def pc1_select_parents(panel: TimeSeriesPanel, config: DiscoveryConfig, threads: int = 1,
                       _data=None) -> ParentSets:
    """PC1 condition selection for every variable.

    Starting from all lagged candidates ``(i, tau)``, ``1 <= tau <= tau_max``,
    level ``p`` tests each candidate against ``Y_t`` given the ``p`` strongest
    other remaining candidates and drops those with p-value above
    ``alpha_pc``.  Candidates are re-sorted by their smallest absolute
    statistic so far (ties: variable index, then lag).
    """
    data = _data if _data is not None else _prepare(panel, config)[0]
    tester = _Tester(data, config, threads)
    return ParentSets(list(data.names), {j: _pc1_single(j, tester, config) for j in range(data.N)})


def _mci_conditions(parents: ParentSets, x, y, tau_max: int) -> list:
    i, tau = x
    j = y[0]
    Z = [n for n in parents.nodes(j) if n != x]
    for k, lag in parents.nodes(i):
        shifted = (k, lag + tau)
        # shifted parents outside the aligned window are dropped
        if shifted[1] <= tau_max and shifted != x and shifted not in Z:
            Z.append(shifted)
    return Z


@dataclass
class MCIResults:
    """``results[i, tau, j]`` is the CI test of ``X^i_{t-tau}`` vs ``X^j_t``.
    The ``tau == 0, i == j`` cells are None; ``tau == 0`` cells are symmetric."""

    names: list
    tau_max: int
    results: np.ndarray

    @property
    def p_matrix(self) -> np.ndarray:
        return self._extract(lambda r: r.p_value)

    @property
    def val_matrix(self) -> np.ndarray:
        return self._extract(lambda r: r.statistic)

    def _extract(self, fn) -> np.ndarray:
        out = np.full(self.results.shape, np.nan)
        for idx, r in np.ndenumerate(self.results):
            if r is not None:
                out[idx] = fn(r)
        return out


def mci_matrix(panel: TimeSeriesPanel, parents: ParentSets, config: DiscoveryConfig,
               threads: int = 1, _data=None) -> MCIResults:
    data = _data if _data is not None else _prepare(panel, config)[0]
    tester = _Tester(data, config, threads)
    N, tmax = data.N, config.tau_max
    cells = []
    for j in range(N):
        for i in range(N):
            for tau in range(tmax + 1):
                if tau == 0 and i >= j:
                    continue
                cells.append((i, tau, j))
    tasks = []
    for i, tau, j in cells:
        x, y = (i, tau), (j, 0)
        if tau == 0:
            Z = [n for n in parents.nodes(j)]
            Z += [n for n in parents.nodes(i) if n not in Z]
        else:
            Z = _mci_conditions(parents, x, y, tmax)
        tasks.append((x, y, Z))
    out = np.empty((N, tmax + 1, N), dtype=object)
    for (i, tau, j), res in zip(cells, tester.map(tasks)):
        out[i, tau, j] = res
        if tau == 0:
            out[j, 0, i] = res
    return MCIResults(list(data.names), tmax, out)


def graph_from_mci(mci: MCIResults, alpha: float, metadata: dict | None = None) -> LaggedGraph:
    """Threshold MCI results: lagged links become ``tail -> arrow`` edges,
    contemporaneous links ``circle - circle``."""
    N = len(mci.names)
    edges = []
    for j in range(N):
        for i in range(N):
            for tau in range(mci.tau_max + 1):
                if tau == 0 and i >= j:
                    continue
                r = mci.results[i, tau, j]
                if r is None or r.p_value > alpha:
                    continue
                if tau == 0:
                    edges.append(Edge((i, 0), (j, 0), CIRCLE, CIRCLE, CONFIRMED,
                                      float(r.statistic), float(r.p_value)))
                else:
                    edges.append(Edge((i, tau), (j, 0), TAIL, ARROW, CONFIRMED,
                                      float(r.statistic), float(r.p_value)))
    edges.sort(key=lambda e: (e.dst[0], e.src[0], e.src[1]))
    return LaggedGraph(list(mci.names), mci.tau_max, "pcmci", alpha, edges, dict(metadata or {}))


def _metadata(config: DiscoveryConfig, span: dict, label: str) -> dict:
    return {
        "algorithm": label,
        "ci_test": config.ci_test,
        "alpha_pc": config.alpha_pc,
        "alpha_mci": config.alpha_mci,
        "max_cond_dim": config.max_cond_dim,
        "seed": config.seed,
        "span": span,
    }


def run_pcmci(panel: TimeSeriesPanel, config: DiscoveryConfig, threads: int = 1,
              return_details: bool = False):
    if config.mode != "pcmci":
        raise ConfigurationError("run_pcmci requires config.mode == 'pcmci'")
    data, span = _prepare(panel, config)
    parents = pc1_select_parents(panel, config, threads, _data=data)
    mci = mci_matrix(panel, parents, config, threads, _data=data)
    graph = graph_from_mci(mci, config.alpha_mci, _metadata(config, span, "pcmci"))
    graph.metadata["parents"] = {k: [f"{n}:{t}" for n, t in v] for k, v in parents.named().items()}
    if return_details:
        return graph, parents, mci
    return graph


# --------------------------------------------------------------------------
# LPCMCI-lite


def _canonical(x, y):
    """Key ``(i, tau, j)`` for the pair ``X^i_{t-tau}``, ``X^j_t``."""
    (i, tau), (j, lag) = x, y
    if lag != 0:
        raise ValueError("second node must be at lag 0")
    if tau == 0 and i > j:
        i, j = j, i
    return (i, tau, j)


def full_edge_keys(n_vars: int, tau_max: int) -> list:
    """Every admissible adjacency: all lagged pairs including
    autodependencies, plus each unordered contemporaneous pair once."""
    keys = []
    for j in range(n_vars):
        for i in range(n_vars):
            for tau in range(tau_max + 1):
                if tau == 0 and i >= j:
                    continue
                keys.append((i, tau, j))
    return keys


@dataclass
class _EdgeState:
    strength: float = np.inf
    pmax: float = 0.0
    stat_at_pmax: float = float("nan")
    middle: str = UNCONFIRMED


def initial_lpcmci_graph(names, tau_max: int) -> LaggedGraph:
    """Fully connected starting graph: lagged edges ``o->``, contemporaneous
    ``o-o``, all middle marks unconfirmed."""
    edges = []
    for i, tau, j in full_edge_keys(len(names), tau_max):
        edges.append(Edge((i, tau), (j, 0), CIRCLE, CIRCLE if tau == 0 else ARROW, UNCONFIRMED))
    return LaggedGraph(list(names), tau_max, "lpcmci-lite", float("nan"), edges)


class _LiteSweep:
    """One removal sweep starting from the complete graph."""

    def __init__(self, tester: _Tester, config: DiscoveryConfig, defaults: dict):
        self.tester = tester
        self.config = config
        self.tau_max = config.tau_max
        self.N = tester.data.N
        self.defaults = defaults
        self.edges = {k: _EdgeState() for k in full_edge_keys(self.N, self.tau_max)}
        self.sepsets = {}

    def lagged_adjacents(self, j: int) -> list:
        nodes = [(i, tau) for (i, tau, jj) in self.edges if jj == j and tau >= 1]
        return sorted(nodes, key=lambda n: (-self.edges[(n[0], n[1], j)].strength, n[0], n[1]))

    def _shift(self, nodes, tau):
        return [(k, lag + tau) for k, lag in nodes if lag + tau <= self.tau_max]

    def _conditions(self, key, anc):
        i, tau, j = key
        x, y = (i, tau), (j, 0)
        D = []
        for n in self.defaults.get(j, []) + self._shift(self.defaults.get(i, []), tau):
            if n not in (x, y) and n not in D:
                D.append(n)
        cands = [n for n in anc[j] if n != x and n not in D]
        if tau == 0:
            # both endpoints are at time t; candidates from either side
            cands += [n for n in anc[i] if n != y and n not in D and n not in cands]
            cands.sort(key=lambda n: (-self._strength_of(n, j, i), n[0], n[1]))
        return cands, D

    def _strength_of(self, node, j, i):
        vals = [self.edges[k].strength for k in ((node[0], node[1], j), (node[0], node[1], i))
                if k in self.edges]
        return max(vals) if vals else 0.0

    def run(self):
        cfg = self.config
        p = 0
        while True:
            if cfg.max_cond_dim is not None and p > cfg.max_cond_dim:
                break
            anc = {j: self.lagged_adjacents(j) for j in range(self.N)}
            keys, tasks, conds = [], [], []
            for key in self.edges:
                cands, D = self._conditions(key, anc)
                if p > len(cands):
                    self.edges[key].middle = CONFIRMED
                    continue
                Z = cands[:p] + D
                i, tau, j = key
                keys.append(key)
                conds.append(Z)
                tasks.append(((i, tau), (j, 0), Z))
            if not tasks:
                break
            removed = []
            for key, Z, res in zip(keys, conds, self.tester.map(tasks)):
                st = self.edges[key]
                st.strength = min(st.strength, abs(res.statistic))
                if res.p_value >= st.pmax:
                    st.pmax = res.p_value
                    st.stat_at_pmax = res.statistic
                if res.p_value > cfg.alpha_mci:
                    removed.append(key)
                    self.sepsets[key] = list(Z)
            for key in removed:
                del self.edges[key]
            p += 1
        for st in self.edges.values():
            st.middle = CONFIRMED
        return self


def _adjacent_key(a, b, tau_max):
    """Canonical key for nodes ``a``, ``b`` (lags >= 0), or None if their lag
    difference exceeds ``tau_max``."""
    (ia, la), (ib, lb) = a, b
    if la < lb:
        (ia, la), (ib, lb) = (ib, lb), (ia, la)
    d = la - lb
    if d > tau_max:
        return None
    return _canonical((ia, d), (ib, 0)), lb


def _orient_colliders(sweep: _LiteSweep) -> dict:
    """Arrowheads at ``C`` for unshielded ``A *-* C_t *-* B`` with at least
    one contemporaneous edge and ``C_t`` outside the separating set of A, B."""
    tau_max = sweep.tau_max
    marks = {}
    for key in sweep.edges:
        i, tau, j = key
        marks[key] = [CIRCLE, ARROW if tau >= 1 else CIRCLE]

    def neighbours(c):
        out = []
        for (i, tau, j) in sweep.edges:
            if j == c:
                out.append((i, tau))
            elif tau == 0 and i == c:
                out.append((j, 0))
        return sorted(out)

    for c in range(sweep.N):
        C = (c, 0)
        nb = neighbours(c)
        for a_idx, A in enumerate(nb):
            for B in nb[a_idx + 1:]:
                if A[1] != 0 and B[1] != 0:
                    continue
                found = _adjacent_key(A, B, tau_max)
                if found is None:
                    continue
                akey, _ = found
                if akey in sweep.edges or akey not in sweep.sepsets:
                    continue
                # one of A, B sits at lag 0, so C_t keeps lag 0 in sepset coordinates
                if C in sweep.sepsets[akey]:
                    continue
                for other in (A, B):
                    if other[1] == 0:
                        ekey = _canonical(other, C)
                        # contemporaneous keys are (min, 0, max)
                        marks[ekey][0 if ekey[0] == c else 1] = ARROW
    return marks


def run_lpcmci(panel: TimeSeriesPanel, config: DiscoveryConfig, threads: int = 1,
               n_preliminary: int = 1, return_details: bool = False):
    """LPCMCI-lite.

    Each sweep restarts from the complete graph.  At level ``p`` an edge
    ``X - Y_t`` is tested given the ``p`` strongest lagged adjacents of the
    pair (possible ancestors by time order) plus default conditions: the
    lagged parents of ``Y`` and time-shifted lagged parents of ``X`` found by
    the previous sweep.  Edges with p-value above ``alpha_mci`` are removed
    and their separating set recorded.  After the final sweep, lagged edges
    are ``o->`` and contemporaneous edges ``o-o`` unless an unshielded
    collider adds arrowheads.
    """
    if config.mode != "lpcmci":
        raise ConfigurationError("run_lpcmci requires config.mode == 'lpcmci'")
    data, span = _prepare(panel, config)
    tester = _Tester(data, config, threads)
    defaults = {}
    sweep = None
    for _ in range(n_preliminary + 1):
        sweep = _LiteSweep(tester, config, defaults).run()
        defaults = {j: sweep.lagged_adjacents(j) for j in range(data.N)}
    marks = _orient_colliders(sweep)
    edges = []
    for key in sorted(sweep.edges, key=lambda k: (k[2], k[0], k[1])):
        i, tau, j = key
        st = sweep.edges[key]
        edges.append(Edge((i, tau), (j, 0), marks[key][0], marks[key][1], st.middle,
                          float(st.stat_at_pmax), float(st.pmax)))
    meta = _metadata(config, span, "lpcmci-lite")
    meta["n_preliminary"] = n_preliminary
    graph = LaggedGraph(list(data.names), config.tau_max, "lpcmci-lite", config.alpha_mci,
                        edges, meta)
    if return_details:
        return graph, sweep
    return graph


def discover(panel: TimeSeriesPanel, config: DiscoveryConfig, threads: int = 1) -> LaggedGraph:
    if config.mode == "pcmci":
        return run_pcmci(panel, config, threads)
    return run_lpcmci(panel, config, threads)
