"""Kontsevich-type graphs, networks of rooted trees, and their symbols.

A Kontsevich graph has aerial vertices 0..n-1, each with an ordered pair
of out-edges, and terrestrial vertices encoded as n..n+m-1.  A network
is a skeleton rooted tree whose vertices carry rooted trees and whose
skeleton edges carry an extra orientation plus anchor vertices; the
symbol rules contract everything against the spray field pi(x) p.

The sign relating a network symbol to the symbol of its associated
Kontsevich graph is not derived combinatorially; it is determined
empirically on probe structures and asserted consistent.
"""

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .errors import SignUndeterminedError
from .poisson import eval_pi_partial, make_constant, make_polynomial
from .trees import RootedTree

MAX_AERIAL = 4


@dataclass(frozen=True)
class KontsevichGraph:
    """Aerial/terrestrial graph with two ordered out-edges per aerial
    vertex; terrestrial targets are encoded as n_aerial + j."""

    n_aerial: int
    m_terrestrial: int
    out_edges: tuple

    def __post_init__(self):
        if len(self.out_edges) != self.n_aerial:
            raise ValueError("out_edges must list one pair per aerial vertex")
        n, m = self.n_aerial, self.m_terrestrial
        for k, (e1, e2) in enumerate(self.out_edges):
            for t in (e1, e2):
                if not 0 <= t < n + m:
                    raise ValueError(f"edge target {t} out of range")
            if e1 == k or e2 == k:
                raise ValueError("loops are not allowed")
            if e1 == e2:
                raise ValueError("the two out-edges must have distinct targets")

    def is_terrestrial(self, v):
        return v >= self.n_aerial

    def interior_edges(self):
        """Undirected aerial-aerial edges as frozensets."""
        out = []
        for k, pair in enumerate(self.out_edges):
            for t in pair:
                if not self.is_terrestrial(t):
                    out.append(frozenset((k, t)))
        return out

    def interior_is_tree(self):
        edges = self.interior_edges()
        if len(edges) != self.n_aerial - 1 or len(set(edges)) != len(edges):
            return False
        # connectivity of n vertices with n-1 distinct acyclic-or-not edges
        seen = {0}
        frontier = [0]
        adj = {k: set() for k in range(self.n_aerial)}
        for e in edges:
            a, b = tuple(e)
            adj[a].add(b)
            adj[b].add(a)
        while frontier:
            v = frontier.pop()
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    frontier.append(w)
        return len(seen) == self.n_aerial

    def canonical(self):
        """Representative with lexicographically minimal adjacency
        encoding under permutations of the aerial labels."""
        n = self.n_aerial
        best = None
        for perm in itertools.permutations(range(n)):
            remap = {k: perm[k] for k in range(n)}
            enc = [None] * n
            for k, (e1, e2) in enumerate(self.out_edges):
                enc[perm[k]] = (remap.get(e1, e1), remap.get(e2, e2))
            enc = tuple(enc)
            if best is None or enc < best:
                best = enc
        return KontsevichGraph(n, self.m_terrestrial, best)

    def to_json(self):
        return {"n_aerial": self.n_aerial,
                "m_terrestrial": self.m_terrestrial,
                "out_edges": [list(p) for p in self.out_edges]}

    @staticmethod
    def from_json(doc):
        return KontsevichGraph(int(doc["n_aerial"]), int(doc["m_terrestrial"]),
                               tuple((int(a), int(b))
                                     for a, b in doc["out_edges"]))


def enumerate_kontsevich_trees(n, m=2):
    """All Kontsevich trees with n aerial and m terrestrial vertices, up
    to aerial relabeling, deterministically ordered.

    Conventions fixed here: the interior must be a tree (connected and
    acyclic as a simple graph) and the two out-edges of each vertex have
    distinct targets, so for n = 1 both terrestrial orderings appear.
    """
    if not 1 <= n <= MAX_AERIAL:
        raise ValueError(f"n must be between 1 and {MAX_AERIAL}")
    targets = list(range(n + m))
    seen = {}
    for assignment in itertools.product(
            itertools.permutations(targets, 2), repeat=n):
        ok = all(k != e1 and k != e2
                 for k, (e1, e2) in enumerate(assignment))
        if not ok:
            continue
        g = KontsevichGraph(n, m, tuple(assignment))
        if not g.interior_is_tree():
            continue
        c = g.canonical()
        seen[c.out_edges] = c
    return tuple(seen[k] for k in sorted(seen))


def kgraph_symbol(graph, P, p_list, x):
    """Symbol of the multidifferential operator attached to the graph:
    the full contraction of the per-vertex pi-derivative tensors with the
    terrestrial covectors, summed over all edge index assignments."""
    if len(p_list) != graph.m_terrestrial:
        raise ValueError("p_list length must equal the terrestrial count")
    x = np.asarray(x, dtype=float)
    d = P.dim
    n = graph.n_aerial
    # edge index ids: one einsum axis per edge, labelled by source slot
    edge_index = {}
    for k, (e1, e2) in enumerate(graph.out_edges):
        edge_index[(k, 0)] = 2 * k
        edge_index[(k, 1)] = 2 * k + 1
    incoming = {v: [] for v in range(n + graph.m_terrestrial)}
    for k, (e1, e2) in enumerate(graph.out_edges):
        incoming[e1].append(edge_index[(k, 0)])
        incoming[e2].append(edge_index[(k, 1)])

    operands = []
    for k in range(n):
        r = len(incoming[k])
        # tensor d^{(A)} pi^{ij}: axes = derivative slots + (i, j)
        T = np.zeros((d,) * r + (d, d))
        for idx in np.ndindex(*(d,) * r):
            multi = [0] * d
            for a in idx:
                multi[a] += 1
            T[idx] = eval_pi_partial(P, x, tuple(multi))
        operands.append(T)
        operands.append(incoming[k] + [edge_index[(k, 0)], edge_index[(k, 1)]])
    for j in range(graph.m_terrestrial):
        pj = np.asarray(p_list[j], dtype=float)
        for e in incoming[n + j]:
            operands.append(pj)
            operands.append([e])
    return float(np.einsum(*operands, []))


@dataclass(frozen=True)
class Network:
    """Skeleton rooted tree decorated with rooted trees and anchored,
    extra-oriented edges.

    ``skeleton_parent[v]`` is the parent index (-1 for the root);
    ``vertex_trees[v]`` the rooted tree at skeleton vertex v.  Non-root
    skeleton vertices, in increasing index order, own one skeleton edge
    each; ``edge_toward_root[i]`` gives its extra orientation and
    ``edge_anchors[i] = (source_node, target_node)`` the anchor vertices
    (preorder indices) in the source and target trees.  ``marked``
    optionally names (vertex 0 node) in the root tree.
    """

    skeleton_parent: tuple
    vertex_trees: tuple
    edge_toward_root: tuple
    edge_anchors: tuple
    marked: int | None = None

    def __post_init__(self):
        roots = [v for v, p in enumerate(self.skeleton_parent) if p == -1]
        if roots != [0]:
            raise ValueError("skeleton vertex 0 must be the unique root")
        nonroot = [v for v in range(len(self.skeleton_parent)) if v != 0]
        if len(self.edge_toward_root) != len(nonroot) or \
                len(self.edge_anchors) != len(nonroot):
            raise ValueError("need one orientation and anchor pair per "
                             "non-root skeleton vertex")
        for v in nonroot:
            parent = self.skeleton_parent[v]
            if not 0 <= parent < len(self.skeleton_parent):
                raise ValueError("skeleton parent out of range")
        for i, v in enumerate(nonroot):
            src, dst = self._edge_vertices(v)
            s_node, t_node = self.edge_anchors[i]
            if not 0 <= s_node < self.vertex_trees[src].order:
                raise ValueError("source anchor out of range")
            if not 0 <= t_node < self.vertex_trees[dst].order:
                raise ValueError("target anchor out of range")
        if self.marked is not None and \
                not 0 <= self.marked < self.vertex_trees[0].order:
            raise ValueError("marked vertex out of range")

    def _edge_vertices(self, v):
        """(source, target) skeleton vertices of the edge owned by v."""
        i = self._edge_slot(v)
        parent = self.skeleton_parent[v]
        return (v, parent) if self.edge_toward_root[i] else (parent, v)

    def _edge_slot(self, v):
        return sorted(w for w in range(len(self.skeleton_parent))
                      if w != 0).index(v)

    @property
    def order(self):
        return sum(t.order for t in self.vertex_trees)

    def to_json(self):
        return {"skeleton_parent": list(self.skeleton_parent),
                "vertex_trees": [t.serialize() for t in self.vertex_trees],
                "edge_toward_root": list(self.edge_toward_root),
                "edge_anchors": [list(a) for a in self.edge_anchors],
                "marked": self.marked}

    @staticmethod
    def from_json(doc):
        return Network(
            tuple(int(v) for v in doc["skeleton_parent"]),
            tuple(RootedTree.parse(s) for s in doc["vertex_trees"]),
            tuple(bool(b) for b in doc["edge_toward_root"]),
            tuple((int(a), int(b)) for a, b in doc["edge_anchors"]),
            doc.get("marked"))


def _flatten_tree(t):
    """Preorder parent indices of a rooted tree (root first, parent None)."""
    parents = []

    def rec(node, parent):
        idx = len(parents)
        parents.append(parent)
        for c in node.children:
            rec(c, idx)

    rec(t, None)
    return parents


def _network_wiring(net):
    """Global bookkeeping: per global vertex id, its tree parent, rootness,
    and the skeleton edges (source_gid, target_gid, sign)."""
    offsets = []
    parents = []
    is_root = []
    for t in net.vertex_trees:
        offsets.append(len(parents))
        local = _flatten_tree(t)
        base = len(parents)
        for node, par in enumerate(local):
            parents.append(None if par is None else base + par)
            is_root.append(par is None)
    edges = []
    nonroot = sorted(v for v in range(len(net.skeleton_parent)) if v != 0)
    for i, v in enumerate(nonroot):
        src_v, dst_v = net._edge_vertices(v)
        s_node, t_node = net.edge_anchors[i]
        sign = -1.0 if net.edge_toward_root[i] else 1.0
        edges.append((offsets[src_v] + s_node, offsets[dst_v] + t_node, sign))
    return offsets, parents, is_root, edges


def _v_partial_tensor(P, x, p, nx, npd):
    """Mixed partial of V^k = pi^{kj}(x) p_j: nx x-derivatives and npd
    p-derivatives; axes = x-slots + p-slots + (k,)."""
    d = P.dim
    out = np.zeros((d,) * nx + (d,) * npd + (d,))
    if npd >= 2:
        return out
    for idx in np.ndindex(*(d,) * nx):
        multi = [0] * d
        for a in idx:
            multi[a] += 1
        dpi = eval_pi_partial(P, x, tuple(multi))      # (d, d) = (k, j)
        if npd == 0:
            out[idx] = dpi @ p
        else:
            for s in range(d):
                out[idx + (s,)] = dpi[:, s]
    return out


def network_symbol(net, P, p2, x, p, decoration=None):
    """Symbol of the network against the spray field of P, evaluated at
    phase point (x, p) and contracted with p2 at the vertex-tree roots.

    ``decoration`` is required iff the network is marked: ("x", j) adds
    -d/dp_j at the mark, ("p", j) adds d/dx^j.
    """
    if (net.marked is None) != (decoration is None):
        raise ValueError("decoration must be given exactly for marked networks")
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    offsets, parents, is_root, sk_edges = _network_wiring(net)
    n = len(parents)

    # einsum axis ids: one per tree edge (child gid), one per skeleton edge,
    # one per root output
    axis = {}
    next_id = 0

    def new_axis():
        nonlocal next_id
        next_id += 1
        return next_id - 1

    out_axis = [None] * n
    for g in range(n):
        out_axis[g] = new_axis()
    sk_axis = [new_axis() for _ in sk_edges]

    x_slots = {g: [] for g in range(n)}
    p_slots = {g: [] for g in range(n)}
    fixed = {g: [] for g in range(n)}   # (kind, j) decorations to slice
    for g in range(n):
        for child in range(n):
            if parents[child] == g:
                x_slots[g].append(out_axis[child])
    for (src, dst, _sign), ax in zip(sk_edges, sk_axis):
        p_slots[src].append(ax)
        x_slots[dst].append(ax)
    sign = 1.0
    for _, _, s in sk_edges:
        sign *= s
    if net.marked is not None:
        kind, j = decoration
        g_mark = offsets[0] + net.marked
        if kind == "x":
            fixed[g_mark].append(("p", j))
            sign *= -1.0
        elif kind == "p":
            fixed[g_mark].append(("x", j))
        else:
            raise ValueError("decoration kind must be 'x' or 'p'")

    operands = []
    for g in range(n):
        nx = len(x_slots[g]) + sum(1 for k, _ in fixed[g] if k == "x")
        npd = len(p_slots[g]) + sum(1 for k, _ in fixed[g] if k == "p")
        T = _v_partial_tensor(P, x, p, nx, npd)
        # slice away the fixed decoration slots (they occupy the last
        # x-slot / p-slot positions by construction)
        for kind, j in fixed[g]:
            if kind == "x":
                T = T[(slice(None),) * (len(x_slots[g])) + (j,)]
            else:
                T = np.moveaxis(T, len(x_slots[g]) + len(p_slots[g]), -1)[..., j]
        operands.append(T)
        operands.append(x_slots[g] + p_slots[g] + [out_axis[g]])
    for g in range(n):
        if is_root[g]:
            operands.append(p2)
            operands.append([out_axis[g]])
        else:
            # non-root outputs are consumed by the parent's x-slot
            pass
    # non-root outputs appear exactly twice (own tensor + parent slot)
    return sign * float(np.einsum(*operands, []))


def network_to_kgraph(net, probes=None):
    """The Kontsevich tree associated to a network, with the empirical
    sign s such that network_symbol = s * kgraph_symbol on probes.

    Raises SignUndeterminedError when every probe evaluates to zero.
    """
    if net.marked is not None:
        raise ValueError("the graph map is defined for unmarked networks")
    offsets, parents, is_root, sk_edges = _network_wiring(net)
    n = len(parents)
    sources = {}
    for src, dst, _ in sk_edges:
        if src in sources:
            raise ValueError("network is not well-formed: a vertex sources "
                             "two skeleton edges")
        sources[src] = dst
    out_edges = []
    for g in range(n):
        left = sources.get(g, n)            # terrestrial 1 when not a source
        right = (n + 1) if is_root[g] else parents[g]
        out_edges.append((left, right))
    graph = KontsevichGraph(n, 2, tuple(out_edges)).canonical()

    sign = None
    for P, x, p1, p2 in probes if probes is not None else _default_probes():
        e = network_symbol(net, P, p2, x, p1)
        b = kgraph_symbol(graph, P, [p1, p2], x)
        if abs(e) < 1e-12 and abs(b) < 1e-12:
            continue
        if abs(b) < 1e-12 or abs(e) < 1e-12:
            raise SignUndeterminedError(
                "network and graph symbols vanish inconsistently on a probe")
        ratio = e / b
        s = 1.0 if ratio > 0 else -1.0
        if abs(abs(ratio) - 1.0) > 1e-6:
            raise SignUndeterminedError(
                f"symbol ratio {ratio:.6g} is not a sign on a probe")
        if sign is None:
            sign = s
        elif sign != s:
            raise SignUndeterminedError("probe signs are inconsistent")
    if sign is None:
        raise SignUndeterminedError(
            "all probes vanish; sign of the network symbol is undetermined")
    return graph, int(sign)


def _default_probes(count=10, seed=11):
    rng = np.random.default_rng(seed)
    structures = [
        make_polynomial(2, {(0, 1): {(0, 0): 1.0, (1, 0): 0.7, (1, 1): 0.9,
                                     (2, 0): -0.4}}, label="probe-poly"),
        make_polynomial(2, {(0, 1): {(1, 1): 1.0}}, label="probe-quad"),
        make_constant([[0.0, 1.0], [-1.0, 0.0]], label="probe-const"),
    ]
    probes = []
    for P in structures:
        for _ in range(count):
            x = rng.uniform(-1.0, 1.0, P.dim)
            p1 = rng.uniform(-1.0, 1.0, P.dim)
            p2 = rng.uniform(-1.0, 1.0, P.dim)
            probes.append((P, x, p1, p2))
    return probes


def enumerate_networks(total_order, max_skeleton=3):
    """All well-formed unmarked networks with the given total number of
    vertices (small orders only; used for consistency sweeps)."""
    from .trees import enumerate_trees

    out = []
    for k in range(1, min(total_order, max_skeleton) + 1):
        for parent in _skeleton_shapes(k):
            for sizes in _compositions(total_order, k):
                tree_choices = [enumerate_trees(s) for s in sizes]
                for vtrees in itertools.product(*tree_choices):
                    nonroot = list(range(1, k))
                    anchor_opts = []
                    orient_opts = []
                    for v in nonroot:
                        orient_opts.append((True, False))
                    for orients in itertools.product(*orient_opts):
                        anchor_opts = []
                        for i, v in enumerate(nonroot):
                            src, dst = ((v, parent[v]) if orients[i]
                                        else (parent[v], v))
                            anchor_opts.append(
                                list(itertools.product(
                                    range(vtrees[src].order),
                                    range(vtrees[dst].order))))
                        for anchors in itertools.product(*anchor_opts):
                            try:
                                net = Network(tuple(parent), vtrees,
                                              tuple(orients), tuple(anchors))
                                _check_single_source(net)
                            except ValueError:
                                continue
                            out.append(net)
    return out


def _check_single_source(net):
    _, _, _, sk_edges = _network_wiring(net)
    seen = set()
    for src, _, _ in sk_edges:
        if src in seen:
            raise ValueError("vertex sources two skeleton edges")
        seen.add(src)


def _skeleton_shapes(k):
    """Rooted labeled trees on vertices 0..k-1 with root 0, as parent
    arrays with parent[v] < v (one representative per increasing
    labeling; duplicates across isomorphism are acceptable here)."""
    if k == 1:
        return [(-1,)]
    shapes = []
    for parents in itertools.product(*[range(v) for v in range(1, k)]):
        shapes.append((-1,) + parents)
    return shapes


def _compositions(total, k):
    """Ordered k-tuples of positive integers summing to total."""
    if k == 1:
        return [(total,)]
    out = []
    for first in range(1, total - k + 2):
        for rest in _compositions(total - first, k - 1):
            out.append((first,) + rest)
    return out


def save_graph(graph, path):
    with open(path, "w") as fh:
        json.dump(graph.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_graph(path):
    with open(path) as fh:
        return KontsevichGraph.from_json(json.load(fh))


def save_network(net, path):
    with open(path, "w") as fh:
        json.dump(net.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_network(path):
    with open(path) as fh:
        return Network.from_json(json.load(fh))
