"""Bipartite graphings induced by a finite set of group elements.

Vertices are the points of a left set A and a right set B on an exact
model.  Local vertex ids: left points 0..nL-1, right points nL..nL+nR-1.
An edge (x, γ) joins x ∈ A to γ.x ∈ B and carries the index of γ in S.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
import numpy as np

from .group import GeneratorSet, as_torus_array
from .space import DoubledModel, LiftedElement, LiftedElements, RationalTorus, SampledSet

SCHEMA_GRAPHING = "equidecomp.graphing/v1"


class GraphingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BorelArrow:
    """A pair (domain, element): every x in the domain is joined to element.x."""
    domain: SampledSet
    element: object
    label: int


def _csr(keys: np.ndarray, n: int):
    order = np.argsort(keys, kind="stable")
    ptr = np.zeros(n + 1, np.int64)
    np.add.at(ptr, keys + 1, 1)
    return np.cumsum(ptr), order


@dataclass(eq=False)
class Graphing:
    model: object
    left: SampledSet
    right: SampledSet
    S: GeneratorSet
    left_ids: np.ndarray          # model indices of left vertices
    right_ids: np.ndarray
    edge_u: np.ndarray            # local left index
    edge_v: np.ndarray            # local right index (0-based within right)
    edge_label: np.ndarray        # index into S
    collapsed: bool = False
    _arrows: list | None = field(default=None, repr=False)

    def __post_init__(self):
        order = np.lexsort((self.edge_label, self.edge_v, self.edge_u))
        self.edge_u = self.edge_u[order]
        self.edge_v = self.edge_v[order]
        self.edge_label = self.edge_label[order]
        self.left_ptr, self.left_edges = _csr(self.edge_u, self.n_left)
        self.right_ptr, self.right_edges = _csr(self.edge_v, self.n_right)

    @property
    def n_left(self) -> int:
        return len(self.left_ids)

    @property
    def n_right(self) -> int:
        return len(self.right_ids)

    @property
    def n_vertices(self) -> int:
        return self.n_left + self.n_right

    @property
    def n_edges(self) -> int:
        return len(self.edge_u)

    @property
    def vertex_mass(self):
        return self.model.point_mass

    def left_neighbors(self, u: int) -> np.ndarray:
        return self.edge_v[self.left_edges[self.left_ptr[u]:self.left_ptr[u + 1]]]

    def right_neighbors(self, v: int) -> np.ndarray:
        return self.edge_u[self.right_edges[self.right_ptr[v]:self.right_ptr[v + 1]]]

    def degrees(self) -> np.ndarray:
        return np.concatenate([np.diff(self.left_ptr), np.diff(self.right_ptr)])

    def arrows(self) -> list[BorelArrow]:
        """One arrow (A ∩ γ^-1.B, γ) per label that carries at least one edge."""
        if self._arrows is None:
            out = []
            for lab in np.unique(self.edge_label):
                us = self.edge_u[self.edge_label == lab]
                dom = self.model.from_indices(self.left_ids[us])
                out.append(BorelArrow(dom, self.S.elements[int(lab)], int(lab)))
            self._arrows = out
        return self._arrows

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA_GRAPHING,
            "left": self.left_ids.tolist(),
            "right": self.right_ids.tolist(),
            "edges": [[int(u), int(self.n_left + v), " ".join(self.S.word(int(lab)).tokens())]
                      for u, v, lab in zip(self.edge_u, self.edge_v, self.edge_label)],
            "collapsed": self.collapsed,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def _torus_of(model):
    if isinstance(model, RationalTorus):
        return model
    if isinstance(model, DoubledModel) and isinstance(model.base, RationalTorus):
        return model.base
    return None


def _image_chunks(model, S: GeneratorSet, src: np.ndarray, chunk: int):
    """Yield (first label, images) with images of shape (k, len(src)) in model indices."""
    torus = _torus_of(model)
    if torus is not None:
        els = S.elements
        flips = None
        if isinstance(model, DoubledModel):
            if isinstance(els, LiftedElements):
                flips = np.full(len(els), els.flip, np.int64)
                base = els.base_set
            elif len(els) and isinstance(els[0], LiftedElement):
                flips = np.array([g.flip for g in els], np.int64)
                base = GeneratorSet(tuple(g.base for g in els), name=S.name)
            else:
                flips = np.zeros(len(els), np.int64)
                base = S
            nb = torus.n
            copy, base_src = np.divmod(src, nb)
        else:
            base, base_src = S, src
        if len(base) == 0:
            return
        arr = as_torus_array(base, torus.q)
        coords = torus.coords[base_src]
        for s in range(0, len(arr), chunk):
            imgs = arr.take(slice(s, s + chunk)).image_indices(coords)
            if flips is not None:
                imgs += ((copy[None, :] ^ flips[s:s + chunk, None]) * nb).astype(imgs.dtype)
            yield s, imgs
        return
    for k, g in enumerate(S.elements):
        yield k, model.action(g)[src][None, :]


def bipartite_graphing(A: SampledSet, B: SampledSet, S: GeneratorSet, collapse: bool | None = None,
                       chunk: int | None = None) -> Graphing:
    """Edges {(x, γ): x ∈ A, γ.x ∈ B, γ ∈ S}.

    With ``collapse`` parallel edges between the same pair keep only the
    smallest label; by default this happens only when |S| exceeds 64.
    """
    if A.model is not B.model:
        raise GraphingError("A and B live on different models")
    model = A.model
    if not model.exact:
        raise GraphingError("graphings are built on exact models only")
    if not A.isdisjoint(B):
        raise GraphingError("A and B intersect; disjointify first")
    if collapse is None:
        collapse = len(S) > 64
    left_ids, right_ids = A.indices(), B.indices()
    nL, nR = len(left_ids), len(right_ids)
    # position in B of each model point; the extra last slot catches index -1
    pos_b = np.full(model.n + 1, -1, np.int64)
    pos_b[right_ids] = np.arange(nR)
    if chunk is None:
        chunk = max(1, 4_000_000 // max(1, nL))
    us, vs, ls = [], [], []
    if collapse:
        unset = np.iinfo(np.int64).max
        best = np.full(nL * nR, unset, np.int64)
    for s, imgs in _image_chunks(model, S, left_ids, chunk):
        v = pos_b[imgs].ravel()
        flat = np.flatnonzero(v >= 0)          # label-major order
        if not len(flat):
            continue
        lab_idx, u = np.divmod(flat, nL)
        v = v[flat]
        if collapse:
            key = u * nR + v
            fresh = best[key] == unset
            key, lab = key[fresh][::-1], (lab_idx[fresh] + s)[::-1]
            best[key] = lab   # reversed so the smallest label wins
        else:
            us.append(u)
            vs.append(v)
            ls.append(lab_idx + s)
    if collapse:
        hit = np.flatnonzero(best != unset)
        eu, ev = np.divmod(hit, nR)
        el = best[hit]
    else:
        eu = np.concatenate(us) if us else np.zeros(0, np.int64)
        ev = np.concatenate(vs) if vs else np.zeros(0, np.int64)
        el = np.concatenate(ls) if ls else np.zeros(0, np.int64)
    return Graphing(model, A, B, S, left_ids, right_ids, eu.astype(np.int64), ev.astype(np.int64),
                    el.astype(np.int64), collapse)


def neighborhood(G: Graphing, Y) -> np.ndarray:
    """Local vertex ids adjacent to Y (local ids, left then right), orientation ignored."""
    Y = np.asarray(sorted(set(int(y) for y in Y)), np.int64)
    if not len(Y):
        return Y
    nL = G.n_left
    out = set()
    for y in Y:
        if y < nL:
            out.update((G.left_neighbors(y) + nL).tolist())
        else:
            out.update(G.right_neighbors(y - nL).tolist())
    return np.array(sorted(out), np.int64)


def neighborhood_by_scan(G: Graphing, Y) -> np.ndarray:
    """Same as ``neighborhood`` by scanning the full edge list."""
    Y = set(int(y) for y in Y)
    nL = G.n_left
    out = set()
    for u, v in zip(G.edge_u.tolist(), G.edge_v.tolist()):
        if u in Y:
            out.add(v + nL)
        if v + nL in Y:
            out.add(u)
    return np.array(sorted(out), np.int64)


def neighborhood_mass(G: Graphing, Y):
    return G.vertex_mass * len(neighborhood(G, Y))


def from_edges(n_left: int, n_right: int, edges, labels=None) -> Graphing:
    """Abstract bipartite graph (no model geometry); used by tests and benchmarks."""
    edges = np.asarray(edges, np.int64).reshape(-1, 2)
    model = _AbstractModel(n_left + n_right)
    A = model.from_indices(np.arange(n_left))
    B = model.from_indices(np.arange(n_left, n_left + n_right))
    lab = np.arange(len(edges)) if labels is None else np.asarray(labels, np.int64)
    S = GeneratorSet((), name="E")
    return Graphing(model, A, B, S, A.indices(), B.indices(), edges[:, 0].copy(), edges[:, 1].copy(),
                    lab, False)


class _AbstractModel:
    kind = "abstract-graph"
    exact = True

    def __init__(self, n: int):
        self.n = n
        self.total_mass = Fraction(n)
        self.point_mass = Fraction(1)

    def from_indices(self, idx):
        m = np.zeros(self.n, bool)
        m[np.asarray(idx, np.int64)] = True
        return SampledSet(self, m)
