"""Staged augmenting-path matching on bipartite graphings.

Stage i ends when no augmenting path of length <= 2i-1 is left.  Each stage
runs Hopcroft-Karp phases: a layered BFS from the free left vertices finds
the shortest augmenting length d, then a DFS over the layered graph picks a
maximal vertex-disjoint family of length-d paths, which are flipped.  Ties
are broken by (vertex id, neighbour id, label).
"""
from __future__ import annotations

import json
import math
import time
from collections import deque
from dataclasses import dataclass, asdict
from fractions import Fraction

import numpy as np

from .graphing import Graphing, neighborhood

__all__ = [
    "Matching", "StageReport", "advance_stage", "run_to_stage", "run_to_completion",
    "verify_no_short_augmenting_path", "shortest_augmenting_length", "maximum_matching_oracle",
    "alternating_layers", "extract_equidecomposition", "Piece", "MatchingCertificate",
    "decay_bound", "ResidueError",
]


class ResidueError(ValueError):
    pass


@dataclass(eq=False)
class Matching:
    G: Graphing
    match_edge: np.ndarray      # per left vertex: matched edge id or -1
    mate_right: np.ndarray      # per right vertex: matched left vertex or -1
    stage: int = 0

    @classmethod
    def empty(cls, G: Graphing) -> "Matching":
        return cls(G, np.full(G.n_left, -1, np.int64), np.full(G.n_right, -1, np.int64), 0)

    def copy(self) -> "Matching":
        return Matching(self.G, self.match_edge.copy(), self.mate_right.copy(), self.stage)

    @property
    def size(self) -> int:
        return int(np.count_nonzero(self.match_edge >= 0))

    def edges(self) -> np.ndarray:
        return self.match_edge[self.match_edge >= 0]

    def free_left(self) -> np.ndarray:
        return np.flatnonzero(self.match_edge < 0)

    def free_right(self) -> np.ndarray:
        return np.flatnonzero(self.mate_right < 0)

    def unmatched_left_mass(self):
        return self.G.vertex_mass * len(self.free_left())

    def unmatched_right_mass(self):
        return self.G.vertex_mass * len(self.free_right())

    def is_valid(self) -> bool:
        """Every vertex meets at most one matched edge and both index arrays agree."""
        G = self.G
        e = self.edges()
        us, vs = G.edge_u[e], G.edge_v[e]
        if len(np.unique(us)) != len(us) or len(np.unique(vs)) != len(vs):
            return False
        if not np.array_equal(np.flatnonzero(self.match_edge >= 0), np.sort(us)):
            return False
        return bool(np.all(self.mate_right[vs] == us)) and int(np.count_nonzero(self.mate_right >= 0)) == len(vs)

    def flip(self, path_edges) -> None:
        """Flip an augmenting path given as its edge ids in order (odd count)."""
        G = self.G
        for k in range(0, len(path_edges), 2):
            e = path_edges[k]
            u, v = int(G.edge_u[e]), int(G.edge_v[e])
            self.match_edge[u] = e
            self.mate_right[v] = u


@dataclass
class StageReport:
    stage: int
    unmatched_left_mass: object
    unmatched_right_mass: object
    unmatched_before: object
    flipped_edge_mass: object
    phases: int
    paths: int
    elapsed: float
    next_shortest: int | None = None

    def to_json(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, Fraction):
                d[k] = str(v)
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def _gather(ptr, items, verts):
    """Concatenate items[ptr[v]:ptr[v+1]] over verts, plus the owner of each entry."""
    starts, ends = ptr[verts], ptr[verts + 1]
    lens = ends - starts
    total = int(lens.sum())
    if total == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    owner = np.repeat(np.arange(len(verts)), lens)
    offs = np.arange(total) - np.repeat(np.cumsum(lens) - lens, lens)
    return items[starts[owner] + offs], verts[owner]


def _layers(G: Graphing, M: Matching, limit: int):
    """Layered BFS from free left vertices.

    Returns (d, dist_left, dist_right): d is the shortest augmenting length
    (None if none within ``limit``); dist arrays give the BFS layer k of
    vertices, left vertices of layer k sit at path position 2k.
    """
    dist_left = np.full(G.n_left, -1, np.int64)
    dist_right = np.full(G.n_right, -1, np.int64)
    frontier = M.free_left()
    dist_left[frontier] = 0
    k = 0
    while len(frontier):
        if 2 * k + 1 > limit:
            return None, dist_left, dist_right
        eids, _ = _gather(G.left_ptr, G.left_edges, frontier)
        vs = np.unique(G.edge_v[eids])
        vs = vs[dist_right[vs] < 0]
        if not len(vs):
            return None, dist_left, dist_right
        dist_right[vs] = k
        if np.any(M.mate_right[vs] < 0):
            return 2 * k + 1, dist_left, dist_right
        frontier = M.mate_right[vs]
        frontier = frontier[dist_left[frontier] < 0]
        dist_left[frontier] = k + 1
        k += 1
    return None, dist_left, dist_right


def _disjoint_paths(G: Graphing, M: Matching, d: int, dist_left, dist_right) -> list[list[int]]:
    """Maximal family of vertex-disjoint augmenting paths of length d in the layered graph."""
    top = (d - 1) // 2
    dead_left = np.zeros(G.n_left, bool)
    used_right = np.zeros(G.n_right, bool)
    cursor = {}
    paths = []

    def candidates(u):
        c = cursor.get(u)
        if c is None:
            k = dist_left[u]
            sl = G.left_edges[G.left_ptr[u]:G.left_ptr[u + 1]]
            vs = G.edge_v[sl]
            ok = dist_right[vs] == k
            if k == top:
                ok &= M.mate_right[vs] < 0
            else:
                ok &= M.mate_right[vs] >= 0
            c = [sl[ok].tolist(), 0]
            cursor[u] = c
        return c

    for root in M.free_left().tolist():
        if dist_left[root] != 0 or dead_left[root]:
            continue
        stack_u, stack_e = [root], []
        while stack_u:
            u = stack_u[-1]
            c = candidates(u)
            advanced = False
            while c[1] < len(c[0]):
                e = c[0][c[1]]
                c[1] += 1
                v = int(G.edge_v[e])
                if used_right[v]:
                    continue
                if dist_left[u] == top:
                    used_right[v] = True
                    stack_e.append(e)
                    paths.append(list(stack_e))
                    for w in stack_u:
                        dead_left[w] = True
                    stack_u = []
                    advanced = True
                    break
                w = int(M.mate_right[v])
                if dead_left[w] or dist_left[w] != dist_left[u] + 1:
                    continue
                used_right[v] = True
                stack_e.append(e)
                stack_u.append(w)
                advanced = True
                break
            if not advanced:
                dead_left[u] = True
                stack_u.pop()
                if stack_e:
                    stack_e.pop()
    # interleave the matched edges that the paths traverse
    full = []
    for p in paths:
        seq = []
        for j, e in enumerate(p):
            if j:
                u = int(G.edge_u[e])
                seq.append(int(M.match_edge[u]))
            seq.append(int(e))
        full.append(seq)
    return full


def advance_stage(G: Graphing, M: Matching, stage: int | None = None) -> tuple[Matching, StageReport]:
    """Advance M to the next stage: afterwards no augmenting path of length <= 2i-1 exists."""
    t0 = time.perf_counter()
    M = M.copy()
    i = M.stage + 1 if stage is None else stage
    limit = 2 * i - 1
    mass = G.vertex_mass
    before = mass * (len(M.free_left()) + len(M.free_right()))
    flipped, phases, npaths = 0, 0, 0
    nxt = None
    while True:
        d, dl, dr = _layers(G, M, limit)
        if d is None:
            break
        paths = _disjoint_paths(G, M, d, dl, dr)
        for p in paths:
            M.flip(p)
        phases += 1
        npaths += len(paths)
        flipped += d * len(paths)
    M.stage = i
    report = StageReport(
        stage=i,
        unmatched_left_mass=M.unmatched_left_mass(),
        unmatched_right_mass=M.unmatched_right_mass(),
        unmatched_before=before,
        flipped_edge_mass=mass * flipped,
        phases=phases,
        paths=npaths,
        elapsed=time.perf_counter() - t0,
        next_shortest=nxt,
    )
    return M, report


def run_to_stage(G: Graphing, k: int, M: Matching | None = None) -> tuple[Matching, list[StageReport]]:
    if k < 1:
        raise ValueError("stage must be >= 1")
    M = Matching.empty(G) if M is None else M
    reports = []
    while M.stage < k:
        M, rep = advance_stage(G, M)
        reports.append(rep)
    return M, reports


def run_to_completion(G: Graphing, max_stage: int | None = None) -> tuple[Matching, list[StageReport]]:
    """Advance stages until no augmenting path is left (a maximum matching)."""
    M = Matching.empty(G)
    reports = []
    cap = max_stage if max_stage is not None else G.n_vertices + 1
    while M.stage < cap:
        M, rep = advance_stage(G, M)
        reports.append(rep)
        if shortest_augmenting_length(G, M) is None:
            break
    return M, reports


def shortest_augmenting_length(G: Graphing, M: Matching) -> int | None:
    d, _, _ = _layers(G, M, G.n_vertices + 1)
    return d


def verify_no_short_augmenting_path(G: Graphing, M: Matching, L: int):
    """(True, None) if no augmenting path of length <= L exists, else (False, witness).

    The witness is the vertex sequence (local ids, right vertices offset by
    nL) of one shortest augmenting path.  Plain per-vertex BFS, independent
    of the staged search above.
    """
    nL = G.n_left
    mate_left = {}
    for e in M.edges().tolist():
        mate_left[int(G.edge_u[e])] = int(G.edge_v[e])
    mate_right = {v: u for u, v in mate_left.items()}
    parent = {}
    q = deque()
    for u in range(nL):
        if u not in mate_left:
            parent[("L", u)] = None
            q.append((("L", u), 0))
    while q:
        (side, x), depth = q.popleft()
        if side == "L":
            if depth + 1 > L:
                continue
            for v in G.left_neighbors(x).tolist():
                if mate_left.get(x) == v:
                    continue
                node = ("R", v)
                if node in parent:
                    continue
                parent[node] = (side, x)
                if v not in mate_right:
                    path = [node]
                    while parent[path[-1]] is not None:
                        path.append(parent[path[-1]])
                    path.reverse()
                    return False, [x if s == "L" else x + nL for s, x in path]
                q.append((node, depth + 1))
        else:
            u = mate_right[x]
            node = ("L", u)
            if node not in parent:
                parent[node] = (side, x)
                q.append((node, depth + 1))
    return True, None


def maximum_matching_oracle(n_left: int, adjacency) -> int:
    """Maximum matching size by Kuhn's simple augmenting DFS (independent oracle)."""
    mate = {}

    def try_augment(u, seen):
        for v in adjacency[u]:
            if v in seen:
                continue
            seen.add(v)
            if v not in mate or try_augment(mate[v], seen):
                mate[v] = u
                return True
        return False

    import sys
    old = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old, 10 * n_left + 100))
    try:
        return sum(1 for u in range(n_left) if try_augment(u, set()))
    finally:
        sys.setrecursionlimit(old)


def alternating_layers(G: Graphing, M: Matching, depth: int, from_right: bool = False):
    """Sets X_0 ⊆ X_1 ⊆ ... ⊆ X_depth of end vertices of alternating paths.

    X_0 is the free left set (free right set with ``from_right``); X_j
    collects the ends of alternating paths of length at most j.  Each layer
    is returned as (left mask, right mask).
    """
    nL, nR = G.n_left, G.n_right
    left = np.zeros(nL, bool)
    right = np.zeros(nR, bool)
    if from_right:
        right[M.free_right()] = True
    else:
        left[M.free_left()] = True
    frontier_l, frontier_r = left.copy(), right.copy()
    mate_left = np.full(nL, -1, np.int64)
    me = M.edges()
    mate_left[G.edge_u[me]] = G.edge_v[me]
    out = [(left.copy(), right.copy())]
    for _ in range(depth):
        new_r = np.zeros(nR, bool)
        new_l = np.zeros(nL, bool)
        # unmatched step from frontier left vertices, matched step from frontier right vertices
        fl = np.flatnonzero(frontier_l)
        if len(fl):
            eids, owners = _gather(G.left_ptr, G.left_edges, fl)
            if from_right:
                vs = mate_left[fl]
                vs = vs[vs >= 0]
                new_r[vs] = True
            else:
                vs = G.edge_v[eids]
                keep = mate_left[owners] != vs
                new_r[vs[keep]] = True
        fr = np.flatnonzero(frontier_r)
        if len(fr):
            if from_right:
                eids, owners = _gather(G.right_ptr, G.right_edges, fr)
                us = G.edge_u[eids]
                keep = M.mate_right[owners] != us
                new_l[us[keep]] = True
            else:
                us = M.mate_right[fr]
                new_l[us[us >= 0]] = True
        frontier_l = new_l & ~left
        frontier_r = new_r & ~right
        left |= new_l
        right |= new_r
        out.append((left.copy(), right.copy()))
    return out


def expansion_constant(G: Graphing, family) -> float:
    """Largest c with |N(Y)| ≥ min(n/3, (1+c)|Y|) for every vertex set Y in the family.

    Counts are normalized by n = |A| + |B|, i.e. the threshold 1/3 is scaled
    proportionally to the total vertex mass.  Sets whose neighborhood already
    reaches n/3 impose no constraint; returns inf when no set constrains c.
    """
    n = G.n_vertices
    best = math.inf
    for Y in family:
        Y = np.unique(np.asarray(Y, np.int64))
        if not len(Y):
            continue
        k = len(neighborhood(G, Y))
        if 3 * k >= n:
            continue
        best = min(best, k / len(Y) - 1.0)
    return best


def decay_bound(c: float, i: int, scale: float = 1.0) -> float:
    """d1·d2^i with d1 = 2(1+c), d2 = (1+c)^(-1/2), times the mass scale."""
    return scale * 2.0 * (1.0 + c) * (1.0 + c) ** (-i / 2.0)


@dataclass
class Piece:
    label: int
    left_ids: np.ndarray    # model indices of the piece
    right_ids: np.ndarray   # model indices of its image

    def to_json(self, word_tokens=None) -> dict:
        d = {"label": self.label, "points": self.left_ids.tolist(), "image": self.right_ids.tolist()}
        if word_tokens is not None:
            d["word"] = word_tokens
        return d


@dataclass
class MatchingCertificate:
    G: Graphing
    pieces: list
    residue_left: np.ndarray
    residue_right: np.ndarray

    @property
    def residue_mass(self):
        return self.G.vertex_mass * len(self.residue_left)


def extract_equidecomposition(G: Graphing, M: Matching, threshold=0) -> MatchingCertificate:
    """Group matched edges by label into pieces (A_i, γ_i); unmatched points form the residue."""
    res_l = G.left_ids[M.free_left()]
    res_r = G.right_ids[M.free_right()]
    mass = G.vertex_mass * len(res_l)
    if mass > threshold:
        raise ResidueError(f"residue mass {mass} above threshold {threshold}")
    e = M.edges()
    labels = G.edge_label[e]
    pieces = []
    for lab in np.unique(labels):
        sel = e[labels == lab]
        pieces.append(Piece(int(lab), G.left_ids[G.edge_u[sel]], G.right_ids[G.edge_v[sel]]))
    return MatchingCertificate(G, pieces, res_l, res_r)
