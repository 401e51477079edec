"""Path models on linear Bratteli diagrams.

The tower of a linear graph with ``l`` vertices: floor ``r`` is the algebra of
pairs of length-``r`` paths that start at vertex 1 and share their end vertex.
Blocks are indexed by reachable end vertices (ascending), paths inside a block
are ordered lexicographically by their vertex sequence.  Trace weights are the
Markov weights induced by the Perron-Frobenius eigenvector ``sin(kπ/(l+1))``
normalized so the trace of the floor unit is 1; the loop parameter is
``delta = (4 cos²(π/(l+1)))⁻¹``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .matalg import (AlgebraElement, MatAlgError, MultiMatrixAlgebra,
                     SubAlgebraEmbedding, conditional_expectation, invert)


def loop_parameter(l):
    """delta (and z = delta^{1/4}) for the l-vertex linear graph."""
    delta = 1.0 / (4.0 * math.cos(math.pi / (l + 1)) ** 2)
    z = delta ** 0.25
    if l == 4:
        # polish against z^4 + z^2 - 1 = 0 (exact for l = 4)
        for _ in range(3):
            f = z ** 4 + z ** 2 - 1.0
            z -= f / (4 * z ** 3 + 2 * z)
        delta = z ** 4
    return delta, z


@dataclass(frozen=True)
class PathPair:
    """Two equal-length paths from the root with a common end vertex."""
    xi: tuple
    eta: tuple

    def __post_init__(self):
        if len(self.xi) != len(self.eta):
            raise MatAlgError("paths of a pair must have equal length")
        if self.xi[-1] != self.eta[-1]:
            raise MatAlgError("paths of a pair must share their end vertex")

    @property
    def end(self):
        return self.xi[-1]

    @property
    def level(self):
        return len(self.xi) - 1


class BratteliTower:
    """Floors 0..levels of the path model on the l-vertex linear graph."""

    def __init__(self, l, levels):
        if l < 3:
            raise MatAlgError("need at least 3 graph vertices")
        if levels < 1:
            raise MatAlgError("need at least one floor")
        self.l = l
        self.levels = levels
        self.delta, self.z = loop_parameter(l)
        mu = [math.sin(k * math.pi / (l + 1)) for k in range(l + 1)]  # mu[v], v=1..l

        self.paths = []          # per floor: ordered list of paths (vertex tuples)
        self.floor_vertices = []  # per floor: sorted end vertices
        self.path_pos = []       # per floor: path -> (block index, local index)
        self.floors = []         # per floor: MultiMatrixAlgebra
        paths = [(1,)]
        for r in range(levels + 1):
            ends = sorted({p[-1] for p in paths})
            by_end = {v: sorted(p for p in paths if p[-1] == v) for v in ends}
            ordered = [p for v in ends for p in by_end[v]]
            pos = {}
            for bi, v in enumerate(ends):
                for li, p in enumerate(by_end[v]):
                    pos[p] = (bi, li)
            dims = [len(by_end[v]) for v in ends]
            weights = [self.delta ** (r / 2.0) * mu[v] / mu[1] for v in ends]
            alg = MultiMatrixAlgebra(dims, weights)
            total = sum(d * w for d, w in zip(dims, weights))
            if abs(total - 1.0) > 1e-11:
                raise MatAlgError(f"floor {r} trace normalization broke: {total}")
            self.paths.append(ordered)
            self.floor_vertices.append(ends)
            self.path_pos.append(pos)
            self.floors.append(alg)
            paths = [p + (w,) for p in paths for w in self._neighbors(p[-1])]

        self._embeds = [self._embedding_matrix(r) for r in range(levels)]

    def _neighbors(self, v):
        return [w for w in (v - 1, v + 1) if 1 <= w <= self.l]

    def _embedding_matrix(self, r):
        """Floor r -> floor r+1 coordinates (extend both paths by a common edge)."""
        lo, hi = self.floors[r], self.floors[r + 1]
        M = np.zeros((hi.dim, lo.dim))
        for bi, v in enumerate(self.floor_vertices[r]):
            block_paths = [p for p in self.paths[r] if p[-1] == v]
            for xi in block_paths:
                for eta in block_paths:
                    src = lo.unit_index(bi, self.path_pos[r][xi][1], self.path_pos[r][eta][1])
                    for w in self._neighbors(v):
                        bj = self.floor_vertices[r + 1].index(w)
                        ri = self.path_pos[r + 1][xi + (w,)][1]
                        ci = self.path_pos[r + 1][eta + (w,)][1]
                        M[hi.unit_index(bj, ri, ci), src] = 1.0
        return M

    # -- embeddings ------------------------------------------------------------

    def embed_vec(self, r, top, vec):
        for k in range(r, top):
            vec = self._embeds[k] @ vec
        return vec

    def floor_embedding(self, r, top=None):
        """SubAlgebraEmbedding of floor r into floor top (default: top floor)."""
        top = self.levels if top is None else top
        M = np.eye(self.floors[r].dim)
        for k in range(r, top):
            M = self._embeds[k] @ M
        return SubAlgebraEmbedding(self.floors[r], self.floors[top], M)

    # -- metadata ----------------------------------------------------------------

    def metadata(self):
        return {
            "graph_vertices": self.l,
            "levels": self.levels,
            "delta": self.delta,
            "z": self.z,
            "floors": [
                {"vertices": list(self.floor_vertices[r]),
                 "block_dims": list(self.floors[r].block_dims),
                 "trace_weights": [float(w) for w in self.floors[r].trace_weights]}
                for r in range(self.levels + 1)
            ],
        }


def build_tower(l, n_levels):
    return BratteliTower(l, n_levels)


def matrix_unit(tower, level, pair):
    """The path-pair matrix unit T_p at the given floor."""
    if pair.level != level:
        raise MatAlgError("path pair does not live at this floor")
    pos = tower.path_pos[level]
    if pair.xi not in pos or pair.eta not in pos:
        raise MatAlgError("invalid paths for this tower")
    bi, ri = pos[pair.xi]
    _, ci = pos[pair.eta]
    return tower.floors[level].matrix_unit(bi, ri, ci)


def path_weight(tower, level, path):
    v = path[-1]
    bi = tower.floor_vertices[level].index(v)
    return tower.floors[level].trace_weights[bi]


def jones_projection(tower, i, floor=None):
    """The Jones projection e_i, represented at ``floor`` (default: top floor).

    Standard path-model coefficients sqrt(w(v) w(v'))/w(u) over round-trip
    path pairs through the floor-(i-1) vertex u; all coefficients chosen
    non-negative.
    """
    floor = tower.levels if floor is None else floor
    if not 1 <= i <= tower.levels - 1:
        raise MatAlgError(f"e_{i} needs 1 <= i <= {tower.levels - 1}")
    if floor < i + 1:
        raise MatAlgError(f"e_{i} first exists at floor {i + 1}")
    lvl = i + 1
    alg = tower.floors[lvl]
    vec = np.zeros(alg.dim, dtype=complex)
    s_i = {v: path_weight(tower, i, p) for p in tower.paths[i] for v in [p[-1]]}
    s_prev = {v: path_weight(tower, i - 1, p) for p in tower.paths[i - 1] for v in [p[-1]]}
    for rho in tower.paths[i - 1]:
        u = rho[-1]
        nbrs = [w for w in tower._neighbors(u) if w in s_i]
        for v in nbrs:
            for w in nbrs:
                coeff = math.sqrt(s_i[v] * s_i[w]) / s_prev[u]
                xi = rho + (v, u)
                eta = rho + (w, u)
                bi, ri = tower.path_pos[lvl][xi]
                _, ci = tower.path_pos[lvl][eta]
                vec[alg.unit_index(bi, ri, ci)] += coeff
    return AlgebraElement(tower.floors[floor], tower.embed_vec(lvl, floor, vec))


def watatani_element(tower, sub_floor, top=None):
    """The positive element sum_j sqrt(v_j / t_j) q_j of the sub floor.

    v_j are the sub-floor block dimensions, t_j the minimal-projection traces,
    q_j the central projections; represented at floor ``top``.
    """
    top = tower.levels if top is None else top
    alg = tower.floors[sub_floor]
    vec = np.zeros(alg.dim, dtype=complex)
    for bi, (d, t) in enumerate(zip(alg.block_dims, alg.trace_weights)):
        c = math.sqrt(d / t)
        for r in range(d):
            vec[alg.unit_index(bi, r, r)] = c
    return AlgebraElement(tower.floors[top], tower.embed_vec(sub_floor, top, vec))


@dataclass
class QuasiBase:
    """A finite family u_p with sum_p u_p E(u_p* x) = x (Watatani identity)."""
    elements: list
    emb: SubAlgebraEmbedding

    def residual(self, probes=None):
        """Max deviation of both Watatani sums over the given probe elements."""
        amb = self.emb.ambient
        if probes is None:
            from .matalg import mma_basis
            probes = mma_basis(amb)
        worst = 0.0
        for x in probes:
            left = amb.zero()
            right = amb.zero()
            for u in self.elements:
                left = left + u * conditional_expectation(self.emb, u.star * x)
                right = right + conditional_expectation(self.emb, x * u) * u.star
            worst = max(worst, (left - x).max_abs(), (right - x).max_abs())
        return worst


def quasi_base(tower, target_floor, sub_floor, h=None):
    """Watatani quasi-base {s_p^{-1/2} T_p h^{-1}} for E: floor target -> floor sub.

    When ``h`` is omitted it defaults to the sub-floor Watatani element; an
    explicit ``h`` must be an invertible element at the target floor.
    """
    if h is None:
        h = watatani_element(tower, sub_floor, top=target_floor)
    hinv = invert(h)
    emb = tower.floor_embedding(sub_floor, target_floor)
    alg = tower.floors[target_floor]
    elements = []
    for bi, v in enumerate(tower.floor_vertices[target_floor]):
        s_p = tower.floors[target_floor].trace_weights[bi]
        d = alg.block_dims[bi]
        for r in range(d):
            for c in range(d):
                T = alg.matrix_unit(bi, r, c)
                elements.append((s_p ** -0.5) * T * hinv)
    return QuasiBase(elements, emb)
