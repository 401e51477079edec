"""Numerical kernel: finite direct sums of complex matrix blocks with a faithful trace.

Everything downstream lives in a :class:`MultiMatrixAlgebra`: a direct sum
``⊕_i M_{d_i}(C)`` together with the trace weights ``s_i = tr(minimal
projector of block i)``.  Elements are stored as coordinate vectors over the
canonical matrix-unit basis (block index, then row-major), which makes all
the linear algebra (conditional expectations, commutants, *-subalgebra
recovery, map extension over words) plain numpy.

Conventions
-----------
* coordinates: ``vec`` of length ``dim = Σ d_i²``; entry ``(i, r, c)`` sits at
  ``offset_i + r*d_i + c``.
* the trace inner product is ``<x, y> = tr(x* y)``; it is the weighted
  Euclidean product of coordinate vectors.
* linear maps are dense matrices acting on coordinates, new = M @ old.
"""

from __future__ import annotations

import json
import math

import numpy as np

DEFAULT_TOL = 1e-9      # equality assertions
RESIDUAL_TOL = 1e-12    # residuals of exact algebraic identities on well-conditioned data
RANK_RTOL = 1e-8        # relative singular-value cutoff for rank / null-space decisions
CLUSTER_TOL = 1e-7      # eigenvalue clustering threshold in block recovery
MULT_TENSOR_MAX_DIM = 256


class MatAlgError(ValueError):
    """Raised on contract violations (parent mismatch, singular data, ...)."""


class MultiMatrixAlgebra:
    """A finite direct sum of full complex matrix blocks with a faithful trace."""

    def __init__(self, block_dims, trace_weights):
        block_dims = tuple(int(d) for d in block_dims)
        trace_weights = tuple(float(w) for w in trace_weights)
        if len(block_dims) != len(trace_weights):
            raise MatAlgError("block_dims and trace_weights must have equal length")
        if any(d <= 0 for d in block_dims):
            raise MatAlgError("block dimensions must be positive")
        if any(w <= 0 for w in trace_weights):
            raise MatAlgError("trace weights must be positive (faithful trace)")
        self.block_dims = block_dims
        self.trace_weights = trace_weights
        self.dim = sum(d * d for d in block_dims)
        offs = []
        off = 0
        for d in block_dims:
            offs.append(off)
            off += d * d
        self.offsets = tuple(offs)
        w = np.empty(self.dim)
        diag = np.zeros(self.dim, dtype=bool)
        for i, (o, d) in enumerate(zip(self.offsets, block_dims)):
            w[o:o + d * d] = trace_weights[i]
            for r in range(d):
                diag[o + r * d + r] = True
        self.weight_vec = w
        self._diag_mask = diag
        self._mult_tensor = None
        self._star_mat = None

    # -- identity / equality ------------------------------------------------

    def __eq__(self, other):
        return (isinstance(other, MultiMatrixAlgebra)
                and self.block_dims == other.block_dims
                and np.allclose(other.trace_weights, self.trace_weights, rtol=0, atol=1e-14))

    def __hash__(self):
        return hash(self.block_dims)

    def __repr__(self):
        return f"MultiMatrixAlgebra(block_dims={self.block_dims!r})"

    @property
    def num_blocks(self):
        return len(self.block_dims)

    def is_trace_normalized(self, tol=DEFAULT_TOL):
        return abs(sum(d * s for d, s in zip(self.block_dims, self.trace_weights)) - 1.0) < tol

    # -- element constructors ------------------------------------------------

    def element(self, vec):
        return AlgebraElement(self, np.asarray(vec, dtype=complex))

    def zero(self):
        return self.element(np.zeros(self.dim, dtype=complex))

    def unit(self):
        v = np.zeros(self.dim, dtype=complex)
        v[self._diag_mask] = 1.0
        return self.element(v)

    def from_blocks(self, blocks):
        if len(blocks) != self.num_blocks:
            raise MatAlgError("wrong number of blocks")
        v = np.empty(self.dim, dtype=complex)
        for o, d, b in zip(self.offsets, self.block_dims, blocks):
            b = np.asarray(b, dtype=complex)
            if b.shape != (d, d):
                raise MatAlgError(f"block shape {b.shape} does not match ({d},{d})")
            v[o:o + d * d] = b.ravel()
        return self.element(v)

    def unit_index(self, block, row, col):
        d = self.block_dims[block]
        return self.offsets[block] + row * d + col

    def matrix_unit(self, block, row, col):
        v = np.zeros(self.dim, dtype=complex)
        v[self.unit_index(block, row, col)] = 1.0
        return self.element(v)

    def random_element(self, rng, selfadjoint=False):
        v = rng.standard_normal(self.dim) + 1j * rng.standard_normal(self.dim)
        x = self.element(v)
        return (x + x.star) * 0.5 if selfadjoint else x

    # -- structure tensors ----------------------------------------------------

    def mult_tensor(self):
        """Dense tensor m[i, j, k]: coefficient of basis_k in basis_i @ basis_j."""
        if self._mult_tensor is None:
            if self.dim > MULT_TENSOR_MAX_DIM:
                raise MatAlgError(
                    f"refusing dense multiplication tensor for dim {self.dim} "
                    f"(> {MULT_TENSOR_MAX_DIM})")
            m = np.zeros((self.dim, self.dim, self.dim))
            for o, d in zip(self.offsets, self.block_dims):
                for r in range(d):
                    for s in range(d):
                        for u in range(d):
                            # E_{rs} E_{su} = E_{ru}
                            m[o + r * d + s, o + s * d + u, o + r * d + u] = 1.0
            self._mult_tensor = m
        return self._mult_tensor

    def star_matrix(self):
        """Matrix S with vec(x*) = S @ conj(vec(x)) (a permutation here)."""
        if self._star_mat is None:
            S = np.zeros((self.dim, self.dim))
            for o, d in zip(self.offsets, self.block_dims):
                for r in range(d):
                    for c in range(d):
                        S[o + c * d + r, o + r * d + c] = 1.0
            self._star_mat = S
        return self._star_mat

    def star_vec(self, vec):
        return self.star_matrix() @ np.conj(vec)

    def trace_vec(self):
        """The trace as a coordinate functional (tr(x) = trace_vec @ vec(x))."""
        t = np.zeros(self.dim)
        t[self._diag_mask] = self.weight_vec[self._diag_mask]
        return t

    def left_mult_operator(self, vec):
        """Matrix of y ↦ x·y on coordinates, x given by ``vec``."""
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for o, d in zip(self.offsets, self.block_dims):
            X = np.asarray(vec[o:o + d * d]).reshape(d, d)
            out[o:o + d * d, o:o + d * d] = np.kron(X, np.eye(d))
        return out

    def right_mult_operator(self, vec):
        """Matrix of y ↦ y·x on coordinates."""
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for o, d in zip(self.offsets, self.block_dims):
            X = np.asarray(vec[o:o + d * d]).reshape(d, d)
            out[o:o + d * d, o:o + d * d] = np.kron(np.eye(d), X.T)
        return out

    def inner(self, u, v):
        """Trace inner product <u, v> = tr(u* v) of coordinate vectors."""
        return complex(np.vdot(np.asarray(u) * self.weight_vec, v))


class AlgebraElement:
    """A block-diagonal complex matrix, stored as coordinates over matrix units."""

    __slots__ = ("parent", "vec")

    def __init__(self, parent, vec):
        vec = np.asarray(vec, dtype=complex)
        if vec.shape != (parent.dim,):
            raise MatAlgError(f"coordinate vector has shape {vec.shape}, expected ({parent.dim},)")
        self.parent = parent
        self.vec = vec

    def blocks(self):
        p = self.parent
        return [self.vec[o:o + d * d].reshape(d, d) for o, d in zip(p.offsets, p.block_dims)]

    def _check_parent(self, other):
        if self.parent is not other.parent and self.parent != other.parent:
            raise MatAlgError("elements belong to different algebras")

    def __add__(self, other):
        self._check_parent(other)
        return AlgebraElement(self.parent, self.vec + other.vec)

    def __sub__(self, other):
        self._check_parent(other)
        return AlgebraElement(self.parent, self.vec - other.vec)

    def __neg__(self):
        return AlgebraElement(self.parent, -self.vec)

    def __mul__(self, other):
        if isinstance(other, AlgebraElement):
            self._check_parent(other)
            p = self.parent
            out = np.empty(p.dim, dtype=complex)
            for o, d in zip(p.offsets, p.block_dims):
                X = self.vec[o:o + d * d].reshape(d, d)
                Y = other.vec[o:o + d * d].reshape(d, d)
                out[o:o + d * d] = (X @ Y).ravel()
            return AlgebraElement(p, out)
        return AlgebraElement(self.parent, self.vec * complex(other))

    def __rmul__(self, scalar):
        return AlgebraElement(self.parent, complex(scalar) * self.vec)

    @property
    def star(self):
        return AlgebraElement(self.parent, self.parent.star_vec(self.vec))

    def trace(self):
        return complex(self.parent.trace_vec() @ self.vec)

    def inner(self, other):
        """<self, other> = tr(self* other)."""
        self._check_parent(other)
        return self.parent.inner(self.vec, other.vec)

    def norm(self):
        return math.sqrt(max(self.inner(self).real, 0.0))

    def max_abs(self):
        return float(np.max(np.abs(self.vec))) if self.vec.size else 0.0

    def is_selfadjoint(self, tol=DEFAULT_TOL):
        return (self - self.star).max_abs() < tol

    def is_projection(self, tol=DEFAULT_TOL):
        return (self * self - self).max_abs() < tol and self.is_selfadjoint(tol)

    def __repr__(self):
        return f"AlgebraElement({self.parent.block_dims}, |x|={self.norm():.3g})"


# ---------------------------------------------------------------------------
# spec-level operations
# ---------------------------------------------------------------------------

def mma_basis(alg):
    """Canonical matrix-unit basis, ordered by block then row-major."""
    out = []
    for i, d in enumerate(alg.block_dims):
        for r in range(d):
            for c in range(d):
                out.append(alg.matrix_unit(i, r, c))
    return out


def trace(x):
    return x.trace()


def positive_sqrt(x, tol=DEFAULT_TOL):
    """Spectral square root of a positive-semidefinite self-adjoint element."""
    if not x.is_selfadjoint(tol):
        raise MatAlgError("positive_sqrt: element is not self-adjoint")
    out = []
    for b in x.blocks():
        w, v = np.linalg.eigh(b)
        if np.min(w) < -tol:
            raise MatAlgError(f"positive_sqrt: negative eigenvalue {np.min(w):.3e}")
        out.append((v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T)
    return x.parent.from_blocks(out)


def invert(x, tol=DEFAULT_TOL):
    out = []
    for b in x.blocks():
        smin = np.linalg.svd(b, compute_uv=False)[-1] if b.size else 0.0
        if smin < tol:
            raise MatAlgError(f"invert: smallest singular value {smin:.3e} below tolerance")
        out.append(np.linalg.inv(b))
    return x.parent.from_blocks(out)


def tensor_algebra(a, b):
    """Tensor product algebra: pairwise Kronecker blocks, multiplicative trace."""
    dims = []
    weights = []
    for da, sa in zip(a.block_dims, a.trace_weights):
        for db, sb in zip(b.block_dims, b.trace_weights):
            dims.append(da * db)
            weights.append(sa * sb)
    return MultiMatrixAlgebra(dims, weights)


class TensorElement:
    """An element of A⊗B as a coefficient matrix over the canonical bases."""

    __slots__ = ("left_parent", "right_parent", "coeff")

    def __init__(self, left_parent, right_parent, coeff):
        coeff = np.asarray(coeff, dtype=complex)
        if coeff.shape != (left_parent.dim, right_parent.dim):
            raise MatAlgError("coefficient shape does not match the parent pair")
        self.left_parent = left_parent
        self.right_parent = right_parent
        self.coeff = coeff

    def _check(self, other):
        if self.left_parent != other.left_parent or self.right_parent != other.right_parent:
            raise MatAlgError("tensor elements over different algebra pairs")

    def __add__(self, other):
        self._check(other)
        return TensorElement(self.left_parent, self.right_parent, self.coeff + other.coeff)

    def __sub__(self, other):
        self._check(other)
        return TensorElement(self.left_parent, self.right_parent, self.coeff - other.coeff)

    def __mul__(self, other):
        if isinstance(other, TensorElement):
            self._check(other)
            mA = self.left_parent.mult_tensor()
            mB = self.right_parent.mult_tensor()
            out = np.einsum("st,uv,sua,tvb->ab", self.coeff, other.coeff, mA, mB,
                            optimize=True)
            return TensorElement(self.left_parent, self.right_parent, out)
        return TensorElement(self.left_parent, self.right_parent, self.coeff * complex(other))

    def __rmul__(self, scalar):
        return self * scalar

    @property
    def star(self):
        SA = self.left_parent.star_matrix()
        SB = self.right_parent.star_matrix()
        return TensorElement(self.left_parent, self.right_parent,
                             SA @ np.conj(self.coeff) @ SB.T)

    def trace(self):
        return complex(self.left_parent.trace_vec() @ self.coeff @ self.right_parent.trace_vec())

    def max_abs(self):
        return float(np.max(np.abs(self.coeff)))

    def __repr__(self):
        return f"TensorElement({self.left_parent.block_dims}⊗{self.right_parent.block_dims})"


def tensor_elem(x, y):
    return TensorElement(x.parent, y.parent, np.outer(x.vec, y.vec))


def tensor_unit(a, b):
    return tensor_elem(a.unit(), b.unit())


# ---------------------------------------------------------------------------
# subspace machinery
# ---------------------------------------------------------------------------

def orthonormalize(vectors, weight=None, tol=1e-11):
    """Modified Gram-Schmidt with one re-orthogonalization pass.

    ``vectors`` is a sequence of coordinate vectors; returns a matrix whose
    columns are orthonormal under the (optionally weighted) inner product.
    """
    cols = []
    for v in vectors:
        v = np.asarray(v, dtype=complex).copy()
        for _ in range(2):
            for q in cols:
                if weight is None:
                    v -= np.vdot(q, v) * q
                else:
                    v -= np.vdot(q * weight, v) * q
        nrm = math.sqrt(np.vdot(v * weight, v).real) if weight is not None \
            else math.sqrt(np.vdot(v, v).real)
        if nrm > tol:
            cols.append(v / nrm)
    if not cols:
        n = len(np.asarray(vectors[0])) if len(vectors) else 0
        return np.zeros((n, 0), dtype=complex)
    return np.column_stack(cols)


def null_space(mat, rtol=RANK_RTOL, atol=1e-10):
    """Orthonormal basis (columns) of ker(mat), Euclidean inner product.

    The absolute floor matters: a numerically-zero matrix must have full
    kernel, which a purely relative cutoff gets wrong.
    """
    mat = np.asarray(mat, dtype=complex)
    if mat.shape[0] == 0:
        return np.eye(mat.shape[1], dtype=complex)
    u, s, vh = np.linalg.svd(mat, full_matrices=True)
    cut = max(rtol * (s[0] if s.size else 0.0), atol)
    rank = int(np.sum(s > cut))
    return vh[rank:].conj().T


def subspace_rank(columns, rtol=RANK_RTOL, atol=1e-10):
    if columns.shape[1] == 0:
        return 0
    s = np.linalg.svd(columns, compute_uv=False)
    cut = max(rtol * (s[0] if s.size else 0.0), atol)
    return int(np.sum(s > cut))


def subspace_intersection_dim(U, V, rtol=RANK_RTOL):
    """dim(span U ∩ span V) for column-span matrices over the same space."""
    ru = subspace_rank(U, rtol)
    rv = subspace_rank(V, rtol)
    rsum = subspace_rank(np.hstack([U, V]), rtol)
    return ru + rv - rsum


def subspace_contains(U, vec, tol=DEFAULT_TOL):
    """Whether vec lies in the column span of U (least-squares residual)."""
    if U.shape[1] == 0:
        return float(np.linalg.norm(vec)) < tol
    c, *_ = np.linalg.lstsq(U, vec, rcond=None)
    return float(np.linalg.norm(U @ c - vec)) < tol


# ---------------------------------------------------------------------------
# subalgebra embeddings, conditional expectations, commutants
# ---------------------------------------------------------------------------

class SubAlgebraEmbedding:
    """A unital *-subalgebra, given by the ambient images of its matrix units."""

    def __init__(self, sub, ambient, inject):
        inject = np.asarray(inject, dtype=complex)
        if inject.shape != (ambient.dim, sub.dim):
            raise MatAlgError("inject matrix has the wrong shape")
        self.sub = sub
        self.ambient = ambient
        self.inject = inject
        # Gram matrix of the embedded basis under the ambient trace inner product
        self._gram = inject.conj().T @ (ambient.weight_vec[:, None] * inject)

    def embed(self, x):
        vec = x.vec if isinstance(x, AlgebraElement) else np.asarray(x, dtype=complex)
        return AlgebraElement(self.ambient, self.inject @ vec)

    def coords(self, x, tol=None):
        """Coordinates in the subalgebra basis; errors if x is not in the image."""
        vec = x.vec if isinstance(x, AlgebraElement) else np.asarray(x, dtype=complex)
        c, *_ = np.linalg.lstsq(self.inject, vec, rcond=None)
        resid = float(np.linalg.norm(self.inject @ c - vec))
        if tol is not None and resid > tol * max(1.0, float(np.linalg.norm(vec))):
            raise MatAlgError(f"element is not in the subalgebra (residual {resid:.3e})")
        return c

    def basis_ambient(self):
        return [AlgebraElement(self.ambient, self.inject[:, j]) for j in range(self.sub.dim)]

    def unit_ambient(self):
        return self.embed(self.sub.unit())

    def check_unital(self, tol=DEFAULT_TOL):
        return (self.unit_ambient() - self.ambient.unit()).max_abs() < tol

    def expectation_matrix(self):
        """Matrix of the trace-preserving conditional expectation (ambient→ambient)."""
        W = self.ambient.weight_vec
        rhs = self.inject.conj().T * W[None, :]
        coeff = np.linalg.solve(self._gram, rhs)          # sub coords of E(x)
        return self.inject @ coeff


def conditional_expectation(emb, x):
    """Trace-preserving conditional expectation onto the embedded subalgebra.

    Solves tr(E(x) y) = tr(x y) for all y in the subalgebra; raises if the
    Gram matrix of the embedded basis is singular (non-faithful restriction).
    """
    try:
        c = np.linalg.solve(emb._gram, emb.inject.conj().T @ (emb.ambient.weight_vec * x.vec))
    except np.linalg.LinAlgError as exc:
        raise MatAlgError("singular Gram matrix: trace restriction is not faithful") from exc
    return AlgebraElement(emb.ambient, emb.inject @ c)


def commutant(emb_or_elems, ambient=None, generators=None):
    """Orthonormal basis (trace inner product) of the relative commutant.

    Accepts a :class:`SubAlgebraEmbedding` or a list of ambient elements.
    """
    if isinstance(emb_or_elems, SubAlgebraEmbedding):
        amb = emb_or_elems.ambient
        gens = generators if generators is not None else emb_or_elems.basis_ambient()
    else:
        gens = list(emb_or_elems)
        amb = ambient if ambient is not None else gens[0].parent
    rows = []
    for g in gens:
        rows.append(amb.left_mult_operator(g.vec) - amb.right_mult_operator(g.vec))
    ns = null_space(np.vstack(rows)) if rows else np.eye(amb.dim, dtype=complex)
    cols = orthonormalize(list(ns.T), weight=amb.weight_vec)
    return [AlgebraElement(amb, cols[:, j]) for j in range(cols.shape[1])]


def center_basis(alg):
    return commutant(mma_basis(alg), ambient=alg)


# ---------------------------------------------------------------------------
# *-subalgebra recovery: block decomposition and matrix units
# ---------------------------------------------------------------------------

def _minimal_central_projections(span_cols, ambient, rng, tol=DEFAULT_TOL):
    """Minimal projections of the center of the subalgebra spanned by span_cols."""
    s = span_cols.shape[1]
    rows = []
    for j in range(s):
        op = ambient.left_mult_operator(span_cols[:, j]) - ambient.right_mult_operator(span_cols[:, j])
        rows.append(op @ span_cols)
    ns = null_space(np.vstack(rows))          # center coords in the span basis
    zdim = ns.shape[1]
    # a random self-adjoint central element separates the central projections
    for attempt in range(8):
        coeffs = rng.standard_normal(zdim) + 1j * rng.standard_normal(zdim)
        zc = AlgebraElement(ambient, span_cols @ (ns @ coeffs))
        zc = (zc + zc.star) * 0.5
        eigpairs = []
        for bi, blk in enumerate(zc.blocks()):
            w, v = np.linalg.eigh(blk)
            for k in range(len(w)):
                eigpairs.append((w[k], bi, v[:, k]))
        eigpairs.sort(key=lambda t: t[0])
        clusters = []
        for val, bi, vecb in eigpairs:
            if clusters and abs(val - clusters[-1][0][-1]) < CLUSTER_TOL:
                clusters[-1][0].append(val)
                clusters[-1][1].append((bi, vecb))
            else:
                clusters.append(([val], [(bi, vecb)]))
        if len(clusters) == zdim and all(
                abs(c[0][-1] - c[0][0]) < CLUSTER_TOL / 10 for c in clusters):
            projs = []
            for _, members in clusters:
                blocks = [np.zeros((d, d), dtype=complex) for d in ambient.block_dims]
                for bi, vecb in members:
                    blocks[bi] += np.outer(vecb, vecb.conj())
                projs.append(ambient.from_blocks(blocks))
            return projs
    raise MatAlgError("could not separate the central projections (clustering failed)")


def recover_structure(span_cols, ambient, seed=42, tol=DEFAULT_TOL):
    """Recover (MultiMatrixAlgebra, inject) for the *-subalgebra spanned by span_cols.

    span_cols: matrix whose columns span a *-subalgebra (need not be unital in
    the ambient algebra).  The returned inject columns are genuine matrix
    units, ordered deterministically: blocks by (dim, minimal trace), rows
    row-major.
    """
    rng = np.random.default_rng(seed)
    projs = _minimal_central_projections(span_cols, ambient, rng, tol)
    sdim = subspace_rank(span_cols)

    blocks = []
    for p in projs:
        if not subspace_contains(span_cols, p.vec, 1e-7):
            raise MatAlgError("central projection left the subalgebra (recovery failure)")
        # compress the span by p on both sides
        comp_cols = []
        for j in range(span_cols.shape[1]):
            comp_cols.append((p * AlgebraElement(ambient, span_cols[:, j]) * p).vec)
        comp = orthonormalize(comp_cols, weight=ambient.weight_vec)
        n2 = comp.shape[1]
        n = int(round(math.sqrt(n2)))
        if n * n != n2:
            raise MatAlgError(f"block compression has dimension {n2}, not a square")
        # minimal projections inside the block
        units_first_row = None
        for attempt in range(8):
            coeffs = rng.standard_normal(n2) + 1j * rng.standard_normal(n2)
            y = AlgebraElement(ambient, comp @ coeffs)
            y = (y + y.star) * 0.5
            evals = []
            eprojs = []
            for bi, blk in enumerate(y.blocks()):
                w, v = np.linalg.eigh(blk)
                for k in range(len(w)):
                    if abs(w[k]) > 1e-10:
                        evals.append((w[k], bi, v[:, k]))
            evals.sort(key=lambda t: -t[0])
            # cluster into n groups
            groups = []
            for val, bi, vecb in evals:
                if groups and abs(val - groups[-1][0]) < CLUSTER_TOL:
                    groups[-1][1].append((bi, vecb))
                else:
                    groups.append((val, [(bi, vecb)]))
            if len(groups) != n:
                continue
            minimal = []
            ok = True
            for val, members in groups:
                blks = [np.zeros((d, d), dtype=complex) for d in ambient.block_dims]
                for bi, vecb in members:
                    blks[bi] += np.outer(vecb, vecb.conj())
                e = ambient.from_blocks(blks)
                if not subspace_contains(comp, e.vec, 1e-7):
                    ok = False
                    break
                minimal.append(e)
            if not ok:
                continue
            # partial isometries from the first minimal projection to the others
            u1j = [minimal[0]]
            for j in range(1, n):
                got = None
                for attempt2 in range(8):
                    coeffs2 = rng.standard_normal(n2) + 1j * rng.standard_normal(n2)
                    r = AlgebraElement(ambient, comp @ coeffs2)
                    w = minimal[0] * r * minimal[j]
                    lam = (w.star * w).trace().real / max(minimal[j].trace().real, 1e-300)
                    if lam > 1e-10:
                        got = w * (1.0 / math.sqrt(lam))
                        break
                if got is None:
                    ok = False
                    break
                u1j.append(got)
            if not ok:
                continue
            units_first_row = u1j
            break
        if units_first_row is None:
            raise MatAlgError("matrix-unit recovery failed for a block")
        units = [[(units_first_row[i].star * units_first_row[j])
                  for j in range(n)] for i in range(n)]
        tmin = units[0][0].trace().real
        blocks.append((n, tmin, units))

    blocks.sort(key=lambda t: (t[0], t[1]))
    sub = MultiMatrixAlgebra([b[0] for b in blocks], [b[1] for b in blocks])
    cols = []
    for n, _, units in blocks:
        for r in range(n):
            for c in range(n):
                cols.append(units[r][c].vec)
    inject = np.column_stack(cols)
    if sub.dim != sdim:
        raise MatAlgError(f"recovered dimension {sub.dim} != span dimension {sdim}")
    emb = SubAlgebraEmbedding(sub, ambient, inject)
    _validate_units(emb, tol=1e-7)
    return emb


def _validate_units(emb, tol):
    """Spot-check the matrix-unit relations of an embedding."""
    sub = emb.sub
    rng = np.random.default_rng(0)
    idx = [(i, r, c) for i, d in enumerate(sub.block_dims)
           for r in range(d) for c in range(d)]
    pairs = [(a, b) for a in range(len(idx)) for b in range(len(idx))]
    if len(pairs) > 400:
        sel = rng.choice(len(pairs), size=400, replace=False)
        pairs = [pairs[k] for k in sel]
    for a, b in pairs:
        (i, r, s), (j, u, v) = idx[a], idx[b]
        x = emb.embed(sub.matrix_unit(i, r, s))
        y = emb.embed(sub.matrix_unit(j, u, v))
        expect = emb.embed(sub.matrix_unit(i, r, v)) if (i == j and s == u) else emb.ambient.zero()
        if ((x * y) - expect).max_abs() > tol:
            raise MatAlgError("recovered matrix units do not satisfy the unit relations")


def span_closure(seed, ambient=None, recovery_seed=42, max_dim=None, tol=1e-11):
    """The unital *-subalgebra generated by ``seed``, as a SubAlgebraEmbedding.

    Iterates products and adjoints, orthonormalizing under the trace inner
    product, until the dimension stabilizes; then recovers the block
    decomposition via minimal central projections.
    """
    if ambient is None:
        ambient = seed[0].parent
    cap = max_dim if max_dim is not None else ambient.dim
    vecs = [ambient.unit().vec]
    for x in seed:
        vecs.append(x.vec)
        vecs.append(x.star.vec)
    cols = orthonormalize(vecs, weight=ambient.weight_vec, tol=tol)
    while True:
        dim = cols.shape[1]
        new = [cols[:, j] for j in range(dim)]
        for i in range(dim):
            xi = AlgebraElement(ambient, cols[:, i])
            for j in range(dim):
                new.append((xi * AlgebraElement(ambient, cols[:, j])).vec)
            new.append(xi.star.vec)
        cols = orthonormalize(new, weight=ambient.weight_vec, tol=tol)
        if cols.shape[1] == dim:
            break
        if cols.shape[1] > cap:
            raise MatAlgError(f"span_closure exceeded the dimension cap {cap}")
    return recover_structure(cols, ambient, seed=recovery_seed)


# ---------------------------------------------------------------------------
# linear maps and extension over words
# ---------------------------------------------------------------------------

class LinearMap:
    """A linear map between coordinate spaces, as a dense matrix (new = M @ old)."""

    __slots__ = ("matrix",)

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=complex)

    @property
    def domain_dim(self):
        return self.matrix.shape[1]

    @property
    def codomain_dim(self):
        return self.matrix.shape[0]

    def __call__(self, x):
        if isinstance(x, AlgebraElement):
            return AlgebraElement(x.parent, self.matrix @ x.vec)
        return self.matrix @ np.asarray(x, dtype=complex)

    def compose(self, other):
        return LinearMap(self.matrix @ other.matrix)

    @staticmethod
    def identity(dim):
        return LinearMap(np.eye(dim, dtype=complex))


def extend_hom(dom_alg, gen_vecs, img_vecs, img_mult, img_unit, anti=False,
               max_len=None, tol=1e-8, n_redundant=200):
    """Extend a generator map to a linear map by matching words.

    dom_alg: MultiMatrixAlgebra of the domain; gen_vecs: domain coordinates of
    the generators; img_vecs: image coordinates (any target space); img_mult:
    bilinear product on image coordinates; anti=True extends as an
    anti-homomorphism (word images reversed).  Returns (matrix, residual)
    where residual measures consistency on redundant words.

    Raises if the generators do not generate, or if the extension is
    inconsistent beyond ``tol``.
    """
    dim = dom_alg.dim
    max_len = max_len if max_len is not None else dim
    unit = dom_alg.unit().vec
    pairs = [(unit, np.asarray(img_unit, dtype=complex))]
    basis_cols = orthonormalize([unit])
    frontier = [pairs[0]]
    redundant = []
    length = 0
    while basis_cols.shape[1] < dim and length < max_len:
        length += 1
        new_frontier = []
        for wval, wimg in frontier:
            for gv, gi in zip(gen_vecs, img_vecs):
                val = _vec_mult(dom_alg, wval, gv)
                img = img_mult(gi, wimg) if anti else img_mult(wimg, gi)
                if subspace_contains(basis_cols, val, 1e-10):
                    if len(redundant) < n_redundant:
                        redundant.append((val, img))
                    continue
                pairs.append((val, img))
                basis_cols = orthonormalize(
                    [basis_cols[:, j] for j in range(basis_cols.shape[1])] + [val])
                new_frontier.append((val, img))
        if not new_frontier:
            break
        frontier = new_frontier
    if basis_cols.shape[1] < dim:
        raise MatAlgError(
            f"generators generate only a {basis_cols.shape[1]}-dimensional subalgebra "
            f"of the {dim}-dimensional domain")
    D = np.column_stack([p[0] for p in pairs])
    I = np.column_stack([p[1] for p in pairs])
    M, *_ = np.linalg.lstsq(D.T, I.T, rcond=None)
    M = M.T
    resid = float(np.max(np.abs(M @ D - I))) if pairs else 0.0
    for val, img in redundant:
        resid = max(resid, float(np.max(np.abs(M @ val - img))))
    if resid > tol:
        raise MatAlgError(f"word extension is inconsistent (residual {resid:.3e})")
    return LinearMap(M), resid


def _vec_mult(alg, u, v):
    return (AlgebraElement(alg, u) * AlgebraElement(alg, v)).vec


# ---------------------------------------------------------------------------
# JSON serialization (lossless at float64)
# ---------------------------------------------------------------------------

def _c2j(z):
    return [float(np.real(z)), float(np.imag(z))]


def _carray2j(arr):
    arr = np.asarray(arr, dtype=complex)
    return np.stack([arr.real, arr.imag], axis=-1).tolist()


def _j2carray(data):
    a = np.asarray(data, dtype=float)
    return a[..., 0] + 1j * a[..., 1]


def mma_to_json(alg):
    return {"block_dims": list(alg.block_dims),
            "trace_weights": [float(w) for w in alg.trace_weights]}


def mma_from_json(data):
    return MultiMatrixAlgebra(data["block_dims"], data["trace_weights"])


def element_to_json(x):
    return {"algebra": mma_to_json(x.parent),
            "blocks": [_carray2j(b) for b in x.blocks()]}


def element_from_json(data):
    alg = mma_from_json(data["algebra"])
    return alg.from_blocks([_j2carray(b) for b in data["blocks"]])


def linearmap_to_json(m):
    return {"shape": list(m.matrix.shape), "matrix": _carray2j(m.matrix)}


def linearmap_from_json(data):
    return LinearMap(_j2carray(data["matrix"]))


def tensor_to_json(t):
    return {"left": mma_to_json(t.left_parent), "right": mma_to_json(t.right_parent),
            "coeff": _carray2j(t.coeff)}


def tensor_from_json(data):
    return TensorElement(mma_from_json(data["left"]), mma_from_json(data["right"]),
                         _j2carray(data["coeff"]))


def dumps_canonical(obj, sig_digits=None):
    """Deterministic JSON text; optionally rounded to ``sig_digits`` significants."""
    if sig_digits is not None:
        obj = _round_obj(obj, sig_digits)
    return json.dumps(obj, sort_keys=True, indent=1)


def _round_obj(obj, sig):
    if isinstance(obj, float):
        if obj == 0.0 or not math.isfinite(obj):
            return 0.0 if obj == 0.0 else obj
        mag = math.floor(math.log10(abs(obj)))
        return round(obj, sig - 1 - mag)
    if isinstance(obj, dict):
        return {k: _round_obj(v, sig) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_obj(v, sig) for v in obj]
    return obj
