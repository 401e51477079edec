"""Weak Hopf (finite C*-quantum groupoid) structures and their verification.

A candidate structure is an algebra together with a coproduct Δ (a linear map
into the tensor square), a counit ε (a functional) and an antipode S (a linear
map), all stored as dense matrices over the canonical basis.  Nothing is
assumed: :func:`verify_axioms` checks every defining identity numerically and
reports residuals, and the derived objects (counit maps, counital subalgebras,
Haar projection and measure, duals, the modular elements g_s/g_t and the
canonical trace) are computed from the data alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import matalg
from .matalg import (AlgebraElement, LinearMap, MatAlgError,
                     SubAlgebraEmbedding, TensorElement, _carray2j, _j2carray,
                     extend_hom, invert, mma_from_json, mma_to_json,
                     null_space, positive_sqrt, recover_structure,
                     subspace_intersection_dim)

DEFAULT_TOL = matalg.DEFAULT_TOL


class WeakHopfData:
    """An algebra with coproduct, counit and antipode (axioms verified, not assumed)."""

    def __init__(self, algebra, delta, eps, antipode):
        d = algebra.dim
        delta = np.asarray(delta, dtype=complex)
        eps = np.asarray(eps, dtype=complex)
        antipode = np.asarray(antipode, dtype=complex)
        if delta.shape != (d * d, d):
            raise MatAlgError(f"delta must be ({d * d},{d}), got {delta.shape}")
        if eps.shape != (d,) or antipode.shape != (d, d):
            raise MatAlgError("eps or antipode has the wrong shape")
        self.algebra = algebra
        self.delta = delta
        self.eps = eps
        self.antipode = antipode
        self._cache = {}

    @property
    def dim(self):
        return self.algebra.dim

    def delta_tensor(self):
        """Δ as a (dim, dim, dim) tensor D[x, s, t]: Δ(a_x) = Σ D[x,s,t] a_s⊗a_t."""
        if "D" not in self._cache:
            d = self.dim
            self._cache["D"] = self.delta.T.reshape(d, d, d)
        return self._cache["D"]

    def delta_coeff(self, x):
        vec = x.vec if isinstance(x, AlgebraElement) else np.asarray(x, dtype=complex)
        d = self.dim
        return (self.delta @ vec).reshape(d, d)

    def delta_one(self):
        return self.delta_coeff(self.algebra.unit())

    def delta_elem(self, x):
        return TensorElement(self.algebra, self.algebra, self.delta_coeff(x))

    def eps_value(self, x):
        vec = x.vec if isinstance(x, AlgebraElement) else np.asarray(x, dtype=complex)
        return complex(self.eps @ vec)

    def apply_S(self, x):
        return AlgebraElement(self.algebra, self.antipode @ x.vec)

    def eps_t_matrix(self):
        """ε_t(g) = (ε ⊗ id)(Δ(1)(g ⊗ 1)) as a matrix."""
        if "Et" not in self._cache:
            m = self.algebra.mult_tensor()
            C1 = self.delta_one()
            epsmul = np.einsum("sgu,u->sg", m, self.eps)     # ε(a_s a_g)
            self._cache["Et"] = np.einsum("st,sg->tg", C1, epsmul)
        return self._cache["Et"]

    def eps_s_matrix(self):
        """ε_s(g) = (id ⊗ ε)((1 ⊗ g)Δ(1)) as a matrix."""
        if "Es" not in self._cache:
            m = self.algebra.mult_tensor()
            C1 = self.delta_one()
            epsmul = np.einsum("gtu,u->gt", m, self.eps)     # ε(a_g a_t)
            self._cache["Es"] = np.einsum("st,gt->sg", C1, epsmul)
        return self._cache["Es"]

    def copy_with(self, delta=None, eps=None, antipode=None):
        return WeakHopfData(self.algebra,
                            self.delta if delta is None else delta,
                            self.eps if eps is None else eps,
                            self.antipode if antipode is None else antipode)


def counit_maps(W):
    return LinearMap(W.eps_t_matrix()), LinearMap(W.eps_s_matrix())


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class Check:
    name: str
    residual: float
    note: str = ""

    def passed(self, tol):
        return self.residual < tol


@dataclass
class Report:
    checks: list = field(default_factory=list)

    def add(self, name, residual, note=""):
        self.checks.append(Check(name, float(residual), note))

    def extend(self, other, prefix=""):
        for c in other.checks:
            self.checks.append(Check(prefix + c.name, c.residual, c.note))

    @property
    def max_residual(self):
        return max((c.residual for c in self.checks), default=0.0)

    def passed(self, tol=DEFAULT_TOL):
        return all(c.passed(tol) for c in self.checks)

    def failing(self, tol=DEFAULT_TOL):
        return [c for c in self.checks if not c.passed(tol)]

    def as_dict(self):
        return {c.name: c.residual for c in self.checks}

    def __str__(self):
        width = max((len(c.name) for c in self.checks), default=10)
        return "\n".join(f"{c.name:<{width}}  {c.residual:.3e}  {c.note}"
                         for c in self.checks)


def _pair_indices(dim, rng, budget=2500):
    """All basis pairs when affordable, otherwise a seeded sample."""
    if dim * dim <= budget:
        return [(i, j) for i in range(dim) for j in range(dim)], False
    return [(int(rng.integers(dim)), int(rng.integers(dim)))
            for _ in range(budget)], True


# ---------------------------------------------------------------------------
# axiom verification
# ---------------------------------------------------------------------------

def verify_axioms(W, tol=DEFAULT_TOL, seed=42, n_triples=200):
    """Check every axiom; failures become report entries, never exceptions."""
    rng = np.random.default_rng(seed)
    alg = W.algebra
    d = alg.dim
    m = alg.mult_tensor()
    D = W.delta_tensor()
    Sm = alg.star_matrix()
    S = W.antipode
    unit = alg.unit().vec
    rep = Report()

    pairs, sampled = _pair_indices(d, rng)
    note = "sampled" if sampled else "full basis"

    worst = 0.0
    for i, j in pairs:
        lhs = np.einsum("k,kst->st", m[i, j], D)
        rhs = np.einsum("st,uv,sua,tvb->ab", D[i], D[j], m, m, optimize=True)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    rep.add("delta_multiplicative", worst, note)

    worst = 0.0
    for i in range(d):
        lhs = np.einsum("x,xst->st", Sm[:, i], D)   # Δ(a_i*); basis stars are real
        rhs = Sm @ np.conj(D[i]) @ Sm.T
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    rep.add("delta_star", worst)

    # (Δ⊗id)Δ(1) = (1⊗Δ(1))(Δ(1)⊗1)
    C1 = W.delta_one()
    lhs = np.einsum("st,sab->abt", C1, D)
    t1 = np.einsum("uv,svb->usb", C1, m)
    rhs = np.einsum("st,usb->ubt", C1, t1)
    rep.add("weak_unit_identity", float(np.max(np.abs(lhs - rhs))))

    worst = 0.0
    for x in range(d):
        worst = max(worst, float(np.max(np.abs(
            np.einsum("st,sab->abt", D[x], D) - np.einsum("st,tab->sab", D[x], D)))))
    rep.add("coassociativity", worst)

    eye = np.eye(d)
    rep.add("counit_left", float(np.max(np.abs(
        np.einsum("xst,s->tx", D, W.eps) - eye))))
    rep.add("counit_right", float(np.max(np.abs(
        np.einsum("xst,t->sx", D, W.eps) - eye))))

    worst1 = worst2 = 0.0
    for _ in range(n_triples):
        f, g, h = (rng.standard_normal(d) + 1j * rng.standard_normal(d)
                   for _ in range(3))
        lhs = W.eps @ np.einsum("i,j,k,iju,ukl->l", f, g, h, m, m, optimize=True)
        C = np.einsum("x,xst->st", g, D)
        epsL = np.einsum("i,isk,k->s", f, m, W.eps, optimize=True)   # ε(f a_s)
        epsR = np.einsum("tjk,j,k->t", m, h, W.eps, optimize=True)   # ε(a_t h)
        worst1 = max(worst1, abs(lhs - epsL @ C @ epsR))
        worst2 = max(worst2, abs(lhs - epsR @ C @ epsL))
    rep.add("weak_counit", worst1, f"{n_triples} seeded triples")
    rep.add("weak_counit_flip", worst2, f"{n_triples} seeded triples")

    rep.add("antipode_unit", float(np.max(np.abs(S @ unit - unit))))
    worst = 0.0
    for i, j in pairs:
        lhs = S @ m[i, j]
        rhs = np.einsum("v,u,vuk->k", S[:, j], S[:, i], m, optimize=True)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    rep.add("antipode_antimultiplicative", worst, note)

    worst = 0.0
    for x in range(d):
        lhs = np.einsum("k,kst->st", S[:, x], D)
        rhs = S @ D[x].T @ S.T
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    rep.add("antipode_anticomultiplicative", worst)
    rep.add("antipode_counit", float(np.max(np.abs(W.eps @ S - W.eps))))

    Et, Es = W.eps_t_matrix(), W.eps_s_matrix()
    lhs_t = np.einsum("xst,ut,suk->kx", D, S, m, optimize=True)
    lhs_s = np.einsum("xst,us,utk->kx", D, S, m, optimize=True)
    rep.add("antipode_target", float(np.max(np.abs(lhs_t - Et))))
    rep.add("antipode_source", float(np.max(np.abs(lhs_s - Es))))
    return rep


def counital_identities_report(W):
    """Standard consequences of the axioms: idempotence and the leg formulas."""
    rep = Report()
    Et, Es = W.eps_t_matrix(), W.eps_s_matrix()
    S = W.antipode
    D = W.delta_tensor()
    C1 = W.delta_one()
    m = W.algebra.mult_tensor()
    d = W.dim
    rep.add("eps_t_idempotent", float(np.max(np.abs(Et @ Et - Et))))
    rep.add("eps_s_idempotent", float(np.max(np.abs(Es @ Es - Es))))
    rep.add("eps_t_S_eq_eps_t_eps_s", float(np.max(np.abs(Et @ S - Et @ Es))))
    rep.add("eps_s_S_eq_eps_s_eps_t", float(np.max(np.abs(Es @ S - Es @ Et))))
    worst = 0.0
    for x in range(d):
        lhs = np.einsum("st,ut->su", D[x], Et)               # (id⊗ε_t)Δ(a_x)
        rhs = np.einsum("su,sv->vu", C1, m[:, x, :])         # 1_(1) a_x ⊗ 1_(2)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    rep.add("target_leg_formula", worst)
    worst = 0.0
    for x in range(d):
        lhs = np.einsum("st,us->ut", D[x], Es)               # (ε_s⊗id)Δ(a_x)
        rhs = np.einsum("st,tv->sv", C1, m[x])               # 1_(1) ⊗ a_x 1_(2)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    rep.add("source_leg_formula", worst)
    return rep


# ---------------------------------------------------------------------------
# counital subalgebras
# ---------------------------------------------------------------------------

@dataclass
class CounitalSubalgebras:
    target: SubAlgebraEmbedding
    source: SubAlgebraEmbedding
    report: Report


def counital_subalgebras(W, seed=42):
    """G_t and G_s as spans of the legs of Δ(1), with block structure recovered."""
    if "counital" in W._cache:
        return W._cache["counital"]
    C1 = W.delta_one()
    amb = W.algebra
    t_cols = matalg.orthonormalize([C1[s, :] for s in range(W.dim)],
                                   weight=amb.weight_vec)
    s_cols = matalg.orthonormalize([C1[:, t] for t in range(W.dim)],
                                   weight=amb.weight_vec)
    target = recover_structure(t_cols, amb, seed=seed)
    source = recover_structure(s_cols, amb, seed=seed)
    rep = Report()
    rep.add("eps_t_image_in_target", _span_residual(W.eps_t_matrix(), target.inject))
    rep.add("eps_s_image_in_source", _span_residual(W.eps_s_matrix(), source.inject))
    worst = 0.0
    for x in target.basis_ambient():
        for y in source.basis_ambient():
            worst = max(worst, (x * y - y * x).max_abs())
    rep.add("target_source_commute", worst)
    rep.add("dims_equal", 0.0 if target.sub.dim == source.sub.dim else 1.0,
            f"dim G_t={target.sub.dim}, dim G_s={source.sub.dim}")
    out = CounitalSubalgebras(target, source, rep)
    W._cache["counital"] = out
    return out


def _span_residual(columns, span):
    sol, *_ = np.linalg.lstsq(span, columns, rcond=None)
    return float(np.max(np.abs(span @ sol - columns))) if columns.size else 0.0


def connectedness_dims(W, seed=42):
    """dim(G_s ∩ Z(G)) and the equivalent dim(G_t ∩ Z(G))."""
    cs = counital_subalgebras(W, seed=seed)
    Z = matalg.center_basis(W.algebra)
    Zc = np.column_stack([z.vec for z in Z])
    return {"source_center": subspace_intersection_dim(cs.source.inject, Zc),
            "target_center": subspace_intersection_dim(cs.target.inject, Zc)}


def is_connected(W, seed=42):
    return connectedness_dims(W, seed=seed)["source_center"] == 1


def regularity_residual(W, seed=42):
    cs = counital_subalgebras(W, seed=seed)
    S2 = W.antipode @ W.antipode
    worst = 0.0
    for emb in (cs.target, cs.source):
        worst = max(worst, float(np.max(np.abs(S2 @ emb.inject - emb.inject))))
    return worst


def is_regular(W, seed=42, tol=DEFAULT_TOL):
    """Whether the antipode is involutive on both counital subalgebras."""
    return regularity_residual(W, seed=seed) < tol


# ---------------------------------------------------------------------------
# Haar projection and measure
# ---------------------------------------------------------------------------

@dataclass
class HaarData:
    projection: AlgebraElement | None
    measure: np.ndarray               # functional on the algebra (row vector)
    d: float                          # measure of the unit
    gamma: float | None = None        # measure of g_s^{-1} (set by the caller)
    solution_dim: int = 1


def haar_projection(W, tol=DEFAULT_TOL):
    """Solve the linear characterization of the normalized Haar projection.

    Stacks ε_t(g)p = gp and pε_s(g) = pg for all basis g together with
    S(p) = p and p* = p, takes the real null space, and normalizes with
    ε_t(p) = 1.  The solution-space dimension is reported, not assumed;
    eigenvalues within 1e-6 of {0,1} are snapped.  Returns (p, solution_dim).
    """
    alg = W.algebra
    d = alg.dim
    Et, Es = W.eps_t_matrix(), W.eps_s_matrix()
    rows = [W.antipode - np.eye(d)]
    for g in range(d):
        gvec = np.zeros(d)
        gvec[g] = 1.0
        rows.append(alg.left_mult_operator(Et[:, g]) - alg.left_mult_operator(gvec))
        rows.append(alg.right_mult_operator(Es[:, g]) - alg.right_mult_operator(gvec))
    A = np.vstack(rows)
    Ar = np.block([[A.real, -A.imag], [A.imag, A.real]])
    Sm = alg.star_matrix()
    Br = np.block([[Sm - np.eye(d), np.zeros((d, d))],
                   [np.zeros((d, d)), -Sm - np.eye(d)]])
    ns = null_space(np.vstack([Ar, Br]))
    soldim = ns.shape[1]
    if soldim == 0:
        raise MatAlgError("Haar projection: the linear system has no solution")
    if soldim > 1:
        raise MatAlgError(f"Haar projection: solution space has dimension {soldim} "
                          "(input is not a valid quantum groupoid)")
    p0 = ns[:d, 0] + 1j * ns[d:, 0]
    et_p0 = Et @ p0
    unit = alg.unit().vec
    lam = complex(np.vdot(et_p0, unit) / np.vdot(et_p0, et_p0))
    p = AlgebraElement(alg, lam * p0)
    blocks = []
    for b in p.blocks():
        w, v = np.linalg.eigh((b + b.conj().T) / 2)
        w = np.where(np.abs(w) < 1e-6, 0.0, w)
        w = np.where(np.abs(w - 1.0) < 1e-6, 1.0, w)
        blocks.append((v * w) @ v.conj().T)
    p = alg.from_blocks(blocks)
    resid = max((p * p - p).max_abs(), (p - p.star).max_abs(),
                float(np.max(np.abs(W.antipode @ p.vec - p.vec))),
                float(np.max(np.abs(Et @ p.vec - unit))),
                float(np.max(np.abs(Es @ p.vec - unit))))
    if resid > 1e-6:
        raise MatAlgError(f"Haar projection: defining residual {resid:.3e}")
    return p, soldim


def haar_measure(W, pairing):
    """Haar measure of W: the functional paired to the partner's Haar projection.

    Returns (HaarData, Report); the report carries both invariance
    characterizations evaluated on the full basis.
    """
    P = pairing if _same_algebra(pairing.right, W.algebra) else pairing.transpose()
    if not _same_algebra(P.right, W.algebra):
        raise MatAlgError("pairing does not involve the algebra of W")
    partner, _ = dual(W, P.transpose())
    p_hat, soldim = haar_projection(partner)
    phi = p_hat.vec @ P.gram
    rep = haar_invariance_report(W, phi)
    dval = float((phi @ W.algebra.unit().vec).real)
    return HaarData(projection=None, measure=phi, d=dval,
                    solution_dim=soldim), rep


def _same_algebra(a, b):
    return a is b or a == b


def haar_invariance_report(W, phi):
    """Both invariance characterizations of a Haar measure functional."""
    rep = Report()
    D = W.delta_tensor()
    Et, Es = W.eps_t_matrix(), W.eps_s_matrix()
    lhs = np.einsum("xst,t->sx", D, phi)     # (id⊗φ)Δ
    rep.add("haar_invariance_target", float(np.max(np.abs(lhs - Et @ lhs))))
    lhs2 = np.einsum("xst,s->tx", D, phi)    # (φ⊗id)Δ
    rep.add("haar_invariance_source", float(np.max(np.abs(lhs2 - Es @ lhs2))))
    rep.add("haar_measure_counit_t", float(np.max(np.abs(phi @ Et - W.eps))))
    rep.add("haar_measure_counit_s", float(np.max(np.abs(phi @ Es - W.eps))))
    rep.add("haar_measure_S_invariant", float(np.max(np.abs(phi @ W.antipode - phi))))
    return rep


# ---------------------------------------------------------------------------
# pairings and duals
# ---------------------------------------------------------------------------

class Pairing:
    """A bilinear form between two algebras, as a Gram matrix on their bases."""

    def __init__(self, left, right, gram):
        gram = np.asarray(gram, dtype=complex)
        if gram.shape != (left.dim, right.dim):
            raise MatAlgError("Gram matrix shape does not match the algebras")
        self.left = left
        self.right = right
        self.gram = gram

    def pair(self, x, y):
        return complex(x.vec @ self.gram @ y.vec)

    def singular_values(self):
        return np.linalg.svd(self.gram, compute_uv=False)

    def is_nondegenerate(self, rtol=matalg.RANK_RTOL):
        s = self.singular_values()
        return self.left.dim == self.right.dim and s.size > 0 and s[-1] > rtol * s[0]

    def condition_number(self):
        s = self.singular_values()
        return float(s[0] / s[-1]) if s[-1] > 0 else float("inf")

    def transpose(self):
        return Pairing(self.right, self.left, self.gram.T)


def dual(W, pairing):
    """The dual structure carried by the paired algebra, via Gram transport.

    Returns (WeakHopfData on pairing.right, Report).  The report compares the
    transported product, unit and involution with the carrier's native ones;
    for a genuine duality all residuals vanish.
    """
    if not _same_algebra(pairing.left, W.algebra):
        raise MatAlgError("pairing.left must be the algebra of W")
    if not pairing.is_nondegenerate():
        raise MatAlgError("degenerate pairing")
    A, B = pairing.left, pairing.right
    G = pairing.gram
    d = A.dim
    mA = A.mult_tensor()
    D = W.delta_tensor()

    # product on B dual to Δ: <a_i, b_s b_t> = <Δ(a_i), b_s ⊗ b_t>
    R = np.einsum("ijk,js,kt->ist", D, G, G, optimize=True)
    Mhat = np.linalg.solve(G, R.reshape(d, d * d)).reshape(d, d, d).transpose(1, 2, 0)

    # coproduct on B dual to the product: <a_i ⊗ a_j, Δ̂(b_t)> = <a_i a_j, b_t>
    R2 = np.einsum("ijk,kt->ijt", mA, G, optimize=True)
    Ginv = np.linalg.inv(G)
    Dhat = np.empty((d, d, d), dtype=complex)
    for t in range(d):
        Dhat[t] = Ginv @ R2[:, :, t] @ Ginv.T
    delta_hat = Dhat.reshape(d, d * d).T

    # antipode: <a_i, Ŝ(b_t)> = <S(a_i), b_t>
    S_hat = np.linalg.solve(G, W.antipode.T @ G)

    eps_hat = A.unit().vec @ G                    # counit = evaluation at 1
    unit_hat = np.linalg.solve(G, W.eps)          # unit of the dual is ε

    rep = Report()
    rep.add("dual_product_matches_native",
            float(np.max(np.abs(Mhat - B.mult_tensor()))))
    rep.add("dual_unit_matches_native",
            float(np.max(np.abs(unit_hat - B.unit().vec))))
    SmA, SmB = A.star_matrix(), B.star_matrix()
    # <a_i, b_t*> = conj <S(a_i)*, b_t>
    lhs = G @ SmB
    rhs = np.conj((SmA @ np.conj(W.antipode)).T @ G)
    rep.add("dual_involution_compatible", float(np.max(np.abs(lhs - rhs))))
    return WeakHopfData(B, delta_hat, eps_hat, S_hat), rep


def structure_distance(W1, W2):
    """Max coefficient distance between two structures on the same algebra."""
    return max(float(np.max(np.abs(W1.delta - W2.delta))),
               float(np.max(np.abs(W1.eps - W2.eps))),
               float(np.max(np.abs(W1.antipode - W2.antipode))))


# ---------------------------------------------------------------------------
# modular elements and the canonical trace
# ---------------------------------------------------------------------------

def f_maps(W, phi):
    """F_t = (id⊗φ)Δ and F_s = (φ⊗id)Δ as matrices."""
    D = W.delta_tensor()
    return (np.einsum("xst,t->sx", D, phi), np.einsum("xst,s->tx", D, phi))


def gs_gt(W, haar, dual_W=None, dual_haar=None):
    """g_s = F_s(p)^{1/2} and g_t = F_t(p)^{1/2}, plus the dual pair when given."""
    Ft, Fs = f_maps(W, haar.measure)
    p = haar.projection
    gs = positive_sqrt(AlgebraElement(W.algebra, Fs @ p.vec), tol=1e-8)
    gt = positive_sqrt(AlgebraElement(W.algebra, Ft @ p.vec), tol=1e-8)
    out = [gs, gt]
    if dual_W is not None:
        Ft2, Fs2 = f_maps(dual_W, dual_haar.measure)
        p2 = dual_haar.projection
        out.append(positive_sqrt(AlgebraElement(dual_W.algebra, Fs2 @ p2.vec), tol=1e-8))
        out.append(positive_sqrt(AlgebraElement(dual_W.algebra, Ft2 @ p2.vec), tol=1e-8))
    return tuple(out)


def modular_report(W, haar, gs, gt):
    """The defining identities of g_s, g_t against the Haar data."""
    rep = Report()
    p = haar.projection
    rep.add("S_gt_equals_gs", float(np.max(np.abs(W.antipode @ gt.vec - gs.vec))))
    rep.add("gs_p_equals_gt_p", (gs * p - gt * p).max_abs())
    rep.add("p_gs_equals_p_gt", (p * gs - p * gt).max_abs())
    gsi, gti = invert(gs), invert(gt)
    gam1 = complex(haar.measure @ gsi.vec)
    gam2 = complex(haar.measure @ gti.vec)
    rep.add("gamma_consistent", abs(gam1 - gam2))
    Ft, Fs = f_maps(W, haar.measure)
    d = complex(haar.measure @ W.algebra.unit().vec)
    target = (gam1 / d) * W.algebra.unit().vec
    rep.add("F_s_of_gt_inv_is_gamma_over_d",
            float(np.max(np.abs(Fs @ gti.vec - target))))
    rep.add("F_t_of_gs_inv_is_gamma_over_d",
            float(np.max(np.abs(Ft @ gsi.vec - target))))
    return rep


def trace_a(W, haar, gs, gt):
    """tr(a) = d γ^{-2} φ(g_s^{-1} g_t^{-1} a).  Returns (functional, gamma, d)."""
    gsi, gti = invert(gs), invert(gt)
    gamma = float((haar.measure @ gsi.vec).real)
    d = float((haar.measure @ W.algebra.unit().vec).real)
    u = gsi * gti
    vec = d / gamma ** 2 * (W.algebra.left_mult_operator(u.vec).T @ haar.measure)
    return vec, gamma, d


def trace_property_residual(alg, tr_vec):
    """Max |tr(xy) - tr(yx)| over all basis pairs."""
    m = alg.mult_tensor()
    tm = np.einsum("ijk,k->ij", m, tr_vec)
    return float(np.max(np.abs(tm - tm.T)))


# ---------------------------------------------------------------------------
# isomorphism checking
# ---------------------------------------------------------------------------

def iso_check(W1, W2, gen_map, tol=1e-8):
    """Extend a generator map by word matching and test full intertwining.

    gen_map: list of (element of W1's algebra, element of W2's algebra).
    Returns (ok, max_residual, LinearMap or None).
    """
    alg1, alg2 = W1.algebra, W2.algebra
    if alg1.dim != alg2.dim:
        return False, float("inf"), None
    m1, m2 = alg1.mult_tensor(), alg2.mult_tensor()

    def img_mult(u, v):
        return np.einsum("i,j,ijk->k", u, v, m2, optimize=True)

    phi, resid = extend_hom(alg1, [g.vec for g, _ in gen_map],
                            [h.vec for _, h in gen_map], img_mult,
                            alg2.unit().vec, anti=False, tol=tol)
    M = phi.matrix
    worst = resid
    lhs = np.einsum("ijk,ak->aij", m1, M, optimize=True)
    rhs = np.einsum("ai,bj,abk->kij", M, M, m2, optimize=True)
    worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    worst = max(worst, float(np.max(np.abs(M @ alg1.unit().vec - alg2.unit().vec))))
    worst = max(worst, float(np.max(np.abs(
        M @ alg1.star_matrix() - alg2.star_matrix() @ np.conj(M)))))
    D1, D2 = W1.delta_tensor(), W2.delta_tensor()
    lhsD = np.einsum("xst,as,bt->xab", D1, M, M, optimize=True)
    rhsD = np.einsum("yab,yx->xab", D2, M)
    worst = max(worst, float(np.max(np.abs(lhsD - rhsD))))
    worst = max(worst, float(np.max(np.abs(W2.eps @ M - W1.eps))))
    worst = max(worst, float(np.max(np.abs(M @ W1.antipode - W2.antipode @ M))))
    s = np.linalg.svd(M, compute_uv=False)
    if s[-1] < 1e-8 * s[0]:
        return False, float("inf"), phi
    return worst < tol, worst, phi


# ---------------------------------------------------------------------------
# whd-v1 JSON schema
# ---------------------------------------------------------------------------

def whd_to_json(W, haar=None):
    data = {
        "schema": "whd-v1",
        "algebra": mma_to_json(W.algebra),
        "delta": _carray2j(W.delta),
        "eps": _carray2j(W.eps),
        "antipode": _carray2j(W.antipode),
    }
    if haar is not None:
        data["haar"] = {
            "projection": None if haar.projection is None
            else _carray2j(haar.projection.vec),
            "measure": _carray2j(haar.measure),
            "d": float(haar.d),
            "gamma": None if haar.gamma is None else float(haar.gamma),
        }
    return data


def whd_from_json(data):
    if data.get("schema") != "whd-v1":
        raise MatAlgError("not a whd-v1 document")
    alg = mma_from_json(data["algebra"])
    W = WeakHopfData(alg, _j2carray(data["delta"]), _j2carray(data["eps"]),
                     _j2carray(data["antipode"]))
    haar = None
    if data.get("haar") is not None:
        h = data["haar"]
        proj = None if h.get("projection") is None \
            else alg.element(_j2carray(h["projection"]))
        haar = HaarData(projection=proj, measure=_j2carray(h["measure"]),
                        d=h["d"], gamma=h.get("gamma"))
    return W, haar
