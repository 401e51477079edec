"""Regular deformation of a finite quantum groupoid.

The target counital subalgebra carries a canonical separability element
``q = Σ (1/n_j) λ_i* ⊗ λ_i`` and a positive invertible element ``k`` with
``k² = 1_(2) S(1_(1))``.  Conjugating the coproduct, counit and antipode by
``k`` produces a new structure, on the same C*-algebra, whose antipode is
involutive on the counital subalgebras; the pairing is carried along as
``[a, b] = <k a S(k), b>``.  With ``k = 1`` the structure is returned
unchanged (same arrays).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import matalg
from .matalg import (AlgebraElement, MatAlgError, TensorElement, invert,
                     positive_sqrt, subspace_contains)
from .weakhopf import (Pairing, Report, WeakHopfData, counital_subalgebras,
                       is_regular, verify_axioms)

DEFAULT_TOL = matalg.DEFAULT_TOL


@dataclass
class DeformationData:
    k: AlgebraElement
    q: TensorElement
    source: WeakHopfData
    deformed: WeakHopfData
    pairing: Pairing | None = None
    report: Report = field(default_factory=Report)


def separator(W, seed=42):
    """q = Σ (1/n_j) λ_i* ⊗ λ_i over matrix units of the target subalgebra.

    Returns (TensorElement, Report); the report checks the exchange relations
    of (S^{-1} ⊗ id)(q) against the target subalgebra.
    """
    cs = counital_subalgebras(W, seed=seed)
    emb = cs.target
    alg = W.algebra
    C = np.zeros((alg.dim, alg.dim), dtype=complex)
    sub = emb.sub
    for b, n in enumerate(sub.block_dims):
        for r in range(n):
            for c in range(n):
                lam = emb.inject[:, sub.unit_index(b, r, c)]
                lam_star = alg.star_vec(lam)
                C += np.outer(lam_star, lam) / n
    q = TensorElement(alg, alg, C)

    rep = Report()
    Sinv = np.linalg.inv(W.antipode)
    q1 = TensorElement(alg, alg, Sinv @ C)        # (S^{-1} ⊗ id)(q)
    worst_l = worst_r = 0.0
    for j in range(sub.dim):
        z = emb.inject[:, j]
        tz = _leg_elem(alg, z)
        sz = _leg_elem(alg, Sinv @ z)
        lhs = _tensor_mult_left(q1, sz, leg=0)
        rhs = _tensor_mult_left(q1, tz, leg=1)
        worst_l = max(worst_l, (lhs - rhs).max_abs())
        lhs = _tensor_mult_right(q1, sz, leg=0)
        rhs = _tensor_mult_right(q1, tz, leg=1)
        worst_r = max(worst_r, (lhs - rhs).max_abs())
    rep.add("separator_exchange_left", worst_l)
    rep.add("separator_exchange_right", worst_r)
    rep.add("separator_selfadjoint", (q - q.star).max_abs())
    return q, rep


def _leg_elem(alg, vec):
    return AlgebraElement(alg, vec)


def _tensor_mult_left(t, x, leg):
    """(x ⊗ 1)·t or (1 ⊗ x)·t."""
    alg = t.left_parent
    m = alg.mult_tensor()
    if leg == 0:
        coeff = np.einsum("i,isu,st->ut", x.vec, m, t.coeff, optimize=True)
    else:
        coeff = np.einsum("i,itu,st->su", x.vec, m, t.coeff, optimize=True)
    return TensorElement(alg, alg, coeff)


def _tensor_mult_right(t, x, leg):
    """t·(x ⊗ 1) or t·(1 ⊗ x)."""
    alg = t.left_parent
    m = alg.mult_tensor()
    if leg == 0:
        coeff = np.einsum("st,i,siu->ut", t.coeff, x.vec, m, optimize=True)
    else:
        coeff = np.einsum("st,i,tiu->su", t.coeff, x.vec, m, optimize=True)
    return TensorElement(alg, alg, coeff)


def compute_k(W, seed=42):
    """The positive square root of 1_(2) S(1_(1)), with the full property report.

    The report covers: membership in the target subalgebra, positivity and
    invertibility, the Radon-Nikodym identity for the canonical trace of the
    target subalgebra, both separator reconstructions of Δ(1), and the
    antipode-square laws.
    """
    alg = W.algebra
    m = alg.mult_tensor()
    S = W.antipode
    C1 = W.delta_one()
    kk_vec = np.einsum("st,us,tuk->k", C1, S, m, optimize=True)
    kk = AlgebraElement(alg, kk_vec)
    k = positive_sqrt(kk, tol=1e-8)

    rep = Report()
    cs = counital_subalgebras(W, seed=seed)
    rep.add("k_in_target_subalgebra",
            0.0 if subspace_contains(cs.target.inject, k.vec, 1e-7) else 1.0)
    rep.add("k_selfadjoint", (k - k.star).max_abs())
    rep.add("k_squared", (k * k - kk).max_abs())
    smin = min(np.linalg.svd(b, compute_uv=False)[-1] for b in k.blocks())
    rep.add("k_invertible", 0.0 if smin > 1e-8 else 1.0, f"smallest sv {smin:.3e}")

    # canonical trace of the target subalgebra vs ε(k · k)
    sub = cs.target.sub
    worst = 0.0
    for b, n in enumerate(sub.block_dims):
        for r in range(n):
            for c in range(n):
                lam = AlgebraElement(alg, cs.target.inject[:, sub.unit_index(b, r, c)])
                val = W.eps_value(k * lam * k)
                worst = max(worst, abs(val - (1.0 if r == c else 0.0)))
    rep.add("radon_nikodym_canonical_trace", worst)

    q, qrep = separator(W, seed=seed)
    rep.extend(qrep)
    Sinv = np.linalg.inv(S)
    q1 = TensorElement(alg, alg, Sinv @ q.coeff)
    d1 = TensorElement(alg, alg, C1)
    rep.add("delta_one_absorbs_separator", (d1 * q1 - d1).max_abs())
    k2t = _tensor_mult_left(q1, kk, leg=1)
    rep.add("delta_one_from_separator", (k2t - d1).max_abs())

    S2 = S @ S
    rep.add("S_squared_fixes_k", float(np.max(np.abs(S2 @ k.vec - k.vec))))
    # S² = Ad(k^{-2} S(k²)) on the product of the counital subalgebras
    u = invert(kk) * AlgebraElement(alg, S @ kk.vec)
    uinv = invert(u)
    worst = 0.0
    for zt in cs.target.basis_ambient():
        for zs in cs.source.basis_ambient():
            x = zs * zt
            lhs = AlgebraElement(alg, S2 @ x.vec)
            worst = max(worst, (lhs - u * x * uinv).max_abs())
    rep.add("S_squared_is_Ad_on_base", worst)
    return k, q, rep


def deform(W, pairing=None, k=None, seed=42):
    """Conjugate the coalgebra structure by k; the algebra is untouched.

    Returns a :class:`DeformationData`.  When k is exactly the unit the input
    structure is returned unchanged (the same arrays), so the output is
    bitwise identical to the input.
    """
    alg = W.algebra
    rep = Report()
    if k is None:
        k, q, krep = compute_k(W, seed=seed)
        rep.extend(krep)
    else:
        q, qrep = separator(W, seed=seed)
        rep.extend(qrep)

    if np.array_equal(k.vec, alg.unit().vec):
        rep.add("k_is_unit", 0.0, "structure returned unchanged")
        out = WeakHopfData(alg, W.delta, W.eps, W.antipode)
        new_pairing = pairing
        return DeformationData(k=k, q=q, source=W, deformed=out,
                               pairing=new_pairing, report=rep)

    kinv = invert(k)
    Sk = AlgebraElement(alg, W.antipode @ k.vec)
    Skinv = AlgebraElement(alg, W.antipode @ kinv.vec)
    L = alg.left_mult_operator
    R = alg.right_mult_operator

    conj2 = L(kinv.vec) @ R(kinv.vec)          # x ↦ k^{-1} x k^{-1}
    d = alg.dim
    D = W.delta_tensor()
    Dt = np.einsum("xst,ut->xsu", D, conj2)
    delta_new = Dt.reshape(d, d * d).T

    eps_new = W.eps @ (L(k.vec) @ R(Sk.vec))
    eps_alt = W.eps @ (L(Sk.vec) @ R(k.vec))
    rep.add("deformed_counit_two_forms", float(np.max(np.abs(eps_new - eps_alt))))

    S_new = L((Skinv * k).vec) @ R((kinv * Sk).vec) @ W.antipode
    out = WeakHopfData(alg, delta_new, eps_new, S_new)

    # Δ~(1) = (S~^{-1} ⊗ id)(q)
    q1 = TensorElement(alg, alg, np.linalg.inv(S_new) @ q.coeff)
    rep.add("deformed_delta_one_is_separator",
            float(np.max(np.abs(out.delta_one() - q1.coeff))))

    new_pairing = None
    if pairing is not None:
        M = L(k.vec) @ R(Sk.vec)
        new_pairing = Pairing(pairing.left, pairing.right, M.T @ pairing.gram)
    return DeformationData(k=k, q=q, source=W, deformed=out,
                           pairing=new_pairing, report=rep)


def deformation_suite(W, pairing=None, seed=42, tol=DEFAULT_TOL):
    """Deform and re-verify: axioms, regularity, unchanged algebra."""
    dd = deform(W, pairing=pairing, seed=seed)
    rep = dd.report
    ax = verify_axioms(dd.deformed, seed=seed)
    rep.extend(ax, prefix="deformed_")
    rep.add("deformed_regular", 0.0 if is_regular(dd.deformed, seed=seed) else 1.0)
    return dd


def pairing_duality_report(W_left, W_right, pairing):
    """The four duality axioms of a pairing against two given structures."""
    rep = Report()
    G = pairing.gram
    DA = W_left.delta_tensor()
    DB = W_right.delta_tensor()
    mA = W_left.algebra.mult_tensor()
    mB = W_right.algebra.mult_tensor()
    lhs = np.einsum("stw,iw->ist", mB, G, optimize=True)
    rhs = np.einsum("iuv,us,vt->ist", DA, G, G, optimize=True)
    rep.add("pairing_dual_product_right", float(np.max(np.abs(lhs - rhs))))
    lhs = np.einsum("stw,wi->sti", mA, G, optimize=True)
    rhs = np.einsum("iuv,su,tv->sti", DB, G, G, optimize=True)
    rep.add("pairing_dual_product_left", float(np.max(np.abs(lhs - rhs))))
    rep.add("pairing_antipode_exchange", float(np.max(np.abs(
        W_left.antipode.T @ G - G @ W_right.antipode))))
    SmA = W_left.algebra.star_matrix()
    SmB = W_right.algebra.star_matrix()
    rep.add("pairing_star_exchange", float(np.max(np.abs(
        G @ SmB - np.conj((SmA @ np.conj(W_left.antipode)).T @ G)))))
    rep.add("pairing_unit_left", float(np.max(np.abs(
        W_left.algebra.unit().vec @ G - W_right.eps))))
    rep.add("pairing_unit_right", float(np.max(np.abs(
        G @ W_right.algebra.unit().vec - W_left.eps))))
    return rep


def pairing_variants_report(W_A, W_B, pairing, seed=42):
    """Deform both sides; test the duality axioms of the carried pairing.

    Variant "raw": only the left leg is deformed in [a, b] = <k a S(k), b>.
    Variant "both": the right leg is additionally deformed with B's own k.
    Returns a dict of duality reports, one per variant.
    """
    dA = deform(W_A, pairing=pairing, seed=seed)
    dB = deform(W_B, pairing=pairing.transpose(), seed=seed)
    out = {"raw": pairing_duality_report(dA.deformed, dB.deformed, dA.pairing)}
    kB = dB.k
    algB = W_B.algebra
    MB = algB.left_mult_operator(kB.vec) @ algB.right_mult_operator(
        (W_B.antipode @ kB.vec))
    both = Pairing(pairing.left, pairing.right, dA.pairing.gram @ MB)
    out["both"] = pairing_duality_report(dA.deformed, dB.deformed, both)
    return out
