"""Crossed products of dual quantum groupoids and their finite ladders.

Given a dual pair (A, B) with its pairing, this module builds the four dual
actions, the smash products A⋊B, B⋊A and their iterates, the conditional
expectations onto both factors, the Markov trace of the tower, the Jones
projections f_a and f_b, and the grid of relative commutants of the finite
ladder of commuting squares.

The quotient M ⊗_{G_t} G is realized concretely: the identification span
{m(z▷1)⊗g − m⊗zg} is the kernel of the separability idempotent of the base
subalgebra, and the crossed product lives on its orthogonal complement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import matalg
from .matalg import (AlgebraElement, MatAlgError, invert, null_space,
                     positive_sqrt, subspace_contains,
                     subspace_intersection_dim, subspace_rank)
from .weakhopf import (HaarData, Pairing, Report, WeakHopfData,
                       counital_subalgebras, f_maps, gs_gt, haar_projection,
                       is_regular, modular_report, trace_a,
                       trace_property_residual)

DEFAULT_TOL = matalg.DEFAULT_TOL
MULT_TENSOR_CAP = 200          # floors above this dimension stay tensor-free
DEFAULT_DIM_CAP = 20000        # refuse ladders whose total dimension exceeds this


# ---------------------------------------------------------------------------
# dual pair bundle
# ---------------------------------------------------------------------------

class DualPair:
    """A dual pair of quantum groupoids: Haar data, modular elements, canonical
    traces, counital expectations and the four dual actions, all verified."""

    def __init__(self, wa, wb, pairing, seed=42):
        if not pairing.is_nondegenerate():
            raise MatAlgError("degenerate pairing")
        self.wa, self.wb, self.pairing = wa, wb, pairing
        self.seed = seed
        rep = Report()
        G = pairing.gram

        p_a, dim_a = haar_projection(wa)
        p_b, dim_b = haar_projection(wb)
        phi_a = G @ p_b.vec
        phi_b = p_a.vec @ G
        self.haar_a = HaarData(projection=p_a, measure=phi_a,
                               d=float((phi_a @ wa.algebra.unit().vec).real),
                               solution_dim=dim_a)
        self.haar_b = HaarData(projection=p_b, measure=phi_b,
                               d=float((phi_b @ wb.algebra.unit().vec).real),
                               solution_dim=dim_b)
        rep.add("d_consistent", abs(self.haar_a.d - self.haar_b.d))
        self.d = self.haar_a.d

        self.gs, self.gt, self.gs_hat, self.gt_hat = gs_gt(
            wa, self.haar_a, dual_W=wb, dual_haar=self.haar_b)
        rep.extend(modular_report(wa, self.haar_a, self.gs, self.gt), prefix="A_")
        rep.extend(modular_report(wb, self.haar_b, self.gs_hat, self.gt_hat),
                   prefix="B_")
        self.tr_a, gamma_a, _ = trace_a(wa, self.haar_a, self.gs, self.gt)
        self.tr_b, gamma_b, _ = trace_a(wb, self.haar_b, self.gs_hat, self.gt_hat)
        rep.add("gamma_consistent_across_sides", abs(gamma_a - gamma_b))
        self.gamma = gamma_a
        self.haar_a.gamma = self.haar_b.gamma = self.gamma
        rep.add("tr_a_is_trace", trace_property_residual(wa.algebra, self.tr_a))
        rep.add("tr_b_is_trace", trace_property_residual(wb.algebra, self.tr_b))
        rep.add("tr_a_normalized", abs(self.tr_a @ wa.algebra.unit().vec - 1.0))
        rep.add("tr_b_normalized", abs(self.tr_b @ wb.algebra.unit().vec - 1.0))

        # the four dual actions as coordinate tensors
        DA, DB = wa.delta_tensor(), wb.delta_tensor()
        self.act_b_on_a = np.einsum("xst,tb->bsx", DA, G, optimize=True)
        self.actr_a_on_b = np.einsum("xst,as->atx", DB, G, optimize=True)
        self.act_a_on_b = np.einsum("xst,at->asx", DB, G, optimize=True)
        self.actr_b_on_a = np.einsum("xst,sb->btx", DA, G, optimize=True)
        rep.extend(self._action_reports())

        # canonical conditional expectations onto the counital subalgebras
        FtA, FsA = f_maps(wa, phi_a)
        FtB, FsB = f_maps(wb, phi_b)
        dg = self.d / self.gamma
        self.E_At = dg * FtA @ wa.algebra.left_mult_operator(invert(self.gs).vec)
        self.E_As = dg * FsA @ wa.algebra.right_mult_operator(invert(self.gt).vec)
        self.E_Bt = dg * FtB @ wb.algebra.left_mult_operator(invert(self.gs_hat).vec)
        self.E_Bs = dg * FsB @ wb.algebra.right_mult_operator(invert(self.gt_hat).vec)
        rep.extend(self._expectation_reports())
        self.report = rep

    # -- verification -----------------------------------------------------------

    def _action_reports(self):
        rep = Report()
        wa, wb = self.wa, self.wb
        G = self.pairing.gram
        mA = wa.algebra.mult_tensor()
        mB = wb.algebra.mult_tensor()
        DB = wb.delta_tensor()
        act = self.act_b_on_a

        # <x, b ◁ a> = <a x, b> and <b ▷ a, y> = <a, y b>
        lhs = np.einsum("kt,itj->ikj", G, self.actr_a_on_b, optimize=True)
        rhs = np.einsum("ikw,wj->ikj", mA, G, optimize=True)
        rep.add("right_action_characterization", float(np.max(np.abs(lhs - rhs))))
        lhs = np.einsum("jsi,sy->ijy", act, G, optimize=True)
        rhs = np.einsum("yjw,iw->ijy", mB, G, optimize=True)
        rep.add("left_action_characterization", float(np.max(np.abs(lhs - rhs))))

        # module laws of b ▷ a
        rep.add("left_action_unital", float(np.max(np.abs(
            np.einsum("b,bsa->sa", wb.algebra.unit().vec, act) - np.eye(wa.dim)))))
        lhs = np.einsum("bck,ksa->bcsa", mB, act, optimize=True)
        rhs = np.einsum("bsz,cza->bcsa", act, act, optimize=True)
        rep.add("left_action_module", float(np.max(np.abs(lhs - rhs))))

        worst = 0.0
        for b in range(wb.dim):
            left = np.einsum("xyk,sk->xys", mA, act[b], optimize=True)
            right = np.einsum("uv,usx,vty,stk->xyk", DB[b], act, act, mA,
                              optimize=True)
            worst = max(worst, float(np.max(np.abs(left - right))))
        rep.add("left_action_multiplicative", worst)

        SmA = wa.algebra.star_matrix()
        SmB = wb.algebra.star_matrix()
        S = wb.antipode
        worst = 0.0
        for b in range(wb.dim):
            sb_star = SmB @ np.conj(S[:, b])
            lhs2 = SmA @ np.conj(act[b])
            rhs2 = np.einsum("g,gsa->sa", sb_star, act) @ SmA
            worst = max(worst, float(np.max(np.abs(lhs2 - rhs2))))
        rep.add("left_action_star", worst)

        EtB = wb.eps_t_matrix()
        unitA = wa.algebra.unit().vec
        on1 = np.einsum("bsa,a->bs", act, unitA)
        rep.add("left_action_unit_law", float(np.max(np.abs(
            on1 - np.einsum("gb,gs->bs", EtB, on1, optimize=True)))))

        # standardness: x ↦ 1_b ◁ x is an isomorphism A_s -> B_t, inverse y ↦ y ▷ 1_a
        csa = counital_subalgebras(wa, seed=self.seed)
        csb = counital_subalgebras(wb, seed=self.seed)
        on1b = np.einsum("atx,t->ax", self.actr_a_on_b, wb.algebra.unit().vec)
        worst = 0.0
        for j in range(csa.source.sub.dim):
            x = csa.source.inject[:, j]
            y = on1b.T @ x                        # 1_b ◁ x
            back = on1.T @ y                      # y ▷ 1_a
            worst = max(worst, float(np.max(np.abs(back - x))))
            if not subspace_contains(csb.target.inject, y, 1e-7):
                worst = max(worst, 1.0)
        rep.add("standardness_iso_roundtrip", worst)

        # x ▷ b = (x ▷ 1_b) b for x in A_t
        worst = 0.0
        for j in range(csa.target.sub.dim):
            x = csa.target.inject[:, j]
            xb = np.einsum("a,asx->sx", x, self.act_a_on_b, optimize=True)
            x1 = xb @ wb.algebra.unit().vec
            prod = np.einsum("s,stk->kt", x1, mB, optimize=True)
            worst = max(worst, float(np.max(np.abs(xb - prod))))
        rep.add("target_acts_by_left_multiplier", worst)
        return rep

    def _expectation_reports(self):
        rep = Report()
        csa = counital_subalgebras(self.wa, seed=self.seed)
        csb = counital_subalgebras(self.wb, seed=self.seed)
        for name, E, W, tr, emb in (
                ("E_At", self.E_At, self.wa, self.tr_a, csa.target),
                ("E_As", self.E_As, self.wa, self.tr_a, csa.source),
                ("E_Bt", self.E_Bt, self.wb, self.tr_b, csb.target),
                ("E_Bs", self.E_Bs, self.wb, self.tr_b, csb.source)):
            rep.add(f"{name}_idempotent", float(np.max(np.abs(E @ E - E))))
            rep.add(f"{name}_unital", float(np.max(np.abs(
                E @ W.algebra.unit().vec - W.algebra.unit().vec))))
            rep.add(f"{name}_trace_preserving", float(np.max(np.abs(tr @ E - tr))))
            sol, *_ = np.linalg.lstsq(emb.inject, E, rcond=None)
            rep.add(f"{name}_image", float(np.max(np.abs(emb.inject @ sol - E))))
            rep.add(f"{name}_matches_trace_expectation", float(np.max(np.abs(
                E - _trace_expectation(W.algebra, tr, emb.inject)))))
        return rep


def _trace_expectation(alg, tr_vec, span):
    """Matrix of the tr-preserving conditional expectation onto span's algebra."""
    m = alg.mult_tensor()
    Sm = alg.star_matrix()
    span_star = Sm @ np.conj(span)
    inner = np.einsum("ijk,k->ij", m, tr_vec)      # tr(a_i a_j)
    gram = span_star.T @ inner @ span
    rhs = span_star.T @ inner
    return span @ np.linalg.solve(gram, rhs)


def dual_actions(wa, wb, pairing, seed=42):
    """The four dual actions, bundled with their law reports, as a DualPair."""
    return DualPair(wa, wb, pairing, seed=seed)


# ---------------------------------------------------------------------------
# floors
# ---------------------------------------------------------------------------

class FloorAlgebra:
    """Coordinate algebra interface shared by base algebras and smash floors."""

    def __init__(self, dim, unit, mult_tensor, star_matrix, trace_vec, name):
        self.dim = dim
        self.unit = unit
        self.mult = mult_tensor              # may be None above the cap
        self.star_mat = star_matrix          # antilinear: x* = star_mat @ conj(x)
        self.trace_vec = trace_vec
        self.name = name

    @staticmethod
    def from_groupoid(W, trace_vec, name):
        alg = W.algebra
        return FloorAlgebra(alg.dim, alg.unit().vec, alg.mult_tensor(),
                            alg.star_matrix(), trace_vec, name)

    def product(self, u, v):
        return np.einsum("i,j,ijk->k", u, v, self.mult, optimize=True)

    def left_op(self, u):
        return np.einsum("i,ijk->kj", u, self.mult)

    def right_op(self, u):
        return np.einsum("jik,i->kj", self.mult, u)

    def star(self, u):
        return self.star_mat @ np.conj(u)

    def trace(self, u):
        return complex(self.trace_vec @ u)


@dataclass
class ActingSide:
    """What a smash step needs to know about the acting groupoid."""
    W: WeakHopfData
    act: np.ndarray               # act[g] : M -> M matrices (the module action)
    t_units: np.ndarray           # columns: matrix units of G_t in G coordinates
    t_dims: tuple                 # block dimensions of G_t
    E_Gt: np.ndarray              # canonical-trace expectation G -> G_t
    name: str


def acting_side(pair, which, M_act, name):
    """Package the acting-groupoid data for a smash step ("A" or "B" acts)."""
    W = pair.wb if which == "B" else pair.wa
    cs = counital_subalgebras(W, seed=pair.seed)
    E_Gt = pair.E_Bt if which == "B" else pair.E_At
    return ActingSide(W=W, act=M_act, t_units=cs.target.inject,
                      t_dims=cs.target.sub.block_dims, E_Gt=E_Gt, name=name)


class CrossedProductAlgebra(FloorAlgebra):
    """M ⋊ G on the orthogonal complement of the identification span."""

    def __init__(self, M, G_side, name):
        self.M = M
        self.G = G_side
        dM, dG = M.dim, G_side.W.dim
        if M.mult is None:
            raise MatAlgError(
                f"smash base {M.name} (dim {dM}) carries no multiplication "
                f"tensor; raise the tensor cap to build this floor")
        DG = G_side.W.delta_tensor()
        mG = G_side.W.algebra.mult_tensor()
        act = G_side.act

        # separability projector of the base: its kernel is the identification span
        zon1 = np.einsum("gxy,y->gx", act, M.unit)
        Phi = np.zeros((dM * dG, dM * dG), dtype=complex)
        SmG = G_side.W.algebra.star_matrix()
        offs = _block_offsets(G_side.t_dims)
        for n, b0 in zip(G_side.t_dims, offs):
            for r in range(n):
                for c in range(n):
                    lam = G_side.t_units[:, b0 + r * n + c]
                    lam_star = SmG @ np.conj(lam)
                    w = np.einsum("g,gx->x", lam_star, zon1)
                    RMw = np.einsum("jik,i->kj", M.mult, w)
                    LG = np.einsum("i,ijk->kj", lam, mG)
                    Phi += np.kron(RMw, LG) / n
        u, s, _ = np.linalg.svd(np.eye(dM * dG) - Phi)
        cut = max(1e-8 * (s[0] if s.size else 0.0), 1e-10)
        rank = int(np.sum(s > cut))
        Q = u[:, rank:]                       # orthonormal basis of the quotient
        self.Q = Q
        q = Q.shape[1]
        self._DG, self._mG, self._act = DG, mG, act

        unit = Q.conj().T @ np.kron(M.unit, G_side.W.algebra.unit().vec)

        # star: (x⊗g)* = (g_(1)* ▷ x*) ⊗ g_(2)*
        starM_of = np.einsum("awy,yx->awx", act, M.star_mat, optimize=True)
        T = np.einsum("gce,ac,be,awx->wbxg", np.conj(DG), SmG, SmG, starM_of,
                      optimize=True).reshape(dM * dG, dM * dG)
        star_q = Q.conj().T @ T @ np.conj(Q)

        # expectation onto the base factor: [x⊗g] ↦ x (E_{G_t}(g) ▷ 1)
        wg = np.einsum("zg,zx->gx", G_side.E_Gt, zon1)
        EV = np.zeros((dM, dM * dG), dtype=complex)
        for g in range(dG):
            EV[:, g::dG] = np.einsum("jik,i->kj", M.mult, wg[g])
        self.E_to_base = EV @ Q                  # floor coords -> base coords
        trace_vec = M.trace_vec @ self.E_to_base

        mult = None
        if q <= MULT_TENSOR_CAP:
            multV = np.einsum("gab,azy,xzw,bhc->xgyhwc", DG, act, M.mult, mG,
                              optimize=True).reshape(dM * dG, dM * dG, dM * dG)
            mult = np.einsum("XYW,Xu,Yv,Wk->uvk", multV, Q, Q, np.conj(Q),
                             optimize=True)
        super().__init__(q, unit, mult, star_q, trace_vec, name)

        self.i_M = Q.conj().T @ np.kron(np.eye(dM),
                                        G_side.W.algebra.unit().vec[:, None])
        self.i_G = Q.conj().T @ np.kron(M.unit[:, None], np.eye(dG))
        self.report = Report()
        self.report.add("quotient_rank", 0.0, f"dim {q} from {dM}x{dG}")

    # -- products through the pre-quotient tensors -------------------------------

    def _left_op_V(self, uV):
        """(x⊗g)(y⊗h) = x (g_(1) ▷ y) ⊗ g_(2) h, as left multiplication by u."""
        dM, dG = self.M.dim, self.G.W.dim
        X = uV.reshape(dM, dG)
        W1 = np.einsum("xg,gab->xab", X, self._DG, optimize=True)
        # act[a][z, y]: z is the output index of the module action
        op = np.einsum("xab,azy,xzw,bhc->wcyh", W1, self._act, self.M.mult,
                       self._mG, optimize=True)
        return op.reshape(dM * dG, dM * dG)

    def _right_op_V(self, uV):
        """Right multiplication: (y⊗h)(x⊗g) = y (h_(1) ▷ x) ⊗ h_(2) g."""
        dM, dG = self.M.dim, self.G.W.dim
        X = uV.reshape(dM, dG)
        W1 = np.einsum("hab,azx,xg->hbzg", self._DG, self._act, X, optimize=True)
        op = np.einsum("hbzg,yzw,bgc->wcyh", W1, self.M.mult, self._mG,
                       optimize=True)
        return op.reshape(dM * dG, dM * dG)

    def product(self, u, v):
        if self.mult is not None:
            return super().product(u, v)
        return self.Q.conj().T @ (self._left_op_V(self.Q @ u) @ (self.Q @ v))

    def left_op(self, u):
        if self.mult is not None:
            return super().left_op(u)
        return self.Q.conj().T @ self._left_op_V(self.Q @ u) @ self.Q

    def right_op(self, u):
        if self.mult is not None:
            return super().right_op(u)
        return self.Q.conj().T @ self._right_op_V(self.Q @ u) @ self.Q

    def dual_action_of(self, act_on_G):
        """h ▷ [m⊗g] = [m ⊗ h▷g] as quotient matrices, one per dual basis index."""
        dM = self.M.dim
        out = np.empty((act_on_G.shape[0], self.dim, self.dim), dtype=complex)
        for i in range(act_on_G.shape[0]):
            out[i] = self.Q.conj().T @ np.kron(np.eye(dM), act_on_G[i]) @ self.Q
        return out

    def lift_column_map(self, base_map):
        """Quotient conjugation of (base operator ⊗ id_G)."""
        dG = self.G.W.dim
        return self.Q.conj().T @ np.kron(base_map, np.eye(dG)) @ self.Q


def _block_offsets(dims):
    out = []
    off = 0
    for n in dims:
        out.append(off)
        off += n * n
    return out


def smash(M, G_side, name="M⋊G", verify=True, seed=42):
    """Build the crossed product; optionally verify the smash-product laws."""
    out = CrossedProductAlgebra(M, G_side, name)
    if not verify:
        return out
    rep = out.report
    rng = np.random.default_rng(seed)
    q = out.dim
    worst_unit = 0.0
    for _ in range(4):
        v = rng.standard_normal(q) + 1j * rng.standard_normal(q)
        worst_unit = max(worst_unit,
                         float(np.max(np.abs(out.product(out.unit, v) - v))),
                         float(np.max(np.abs(out.product(v, out.unit) - v))))
    rep.add("smash_unital", worst_unit)
    rep.add("smash_star_involutive", float(np.max(np.abs(
        out.star(out.star(np.eye(q))) - np.eye(q)))))

    worst_assoc = worst_star = 0.0
    if out.mult is not None:
        lhs = np.einsum("ijx,xkl->ijkl", out.mult, out.mult, optimize=True)
        rhs = np.einsum("jkx,ixl->ijkl", out.mult, out.mult, optimize=True)
        worst_assoc = float(np.max(np.abs(lhs - rhs)))
        idx = rng.choice(q, size=min(q, 24), replace=False)
        eye = np.eye(q)
        for i in idx:
            for j in idx:
                lhs2 = out.star(out.product(eye[:, i], eye[:, j]))
                rhs2 = out.product(out.star(eye[:, j]), out.star(eye[:, i]))
                worst_star = max(worst_star, float(np.max(np.abs(lhs2 - rhs2))))
    else:
        for _ in range(24):
            u, v, w = (rng.standard_normal(q) + 1j * rng.standard_normal(q)
                       for _ in range(3))
            lhs3 = out.product(out.product(u, v), w)
            rhs3 = out.product(u, out.product(v, w))
            worst_assoc = max(worst_assoc, float(np.max(np.abs(lhs3 - rhs3))))
            lhs4 = out.star(out.product(u, v))
            rhs4 = out.product(out.star(v), out.star(u))
            worst_star = max(worst_star, float(np.max(np.abs(lhs4 - rhs4))))
    rep.add("smash_associative", worst_assoc,
            "full basis" if out.mult is not None else "sampled")
    rep.add("smash_star_antimultiplicative", worst_star)

    # i_M, i_G are unital *-homomorphisms and their products span the floor
    worst = 0.0
    for mat, base in ((out.i_M, out.M),
                      (out.i_G, FloorAlgebra.from_groupoid(
                          out.G.W, np.zeros(out.G.W.dim), "G"))):
        dd = mat.shape[1]
        sample = range(dd) if dd <= 16 else rng.choice(dd, 16, replace=False)
        for i in sample:
            for j in sample:
                lhs5 = out.product(mat[:, i], mat[:, j])
                worst = max(worst, float(np.max(np.abs(lhs5 - mat @ base.mult[i, j]))))
        worst = max(worst, float(np.max(np.abs(mat @ base.unit - out.unit))))
        worst = max(worst, float(np.max(np.abs(out.star(mat) - mat @ base.star_mat))))
    rep.add("factor_embeddings_star_hom", worst)

    if out.mult is not None:
        prods = np.einsum("ax,by,abk->kxy", out.i_M, out.i_G, out.mult,
                          optimize=True).reshape(q, -1)
        rep.add("floor_spanned_by_products",
                0.0 if subspace_rank(prods) == q else 1.0, f"rank {q}")
    return out


# ---------------------------------------------------------------------------
# expectations, trace, Jones projections on the first crossed product
# ---------------------------------------------------------------------------

def expectations(AB, pair):
    """E_A and E_B on A.B: to the A factor and (through the formula
    (1_b ◁ E_As(a)) b) to the B factor.  Returns (E_A, E_B, Report)."""
    rep = Report()
    E_A = AB.E_to_base                       # floor -> A coordinates
    wa, wb = pair.wa, pair.wb
    dA, dB = wa.dim, wb.dim
    on1b = np.einsum("atx,t->ax", pair.actr_a_on_b, wb.algebra.unit().vec)
    wvec = on1b.T @ pair.E_As                # a ↦ 1_b ◁ E_As(a), as B coordinates
    mB = wb.algebra.mult_tensor()
    EV = np.zeros((dB, dA * dB), dtype=complex)
    for a in range(dA):
        EV[:, a * dB:(a + 1) * dB] = np.einsum("i,ijk->kj", wvec[:, a], mB)
    E_B = EV @ AB.Q                          # floor -> B coordinates

    iA, iB = AB.i_M, AB.i_G
    opA = iA @ E_A                           # floor -> floor projections
    opB = iB @ E_B
    rep.add("E_A_idempotent", float(np.max(np.abs(opA @ opA - opA))))
    rep.add("E_B_idempotent", float(np.max(np.abs(opB @ opB - opB))))
    rep.add("E_A_on_iA", float(np.max(np.abs(E_A @ iA - np.eye(dA)))))
    rep.add("E_B_on_iB", float(np.max(np.abs(E_B @ iB - np.eye(dB)))))
    rep.add("commuting_square", float(np.max(np.abs(opA @ opB - opB @ opA))))
    # E_A E_B = E_{A_s} ⊗ E_{B_t} = E_B E_A through the factor embeddings
    mixed = E_A @ opB
    rep.add("commuting_square_value", float(np.max(np.abs(
        mixed - pair.E_As @ mixed))))
    # the two expectations agree with the trace expectation onto the factors
    tr = AB.trace_vec
    rep.add("E_A_trace_preserving", float(np.max(np.abs(
        pair.tr_a @ E_A - tr))))
    rep.add("E_B_trace_preserving", float(np.max(np.abs(
        pair.tr_b @ E_B - tr))))
    rep.add("tr_compat_both_factors", float(np.max(np.abs(
        pair.tr_a @ E_A - pair.tr_b @ E_B))))
    # bimodularity of E_A over i_A on random triples
    rng = np.random.default_rng(pair.seed)
    worst = 0.0
    for _ in range(20):
        x = rng.standard_normal(AB.dim) + 1j * rng.standard_normal(AB.dim)
        a1 = iA @ (rng.standard_normal(dA) + 1j * rng.standard_normal(dA))
        a2 = iA @ (rng.standard_normal(dA) + 1j * rng.standard_normal(dA))
        lhs = E_A @ AB.product(a1, AB.product(x, a2))
        rhs = wa.algebra.left_mult_operator(E_A @ a1) @ (
            wa.algebra.right_mult_operator(E_A @ a2) @ (E_A @ x))
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    rep.add("E_A_bimodular", worst, "20 seeded triples")

    # A ∩ B inside the floor is the common counital subalgebra
    csa = counital_subalgebras(wa, seed=pair.seed)
    inter = subspace_intersection_dim(iA, iB)
    rep.add("factor_intersection_dim",
            0.0 if inter == csa.source.sub.dim else 1.0,
            f"dim {inter} = dim A_s")
    as_in_floor = iA @ csa.source.inject
    sol, *_ = np.linalg.lstsq(iB, as_in_floor, rcond=None)
    rep.add("factor_intersection_is_As",
            float(np.max(np.abs(iB @ sol - as_in_floor))))
    return E_A, E_B, rep


def markov_trace(AB, pair):
    """The canonical trace of the first crossed product, with its reports."""
    rep = Report()
    tr = AB.trace_vec
    if AB.mult is not None:
        tm = np.einsum("ijk,k->ij", AB.mult, tr)
        rep.add("trace_property", float(np.max(np.abs(tm - tm.T))), "full basis")
        gram = AB.star_mat.T @ tm                # <e_i, e_j> = tr(e_i* e_j)
        eig = np.linalg.eigvalsh((gram + gram.conj().T) / 2)
        rep.add("trace_faithful", 0.0 if eig[0] > 1e-10 else 1.0,
                f"min eig {eig[0]:.3e}")
    rep.add("trace_normalized", float(np.abs(tr @ AB.unit - 1.0)))
    rep.add("trace_restricts_to_tr_a", float(np.max(np.abs(tr @ AB.i_M - pair.tr_a))))
    rep.add("trace_restricts_to_tr_b", float(np.max(np.abs(tr @ AB.i_G - pair.tr_b))))
    # tr([a⊗b]) = tr_a(E_Bt(b) ▷ a) = tr_b(b ◁ E_As(a))
    dA, dB = pair.wa.dim, pair.wb.dim
    lhs = (tr @ AB.Q.conj().T).reshape(dA, dB)   # trace of the class of a⊗b
    alt1 = np.einsum("gb,gsa,s->ab", pair.E_Bt, pair.act_b_on_a, pair.tr_a,
                     optimize=True)
    alt2 = np.einsum("za,ztx,t->ax", pair.E_As, pair.actr_a_on_b, pair.tr_b,
                     optimize=True)
    rep.add("trace_alt_form_target", float(np.max(np.abs(lhs - alt1))))
    rep.add("trace_alt_form_source", float(np.max(np.abs(lhs - alt2))))
    return tr, rep


def jones_projectors(pair):
    """f_a = dγ^{-1} g_s^{-1/2} p_a g_s^{-1/2} and its partner f_b."""
    dg = pair.d / pair.gamma
    gsir = invert(positive_sqrt(pair.gs))
    f_a = dg * (gsir * pair.haar_a.projection * gsir)
    gtir = invert(positive_sqrt(pair.gt_hat))
    f_b = dg * (gtir * pair.haar_b.projection * gtir)
    return f_a, f_b


def jones_report(AB, pair, f_a, f_b):
    rep = Report()
    wa, wb = pair.wa, pair.wb
    rep.add("f_b_projection", (f_b * f_b - f_b).max_abs())
    rep.add("f_b_selfadjoint", (f_b - f_b.star).max_abs())
    rep.add("f_a_projection", (f_a * f_a - f_a).max_abs())
    target = (pair.d / pair.gamma) ** 2
    rep.add("E_Bt_of_f_b", float(np.max(np.abs(
        pair.E_Bt @ f_b.vec - target * wb.algebra.unit().vec))))
    # f_b implements E_{A_t} on the A factor: f_b i_A(x) f_b = i_A(E_At(x)) f_b
    fbf = AB.i_G @ f_b.vec
    Lf = AB.left_op(fbf)
    Rf = AB.right_op(fbf)
    worst = 0.0
    for x in range(wa.dim):
        lhs = Lf @ (Rf @ AB.i_M[:, x])
        rhs = Rf @ (AB.i_M @ pair.E_At[:, x])
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    rep.add("f_b_implements_E_At", worst)
    # Markov factor on the target subalgebra
    csa = counital_subalgebras(wa, seed=pair.seed)
    tr = AB.trace_vec
    worst = 0.0
    for j in range(csa.target.sub.dim):
        x = csa.target.inject[:, j]
        with_f = tr @ AB.product(AB.i_M @ x, AB.i_G @ f_b.vec)
        plain = tr @ (AB.i_M @ x)
        worst = max(worst, abs(with_f - target * plain))
    rep.add("markov_factor", worst, f"d^2 gamma^-2 = {target:.12g}")
    return rep


# ---------------------------------------------------------------------------
# the ladder of commuting squares
# ---------------------------------------------------------------------------

@dataclass
class LadderGrid:
    pair: DualPair
    a_floors: list                 # A = A_0 ⊂ A_1 = A⋊B ⊂ A_2 = A⋊B⋊A ⊂ ...
    b_floors: list                 # B_t ≅ A_s ⊂ B ⊂ B⋊A ⊂ ...
    vertical: list                 # b_floors[k] -> a_floors[k] coordinate maps
    e_row: list                    # per row step: E_{A_{n}}: A_{n+1} -> A_n coords
    e_col: list                    # per floor: projection of A_n onto the B_n image
    report: Report = field(default_factory=Report)

    @property
    def depth(self):
        return len(self.a_floors) - 1


def ladder(wa, wb, pairing, depth=2, pair=None, dim_cap=DEFAULT_DIM_CAP,
           seed=42, verify=True):
    """Iterated smash products with the dual action at each step.

    Builds A-row floors A_0..A_depth and B-row floors B_0..B_depth, the
    vertical embeddings, and the row/column expectations; verifies every
    elementary square and the Jones basic-construction relation per row step.
    """
    if pair is None:
        pair = DualPair(wa, wb, pairing, seed=seed)
    rep = Report()
    csa = counital_subalgebras(pair.wa, seed=seed)
    csb = counital_subalgebras(pair.wb, seed=seed)

    A0 = FloorAlgebra.from_groupoid(pair.wa, pair.tr_a, "A")
    B1 = FloorAlgebra.from_groupoid(pair.wb, pair.tr_b, "B")
    a_floors = [A0]
    b_floors = [None, B1]          # B_0 is the counital base, handled separately
    vertical = [csa.source.inject]  # B_t ≅ A_s inside A via y ↦ y ▷ 1_a
    e_row = []
    e_col = [pair.E_As]            # column expectation on A_0

    total = A0.dim + csa.source.sub.dim + B1.dim
    for n in range(depth):
        g_is_b = (n % 2 == 0)
        which = "B" if g_is_b else "A"
        # the acting groupoid's action on the partner base algebra; on higher
        # floors it acts through the dual action on the last tensor leg
        base_act = pair.act_b_on_a if g_is_b else pair.act_a_on_b
        actA = base_act if n == 0 else a_floors[n].dual_action_of(base_act)
        side = acting_side(pair, which, actA, which)
        An = smash(a_floors[n], side, name=f"A{n + 1}", verify=verify, seed=seed)
        rep.extend(An.report, prefix=f"A{n + 1}_")
        a_floors.append(An)
        total += An.dim
        if total > dim_cap:
            raise MatAlgError(f"ladder total dimension {total} exceeds the cap "
                              f"{dim_cap}")
        e_row.append(An.E_to_base)

        if n >= 1:
            actB = base_act if n == 1 else b_floors[n].dual_action_of(base_act)
            side_b = acting_side(pair, which, actB, which)
            Bn = smash(b_floors[n], side_b, name=f"B{n + 1}", verify=verify,
                       seed=seed)
            rep.extend(Bn.report, prefix=f"B{n + 1}_")
            b_floors.append(Bn)
            total += Bn.dim
            if total > dim_cap:
                raise MatAlgError(f"ladder total dimension {total} exceeds the "
                                  f"cap {dim_cap}")

        # vertical embedding of the new B floor into the new A floor
        if n == 0:
            vertical.append(a_floors[1].i_G)
        else:
            dG = a_floors[n + 1].G.W.dim
            vertical.append(a_floors[n + 1].Q.conj().T
                            @ np.kron(vertical[n], np.eye(dG))
                            @ b_floors[n + 1].Q)

        # column expectation (a projection on the new floor's coordinates)
        dG = a_floors[n + 1].G.W.dim
        e_col.append(a_floors[n + 1].Q.conj().T
                     @ np.kron(e_col[n], np.eye(dG)) @ a_floors[n + 1].Q)

    grid = LadderGrid(pair=pair, a_floors=a_floors, b_floors=b_floors,
                      vertical=vertical, e_row=e_row, e_col=e_col, report=rep)
    if verify:
        _verify_squares(grid)
    return grid


def _verify_squares(grid):
    rep = grid.report
    pair = grid.pair
    for n in range(grid.depth):
        An1 = grid.a_floors[n + 1]
        erow_op = An1.i_M @ grid.e_row[n]
        ecol_op = grid.e_col[n + 1]
        rep.add(f"square_{n}_commutes",
                float(np.max(np.abs(erow_op @ ecol_op - ecol_op @ erow_op))))
        rep.add(f"trace_restricts_A{n + 1}_to_A{n}", float(np.max(np.abs(
            An1.trace_vec @ An1.i_M - grid.a_floors[n].trace_vec))))
        if n >= 1:
            vmat = grid.vertical[n + 1]
            Bfl = grid.b_floors[n + 1]
            rng = np.random.default_rng(7)
            worst = float(np.max(np.abs(vmat @ Bfl.unit - An1.unit)))
            for _ in range(10):
                u = rng.standard_normal(Bfl.dim) + 1j * rng.standard_normal(Bfl.dim)
                v = rng.standard_normal(Bfl.dim) + 1j * rng.standard_normal(Bfl.dim)
                worst = max(worst, float(np.max(np.abs(
                    vmat @ Bfl.product(u, v) - An1.product(vmat @ u, vmat @ v)))))
                worst = max(worst, float(np.max(np.abs(
                    vmat @ Bfl.star(u) - An1.star(vmat @ u)))))
            rep.add(f"vertical_{n + 1}_star_hom", worst, "sampled")
    # the second row step is a basic construction: e x e = E(x) e, e = [1 ⊗ f_a]
    if grid.depth >= 2:
        f_a, _ = jones_projectors(pair)
        An1 = grid.a_floors[2]
        prev = grid.a_floors[1]
        e_vec = An1.i_G @ f_a.vec
        Lf, Rf = An1.left_op(e_vec), An1.right_op(e_vec)
        emb0 = An1.i_M @ prev.i_M              # A_0 re-embedded into A_2
        worst = 0.0
        for x in range(prev.dim):
            lhs = Lf @ (Rf @ An1.i_M[:, x])
            rhs = Rf @ (emb0 @ grid.e_row[0][:, x])
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        rep.add("basic_construction_row_1", worst)
    # centers of the floors (no silent degeneration)
    for fl in grid.a_floors[1:]:
        if fl.mult is None:
            continue
        rows = [fl.left_op(np.eye(fl.dim)[:, j]) - fl.right_op(np.eye(fl.dim)[:, j])
                for j in range(fl.dim)]
        zdim = null_space(np.vstack(rows)).shape[1]
        rep.add(f"center_dim_{fl.name}", 0.0, f"dim Z = {zdim}")


# ---------------------------------------------------------------------------
# relative commutants in the grid
# ---------------------------------------------------------------------------

def commutant_in_subspace(floor, gen_vecs, subspace):
    """Basis of {x in span(subspace) : x commutes with all generators}."""
    rows = []
    for g in gen_vecs:
        rows.append((floor.left_op(g) - floor.right_op(g)) @ subspace)
    ns = null_space(np.vstack(rows))
    return subspace @ ns


def grid_commutant_report(grid, a_gens=None, b_gens=None):
    """The cited relative-commutant identities of the first floors.

    a_gens/b_gens: coordinate generators of A and B (defaults: full bases).
    """
    pair = grid.pair
    rep = Report()
    AB = grid.a_floors[1]
    iA, iB = AB.i_M, AB.i_G
    csa = counital_subalgebras(pair.wa, seed=pair.seed)
    csb = counital_subalgebras(pair.wb, seed=pair.seed)
    a_gens = a_gens if a_gens is not None else list(np.eye(pair.wa.dim).T)
    b_gens = b_gens if b_gens is not None else list(np.eye(pair.wb.dim).T)

    # commutant of i_B(B) in A.B intersected with i_A(A) = A_t
    com = commutant_in_subspace(AB, [iB @ g for g in b_gens], iA)
    want = iA @ csa.target.inject
    rep.add("iB_commutant_in_iA_dim",
            0.0 if subspace_rank(com) == csa.target.sub.dim else 1.0,
            f"dim {subspace_rank(com)} = dim A_t")
    rep.add("iB_commutant_in_iA_span", _span_distance(com, want))

    # commutant of i_A(A) in A.B intersected with i_B(B) = B_s
    com = commutant_in_subspace(AB, [iA @ g for g in a_gens], iB)
    want = iB @ csb.source.inject
    rep.add("iA_commutant_in_iB_dim",
            0.0 if subspace_rank(com) == csb.source.sub.dim else 1.0,
            f"dim {subspace_rank(com)} = dim B_s")
    rep.add("iA_commutant_in_iB_span", _span_distance(com, want))

    # the full commutant of i_A(A) in A.B is already i_B(B_s)
    com = commutant_in_subspace(AB, [iA @ g for g in a_gens], np.eye(AB.dim))
    rep.add("iA_full_commutant_is_iB_Bs", _span_distance(com, want),
            f"dim {subspace_rank(com)}")

    # fixed points of the dual action on A form A_t
    EtB = pair.wb.eps_t_matrix()
    act = pair.act_b_on_a
    Et_act = np.einsum("gi,gxy->ixy", EtB, act)
    ns = null_space(np.vstack([act[i] - Et_act[i] for i in range(pair.wb.dim)]))
    rep.add("dual_action_fixed_points_dim",
            0.0 if ns.shape[1] == csa.target.sub.dim else 1.0,
            f"dim {ns.shape[1]} = dim A_t")
    rep.add("dual_action_fixed_points_span",
            _span_distance(ns, csa.target.inject))

    if grid.depth >= 2:
        # corner: the commutant of the first A factor inside the embedded B row
        # floor equals the last tensor leg, a copy of A
        A2 = grid.a_floors[2]
        first = A2.i_M @ AB.i_M                   # a ↦ [[a⊗1]⊗1]
        vert2 = grid.vertical[2]
        gens = [first @ g for g in a_gens]
        com = commutant_in_subspace(A2, gens, vert2)
        want = vert2 @ grid.b_floors[2].i_G       # [[1⊗1]⊗a]
        rep.add("corner_commutant_dim",
                0.0 if subspace_rank(com) == pair.wa.dim else 1.0,
                f"dim {subspace_rank(com)} = dim A")
        rep.add("corner_commutant_span", _span_distance(com, want))

        # mirror corner in B⋊A: commutant of i_B(B) within i_A(A) is A_s
        B2 = grid.b_floors[2]
        gens = [B2.i_M @ g for g in b_gens]
        com = commutant_in_subspace(B2, gens, B2.i_G)
        want = B2.i_G @ csa.source.inject
        rep.add("mirror_corner_dim",
                0.0 if subspace_rank(com) == csa.source.sub.dim else 1.0,
                f"dim {subspace_rank(com)} = dim A_s")
        rep.add("mirror_corner_span", _span_distance(com, want))
    return rep


def _span_distance(U, V):
    """Symmetric containment residual of two column spans."""
    if U.shape[1] == 0 or V.shape[1] == 0:
        return 0.0 if U.shape[1] == V.shape[1] else 1.0
    solUV, *_ = np.linalg.lstsq(V, U, rcond=None)
    solVU, *_ = np.linalg.lstsq(U, V, rcond=None)
    return max(float(np.max(np.abs(V @ solUV - U))),
               float(np.max(np.abs(U @ solVU - V))))


# ---------------------------------------------------------------------------
# pairing recovery through the crossed product
# ---------------------------------------------------------------------------

def pairing_recovery(pair):
    """φ_a(g_s^{-2} p_a (b ▷ a)) = <a, b> over all basis pairs (regular case).

    Returns (max residual, Report); reports "not applicable" when the source
    structure is not regular.
    """
    rep = Report()
    if not is_regular(pair.wa, seed=pair.seed):
        rep.add("pairing_recovery", 0.0, "not applicable: structure not regular")
        return None, rep
    wa = pair.wa
    gs2 = invert(pair.gs * pair.gs)
    w = gs2 * pair.haar_a.projection
    row = pair.haar_a.measure @ wa.algebra.left_mult_operator(w.vec)
    lhs = np.einsum("k,bka->ab", row, pair.act_b_on_a, optimize=True)
    resid = float(np.max(np.abs(lhs - pair.pairing.gram)))
    rep.add("pairing_recovery", resid, "all basis pairs")
    # intermediate identity: (p_b ĝ_t^{-2}) ◁ p_a = 1_b
    u = pair.haar_b.projection * invert(pair.gt_hat * pair.gt_hat)
    moved = np.einsum("atx,x,a->t", pair.actr_a_on_b, u.vec,
                      pair.haar_a.projection.vec, optimize=True)
    rep.add("intermediate_identity", float(np.max(np.abs(
        moved - pair.wb.algebra.unit().vec))))
    return resid, rep
