"""Construction of abstractions for the slope-restricted linear class.

The pipeline is: certify the closed-loop matrix inequality for the concrete
system, pick an injective aggregation ``P``, then solve the linear
conditions relating ``(A, B, C1, C2, D, E, F)`` to the abstract matrices one
by one.  Every solve records its residual in a construction log.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (C2NotInvertible, CertificateInvalid, Infeasible, NoCommonLeftInverse,
                     NonConvergence, NotRestrictedForm, PNotInjective)
from .matgeo import (DEFAULT_TOL, as_matrix, image_subset, is_injective, kernel_basis,
                     max_abs, max_eigenvalue, numerical_rank, pseudoinverse, solve_factor)
from .storage import StorageCertificate, VerificationReport, compute_Rtilde
from .sysmodel import NonlinearControlSystem, normalize_slope, time_grid, rk4

__all__ = [
    "check_assumption1", "lmi_difference", "BarVariables", "to_bar_lmi", "from_bar_lmi",
    "bar_lmi_matrix", "solve_restricted_lmi", "maximize_kappa", "construct_Ahat_Q",
    "construct_Ehat_L2", "construct_C2hat_H", "construct_Dhat_What",
    "BehaviorPreservation", "construct_Bhat_behavior", "behavior_input",
    "PipelineOptions", "AbstractionResult", "table1_pipeline", "spr_duality_check",
    "aggregation_matrix",
]

log = logging.getLogger(__name__)


def _two_over_b(b):
    return 0.0 if math.isinf(b) else 2.0 / b


def _uses_nonlinear_row(sys, cert):
    # the third block row only matters when phi acts on the error dynamics
    g = sys.B @ cert.L1 + sys.E
    return (not sys.phi.is_zero) and bool(np.any(g != 0) or np.any(sys.F != 0))


def _normalized(sys):
    return normalize_slope(sys) if sys.phi.slope_lower != 0.0 else sys


def lmi_difference(sys, cert):
    """Left minus right side of the closed-loop matrix inequality.

    The block row belonging to the nonlinearity is dropped when ``phi`` is
    zero or does not enter the error dynamics.
    """
    sys = _normalized(sys)
    M, Z = cert.Mhat, cert.Z
    Acl = sys.A + sys.B @ cert.K
    r = Z.shape[1]
    top = Acl.T @ M + M @ Acl + cert.kappa_hat * M - sys.C2.T @ cert.X22 @ sys.C2
    off = M @ Z - sys.C2.T @ cert.X21
    blocks = [[top, off], [off.T, -cert.X11]]
    if _uses_nonlinear_row(sys, cert):
        g = sys.B @ cert.L1 + sys.E
        c = M @ g + sys.F.T
        blocks[0].append(c)
        blocks[1].append(np.zeros((r, 1)))
        blocks.append([c.T, np.zeros((1, r)), np.array([[-_two_over_b(sys.phi.slope_upper)]])])
    S = np.block(blocks)
    return 0.5 * (S + S.T)


def check_assumption1(sys, cert, tol=DEFAULT_TOL):
    """Verify ``D = Z W`` and the closed-loop matrix inequality for ``cert``.

    A nonzero lower slope bound is normalized away first.  ``b = inf`` is
    accepted (the corner entry ``2/b`` becomes zero).

    Returns
    -------
    VerificationReport
        Entries ``D_eq_ZW``, ``Mhat_positive_definite``,
        ``X22_negative_semidefinite`` and ``lmi``.
    """
    rep = VerificationReport()
    D = sys.D
    if cert.Z.shape[0] != sys.n or cert.Z.shape[1] != cert.W.shape[0] or cert.W.shape[1] != sys.p:
        rep.add("D_eq_ZW", math.inf, tol.residual_tol, {"reason": "shape mismatch"})
        return rep
    resid = max_abs(D - cert.Z @ cert.W)
    rep.add("D_eq_ZW", resid, tol.residual_tol * (1 + max_abs(D)))
    lam = float(np.linalg.eigvalsh(cert.Mhat)[0])
    rep.add("Mhat_positive_definite", -lam, -tol.definiteness_tol)
    rep.add("X22_negative_semidefinite", max_eigenvalue(cert.X22, tol) if cert.X22.size else 0.0,
            tol.definiteness_tol)
    rep.add("lmi", max_eigenvalue(lmi_difference(sys, cert), tol), tol.definiteness_tol)
    return rep


@dataclass(eq=False)
class BarVariables:
    """Variables of the inequality after the congruence with ``diag(Mhat^-1, I, 1)``."""

    Mbar: np.ndarray
    Kbar: np.ndarray
    L1: np.ndarray
    Z: np.ndarray
    X22bar: np.ndarray
    X21bar: np.ndarray
    X12bar: np.ndarray
    X11: np.ndarray


def _c2_inverse(sys):
    C2 = sys.C2
    if C2.shape[0] == 0:
        return C2.T.copy()
    if C2.shape[0] != C2.shape[1] or numerical_rank(C2) < C2.shape[0]:
        raise C2NotInvertible(f"C2 must be square and invertible, got shape {C2.shape}")
    return np.linalg.inv(C2)


def to_bar_lmi(sys, cert):
    """Change of variables that makes the inequality linear for fixed ``kappa_hat``."""
    _c2_inverse(sys)
    Mbar = np.linalg.inv(cert.Mhat)
    C2 = sys.C2
    return BarVariables(
        Mbar=Mbar, Kbar=cert.K @ Mbar, L1=cert.L1.copy(), Z=cert.Z.copy(),
        X22bar=Mbar @ C2.T @ cert.X22 @ C2 @ Mbar, X21bar=Mbar @ C2.T @ cert.X21,
        X12bar=cert.X12 @ C2 @ Mbar, X11=cert.X11.copy())


def from_bar_lmi(sys, bar, W, kappa_hat, pi=None):
    """Undo :func:`to_bar_lmi`; returns a certificate without abstraction data."""
    C2inv = _c2_inverse(sys)
    Mbar = 0.5 * (bar.Mbar + bar.Mbar.T)
    Mhat = np.linalg.inv(Mbar)
    Mhat = 0.5 * (Mhat + Mhat.T)
    X22 = C2inv.T @ Mhat @ bar.X22bar @ Mhat @ C2inv
    X21 = C2inv.T @ Mhat @ bar.X21bar
    return StorageCertificate(
        Mhat=Mhat, K=bar.Kbar @ Mhat, L1=bar.L1, Z=bar.Z, W=W,
        X11=0.5 * (bar.X11 + bar.X11.T), X12=X21.T, X21=X21, X22=0.5 * (X22 + X22.T),
        kappa_hat=kappa_hat, pi=pi)


def bar_lmi_matrix(sys, bar, kappa_hat, nonlinear=None):
    """Left minus right side of the inequality in bar variables."""
    sys = _normalized(sys)
    A, B = sys.A, sys.B
    Mb = bar.Mbar
    r = bar.Z.shape[1]
    top = Mb @ A.T + A @ Mb + bar.Kbar.T @ B.T + B @ bar.Kbar + kappa_hat * Mb - bar.X22bar
    off = bar.Z - bar.X21bar
    blocks = [[top, off], [off.T, -bar.X11]]
    if nonlinear is None:
        nonlinear = (not sys.phi.is_zero) and bool(np.any(B @ bar.L1 + sys.E) or np.any(sys.F))
    if nonlinear:
        c = B @ bar.L1 + sys.E + Mb @ sys.F.T
        blocks[0].append(c)
        blocks[1].append(np.zeros((r, 1)))
        blocks.append([c.T, np.zeros((1, r)), np.array([[-_two_over_b(sys.phi.slope_upper)]])])
    S = np.block(blocks)
    return 0.5 * (S + S.T)


# -- alternating projections ---------------------------------------------------

def _svec(S):
    n = S.shape[0]
    iu = np.triu_indices(n, 1)
    return np.concatenate([np.diag(S), math.sqrt(2) * S[iu]])


def _smat(v, n):
    S = np.zeros((n, n))
    iu = np.triu_indices(n, 1)
    S[iu] = v[n:] / math.sqrt(2)
    S = S + S.T
    S[np.diag_indices(n)] = v[:n]
    return S


def _clip_eigs(S, lo=-np.inf, hi=np.inf):
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return (V * np.clip(w, lo, hi)) @ V.T


class _BarLayout:
    """Packs the free bar variables into one vector (symmetric blocks via svec)."""

    def __init__(self, n, m, r, q2, nonlinear):
        self.n, self.m, self.r, self.q2, self.nonlinear = n, m, r, q2, nonlinear
        sizes = [("Mbar", n * (n + 1) // 2), ("Kbar", m * n), ("L1", m if nonlinear else 0),
                 ("X22bar", n * (n + 1) // 2 if q2 else 0), ("X21bar", n * r if q2 else 0),
                 ("X11", r * (r + 1) // 2)]
        self.slices = {}
        k = 0
        for name, size in sizes:
            self.slices[name] = slice(k, k + size)
            k += size
        self.size = k

    def unpack(self, v, Z):
        n, m, r = self.n, self.m, self.r
        s = self.slices
        X22bar = _smat(v[s["X22bar"]], n) if self.q2 else np.zeros((n, n))
        X21bar = v[s["X21bar"]].reshape(n, r) if self.q2 else np.zeros((n, r))
        return BarVariables(
            Mbar=_smat(v[s["Mbar"]], n), Kbar=v[s["Kbar"]].reshape(m, n),
            L1=v[s["L1"]].reshape(m, 1) if self.nonlinear else np.zeros((m, 1)),
            Z=Z, X22bar=X22bar, X21bar=X21bar, X12bar=X21bar.T, X11=_smat(v[s["X11"]], r))

    def project_cones(self, v, floor):
        v = v.copy()
        s = self.slices
        v[s["Mbar"]] = _svec(_clip_eigs(_smat(v[s["Mbar"]], self.n), lo=floor))
        if self.q2:
            v[s["X22bar"]] = _svec(_clip_eigs(_smat(v[s["X22bar"]], self.n), hi=0.0))
        return v


def solve_restricted_lmi(sys, kappa_hat, max_iters=500, tol=DEFAULT_TOL, margin=1e-6,
                         floor=1e-6, W=None, seed=0):
    """Search a certificate for fixed ``kappa_hat`` by alternating projections.

    ``Z`` is fixed to ``D`` and ``W`` to the identity (so ``D = Z W`` holds
    exactly).  The iteration alternates between the affine set
    ``{(v, Y) : Y = G0 + A v}`` spanned by the bar variables ``v`` and the
    product of cones ``Y <= -margin I``, ``Mbar >= floor I``, ``X22bar <= 0``.
    A candidate is returned only after it passes :func:`check_assumption1`.

    Raises
    ------
    NonConvergence
        No certified point within ``max_iters``.  This is not a proof that the
        inequality is infeasible.
    """
    sys = _normalized(sys)
    _c2_inverse(sys)
    n, m, p, q2 = sys.n, sys.m, sys.p, sys.q2
    Z = sys.D.copy()
    if W is None:
        W = np.eye(p)
    nonlinear = not sys.phi.is_zero and (bool(np.any(sys.E)) or bool(np.any(sys.F)))
    layout = _BarLayout(n, m, p, q2, nonlinear)

    def Y_of(v):
        return bar_lmi_matrix(sys, layout.unpack(v, Z), kappa_hat, nonlinear)

    G0 = _svec(Y_of(np.zeros(layout.size)))
    cols = []
    for k in range(layout.size):
        e = np.zeros(layout.size)
        e[k] = 1.0
        cols.append(_svec(Y_of(e)) - G0)
    Amap = np.column_stack(cols) if cols else np.zeros((G0.size, 0))
    normal = np.eye(layout.size) + Amap.T @ Amap
    chol = np.linalg.cholesky(normal)
    ny = Y_of(np.zeros(layout.size)).shape[0]

    v = np.zeros(layout.size)
    v[layout.slices["Mbar"]] = _svec(np.eye(n))
    v = layout.project_cones(v, floor)
    Y = _smat(G0 + Amap @ v, ny)
    last_error = None
    for it in range(max_iters):
        Yc = _clip_eigs(Y, hi=-margin)
        vc = layout.project_cones(v, floor)
        rhs = vc + Amap.T @ (_svec(Yc) - G0)
        v = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
        Y = _smat(G0 + Amap @ v, ny)
        for cand in (v, layout.project_cones(v, floor)):
            bar = layout.unpack(cand, Z)
            if np.linalg.eigvalsh(bar.Mbar)[0] <= 0:
                continue
            if np.linalg.eigvalsh(Y_of(cand))[-1] > 0:
                continue
            try:
                cert = from_bar_lmi(sys, bar, W, kappa_hat)
            except CertificateInvalid as exc:
                last_error = exc
                continue
            if check_assumption1(sys, cert, tol).passed:
                log.debug("restricted LMI certified after %d iterations", it + 1)
                return cert
    raise NonConvergence(f"alternating projections found no certified point in {max_iters} "
                         f"iterations (kappa_hat = {kappa_hat})"
                         + (f"; last candidate rejected: {last_error}" if last_error else ""))


def maximize_kappa(sys, lo, hi, iters=20, **kwargs):
    """Bisection on ``kappa_hat`` keeping the largest value the solver certifies."""
    best = solve_restricted_lmi(sys, lo, **kwargs)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        try:
            best = solve_restricted_lmi(sys, mid, **kwargs)
            lo = mid
        except NonConvergence:
            hi = mid
    return best


# -- geometric constructions -------------------------------------------------

def _require_injective(P, tol):
    if not is_injective(P, tol):
        raise PNotInjective("P must have full column rank")


def _complement_solve(P, B, Y, tol, step):
    """Split ``Y = P X + B U`` with minimum-norm ``U`` then ``X = P^+ (Y - B U)``."""
    if not image_subset(Y, np.hstack([P, B]), tol):
        raise Infeasible(f"{step}: image condition fails", step=step)
    Pp = pseudoinverse(P, tol)
    Pi = np.eye(P.shape[0]) - P @ Pp
    U = pseudoinverse(Pi @ B, tol) @ (Pi @ Y) if B.size else np.zeros((B.shape[1], Y.shape[1]))
    X = Pp @ (Y - B @ U)
    resid = float(np.linalg.norm(P @ X + B @ U - Y)) if Y.size else 0.0
    if resid > tol.residual_tol * (1 + float(np.linalg.norm(Y))):
        raise Infeasible(f"{step}: residual {resid:.3e} above tolerance", step=step, residual=resid)
    return X, U, resid


def construct_Ahat_Q(A, B, P, tol=DEFAULT_TOL, return_residual=False):
    """Solve ``A P = P Ahat - B Q``; feasible iff ``im AP`` lies in ``im P + im B``.

    ``Q`` is the minimum-norm choice, so ``P = I`` gives ``Ahat = A``, ``Q = 0``.
    """
    A, B, P = as_matrix(A), as_matrix(B), as_matrix(P)
    _require_injective(P, tol)
    Ahat, negQ, resid = _complement_solve(P, B, A @ P, tol, "Ahat_Q")
    out = (Ahat, -negQ)
    return out + (resid,) if return_residual else out


def construct_Ehat_L2(E, P, B, L1, tol=DEFAULT_TOL, return_residual=False):
    """Solve ``E = P Ehat - B (L1 - L2)`` for ``Ehat`` and ``L2``."""
    E, P, B, L1 = as_matrix(E), as_matrix(P), as_matrix(B), as_matrix(L1)
    _require_injective(P, tol)
    Ehat, delta, resid = _complement_solve(P, B, E, tol, "Ehat_L2")
    out = (Ehat, L1 + delta)
    return out + (resid,) if return_residual else out


def construct_C2hat_H(C2, P, X12, X22, H=None, tol=DEFAULT_TOL, return_residual=False):
    """Matrices with ``X12 C2 P = X12 H C2hat`` and ``X22 C2 P = X22 H C2hat``.

    Without a supplied ``H`` the choice is ``H = C2 P``, ``C2hat = I``
    (``H = 0`` when ``X12`` and ``X22`` both vanish).  A supplied ``H``
    leaves ``C2hat`` to a least-norm solve.
    """
    C2, P = np.asarray(C2, dtype=float), as_matrix(P)
    nh = P.shape[1]
    q2 = C2.shape[0]
    if q2 == 0:
        out = (np.zeros((0, nh)), np.zeros((0, 0)))
        return out + (0.0,) if return_residual else out
    X12 = np.asarray(X12, dtype=float).reshape(-1, q2)
    X22 = np.asarray(X22, dtype=float).reshape(q2, q2)
    lhs = np.vstack([X12 @ C2 @ P, X22 @ C2 @ P])
    if H is None:
        if max_abs(X12) == 0 and max_abs(X22) == 0:
            H, C2hat = np.zeros((q2, nh)), np.eye(nh)
        else:
            H, C2hat = C2 @ P, np.eye(nh)
    else:
        H = as_matrix(H, rows=q2, name="H")
        try:
            C2hat = solve_factor(lhs, np.vstack([X12 @ H, X22 @ H]), tol)
        except Infeasible as exc:
            raise Infeasible(f"C2hat_H: {exc}", step="C2hat_H", residual=exc.residual) from None
    resid = max_abs(lhs - np.vstack([X12 @ H, X22 @ H]) @ C2hat)
    if resid > tol.residual_tol * (1 + max_abs(lhs)):
        raise Infeasible(f"C2hat_H: residual {resid:.3e}", step="C2hat_H", residual=resid)
    out = (C2hat, H)
    return out + (resid,) if return_residual else out


def construct_Dhat_What(P, Z, What=None, tol=DEFAULT_TOL, return_residual=False):
    """Solve ``P Dhat = Z What``.

    By default ``What`` is an orthonormal basis of ``{v : Z v in im P}``, the
    largest admissible choice.  A supplied ``What`` is checked against
    ``im Z What ⊆ im P``.
    """
    P, Z = as_matrix(P), np.asarray(Z, dtype=float).reshape(P.shape[0], -1)
    _require_injective(P, tol)
    Pp = pseudoinverse(P, tol)
    if What is None:
        Pi = np.eye(P.shape[0]) - P @ Pp
        What = kernel_basis(Pi @ Z, tol) if Z.shape[1] else np.zeros((0, 0))
        if Z.shape[1] and What.shape[1] == 0:
            log.warning("only the zero What satisfies P Dhat = Z What; "
                        "interconnection conditions become trivial on this block")
    else:
        What = np.asarray(What, dtype=float).reshape(Z.shape[1], -1)
        if not image_subset(Z @ What, P, tol):
            raise Infeasible("Dhat_What: im Z What is not contained in im P", step="Dhat_What")
    Dhat = Pp @ Z @ What
    resid = max_abs(P @ Dhat - Z @ What)
    out = (Dhat, What)
    return out + (resid,) if return_residual else out


def aggregation_matrix(partition):
    """Block-diagonal matrix of ones columns, one column per block."""
    return np.asarray(
        np.vstack([np.hstack([np.ones((k, 1)) if j == i else np.zeros((k, 1))
                              for j in range(len(partition))]) for i, k in enumerate(partition)]),
        dtype=float)


# -- behavior preservation ---------------------------------------------------

@dataclass(eq=False)
class BehaviorPreservation:
    """Left inverse ``Phat`` of ``P`` with ``I = P Phat + G T`` and ``Bhat = [Phat B, Phat A G]``."""

    Phat: np.ndarray
    G: np.ndarray
    T: np.ndarray
    Bhat: np.ndarray
    max_output_deviation: float = float("nan")

    def to_dict(self):
        return {"Phat": self.Phat.tolist(), "G": self.G.tolist(), "T": self.T.tolist(),
                "Bhat": self.Bhat.tolist(), "max_output_deviation": self.max_output_deviation}


def _span_condition(P, C, tol):
    n = P.shape[0]
    return numerical_rank(np.hstack([P, kernel_basis(C, tol)]), tol) == n


def behavior_input(sys, Q, L1, L2, bp, xi, v):
    """Abstract input ``[v - Q Phat xi - (L1 - L2) phi(F xi); T xi]`` tracking a concrete run."""
    u = v - Q @ (bp.Phat @ xi)
    if not sys.phi.is_zero:
        u = u - (L1 - L2) @ sys.phi(sys.F @ xi)
    return np.concatenate([u, bp.T @ xi])


def construct_Bhat_behavior(sys, P, Q, L1, L2, Ahat=None, Ehat=None, tol=DEFAULT_TOL,
                            verify_runs=5, T=5.0, dt=1e-2, seed=0, match_tol=1e-6):
    """Input matrix making every concrete output trajectory reproducible by the abstraction.

    ``verify_runs`` co-simulations then compare outputs; the run fails when
    the deviation relative to ``1 + max |y|`` exceeds ``match_tol``.  The
    absolute deviation is stored in ``max_output_deviation``.

    Raises
    ------
    Infeasible
        If ``im P + ker C1`` or ``im P + ker F`` is not the whole state space.
    NoCommonLeftInverse
        If no single left inverse of ``P`` annihilates both kernels.
    """
    P = as_matrix(P)
    _require_injective(P, tol)
    n, nh = P.shape
    if not _span_condition(P, sys.C1, tol):
        raise Infeasible("im P + ker C1 does not span the state space", step="Bhat_behavior")
    if not _span_condition(P, sys.F, tol):
        raise Infeasible("im P + ker F does not span the state space", step="Bhat_behavior")
    C1hat, Fhat = sys.C1 @ P, sys.F @ P
    # vec(Phat) column-major: X Phat Y  ->  (Y^T kron X) vec(Phat)
    rows = [np.kron(P.T, np.eye(nh)), np.kron(np.eye(n), C1hat), np.kron(np.eye(n), Fhat)]
    rhs = [np.eye(nh).ravel(order="F"), sys.C1.ravel(order="F"), sys.F.ravel(order="F")]
    Amat, bvec = np.vstack(rows), np.concatenate(rhs)
    x = pseudoinverse(Amat, tol) @ bvec
    resid = float(np.linalg.norm(Amat @ x - bvec))
    if resid > tol.residual_tol * (1 + float(np.linalg.norm(bvec))):
        raise NoCommonLeftInverse(f"no common left inverse of P (residual {resid:.3e})",
                                  step="Bhat_behavior", residual=resid)
    Phat = x.reshape(nh, n, order="F")
    proj = np.eye(n) - P @ Phat
    k = n - nh
    U, s, Vt = np.linalg.svd(proj)
    G = U[:, :k] * s[:k]
    Tm = Vt[:k]
    Bhat = np.hstack([Phat @ sys.B, Phat @ sys.A @ G])
    bp = BehaviorPreservation(Phat, G, Tm, Bhat)
    if verify_runs:
        if Ahat is None:
            Ahat, _ = construct_Ahat_Q(sys.A, sys.B, P, tol)
        if Ehat is None:
            Ehat = pseudoinverse(P, tol) @ (sys.E + sys.B @ (as_matrix(L1) - as_matrix(L2)))
        bp.max_output_deviation, rel = _check_behavior(sys, P, Ahat, Ehat, Q, L1, L2, bp,
                                                       verify_runs, T, dt, seed)
        if rel > match_tol:
            raise Infeasible(f"behavior check failed: relative output deviation {rel:.3e}",
                             step="Bhat_behavior", residual=rel)
    return bp


def _check_behavior(sys, P, Ahat, Ehat, Q, L1, L2, bp, runs, T, dt, seed):
    rng = np.random.default_rng(seed)
    n = sys.n
    C1hat, Fhat = sys.C1 @ P, sys.F @ P
    Q, L1, L2 = as_matrix(Q), as_matrix(L1), as_matrix(L2)
    worst = worst_rel = 0.0
    times = time_grid(T, dt)
    for _ in range(runs):
        amp = rng.standard_normal(sys.m)
        freq = rng.uniform(0.2, 2.0, sys.m)
        x0 = rng.standard_normal(n)

        def field_(t, z):
            xi, xh = z[:n], z[n:]
            v = amp * np.sin(freq * t)
            dxi = sys.A @ xi + sys.B @ v
            dxh = Ahat @ xh + bp.Bhat @ behavior_input(sys, Q, L1, L2, bp, xi, v)
            if not sys.phi.is_zero:
                dxi = dxi + sys.E @ sys.phi(sys.F @ xi)
                dxh = dxh + Ehat @ sys.phi(Fhat @ xh)
            return np.concatenate([dxi, dxh])

        Zs = rk4(field_, np.concatenate([x0, bp.Phat @ x0]), times)
        y = Zs[:, :n] @ sys.C1.T
        dev = float(np.abs(y - Zs[:, n:] @ C1hat.T).max())
        worst = max(worst, dev)
        worst_rel = max(worst_rel, dev / (1 + float(np.abs(y).max())))
    return worst, worst_rel


# -- pipeline ----------------------------------------------------------------

@dataclass
class PipelineOptions:
    """Choices left open by the construction.

    ``Bhat`` is ``"free"`` (identity of size ``nhat``), ``"behavior"``, or a
    matrix.  Without ``certificate`` the restricted LMI is solved at
    ``kappa_hat``.
    """

    certificate: StorageCertificate | None = None
    kappa_hat: float = 1.0
    H: np.ndarray | None = None
    What: np.ndarray | None = None
    Bhat: object = "free"
    pi: float | None = None
    tol: object = DEFAULT_TOL


@dataclass(eq=False)
class AbstractionResult:
    abstract_system: NonlinearControlSystem
    certificate: StorageCertificate
    construction_log: list = field(default_factory=list)
    behavior: BehaviorPreservation | None = None

    def to_dict(self):
        d = {"abstract_system": self.abstract_system.to_dict(),
             "certificate": self.certificate.to_dict(),
             "construction_log": [{"step": s, "residual": r} for s, r in self.construction_log]}
        if self.behavior is not None:
            d["behavior"] = self.behavior.to_dict()
        return d


def table1_pipeline(sys, P, options=None):
    """Build the abstraction ``(Ahat, Bhat, C1hat, C2hat, Dhat, Ehat, Fhat, phi)`` and its certificate.

    Steps run in order; a failing step raises with its name in ``step``.
    A nonzero lower slope bound is normalized first, so the returned
    abstraction shares the normalized nonlinearity.
    """
    opts = options or PipelineOptions()
    tol = opts.tol
    sys = _normalized(sys)
    steps = []
    cert = opts.certificate
    if cert is None:
        cert = solve_restricted_lmi(sys, opts.kappa_hat, tol=tol)
    rep = check_assumption1(sys, cert, tol)
    if not rep.passed:
        bad = ", ".join(f"{e.check} (margin {e.margin:.3e})" for e in rep.failures())
        raise CertificateInvalid(f"certificate step failed: {bad}")
    steps.append(("certificate", max(0.0, rep["lmi"].margin)))

    P = as_matrix(P, rows=sys.n, name="P")
    _require_injective(P, tol)
    steps.append(("P_injective", 0.0))

    Ahat, Q, r = construct_Ahat_Q(sys.A, sys.B, P, tol, return_residual=True)
    steps.append(("Ahat_Q", r))
    if sys.phi.is_zero:
        Ehat, L2 = np.zeros((P.shape[1], 1)), cert.L1.copy()
        steps.append(("Ehat_L2 (skipped: no nonlinearity)", 0.0))
    else:
        Ehat, L2, r = construct_Ehat_L2(sys.E, P, sys.B, cert.L1, tol, return_residual=True)
        steps.append(("Ehat_L2", r))
    Fhat = sys.F @ P
    steps.append(("Fhat", 0.0))
    C1hat = sys.C1 @ P
    steps.append(("C1hat", 0.0))
    C2hat, H, r = construct_C2hat_H(sys.C2, P, cert.X12, cert.X22, opts.H, tol, return_residual=True)
    steps.append(("C2hat_H", r))
    Dhat, What, r = construct_Dhat_What(P, cert.Z, opts.What, tol, return_residual=True)
    steps.append(("Dhat_What", r))

    behavior = None
    if isinstance(opts.Bhat, str) and opts.Bhat == "free":
        Bhat = np.eye(P.shape[1])
        steps.append(("Bhat (free)", 0.0))
    elif isinstance(opts.Bhat, str) and opts.Bhat == "behavior":
        behavior = construct_Bhat_behavior(sys, P, Q, cert.L1, L2, Ahat, Ehat, tol)
        Bhat = behavior.Bhat
        steps.append(("Bhat (behavior)", behavior.max_output_deviation))
    else:
        Bhat = as_matrix(opts.Bhat, rows=P.shape[1], name="Bhat")
        steps.append(("Bhat (supplied)", 0.0))

    cert = cert.copy(P=P, Q=Q, L2=L2, What=What, H=H,
                     pi=opts.pi if opts.pi is not None else cert.pi)
    Rtilde = compute_Rtilde(cert, sys.B, Bhat)
    cert = cert.copy(Rtilde=Rtilde)
    steps.append(("Rtilde", 0.0))
    abs_sys = NonlinearControlSystem(A=Ahat, B=Bhat, C1=C1hat, C2=C2hat, D=Dhat, E=Ehat,
                                     F=Fhat, phi=sys.phi)
    return AbstractionResult(abs_sys, cert, steps, behavior)


# -- duality checks ------------------------------------------------------------

def spr_duality_check(sys, cert, tol=DEFAULT_TOL):
    """Check the restricted inequality through its dual control problems.

    Requires ``X12 = 0`` and ``X11 >= Z^T Mhat Z / pi``.  For ``b = inf`` the
    conditions are ``Psi < 0`` and ``Mhat g + F^T = 0`` with
    ``Psi = (A+BK)^T Mhat + Mhat (A+BK)`` and ``g = B L1 + E``.  For finite
    ``b`` it is the single Schur-complement inequality
    ``Psi + (b/2)(Mhat g + F^T)(Mhat g + F^T)^T < 0``.

    The report also contains ``restricted_lmi_witness``: a certificate in
    restricted form built from the decay margin of the dual inequality and
    re-checked with :func:`check_assumption1`.  The dual condition holds iff
    some restricted certificate exists, so both entries pass or fail together.

    Raises
    ------
    NotRestrictedForm
        If the certificate is not in restricted form.
    """
    sys = _normalized(sys)
    if max_abs(cert.X12) > tol.residual_tol:
        raise NotRestrictedForm("restricted form requires X12 = 0")
    M, Z = cert.Mhat, cert.Z
    if Z.shape[1]:
        gap = cert.X11 - Z.T @ M @ Z / cert.pi
        if max_eigenvalue(-gap, tol) > tol.definiteness_tol:
            raise NotRestrictedForm("restricted form requires X11 >= Z^T Mhat Z / pi")
    Acl = sys.A + sys.B @ cert.K
    Psi = Acl.T @ M + M @ Acl
    g = sys.B @ cert.L1 + sys.E
    c = M @ g + sys.F.T
    b = sys.phi.slope_upper
    rep = VerificationReport()
    nonlinear = _uses_nonlinear_row(sys, cert)
    if nonlinear and math.isinf(b):
        rep.add("Psi_negative_definite", max_eigenvalue(Psi, tol), -tol.definiteness_tol)
        rep.add("Mg_plus_Ft_zero", max_abs(c), tol.residual_tol * (1 + max_abs(sys.F)))
        Omega = Psi
    else:
        Omega = Psi + (0.5 * b) * (c @ c.T) if nonlinear else Psi
        rep.add("schur_form", max_eigenvalue(0.5 * (Omega + Omega.T), tol), -tol.definiteness_tol)

    # witness: Omega <= -mu Mhat, kappa_hat = mu/2, pi = mu/4
    Li = np.linalg.cholesky(M)
    Linv = np.linalg.inv(Li)
    mu = -float(np.linalg.eigvalsh(Linv @ Omega @ Linv.T)[-1])
    if mu > 0:
        pi = mu / 4
        r = Z.shape[1]
        witness = cert.copy(kappa_hat=mu / 2, pi=pi, X12=np.zeros_like(cert.X12),
                            X21=np.zeros_like(cert.X21), X22=np.zeros_like(cert.X22),
                            X11=(Z.T @ M @ Z + np.eye(r)) / pi)
        wrep = check_assumption1(sys, witness, tol)
        rep.add("restricted_lmi_witness", wrep["lmi"].margin, tol.definiteness_tol,
                {"kappa_hat": mu / 2, "pi": pi})
    else:
        rep.add("restricted_lmi_witness", math.inf, tol.definiteness_tol,
                {"reason": "dual inequality has no decay margin"})
    return rep
