"""Composition of subsystem storage functions into a network simulation function.

Each subsystem ``i`` comes with an abstraction and a quadratic storage
function ``V_i``.  When the stacked supply matrix is dissipative for the
coupling ``M`` and the abstract coupling ``Mhat`` satisfies
``W M H = What Mhat``, the weighted sum ``sum mu_i V_i`` is a simulation
function between the two closed networks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import ConditionsNotCertified, DimensionMismatch, Infeasible
from .matgeo import DEFAULT_TOL, block_diag, image_subset, max_abs, max_eigenvalue, pseudoinverse
from .storage import (ComparisonFunctions, VerificationReport, derive_comparison_functions,
                      dissipation_terms, interface, sample_states, _ball, _witness)
from .sysmodel import rk4, time_grid

__all__ = [
    "InterconnectionSpec", "CompositionCertificate", "assemble_X", "condition5_matrix",
    "check_condition5", "check_condition6", "solve_abstract_coupling",
    "compose_simulation_function", "composite_storage", "verify_composite", "optimize_mu",
    "cosimulate_network", "NetworkRun", "certify_composition",
]


@dataclass(eq=False)
class InterconnectionSpec:
    """Subsystems ``(system, abstraction, certificate)`` and the coupling ``w = M z2``."""

    subsystems: list
    M: np.ndarray
    comparison: list = field(default=None)

    def __post_init__(self):
        if not self.subsystems:
            raise DimensionMismatch("an interconnection needs at least one subsystem")
        self.subsystems = [tuple(s) for s in self.subsystems]
        self.M = np.asarray(self.M, dtype=float).reshape(self.p_total, self.q_total)
        if self.comparison is None:
            self.comparison = [derive_comparison_functions(s, a, c) for s, a, c in self.subsystems]

    @property
    def N(self):
        return len(self.subsystems)

    @property
    def p_total(self):
        return sum(s.p for s, _, _ in self.subsystems)

    @property
    def q_total(self):
        return sum(s.q2 for s, _, _ in self.subsystems)

    @property
    def certificates(self):
        return [c for _, _, c in self.subsystems]

    def stacked(self):
        """``W``, ``What`` and ``H`` as block diagonals in subsystem order."""
        certs = self.certificates
        return (block_diag(*(c.W for c in certs)), block_diag(*(c.What for c in certs)),
                block_diag(*(c.H for c in certs)))


def _mu(mu, N):
    mu = np.ones(N) if mu is None else np.asarray(mu, dtype=float).ravel()
    if mu.size != N:
        raise DimensionMismatch(f"need {N} weights, got {mu.size}")
    if np.any(mu < 0):
        raise ValueError("weights must be nonnegative")
    return mu


def assemble_X(certs, mu=None):
    """Stacked supply matrix: ``blockdiag(mu_i X11_i)`` etc. in the interleaved layout."""
    mu = _mu(mu, len(certs))
    top = np.hstack([block_diag(*(m * c.X11 for m, c in zip(mu, certs))),
                     block_diag(*(m * c.X12 for m, c in zip(mu, certs)))])
    bottom = np.hstack([block_diag(*(m * c.X21 for m, c in zip(mu, certs))),
                        block_diag(*(m * c.X22 for m, c in zip(mu, certs)))])
    return np.vstack([top, bottom])


def condition5_matrix(spec, mu=None):
    W, _, _ = spec.stacked()
    X = assemble_X(spec.certificates, mu)
    S = np.vstack([W @ spec.M, np.eye(spec.q_total)])
    out = S.T @ X @ S
    return 0.5 * (out + out.T)


def check_condition5(spec, mu=None, tol=DEFAULT_TOL):
    """Dissipativity of the coupling: ``[WM; I]^T X [WM; I] <= 0``.

    Returns ``(passed, margin)`` with ``margin`` the largest eigenvalue.
    """
    margin = max_eigenvalue(condition5_matrix(spec, mu), tol)
    return bool(margin <= tol.definiteness_tol), margin


def check_condition6(spec, Mhat, tol=DEFAULT_TOL):
    """``W M H = What Mhat``; returns ``(passed, max-abs residual)``."""
    W, What, H = spec.stacked()
    resid = max_abs(W @ spec.M @ H - What @ np.asarray(Mhat, dtype=float))
    return bool(resid <= tol.residual_tol), resid


def solve_abstract_coupling(spec, tol=DEFAULT_TOL):
    """Least-norm ``Mhat`` with ``What Mhat = W M H``.

    Raises
    ------
    Infeasible
        If ``im W M H`` is not contained in ``im What``.
    """
    W, What, H = spec.stacked()
    rhs = W @ spec.M @ H
    if not image_subset(rhs, What, tol):
        raise Infeasible("W M H is not in the image of What: no abstract coupling exists",
                         step="abstract_coupling", residual=max_abs(rhs))
    return pseudoinverse(What, tol) @ rhs


def composite_storage(spec, mu=None):
    """``V(x, xh) = sum mu_i (x_i - P_i xh_i)^T Mhat_i (x_i - P_i xh_i)``; accepts row batches."""
    mu = _mu(mu, spec.N)
    certs = spec.certificates
    P = block_diag(*(c.P for c in certs))
    M = block_diag(*(m * c.Mhat for m, c in zip(mu, certs)))

    def V(x, xhat):
        e = np.asarray(x, dtype=float) - np.asarray(xhat, dtype=float) @ P.T
        return np.sum((e @ M) * e, axis=-1)

    return V


def compose_comparison_functions(cfs, mu):
    """Closed forms for quadratic/linear subsystem comparison functions.

    ``kappa = min kappa_i`` and ``c_rho = max mu_i c_rho_i``.  For ``alpha``,
    ``||e||^2 = sum ||e_i||^2 <= sum V_i / c_alpha_i`` gives
    ``c_alpha = min mu_i c_alpha_i``; weights must be positive.
    """
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0):
        raise ConditionsNotCertified("composite comparison functions need positive weights")
    c_alpha = min(m * cf.alpha_coeff for m, cf in zip(mu, cfs))
    kappa = min(cf.eta_coeff for cf in cfs)
    c_rho = max(m * cf.rho_coeff for m, cf in zip(mu, cfs))
    return ComparisonFunctions(c_alpha, kappa, c_rho, note="composite closed form")


@dataclass(eq=False)
class CompositionCertificate:
    mu: np.ndarray
    Mhat_coupling: np.ndarray
    X_assembled: np.ndarray
    W: np.ndarray
    What: np.ndarray
    H: np.ndarray
    condition5_margin: float
    condition6_residual: float
    composite_cf: ComparisonFunctions | None
    tol: object = DEFAULT_TOL

    @property
    def passed(self):
        return (self.condition5_margin <= self.tol.definiteness_tol
                and self.condition6_residual <= self.tol.residual_tol)

    def to_dict(self):
        return {
            "mu": self.mu.tolist(), "Mhat_coupling": self.Mhat_coupling.tolist(),
            "X_assembled": self.X_assembled.tolist(), "W": self.W.tolist(),
            "What": self.What.tolist(), "H": self.H.tolist(),
            "condition5_margin": self.condition5_margin,
            "condition6_residual": self.condition6_residual,
            "composite_cf": None if self.composite_cf is None else self.composite_cf.to_dict(),
            "passed": self.passed,
        }


def compose_simulation_function(spec, mu=None, Mhat=None, tol=DEFAULT_TOL):
    """Composite storage evaluator and comparison functions.

    Raises
    ------
    ConditionsNotCertified
        If either interconnection condition fails.
    """
    mu = _mu(mu, spec.N)
    if Mhat is None:
        Mhat = solve_abstract_coupling(spec, tol)
    ok5, m5 = check_condition5(spec, mu, tol)
    ok6, r6 = check_condition6(spec, Mhat, tol)
    if not ok5:
        raise ConditionsNotCertified(f"coupling dissipativity fails: largest eigenvalue {m5:.3e}")
    if not ok6:
        raise ConditionsNotCertified(f"W M H = What Mhat fails: residual {r6:.3e}")
    return composite_storage(spec, mu), compose_comparison_functions(spec.comparison, mu)


def certify_composition(spec, mu=None, Mhat=None, tol=DEFAULT_TOL):
    """Evaluate both conditions and package the evidence (never raises on failure)."""
    mu = _mu(mu, spec.N)
    if Mhat is None:
        try:
            Mhat = solve_abstract_coupling(spec, tol)
        except Infeasible:
            W, What, H = spec.stacked()
            Mhat = pseudoinverse(What, tol) @ W @ spec.M @ H
    _, m5 = check_condition5(spec, mu, tol)
    _, r6 = check_condition6(spec, Mhat, tol)
    cf = compose_comparison_functions(spec.comparison, mu) if np.all(mu > 0) else None
    W, What, H = spec.stacked()
    return CompositionCertificate(mu, np.asarray(Mhat, dtype=float), assemble_X(spec.certificates, mu),
                                  W, What, H, m5, r6, cf, tol)


def optimize_mu(spec, tol=DEFAULT_TOL):
    """Positive weights (summing to ``N``) minimizing the coupling-dissipativity eigenvalue."""
    N = spec.N
    if N == 1:
        return np.ones(1)

    def weights(z):
        e = np.exp(z - z.max())
        return N * e / e.sum()

    def obj(z):
        return max_eigenvalue(condition5_matrix(spec, weights(z)), tol)

    res = minimize(obj, np.zeros(N), method="Nelder-Mead",
                   options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 400 * N})
    best = weights(res.x)
    return best if obj(res.x) < obj(np.zeros(N)) else np.ones(N)


def _offsets(sizes):
    return np.concatenate([[0], np.cumsum(sizes)]).astype(int)


class _Network:
    """Vectorized closed-loop fields of the concrete and abstract networks."""

    def __init__(self, spec, Mhat):
        self.spec = spec
        self.Mhat = np.asarray(Mhat, dtype=float)
        subs = spec.subsystems
        self.nx = _offsets([s.n for s, _, _ in subs])
        self.nh = _offsets([a.n for _, a, _ in subs])
        self.um = _offsets([a.m for _, a, _ in subs])
        self.p = _offsets([s.p for s, _, _ in subs])
        self.ph = _offsets([a.p for _, a, _ in subs])
        self.C2 = block_diag(*(s.C2 for s, _, _ in subs))
        self.C2h = block_diag(*(a.C2 for _, a, _ in subs))
        self.C1 = block_diag(*(s.C1 for s, _, _ in subs))
        self.C1h = block_diag(*(a.C1 for _, a, _ in subs))
        self.P = block_diag(*(c.P for _, _, c in subs))

    def internal(self, x, xhat):
        return x @ (self.spec.M @ self.C2).T, xhat @ (self.Mhat @ self.C2h).T

    def blocks(self, i, x, xhat, uhat, w, what):
        sl = lambda o, a: a[..., o[i]:o[i + 1]]
        return (sl(self.nx, x), sl(self.nh, xhat), sl(self.um, uhat), sl(self.p, w), sl(self.ph, what))


def verify_composite(spec, mu=None, Mhat=None, samples=10_000, seed=0, tol=DEFAULT_TOL, radius=10.0):
    """Sampled check that the composite function is a simulation function.

    Internal inputs are substituted from the couplings (``w = M C2 x``,
    ``what = Mhat C2hat xhat``) and each ``u_i`` comes from its interface.
    Composite comparison functions are used on the right-hand side.
    """
    mu = _mu(mu, spec.N)
    if Mhat is None:
        Mhat = solve_abstract_coupling(spec, tol)
    cf = compose_comparison_functions(spec.comparison, mu)
    net = _Network(spec, Mhat)
    rng = np.random.default_rng(seed)
    x, xhat, near = sample_states(rng, samples, net.P, radius)
    uhat = _ball(rng, samples, int(net.um[-1]), radius)
    uhat[near & (np.arange(samples) % 2 == 0)] = 0.0
    w, what = net.internal(x, xhat)
    Vdot = np.zeros(samples)
    V = np.zeros(samples)
    for i, (s, a, c) in enumerate(spec.subsystems):
        xi, xhi, ui, wi, whi = net.blocks(i, x, xhat, uhat, w, what)
        lhs, _, _, _, Vi = dissipation_terms(s, a, c, spec.comparison[i], xi, xhi, ui, wi, whi)
        Vdot += mu[i] * lhs
        V += mu[i] * Vi
    decay = cf.eta_coeff * V
    ext = cf.rho_coeff * np.sum(uhat * uhat, axis=1)
    margin = (Vdot + decay - ext) / (1 + np.abs(Vdot) + decay + ext)
    rep = VerificationReport()
    k = int(np.argmax(margin))
    rep.add("composite_dissipation", margin[k], tol.residual_tol, _witness(k, x=x, xhat=xhat, uhat=uhat))
    err2 = np.sum((x @ net.C1.T - xhat @ net.C1h.T) ** 2, axis=1)
    out = cf.alpha_coeff * err2 if math.isfinite(cf.alpha_coeff) else np.where(err2 > 0, np.inf, 0.0)
    with np.errstate(invalid="ignore"):
        om = np.nan_to_num((out - V) / (1 + np.abs(out) + V), nan=np.inf)
    j = int(np.argmax(om))
    rep.add("composite_output_bound", om[j], tol.residual_tol, _witness(j, x=x, xhat=xhat))
    return rep


@dataclass(eq=False)
class NetworkRun:
    times: np.ndarray
    states: np.ndarray
    abstract_states: np.ndarray
    inputs: np.ndarray
    abstract_inputs: np.ndarray
    outputs: np.ndarray
    abstract_outputs: np.ndarray

    @property
    def error(self):
        return np.linalg.norm(self.outputs - self.abstract_outputs, axis=1)


def _linear_joint_matrices(spec, net):
    """``d/dt [x; xh] = Acl [x; xh] + Bcl uh`` when no block has a nonlinearity."""
    subs = spec.subsystems
    A = block_diag(*(s.A for s, _, _ in subs)) + block_diag(*(s.D for s, _, _ in subs)) @ spec.M @ net.C2
    Ah = block_diag(*(a.A for _, a, _ in subs)) + block_diag(*(a.D for _, a, _ in subs)) @ net.Mhat @ net.C2h
    B = block_diag(*(s.B for s, _, _ in subs))
    Bh = block_diag(*(a.B for _, a, _ in subs))
    K = block_diag(*(c.K for _, _, c in subs))
    Q = block_diag(*(c.Q for _, _, c in subs))
    R = block_diag(*(c.Rtilde for _, _, c in subs))
    Acl = np.block([[A + B @ K, B @ (Q - K @ net.P)], [np.zeros((Ah.shape[0], A.shape[1])), Ah]])
    Bcl = np.vstack([B @ R, Bh])
    return Acl, Bcl


def cosimulate_network(spec, Mhat, x0, xhat0, uhat, T, dt, linear_fast_path=True):
    """Joint RK4 of both closed networks, concrete inputs from the interfaces.

    ``uhat`` is a callable ``t -> stacked abstract input`` (for instance a
    :class:`~netabs.sysmodel.SignalSpec`).  Without nonlinearities the joint
    field is assembled once as a matrix (same RK4 scheme, fewer Python calls).
    """
    net = _Network(spec, Mhat)
    x0 = np.asarray(x0, dtype=float).ravel()
    xhat0 = np.asarray(xhat0, dtype=float).ravel()
    if x0.size != net.nx[-1] or xhat0.size != net.nh[-1]:
        raise DimensionMismatch("initial states do not match the network dimensions")
    n = x0.size

    def inputs(x, xh, uh):
        u = []
        for i, (s, a, c) in enumerate(spec.subsystems):
            xi, xhi, ui, _, _ = net.blocks(i, x, xh, uh, x[:0], xh[:0])
            u.append(interface(c, xi, xhi, ui, s.F, s.phi))
        return np.concatenate(u, axis=-1)

    def field_(t, z):
        x, xh = z[:n], z[n:]
        uh = np.asarray(uhat(t), dtype=float).ravel()
        w, wh = net.internal(x, xh)
        u = inputs(x, xh, uh)
        dx, dxh = [], []
        for i, (s, a, c) in enumerate(spec.subsystems):
            xi, xhi, ui, wi, whi = net.blocks(i, x, xh, uh, w, wh)
            dx.append(s.dynamics(xi, u[net_u[i]:net_u[i + 1]], wi))
            dxh.append(a.dynamics(xhi, ui, whi))
        return np.concatenate(dx + dxh)

    net_u = _offsets([s.m for s, _, _ in spec.subsystems])
    times = time_grid(T, dt)
    linear = all(s.phi.is_zero and a.phi.is_zero for s, a, _ in spec.subsystems)
    if linear and linear_fast_path:
        Acl, Bcl = _linear_joint_matrices(spec, net)
        Zs = rk4(lambda t, z: Acl @ z + Bcl @ np.asarray(uhat(t), dtype=float).ravel(),
                 np.concatenate([x0, xhat0]), times)
    else:
        Zs = rk4(field_, np.concatenate([x0, xhat0]), times)
    X, Xh = Zs[:, :n], Zs[:, n:]
    Uh = np.array([np.asarray(uhat(t), dtype=float).ravel() for t in times])
    U = inputs(X, Xh, Uh)
    return NetworkRun(times, X, Xh, U, Uh, X @ net.C1.T, Xh @ net.C1h.T)
