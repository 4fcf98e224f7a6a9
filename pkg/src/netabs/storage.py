"""Quadratic storage functions ``V(x, xh) = (x - P xh)^T Mhat (x - P xh)``.

This module holds the certificate data, the linear interface that refines
abstract inputs into concrete ones, a sampled check of the dissipation
inequality, and the trajectory error bound implied by a simulation function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import CertificateInvalid, DimensionMismatch, SingularGram
from .matgeo import DEFAULT_TOL, is_negative_semidefinite, is_positive_definite, max_abs

__all__ = [
    "StorageCertificate", "ComparisonFunctions", "CheckEntry", "VerificationReport",
    "derive_comparison_functions", "interface", "compute_Rtilde",
    "dissipation_terms", "verify_dissipation_inequality", "error_bound",
    "safe_set_inflation", "sample_states", "psd_sqrt",
]

_MATRIX_FIELDS = ("Mhat", "K", "L1", "Z", "W", "X11", "X12", "X21", "X22",
                  "P", "Q", "L2", "Rtilde", "What", "H")


@dataclass(eq=False)
class StorageCertificate:
    """All matrices and scalars attached to one quadratic storage function.

    The first group (``Mhat`` .. ``kappa_hat``) is what the LMI step
    produces; ``P``, ``Q``, ``L2``, ``Rtilde``, ``What`` and ``H`` are filled
    in by the abstraction construction and may be ``None`` before that.
    ``X21`` defaults to ``X12^T`` and ``pi`` to ``kappa_hat / 2``.
    """

    Mhat: np.ndarray
    K: np.ndarray
    L1: np.ndarray
    Z: np.ndarray
    W: np.ndarray
    X11: np.ndarray
    X12: np.ndarray
    X22: np.ndarray
    kappa_hat: float
    X21: np.ndarray = None
    pi: float = None
    P: np.ndarray = None
    Q: np.ndarray = None
    L2: np.ndarray = None
    Rtilde: np.ndarray = None
    What: np.ndarray = None
    H: np.ndarray = None

    def __post_init__(self):
        for name in _MATRIX_FIELDS:
            value = getattr(self, name)
            if value is not None:
                arr = np.asarray(value, dtype=float)
                setattr(self, name, arr.reshape(-1, 1) if arr.ndim == 1 else np.atleast_2d(arr))
        if self.X21 is None:
            self.X21 = self.X12.T.copy()
        self.kappa_hat = float(self.kappa_hat)
        if self.pi is None:
            self.pi = self.kappa_hat / 2
        self.pi = float(self.pi)
        tol = DEFAULT_TOL
        if not is_positive_definite(self.Mhat, tol):
            raise CertificateInvalid("Mhat must be symmetric positive definite")
        if max_abs(self.X21 - self.X12.T) > tol.residual_tol * (1 + max_abs(self.X12)):
            raise CertificateInvalid("X21 must equal X12^T (X symmetric)")
        if self.X22.size and not is_negative_semidefinite(self.X22, tol):
            raise CertificateInvalid("X22 must be negative semidefinite")
        if self.X11.size and max_abs(self.X11 - self.X11.T) > tol.residual_tol * (1 + max_abs(self.X11)):
            raise CertificateInvalid("X11 must be symmetric")
        if not (self.kappa_hat > 0 and 0 < self.pi < self.kappa_hat):
            raise CertificateInvalid("need 0 < pi < kappa_hat")

    @property
    def X(self):
        return np.block([[self.X11, self.X12], [self.X21, self.X22]])

    def evaluate(self, x, xhat):
        """Storage value; rows of ``x``/``xhat`` are treated as samples."""
        e = np.asarray(x, dtype=float) - np.asarray(xhat, dtype=float) @ self.P.T
        return np.sum((e @ self.Mhat) * e, axis=-1)

    def copy(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in d.items() if v is not None}

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown certificate keys: {sorted(unknown)}")
        return cls(**{k: (np.array(v, dtype=float) if k in _MATRIX_FIELDS else v) for k, v in d.items()})


@dataclass(frozen=True)
class ComparisonFunctions:
    """``alpha(r) = c_a r^2``, ``eta(s) = kappa s``, ``rho_ext(s) = c_r s^2``."""

    alpha_coeff: float
    eta_coeff: float
    rho_coeff: float
    note: str = ""

    def __post_init__(self):
        if not (self.alpha_coeff > 0 and self.eta_coeff > 0 and self.rho_coeff >= 0):
            raise CertificateInvalid(
                f"invalid comparison functions: c_alpha={self.alpha_coeff}, "
                f"kappa={self.eta_coeff}, c_rho={self.rho_coeff}")

    def alpha(self, r):
        return self.alpha_coeff * np.square(r)

    def alpha_inv(self, s):
        return np.sqrt(np.asarray(s, dtype=float) / self.alpha_coeff)

    def eta(self, s):
        return self.eta_coeff * np.asarray(s, dtype=float)

    def eta_inv(self, s):
        return np.asarray(s, dtype=float) / self.eta_coeff

    def rho(self, s):
        return self.rho_coeff * np.square(s)

    def to_dict(self):
        return {"alpha_coeff": self.alpha_coeff, "eta_coeff": self.eta_coeff,
                "rho_coeff": self.rho_coeff, "note": self.note}


@dataclass
class CheckEntry:
    """One verified condition: passes iff ``margin <= tol``."""

    check: str
    margin: float
    tol: float
    witness: list | dict | None = None

    @property
    def passed(self):
        return bool(self.margin <= self.tol)

    def to_dict(self):
        margin = self.margin
        if isinstance(margin, float) and not math.isfinite(margin):
            margin = str(margin)
        return {"check": self.check, "margin": margin, "tol": self.tol, "witness": self.witness}


@dataclass
class VerificationReport:
    entries: list = field(default_factory=list)

    def add(self, check, margin, tol, witness=None):
        self.entries.append(CheckEntry(check, float(margin), float(tol), witness))
        return self

    def extend(self, other, prefix=""):
        for e in other.entries:
            self.entries.append(CheckEntry(prefix + e.check, e.margin, e.tol, e.witness))
        return self

    @property
    def passed(self):
        return all(e.passed for e in self.entries)

    def __getitem__(self, check):
        for e in self.entries:
            if e.check == check:
                return e
        raise KeyError(check)

    def failures(self):
        return [e for e in self.entries if not e.passed]

    def to_dict(self):
        return {"passed": self.passed, "entries": [e.to_dict() for e in self.entries]}


def psd_sqrt(S):
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def _require(cert, *names):
    missing = [n for n in names if getattr(cert, n) is None]
    if missing:
        raise CertificateInvalid(f"certificate lacks {', '.join(missing)}")


def derive_comparison_functions(sys, abs_sys, cert, tol=DEFAULT_TOL):
    """Closed-form ``alpha``, ``eta``, ``rho_ext`` for a quadratic certificate."""
    _require(cert, "P", "Rtilde")
    lam_min = float(np.linalg.eigvalsh(cert.Mhat)[0])
    c1tc1 = sys.C1.T @ sys.C1
    lam_c = float(np.linalg.eigvalsh(c1tc1)[-1]) if c1tc1.size else 0.0
    c_alpha = lam_min / lam_c if lam_c > 0 else math.inf
    mismatch = sys.B @ cert.Rtilde - cert.P @ abs_sys.B
    if max_abs(mismatch) <= tol.residual_tol * (1 + max_abs(sys.B @ cert.Rtilde)):
        c_rho = 0.0
    else:
        c_rho = float(np.linalg.norm(psd_sqrt(cert.Mhat) @ mismatch, 2) ** 2 / cert.pi)
    return ComparisonFunctions(c_alpha, cert.kappa_hat - cert.pi, c_rho)


def interface(cert, x, xhat, uhat, F, phi):
    """``u = K(x - P xh) + Q xh + Rtilde uh + L1 phi(F x) - L2 phi(F P xh)``.

    Works on single vectors or on row-stacked batches.
    """
    _require(cert, "P", "Q", "L2", "Rtilde")
    x = np.asarray(x, dtype=float)
    xhat = np.asarray(xhat, dtype=float)
    uhat = np.asarray(uhat, dtype=float)
    F = np.asarray(F, dtype=float).reshape(1, -1)
    if x.shape[-1] != cert.P.shape[0] or xhat.shape[-1] != cert.P.shape[1]:
        raise DimensionMismatch("state dimensions do not match P")
    if uhat.shape[-1] != cert.Rtilde.shape[1]:
        raise DimensionMismatch("abstract input dimension does not match Rtilde")
    u = (x - xhat @ cert.P.T) @ cert.K.T + xhat @ cert.Q.T + uhat @ cert.Rtilde.T
    if not phi.is_zero:
        u = u + phi(x @ F.T) @ cert.L1.T - phi(xhat @ (F @ cert.P).T) @ cert.L2.T
    return u


def compute_Rtilde(cert, B, Bhat, max_condition=1e12):
    """Interface feed-through minimizing ``rho_ext``: ``(B^T M B)^{-1} B^T M P Bhat``."""
    _require(cert, "P")
    B = np.asarray(B, dtype=float)
    Bhat = np.asarray(Bhat, dtype=float)
    gram = B.T @ cert.Mhat @ B
    cond = np.linalg.cond(gram) if gram.size else 1.0
    if not np.isfinite(cond) or cond > max_condition:
        raise SingularGram(f"B^T Mhat B is ill-conditioned (cond = {cond:.3e})")
    return np.linalg.solve(gram, B.T @ cert.Mhat @ cert.P @ Bhat)


def _ball(rng, count, dim, radius):
    if dim == 0:
        return np.zeros((count, 0))
    d = rng.standard_normal((count, dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * (radius * rng.uniform(0, 1, (count, 1)) ** (1.0 / dim))


def sample_states(rng, count, P, radius=10.0):
    """Sample ``(x, xh)`` pairs: half uniform in a ball, half near ``x = P xh``.

    Offsets from the matched set are log-uniform in ``[1e-6, radius]`` so that
    violations that are linear in ``x - P xh`` are found.
    """
    n, nh = P.shape
    xhat = _ball(rng, count, nh, radius)
    x = _ball(rng, count, n, radius)
    near = np.arange(count) >= count // 2
    k = int(near.sum())
    d = rng.standard_normal((k, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = 10.0 ** rng.uniform(-6, math.log10(radius), (k, 1))
    x[near] = xhat[near] @ P.T + r * d
    return x, xhat, near


def dissipation_terms(sys, abs_sys, cert, cf, x, xhat, uhat, w, what):
    """Both sides of the dissipation inequality and of the output bound.

    Returns ``(lhs, rhs, scale, out_lhs, out_rhs)`` arrays over samples,
    where the dissipation inequality reads ``lhs <= rhs`` and the output bound
    ``out_lhs <= out_rhs``; ``scale`` is the sum of magnitudes of the terms.
    """
    x, xhat, uhat, w, what = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (x, xhat, uhat, w, what))
    e = x - xhat @ cert.P.T
    V = np.sum((e @ cert.Mhat) * e, axis=1)
    u = interface(cert, x, xhat, uhat, sys.F, sys.phi)
    f = sys.dynamics(x, u, w)
    fh = abs_sys.dynamics(xhat, uhat, what)
    lhs = 2 * np.sum((e @ cert.Mhat) * (f - fh @ cert.P.T), axis=1)
    s = w @ cert.W.T - what @ cert.What.T
    y = x @ sys.C2.T - xhat @ (cert.H @ abs_sys.C2).T
    supply = (np.sum((s @ cert.X11) * s, axis=1) + 2 * np.sum((s @ cert.X12) * y, axis=1)
              + np.sum((y @ cert.X22) * y, axis=1))
    decay = cf.eta_coeff * V
    ext = cf.rho_coeff * np.sum(uhat * uhat, axis=1)
    rhs = -decay + ext + supply
    scale = np.abs(lhs) + decay + ext + np.abs(supply)
    err2 = np.sum((x @ sys.C1.T - xhat @ abs_sys.C1.T) ** 2, axis=1)
    if math.isinf(cf.alpha_coeff):
        out_lhs = np.where(err2 > 0, np.inf, 0.0)
    else:
        out_lhs = cf.alpha_coeff * err2
    return lhs, rhs, scale, out_lhs, V


def _witness(i, **arrays):
    return {k: np.asarray(v)[i].tolist() for k, v in arrays.items()}


def verify_dissipation_inequality(sys, abs_sys, cert, samples=10_000, seed=0,
                                  tol=DEFAULT_TOL, cf=None, radius=10.0):
    """Check the dissipation inequality and the output bound at random points.

    The existential input is always the interface output.  Margins are
    ``(lhs - rhs) / (1 + scale)`` maximised over samples and must not exceed
    ``residual_tol``.
    """
    if cf is None:
        cf = derive_comparison_functions(sys, abs_sys, cert, tol)
    rng = np.random.default_rng(seed)
    x, xhat, near = sample_states(rng, samples, cert.P, radius)
    uhat = _ball(rng, samples, abs_sys.m, radius)
    w = _ball(rng, samples, sys.p, radius)
    what = _ball(rng, samples, abs_sys.p, radius)
    # strata near the matched set: no abstract input, and additionally no internal inputs
    quiet = near & (np.arange(samples) % 2 == 0)
    uhat[quiet] = 0.0
    silent = near & (np.arange(samples) % 4 == 0)
    w[silent] = 0.0
    what[silent] = 0.0

    lhs, rhs, scale, out_lhs, V = dissipation_terms(sys, abs_sys, cert, cf, x, xhat, uhat, w, what)
    report = VerificationReport()
    margin = (lhs - rhs) / (1 + scale)
    i = int(np.argmax(margin))
    report.add("dissipation_inequality", margin[i], tol.residual_tol,
               _witness(i, x=x, xhat=xhat, uhat=uhat, w=w, what=what))
    with np.errstate(invalid="ignore"):
        out_margin = (out_lhs - V) / (1 + np.abs(out_lhs) + V)
    out_margin = np.nan_to_num(out_margin, nan=np.inf)
    j = int(np.argmax(out_margin))
    report.add("output_bound", out_margin[j], tol.residual_tol, _witness(j, x=x, xhat=xhat))
    return report


def error_bound(cf, V0, uhat_sup, t, use_half=True):
    """Bound on ``||z(t) - zh(t)||`` for a simulation function with these comparison functions.

    With ``theta(s, t) = s exp(-kappa t)``:
    ``alpha^-1(c theta(V0, t)) + alpha^-1(c eta^-1(c rho(uhat_sup)))`` where
    ``c = 2``, or ``c = 1`` when ``use_half`` (valid because both inverses are
    subadditive for the quadratic/linear class).
    """
    c = 1.0 if use_half else 2.0
    t = np.asarray(t, dtype=float)
    transient = cf.alpha_inv(c * V0 * np.exp(-cf.eta_coeff * t))
    persistent = cf.alpha_inv(c * cf.eta_inv(c * cf.rho(uhat_sup)))
    out = transient + persistent
    return float(out) if out.ndim == 0 else out


def safe_set_inflation(cf, V0, uhat_sup, use_half=True):
    """Inflation radius of a safe set: the error bound at ``t = 0`` (its supremum)."""
    return error_bound(cf, V0, uhat_sup, 0.0, use_half)
