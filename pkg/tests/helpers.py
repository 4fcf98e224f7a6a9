"""Random instance generators shared by the test modules."""

from dataclasses import replace

import numpy as np

from netabs.matgeo import DEFAULT_TOL
from netabs.storage import StorageCertificate
from netabs.synthesis import PipelineOptions, table1_pipeline
from netabs.sysmodel import NonlinearControlSystem, SlopeRestrictedFunction


def random_spd(rng, n, lo=0.5, hi=2.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Q * rng.uniform(lo, hi, n)) @ Q.T


def random_phi(rng, b=1.0):
    """Piecewise-linear odd-ish nonlinearity with slopes inside ``[0, b]`` (declared ``[0, b]``)."""
    xs = np.sort(rng.uniform(-5, 5, 6))
    slopes = rng.uniform(0.1 * b, 0.9 * b, 5)
    ys = np.concatenate([[0.0], np.cumsum(slopes * np.diff(xs))])
    ys -= np.interp(0.0, xs, ys)
    tab = SlopeRestrictedFunction.tabulated(xs, ys)
    return replace(tab, slope_lower=0.0, slope_upper=b)


def certified_instance(rng, n=4, nh=2, p=2, r=2, nonlinear=True, internal=True, b=1.0,
                       kappa_hat=1.0, decay_margin=0.5):
    """A concrete system with a certificate satisfying the closed-loop inequality.

    ``B`` is invertible, so every image condition of the construction holds;
    the closed loop ``A + B K`` is chosen as ``-(c/2) I`` with ``c`` large
    enough for the Schur complement of the inequality to be negative definite.
    """
    m = n
    A = rng.standard_normal((n, n))
    B = random_spd(rng, n, 0.7, 1.5) + 0.3 * rng.standard_normal((n, n))
    C1 = rng.standard_normal((2, n))
    M = random_spd(rng, n)
    if internal:
        C2 = rng.standard_normal((n, n)) + 2 * np.eye(n)
        Z = rng.standard_normal((n, r))
        W = rng.standard_normal((r, p))
        D = Z @ W
        X12 = 0.5 * rng.standard_normal((r, n))
        G = rng.standard_normal((n, n))
        X22 = -0.1 * G @ G.T
        X11 = 2.0 * np.eye(r)
    else:
        C2, D, Z, W = np.zeros((0, n)), np.zeros((n, 0)), np.zeros((n, 0)), np.zeros((0, 0))
        X11, X12, X22 = np.zeros((0, 0)), np.zeros((0, 0)), np.zeros((0, 0))
        r = 0
    if nonlinear:
        E = rng.standard_normal((n, 1))
        F = rng.standard_normal((1, n))
        L1 = 0.3 * rng.standard_normal((m, 1))
        phi = random_phi(rng, b)
    else:
        E, F, L1 = np.zeros((n, 1)), np.zeros((1, n)), np.zeros((m, 1))
        phi = SlopeRestrictedFunction.zero()
    # Schur complement of the lower-right blocks (strictly negative there)
    rest = kappa_hat * M - C2.T @ X22 @ C2
    off = M @ Z - C2.T @ X12.T
    if r:
        rest = rest + off @ np.linalg.solve(X11, off.T)
    if nonlinear:
        c = M @ (B @ L1 + E) + F.T
        rest = rest + (b / 2) * c @ c.T
    Li = np.linalg.inv(np.linalg.cholesky(M))
    need = np.linalg.eigvalsh(Li @ rest @ Li.T)[-1]
    # (A+BK)^T M + M (A+BK) = -c M with A+BK = -(c/2) I
    c_gain = need + decay_margin
    K = np.linalg.solve(B, -(c_gain / 2) * np.eye(n) - A)
    sys = NonlinearControlSystem(A=A, B=B, C1=C1, C2=C2, D=D, E=E, F=F, phi=phi)
    cert = StorageCertificate(Mhat=M, K=K, L1=L1, Z=Z, W=W, X11=X11, X12=X12, X22=X22,
                              kappa_hat=kappa_hat)
    P = np.linalg.qr(rng.standard_normal((n, nh)))[0] * rng.uniform(0.5, 2.0)
    return sys, cert, P


def certified_abstraction(rng, Bhat="free", **kw):
    sys, cert, P = certified_instance(rng, **kw)
    res = table1_pipeline(sys, P, PipelineOptions(certificate=cert, Bhat=Bhat, tol=DEFAULT_TOL))
    return sys, res


def closed_instance(rng, n=3, m=2, nh=1, nonlinear=True):
    """No internal channels and ``m < n``, so ``B Rtilde != P Bhat`` and ``c_rho > 0``.

    ``A = -(c/2) I - B K`` makes the closed loop dissipative and puts
    ``im A P`` inside ``im P + im B``; ``E`` is drawn from ``im P + im B``.
    """
    B = rng.standard_normal((n, m))
    P = rng.standard_normal((n, nh))
    M = random_spd(rng, n)
    K = rng.standard_normal((m, n))
    E = rng.standard_normal((n, 1)) if nonlinear else np.zeros((n, 1))
    F = rng.standard_normal((1, n)) if nonlinear else np.zeros((1, n))
    L1 = np.zeros((m, 1))
    b = 1.0
    kappa_hat = 1.0
    c = M @ (B @ L1 + E) + F.T
    rest = kappa_hat * M + ((b / 2) * c @ c.T if nonlinear else 0)
    Li = np.linalg.inv(np.linalg.cholesky(M))
    need = np.linalg.eigvalsh(Li @ rest @ Li.T)[-1] + 0.5
    Acl = -(need / 2) * np.eye(n)
    A = Acl - B @ K
    # force E into im P + im B and A P into im P + im B
    if nonlinear:
        E = P @ rng.standard_normal((nh, 1)) + B @ rng.standard_normal((m, 1))
        c = M @ (B @ L1 + E) + F.T
        rest = kappa_hat * M + (b / 2) * c @ c.T
        need = np.linalg.eigvalsh(Li @ rest @ Li.T)[-1] + 0.5
        A = -(need / 2) * np.eye(n) - B @ K
    sys = NonlinearControlSystem(A=A, B=B, C1=rng.standard_normal((1, n)), E=E, F=F,
                                 phi=random_phi(rng, b) if nonlinear else SlopeRestrictedFunction.zero())
    cert = StorageCertificate(Mhat=M, K=K, L1=L1, Z=np.zeros((n, 0)), W=np.zeros((0, 0)),
                              X11=np.zeros((0, 0)), X12=np.zeros((0, 0)), X22=np.zeros((0, 0)),
                              kappa_hat=kappa_hat)
    return sys, cert, P
