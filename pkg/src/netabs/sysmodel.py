"""Control systems with one slope-restricted nonlinearity, and their simulation.

The system class is

    x' = A x + E phi(F x) + B u + D w
    z1 = C1 x        (external output)
    z2 = C2 x        (internal output, used only for wiring)

Linear systems are the special case ``phi = zero``.  Simulation is
fixed-step classic RK4 on a uniform grid.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, NonFiniteState
from .matgeo import as_matrix, block_diag

__all__ = [
    "SlopeRestrictedFunction", "NonlinearControlSystem", "SignalSpec",
    "Trajectory", "normalize_slope", "rk4", "time_grid", "simulate",
    "interconnect", "simulate_network", "DIVERGENCE_LIMIT",
]

DIVERGENCE_LIMIT = 1e12

_KINDS = ("zero", "linear", "saturation", "tanh", "tabulated")


@dataclass(frozen=True)
class SlopeRestrictedFunction:
    """Scalar nonlinearity phi with difference quotients in ``[slope_lower, slope_upper]``.

    ``shift`` is subtracted as ``shift * r``; it is how :func:`normalize_slope`
    represents ``phi(r) - a r`` without changing the underlying kind.
    """

    kind: str = "zero"
    gain: float = 0.0
    level: float = 1.0
    scale: float = 1.0
    breakpoints: tuple = ()
    values: tuple = ()
    slope_lower: float = 0.0
    slope_upper: float = math.inf
    shift: float = 0.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown nonlinearity kind {self.kind!r}")
        if not self.slope_lower <= self.slope_upper:
            raise ValueError("slope_lower must not exceed slope_upper")
        if not (self.slope_upper > 0):
            raise ValueError("slope_upper must be positive or +inf")
        if self.kind == "saturation" and self.level <= 0:
            raise ValueError("saturation level must be positive")
        if self.kind == "tanh" and self.scale <= 0:
            raise ValueError("tanh scale must be positive")
        if self.kind == "tabulated":
            xs = np.asarray(self.breakpoints, dtype=float)
            if xs.size < 2 or len(self.values) != xs.size or np.any(np.diff(xs) <= 0):
                raise ValueError("tabulated nonlinearity needs >= 2 increasing breakpoints with matching values")

    # constructors -----------------------------------------------------

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def linear(cls, gain, slope_lower=None, slope_upper=None):
        a = gain if slope_lower is None else slope_lower
        b = slope_upper if slope_upper is not None else (gain if gain > 0 else math.inf)
        return cls("linear", gain=float(gain), slope_lower=a, slope_upper=b)

    @classmethod
    def saturation(cls, level=1.0):
        return cls("saturation", level=float(level), slope_lower=0.0, slope_upper=1.0)

    @classmethod
    def tanh(cls, scale=1.0, slope_lower=0.0, slope_upper=None):
        b = float(scale) if slope_upper is None else slope_upper
        return cls("tanh", scale=float(scale), slope_lower=slope_lower, slope_upper=b)

    @classmethod
    def tabulated(cls, breakpoints, values):
        xs = tuple(float(v) for v in breakpoints)
        ys = tuple(float(v) for v in values)
        if len(xs) < 2 or len(ys) != len(xs) or np.any(np.diff(xs) <= 0):
            raise ValueError("tabulated nonlinearity needs >= 2 increasing breakpoints with matching values")
        slopes = np.diff(ys) / np.diff(xs)
        a, b = float(slopes.min()), float(slopes.max())
        return cls("tabulated", breakpoints=xs, values=ys, slope_lower=a,
                   slope_upper=b if b > 0 else math.inf)

    # evaluation -------------------------------------------------------

    @property
    def is_zero(self):
        return self.kind == "zero" and self.shift == 0.0

    def _base(self, r):
        if self.kind == "zero":
            return np.zeros_like(r)
        if self.kind == "linear":
            return self.gain * r
        if self.kind == "saturation":
            return np.clip(r, -self.level, self.level)
        if self.kind == "tanh":
            return np.tanh(self.scale * r)
        xs = np.asarray(self.breakpoints)
        ys = np.asarray(self.values)
        out = np.interp(r, xs, ys)
        lo_slope = (ys[1] - ys[0]) / (xs[1] - xs[0])
        hi_slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
        out = np.where(r < xs[0], ys[0] + lo_slope * (r - xs[0]), out)
        return np.where(r > xs[-1], ys[-1] + hi_slope * (r - xs[-1]), out)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return self._base(r) - self.shift * r

    def normalized(self):
        """Return ``phi(r) - a r`` with slope bounds ``[0, b - a]``."""
        a = self.slope_lower
        if a == 0.0:
            return self
        b = self.slope_upper - a
        if self.kind == "linear":
            g = self.gain - self.shift - a
            if g == 0.0:
                return SlopeRestrictedFunction.zero()
            return SlopeRestrictedFunction("linear", gain=g, slope_lower=0.0,
                                           slope_upper=b if b > 0 else math.inf)
        return replace(self, slope_lower=0.0, slope_upper=b if b > 0 else math.inf,
                       shift=self.shift + a)

    def slope_violation(self, n_pairs=10_000, radius=1e3, seed=0):
        """Largest excursion of sampled difference quotients outside ``[a, b]``."""
        rng = np.random.default_rng(seed)
        v = rng.uniform(-radius, radius, n_pairs)
        w = rng.uniform(-radius, radius, n_pairs)
        keep = v != w
        q = (self(v[keep]) - self(w[keep])) / (v[keep] - w[keep])
        return float(max(0.0, self.slope_lower - q.min(), q.max() - self.slope_upper))

    def to_dict(self):
        d = {"kind": self.kind, "slope_lower": self.slope_lower,
             "slope_upper": None if math.isinf(self.slope_upper) else self.slope_upper}
        if self.kind == "linear":
            d["gain"] = self.gain
        elif self.kind == "saturation":
            d["level"] = self.level
        elif self.kind == "tanh":
            d["scale"] = self.scale
        elif self.kind == "tabulated":
            d["breakpoints"] = list(self.breakpoints)
            d["values"] = list(self.values)
        if self.shift:
            d["shift"] = self.shift
        return d

    @classmethod
    def from_dict(cls, d):
        allowed = {"kind", "gain", "level", "scale", "breakpoints", "values",
                   "slope_lower", "slope_upper", "shift"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown nonlinearity keys: {sorted(unknown)}")
        d = dict(d)
        if d.get("slope_upper", "missing") is None:
            d["slope_upper"] = math.inf
        kind = d.get("kind", "zero")
        if kind == "tabulated" and "slope_lower" not in d:
            base = cls.tabulated(d["breakpoints"], d["values"])
            d.setdefault("slope_upper", base.slope_upper)
            d["slope_lower"] = base.slope_lower
        for key in ("breakpoints", "values"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        return cls(**d)


def _zeros_if_none(value, shape):
    return np.zeros(shape) if value is None else value


@dataclass(eq=False)
class NonlinearControlSystem:
    """The tuple ``(A, B, C1, C2, D, E, F, phi)``.

    ``C2``/``D`` may have zero rows/columns for systems without internal
    channels; ``E``/``F`` default to zero.
    """

    A: np.ndarray
    B: np.ndarray
    C1: np.ndarray
    C2: np.ndarray = None
    D: np.ndarray = None
    E: np.ndarray = None
    F: np.ndarray = None
    phi: SlopeRestrictedFunction = field(default_factory=SlopeRestrictedFunction.zero)

    def __post_init__(self):
        A = as_matrix(self.A, name="A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        self.A = A
        self.B = as_matrix(self.B, rows=n, name="B")
        self.C1 = as_matrix(self.C1, name="C1") if np.ndim(self.C1) == 2 else as_matrix(self.C1, name="C1").T
        if self.C1.shape[1] != n:
            raise DimensionMismatch(f"C1 must have {n} columns, got {self.C1.shape}")
        self.C2 = np.asarray(_zeros_if_none(self.C2, (0, n)), dtype=float)
        self.D = np.asarray(_zeros_if_none(self.D, (n, 0)), dtype=float)
        if self.C2.ndim != 2 or self.C2.shape[1] != n:
            raise DimensionMismatch(f"C2 must have {n} columns, got {self.C2.shape}")
        if self.D.ndim != 2 or self.D.shape[0] != n:
            raise DimensionMismatch(f"D must have {n} rows, got {self.D.shape}")
        self.E = as_matrix(_zeros_if_none(self.E, (n, 1)), rows=n, cols=1, name="E")
        F = np.asarray(_zeros_if_none(self.F, (1, n)), dtype=float).reshape(1, -1)
        if F.shape != (1, n):
            raise DimensionMismatch(f"F must be 1 x {n}, got {F.shape}")
        self.F = F
        if not isinstance(self.phi, SlopeRestrictedFunction):
            raise TypeError("phi must be a SlopeRestrictedFunction")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.D.shape[1]

    @property
    def q1(self):
        return self.C1.shape[0]

    @property
    def q2(self):
        return self.C2.shape[0]

    @property
    def has_nonlinearity(self):
        return not self.phi.is_zero and bool(np.any(self.E))

    def nonlinear_term(self, x):
        """``E phi(F x)`` for one state (1-D) or a batch of states (rows)."""
        if not self.has_nonlinearity:
            return np.zeros_like(np.asarray(x, dtype=float))
        return self.phi(x @ self.F.T) @ self.E.T

    def dynamics(self, x, u, w=None):
        """Vector field; accepts single vectors or row-stacked batches."""
        dx = x @ self.A.T + u @ self.B.T + self.nonlinear_term(x)
        if self.p:
            dx = dx + w @ self.D.T
        return dx

    def copy(self, **changes):
        base = {k: getattr(self, k) for k in ("A", "B", "C1", "C2", "D", "E", "F", "phi")}
        base.update(changes)
        return NonlinearControlSystem(**base)

    def to_dict(self):
        return {
            "A": self.A.tolist(), "B": self.B.tolist(), "C1": self.C1.tolist(),
            "C2": self.C2.tolist(), "D": self.D.tolist(), "E": self.E.tolist(),
            "F": self.F.tolist(), "phi": self.phi.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        allowed = {"A", "B", "C1", "C2", "D", "E", "F", "phi"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown system keys: {sorted(unknown)}")
        n = len(d["A"])
        kwargs = {k: np.array(d[k], dtype=float) for k in ("A", "B", "C1", "E", "F") if k in d}
        if "C2" in d:
            kwargs["C2"] = np.array(d["C2"], dtype=float).reshape(-1, n)
        if "D" in d:
            kwargs["D"] = np.array(d["D"], dtype=float).reshape(n, -1)
        if "phi" in d:
            kwargs["phi"] = SlopeRestrictedFunction.from_dict(d["phi"])
        return cls(**kwargs)


def normalize_slope(sys):
    """Shift the nonlinearity's lower slope bound to zero.

    Returns the system with ``A + a E F`` and ``phi(r) - a r``; its
    input/output behaviour is unchanged.
    """
    a = sys.phi.slope_lower
    if not math.isfinite(a):
        raise ValueError("slope_lower must be finite to normalize")
    if a == 0.0:
        return sys
    return sys.copy(A=sys.A + a * sys.E @ sys.F, phi=sys.phi.normalized())


@dataclass(frozen=True)
class SignalSpec:
    """Deterministic input signal on ``[0, T]``.

    ``schedule`` for piecewise-constant signals is a tuple of
    ``(t_start, values)`` pairs sorted by time; the value before the first
    switching time is the first entry's.
    """

    kind: str
    dim: int
    value: tuple = ()
    schedule: tuple = ()
    amplitude: tuple = ()
    frequency: tuple = ()
    phase: tuple = ()

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "piecewise", "sinusoid"):
            raise ValueError(f"unknown signal kind {self.kind!r}")
        if self.kind == "constant" and len(self.value) != self.dim:
            raise DimensionMismatch("constant value length must equal dim")
        if self.kind == "piecewise":
            if not self.schedule:
                raise ValueError("piecewise signal needs a nonempty schedule")
            times = [t for t, _ in self.schedule]
            if any(t1 < t0 for t0, t1 in zip(times, times[1:])):
                raise ValueError("schedule times must be nondecreasing")
            if any(len(v) != self.dim for _, v in self.schedule):
                raise DimensionMismatch("schedule values must have length dim")
        if self.kind == "sinusoid":
            if not (len(self.amplitude) == len(self.frequency) == len(self.phase) == self.dim):
                raise DimensionMismatch("sinusoid parameters must have length dim")

    @classmethod
    def zero(cls, dim):
        return cls("zero", int(dim))

    @classmethod
    def constant(cls, value):
        v = tuple(float(x) for x in np.atleast_1d(value))
        return cls("constant", len(v), value=v)

    @classmethod
    def piecewise(cls, schedule):
        sched = tuple((float(t), tuple(float(x) for x in np.atleast_1d(v))) for t, v in schedule)
        return cls("piecewise", len(sched[0][1]), schedule=sched)

    @classmethod
    def sinusoid(cls, amplitude, frequency, phase=None):
        amp = tuple(float(x) for x in np.atleast_1d(amplitude))
        freq = tuple(float(x) for x in np.atleast_1d(frequency))
        ph = tuple(float(x) for x in np.atleast_1d(phase)) if phase is not None else (0.0,) * len(amp)
        return cls("sinusoid", len(amp), amplitude=amp, frequency=freq, phase=ph)

    def __call__(self, t):
        if self.kind == "zero":
            return np.zeros(self.dim)
        if self.kind == "constant":
            return np.array(self.value)
        if self.kind == "sinusoid":
            return np.asarray(self.amplitude) * np.sin(
                2 * np.pi * np.asarray(self.frequency) * t + np.asarray(self.phase))
        current = self.schedule[0][1]
        for start, values in self.schedule:
            if t >= start:
                current = values
            else:
                break
        return np.array(current)

    def sup_norm(self, T):
        """Upper bound on ``sup_{0<=t<=T} ||s(t)||``."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "constant":
            return float(np.linalg.norm(self.value))
        if self.kind == "sinusoid":
            return float(np.linalg.norm(self.amplitude))
        active = [v for i, (t, v) in enumerate(self.schedule) if i == 0 or t <= T]
        return max(float(np.linalg.norm(v)) for v in active)

    def to_dict(self):
        d = {"kind": self.kind, "dim": self.dim}
        if self.kind == "constant":
            d["value"] = list(self.value)
        elif self.kind == "piecewise":
            d["schedule"] = [[t, list(v)] for t, v in self.schedule]
        elif self.kind == "sinusoid":
            d.update(amplitude=list(self.amplitude), frequency=list(self.frequency),
                     phase=list(self.phase))
        return d

    @classmethod
    def from_dict(cls, d):
        kind = d["kind"]
        if kind == "zero":
            return cls.zero(d["dim"])
        if kind == "constant":
            return cls.constant(d["value"])
        if kind == "piecewise":
            return cls.piecewise(d["schedule"])
        if kind == "sinusoid":
            return cls.sinusoid(d["amplitude"], d["frequency"], d.get("phase"))
        raise ValueError(f"unknown signal kind {kind!r}")


@dataclass(eq=False)
class Trajectory:
    """Sampled trajectory on a uniform grid; outputs are ``C1 x`` and ``C2 x``."""

    times: np.ndarray
    states: np.ndarray
    external_input: np.ndarray
    internal_input: np.ndarray
    external_output: np.ndarray
    internal_output: np.ndarray

    def to_csv(self, path=None):
        """Write ``t,x1..xn,u1..um,w1..wp,z1..zq1,y1..yq2``; returns the text when ``path`` is None."""
        blocks = [("x", self.states), ("u", self.external_input), ("w", self.internal_input),
                  ("z", self.external_output), ("y", self.internal_output)]
        header = ["t"] + [f"{p}{i + 1}" for p, arr in blocks for i in range(arr.shape[1])]
        data = np.hstack([self.times.reshape(-1, 1)] + [arr for _, arr in blocks])
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in data:
            writer.writerow([f"{v:.15g}" for v in row])
        text = buf.getvalue()
        if path is None:
            return text
        with open(path, "w", newline="") as fh:
            fh.write(text)
        return None


def time_grid(T, dt):
    if not (T > 0 and dt > 0):
        raise ValueError("horizon and step must be positive")
    if dt > T:
        raise ValueError("step must not exceed the horizon")
    steps = int(round(T / dt))
    return np.arange(steps + 1) * dt


def rk4(f: Callable, x0, times):
    """Classic fixed-step RK4 for ``x' = f(t, x)`` on the given uniform grid.

    Raises
    ------
    NonFiniteState
        As soon as a state component exceeds ``DIVERGENCE_LIMIT`` in magnitude.
    """
    x = np.array(x0, dtype=float)
    out = np.empty((len(times), x.size))
    out[0] = x
    for k in range(len(times) - 1):
        t, h = times[k], times[k + 1] - times[k]
        k1 = f(t, x)
        k2 = f(t + h / 2, x + h / 2 * k1)
        k3 = f(t + h / 2, x + h / 2 * k2)
        k4 = f(t + h, x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.abs(x) <= DIVERGENCE_LIMIT):
            raise NonFiniteState(f"state diverged at t = {times[k + 1]:.6g}")
        out[k + 1] = x
    return out


def _sample(signal, times):
    return np.array([signal(t) for t in times]).reshape(len(times), signal.dim)


def simulate(sys, x0, u, w, T, dt):
    """Simulate one system under external input ``u`` and internal input ``w``."""
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != sys.n:
        raise DimensionMismatch(f"x0 must have {sys.n} entries")
    if u.dim != sys.m:
        raise DimensionMismatch(f"external input must have dimension {sys.m}, got {u.dim}")
    if w.dim != sys.p:
        raise DimensionMismatch(f"internal input must have dimension {sys.p}, got {w.dim}")
    times = time_grid(T, dt)
    states = rk4(lambda t, x: sys.dynamics(x, u(t), w(t)), x0, times)
    return Trajectory(times, states, _sample(u, times), _sample(w, times),
                      states @ sys.C1.T, states @ sys.C2.T)


def _check_coupling(subsystems, M):
    M = np.asarray(M, dtype=float)
    p = sum(s.p for s in subsystems)
    q = sum(s.q2 for s in subsystems)
    if M.shape != (p, q):
        raise DimensionMismatch(f"coupling matrix must be {p} x {q}, got {M.shape}")
    return M


def interconnect(subsystems: Sequence[NonlinearControlSystem], M):
    """Close the internal channels ``w = M z2`` into one system without internal ports.

    At most one subsystem may carry a nonlinearity (the class has a single
    ``phi``); networks with several nonlinear blocks are simulated with
    :func:`simulate_network` instead.
    """
    if not subsystems:
        raise DimensionMismatch("need at least one subsystem")
    M = _check_coupling(subsystems, M)
    nonlinear = [i for i, s in enumerate(subsystems) if s.has_nonlinearity]
    if len(nonlinear) > 1:
        raise ValueError("several nonlinear subsystems: use simulate_network (co-simulation)")
    A = block_diag(*(s.A for s in subsystems))
    D = block_diag(*(s.D for s in subsystems))
    C2 = block_diag(*(s.C2 for s in subsystems))
    A_net = A + D @ M @ C2
    n = A.shape[0]
    E = np.zeros((n, 1))
    F = np.zeros((1, n))
    phi = SlopeRestrictedFunction.zero()
    if nonlinear:
        i = nonlinear[0]
        off = sum(s.n for s in subsystems[:i])
        E[off:off + subsystems[i].n] = subsystems[i].E
        F[:, off:off + subsystems[i].n] = subsystems[i].F
        phi = subsystems[i].phi
    return NonlinearControlSystem(
        A=A_net, B=block_diag(*(s.B for s in subsystems)),
        C1=block_diag(*(s.C1 for s in subsystems)), E=E, F=F, phi=phi)


def _offsets(sizes):
    return np.concatenate([[0], np.cumsum(sizes)]).astype(int)


def simulate_network(subsystems, M, x0s, inputs, T, dt):
    """Co-simulate subsystems, substituting ``w = M z2`` at every RK stage.

    Returns one :class:`Trajectory` per subsystem.
    """
    M = _check_coupling(subsystems, M)
    if len(x0s) != len(subsystems) or len(inputs) != len(subsystems):
        raise DimensionMismatch("need one initial state and one input per subsystem")
    ns = _offsets([s.n for s in subsystems])
    ps = _offsets([s.p for s in subsystems])
    C2 = block_diag(*(s.C2 for s in subsystems))

    def field_(t, x):
        w = M @ (C2 @ x)
        dx = np.empty_like(x)
        for i, s in enumerate(subsystems):
            xi = x[ns[i]:ns[i + 1]]
            dx[ns[i]:ns[i + 1]] = s.dynamics(xi, inputs[i](t), w[ps[i]:ps[i + 1]])
        return dx

    x0 = np.concatenate([np.asarray(v, dtype=float).ravel() for v in x0s])
    if x0.size != ns[-1]:
        raise DimensionMismatch("initial states do not match subsystem dimensions")
    times = time_grid(T, dt)
    states = rk4(field_, x0, times)
    W = states @ C2.T @ M.T
    trajs = []
    for i, s in enumerate(subsystems):
        X = states[:, ns[i]:ns[i + 1]]
        trajs.append(Trajectory(times, X, _sample(inputs[i], times), W[:, ps[i]:ps[i + 1]],
                                X @ s.C1.T, X @ s.C2.T))
    return trajs
