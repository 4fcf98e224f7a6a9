"""Declarative scenarios and the Laplacian-network aggregation study.

A scenario describes a network of subsystems, how each is abstracted, the
coupling, and a simulation.  The default scenario is a consensus network on
a complete graph whose nodes are split into blocks, each block aggregated to
its average by ``P_i = 1``.
"""

from __future__ import annotations

import copy
import html
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .compose import (InterconnectionSpec, certify_composition,
                      cosimulate_network, verify_composite)
from .errors import BadDescriptor, ConditionsNotCertified, Infeasible, ScenarioError
from .matgeo import DEFAULT_TOL, Tolerance, max_eigenvalue
from .storage import StorageCertificate, error_bound, verify_dissipation_inequality
from .synthesis import PipelineOptions, check_assumption1, table1_pipeline
from .sysmodel import NonlinearControlSystem, SignalSpec, Trajectory

__all__ = [
    "Scenario", "RunArtifacts", "build_laplacian", "default_output_matrix", "laplacian_certificate",
    "build_network", "synthesize", "certify", "compose", "run_case_study", "small_gain_compare",
    "default_schedule", "PLOT_BOXES",
]

# boxes drawn in the output-space plot (inert metadata)
PLOT_BOXES = {
    "S": [[0, 10], [0, 10], [0, 10]],
    "T1": [[1, 2], [1, 2], [1, 2]],
    "T2": [[8, 9], [8, 9], [8, 9]],
    "O1": [[4, 6], [4, 6], [4, 6]],
    "O2": [[7, 9], [1, 3], [0, 10]],
    "O3": [[2, 3], [7, 8], [0, 10]],
    "O4": [[1, 2], [1, 2], [5, 10]],
    "O5": [[8, 9], [8, 9], [0, 5]],
}

_SIM_KEYS = {"T", "dt", "x0_policy", "V0", "xhat0", "schedule", "uhat_bound", "seed"}
_VERIFY_KEYS = {"samples", "seed"}
_SUBSYSTEM_KEYS = {"system", "P", "certificate", "kappa_hat", "H", "What", "Bhat", "pi"}
_TOP_KEYS = {"name", "coupling", "partition", "lambda", "C", "subsystems", "simulation",
             "verification", "tolerances", "mu", "metadata"}


def default_schedule(N, level=3.5):
    """Piecewise-constant abstract input moving every block from ~1.5 to ~8.5 and back."""
    return [[0.0, [0.0] * N], [1.0, [level] * N], [3.0, [0.0] * N],
            [5.0, [-level] * N], [7.0, [0.0] * N]]


def _default_simulation(N):
    return {"T": 10.0, "dt": 1e-3, "x0_policy": "matched", "V0": 0.0, "xhat0": [1.5] * N,
            "schedule": default_schedule(N), "uhat_bound": 14.0, "seed": 0}


@dataclass
class Scenario:
    """Network description; the JSON form uses the key ``lambda`` for ``lam``.

    Either ``coupling`` is a graph descriptor and the subsystems are the
    integrator blocks of the Laplacian network (``partition`` gives the
    block sizes), or ``subsystems`` lists explicit systems with their
    abstraction requests and ``coupling`` is ``{"type": "explicit", ...}``.
    """

    coupling: dict = field(default_factory=lambda: {"type": "complete", "n": 9})
    partition: list = field(default_factory=lambda: [3, 3, 3])
    lam: float = 2.0
    C: list | None = None
    subsystems: list | None = None
    simulation: dict = field(default_factory=dict)
    verification: dict = field(default_factory=lambda: {"samples": 10_000, "seed": 0})
    tolerances: Tolerance = DEFAULT_TOL
    mu: list | None = None
    name: str = "laplacian-aggregation"
    metadata: dict = field(default_factory=lambda: {"boxes": copy.deepcopy(PLOT_BOXES)})

    def __post_init__(self):
        if not (isinstance(self.lam, (int, float)) and self.lam > 0):
            raise ScenarioError("lambda must be a positive number")
        if not isinstance(self.coupling, dict) or "type" not in self.coupling:
            raise ScenarioError("coupling must be a descriptor object with a 'type'")
        if self.subsystems is None:
            n = _descriptor_size(self.coupling)
            if any(int(k) != k or k < 1 for k in self.partition) or sum(self.partition) != n:
                raise ScenarioError(f"partition {self.partition} must be positive integers summing to {n}")
            self.partition = [int(k) for k in self.partition]
        else:
            for entry in self.subsystems:
                unknown = set(entry) - _SUBSYSTEM_KEYS
                if unknown:
                    raise ScenarioError(f"unknown subsystem keys: {sorted(unknown)}")
                if "system" not in entry or "P" not in entry:
                    raise ScenarioError("each subsystem needs 'system' and 'P'")
        N = self.n_blocks
        sim = _default_simulation(N)
        unknown = set(self.simulation) - _SIM_KEYS
        if unknown:
            raise ScenarioError(f"unknown simulation keys: {sorted(unknown)}")
        sim.update(self.simulation)
        if sim["x0_policy"] not in ("matched", "perturbed"):
            raise ScenarioError("x0_policy must be 'matched' or 'perturbed'")
        if not (sim["T"] > 0 and 0 < sim["dt"] <= sim["T"]):
            raise ScenarioError("need 0 < dt <= T")
        self.simulation = sim
        unknown = set(self.verification) - _VERIFY_KEYS
        if unknown:
            raise ScenarioError(f"unknown verification keys: {sorted(unknown)}")
        self.verification = {"samples": 10_000, "seed": 0, **self.verification}
        if isinstance(self.tolerances, dict):
            self.tolerances = Tolerance.from_dict(self.tolerances)

    @property
    def n_blocks(self):
        return len(self.subsystems) if self.subsystems is not None else len(self.partition)

    def to_dict(self):
        d = {"name": self.name, "coupling": self.coupling, "lambda": self.lam,
             "simulation": self.simulation, "verification": self.verification,
             "tolerances": self.tolerances.to_dict(), "metadata": self.metadata}
        if self.subsystems is None:
            d["partition"] = self.partition
        else:
            d["subsystems"] = self.subsystems
        if self.C is not None:
            d["C"] = self.C
        if self.mu is not None:
            d["mu"] = self.mu
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ScenarioError("scenario must be a JSON object")
        unknown = set(d) - _TOP_KEYS
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
        kw = {k: v for k, v in d.items() if k != "lambda"}
        if "lambda" in d:
            kw["lam"] = d["lambda"]
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(str(exc)) from exc

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"invalid JSON: {exc}") from exc

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


def _descriptor_size(desc):
    kind = desc.get("type")
    if kind in ("complete", "path", "cycle"):
        return int(desc.get("n", 0))
    if kind == "explicit":
        return len(desc.get("entries", []))
    raise BadDescriptor(f"unknown coupling descriptor {kind!r}")


def build_laplacian(descriptor):
    """Graph Laplacian for ``complete``, ``path`` or ``cycle`` graphs, or an explicit one.

    ``{"type": "explicit", "entries": [[...]]}`` must itself be a Laplacian
    (square, zero row sums).
    """
    if not isinstance(descriptor, dict):
        raise BadDescriptor("descriptor must be a mapping with a 'type'")
    kind = descriptor.get("type")
    allowed = {"complete": {"type", "n"}, "path": {"type", "n"}, "cycle": {"type", "n"},
               "explicit": {"type", "entries"}}
    if kind not in allowed:
        raise BadDescriptor(f"unknown graph type {kind!r}")
    extra = set(descriptor) - allowed[kind]
    if extra:
        raise BadDescriptor(f"unknown descriptor keys: {sorted(extra)}")
    if kind == "explicit":
        L = np.asarray(descriptor.get("entries"), dtype=float)
        if L.ndim != 2 or L.shape[0] != L.shape[1] or L.shape[0] < 2:
            raise BadDescriptor("explicit Laplacian must be square with n >= 2")
        if np.max(np.abs(L.sum(axis=1))) > 1e-12 * (1 + np.abs(L).max()):
            raise BadDescriptor("explicit Laplacian must have zero row sums")
        return L
    n = descriptor.get("n")
    if not isinstance(n, (int, np.integer)) or n < 2 or (kind == "cycle" and n < 3):
        raise BadDescriptor(f"{kind} graph needs an integer n >= {3 if kind == 'cycle' else 2}")
    if kind == "complete":
        return n * np.eye(n) - np.ones((n, n))
    Adj = np.zeros((n, n))
    idx = np.arange(n - 1)
    Adj[idx, idx + 1] = Adj[idx + 1, idx] = 1.0
    if kind == "cycle":
        Adj[0, -1] = Adj[-1, 0] = 1.0
    return np.diag(Adj.sum(axis=1)) - Adj


def default_output_matrix(partition):
    """One unit row per block; for three blocks of three it picks ``x1, x5, x9``."""
    if list(partition) == [3, 3, 3]:
        return [np.eye(3)[[i]] for i in range(3)]
    return [np.eye(k)[[0]] for k in partition]


def laplacian_certificate(k, lam):
    """Passivity-type certificate of an integrator block ``x' = w + u`` of size ``k``."""
    return StorageCertificate(
        Mhat=np.eye(k), K=-lam * np.eye(k), L1=np.zeros((k, 1)), Z=np.eye(k), W=np.eye(k),
        X11=np.zeros((k, k)), X12=np.eye(k), X21=np.eye(k), X22=np.zeros((k, k)),
        kappa_hat=2 * lam)


def _split_C(scenario):
    if scenario.C is None:
        return default_output_matrix(scenario.partition)
    C = np.asarray(scenario.C, dtype=float)
    n = sum(scenario.partition)
    if C.ndim != 2 or C.shape[1] != n:
        raise ScenarioError(f"C must have {n} columns")
    blocks, off = [], 0
    for k in scenario.partition:
        rows = np.any(C[:, off:off + k] != 0, axis=1)
        outside = np.delete(C[rows], np.s_[off:off + k], axis=1)
        if np.any(outside != 0):
            raise ScenarioError("C must be block diagonal with respect to the partition")
        blocks.append(C[rows][:, off:off + k])
        off += k
    return blocks


def build_network(scenario):
    """Subsystems, their pipeline requests ``(P, PipelineOptions)`` and the coupling ``M``."""
    tol = scenario.tolerances
    if scenario.subsystems is None:
        L = build_laplacian(scenario.coupling)
        Cs = _split_C(scenario)
        systems, requests = [], []
        for k, C1 in zip(scenario.partition, Cs):
            systems.append(NonlinearControlSystem(A=np.zeros((k, k)), B=np.eye(k), C1=C1,
                                                  C2=np.eye(k), D=np.eye(k)))
            requests.append((np.ones((k, 1)),
                             PipelineOptions(certificate=laplacian_certificate(k, scenario.lam),
                                             What=np.ones((k, 1)), tol=tol)))
        return systems, requests, -L
    systems, requests = [], []
    for entry in scenario.subsystems:
        sys = NonlinearControlSystem.from_dict(entry["system"])
        cert = entry.get("certificate")
        opts = PipelineOptions(
            certificate=None if cert is None else StorageCertificate.from_dict(cert),
            kappa_hat=entry.get("kappa_hat", 1.0),
            H=None if entry.get("H") is None else np.asarray(entry["H"], dtype=float),
            What=None if entry.get("What") is None else np.asarray(entry["What"], dtype=float),
            Bhat=entry.get("Bhat", "free") if isinstance(entry.get("Bhat", "free"), str)
            else np.asarray(entry["Bhat"], dtype=float),
            pi=entry.get("pi"), tol=tol)
        systems.append(sys)
        requests.append((np.asarray(entry["P"], dtype=float), opts))
    if scenario.coupling.get("type") != "explicit":
        raise ScenarioError("explicit subsystems need an explicit coupling matrix")
    M = np.asarray(scenario.coupling["entries"], dtype=float)
    return systems, requests, M


def synthesize(scenario):
    """Run the construction pipeline for every subsystem."""
    systems, requests, M = build_network(scenario)
    results = []
    for i, (sys, (P, opts)) in enumerate(zip(systems, requests)):
        try:
            results.append(table1_pipeline(sys, P, opts))
        except (Infeasible, ValueError, ArithmeticError) as exc:
            step = getattr(exc, "step", None) or type(exc).__name__
            raise ConditionsNotCertified(f"subsystem {i + 1}: abstraction step {step} failed: {exc}") from exc
    return systems, results, M


def certify(scenario, systems=None, results=None):
    """Per-subsystem reports: the certificate inequality and the sampled dissipation check."""
    if results is None:
        systems, results, _ = synthesize(scenario)
    tol = scenario.tolerances
    reports = []
    for i, (sys, res) in enumerate(zip(systems, results)):
        rep = check_assumption1(sys, res.certificate, tol)
        rep.extend(verify_dissipation_inequality(
            sys, res.abstract_system, res.certificate, samples=scenario.verification["samples"],
            seed=scenario.verification["seed"] + i, tol=tol))
        reports.append(rep)
    return reports


def compose(scenario, systems=None, results=None, M=None):
    if results is None:
        systems, results, M = synthesize(scenario)
    spec = InterconnectionSpec([(s, r.abstract_system, r.certificate) for s, r in zip(systems, results)], M)
    return spec, certify_composition(spec, scenario.mu, tol=scenario.tolerances)


@dataclass(eq=False)
class RunArtifacts:
    reports: list
    composition: object
    composite_report: object
    run: object
    error_trace: np.ndarray
    summary: dict
    trajectories: dict

    @property
    def passed(self):
        return bool(self.summary["passed"])

    def write(self, outdir):
        os.makedirs(os.path.join(outdir, "trajectories"), exist_ok=True)
        np.savetxt(os.path.join(outdir, "error_trace.csv"), self.error_trace, delimiter=",",
                   header="t,err,bound", comments="", fmt="%.15g")
        with open(os.path.join(outdir, "summary.json"), "w") as fh:
            json.dump(self.summary, fh, indent=2)
        for name, traj in self.trajectories.items():
            traj.to_csv(os.path.join(outdir, "trajectories", f"{name}.csv"))
        with open(os.path.join(outdir, "plot.html"), "w") as fh:
            fh.write(render_plot(self))


def _initial_states(scenario, spec, rng):
    sim = scenario.simulation
    N = spec.N
    xh = np.asarray(sim["xhat0"], dtype=float).ravel()
    nh = sum(a.n for _, a, _ in spec.subsystems)
    if xh.size == 1:
        xh = np.full(nh, float(xh[0]))
    if xh.size != nh:
        raise ScenarioError(f"xhat0 must have {nh} entries")
    certs = spec.certificates
    P = np.zeros((sum(c.P.shape[0] for c in certs), nh))
    mu = np.ones(N) if scenario.mu is None else np.asarray(scenario.mu, dtype=float)
    Mw = np.zeros((P.shape[0], P.shape[0]))
    r = c = 0
    for m, cert in zip(mu, certs):
        P[r:r + cert.P.shape[0], c:c + cert.P.shape[1]] = cert.P
        Mw[r:r + cert.P.shape[0], r:r + cert.P.shape[0]] = m * cert.Mhat
        r += cert.P.shape[0]
        c += cert.P.shape[1]
    x0 = P @ xh
    V0 = 0.0
    if sim["x0_policy"] == "perturbed":
        V0 = float(sim["V0"])
        d = rng.standard_normal(x0.size)
        d *= math.sqrt(V0 / float(d @ Mw @ d))
        x0 = x0 + d
    return x0, xh, V0


def _schedule_signal(schedule, dim):
    sched = []
    for t, v in schedule:
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if v.size == 1:
            v = np.full(dim, float(v[0]))
        if v.size != dim:
            raise ScenarioError(f"schedule entries must have {dim} components")
        sched.append((float(t), v.tolist()))
    return SignalSpec.piecewise(sched)


def _trajectories(spec, run):
    out = {}
    ox = oh = ou = ouh = 0
    for i, (s, a, _) in enumerate(spec.subsystems):
        X = run.states[:, ox:ox + s.n]
        Xh = run.abstract_states[:, oh:oh + a.n]
        U = run.inputs[:, ou:ou + s.m]
        Uh = run.abstract_inputs[:, ouh:ouh + a.m]
        out[f"concrete_{i + 1}"] = Trajectory(run.times, X, U, np.zeros((len(X), s.p)) if s.p == 0
                                              else _internal(spec, run, i), X @ s.C1.T, X @ s.C2.T)
        out[f"abstract_{i + 1}"] = Trajectory(run.times, Xh, Uh, np.zeros((len(Xh), a.p)),
                                              Xh @ a.C1.T, Xh @ a.C2.T)
        ox, oh, ou, ouh = ox + s.n, oh + a.n, ou + s.m, ouh + a.m
    return out


def _internal(spec, run, i):
    C2 = [s.C2 for s, _, _ in spec.subsystems]
    off = np.concatenate([[0], np.cumsum([s.n for s, _, _ in spec.subsystems])])
    z2 = np.hstack([run.states[:, off[j]:off[j + 1]] @ C2[j].T for j in range(spec.N)])
    w = z2 @ spec.M.T
    po = np.concatenate([[0], np.cumsum([s.p for s, _, _ in spec.subsystems])])
    return w[:, po[i]:po[i + 1]]


def run_case_study(scenario, outdir=None):
    """Synthesize, certify, compose and co-simulate; optionally write artifacts.

    Raises
    ------
    ConditionsNotCertified
        Naming the first failing subsystem check or interconnection condition.
    """
    tol = scenario.tolerances
    systems, results, M = synthesize(scenario)
    reports = certify(scenario, systems, results)
    for i, rep in enumerate(reports):
        if not rep.passed:
            bad = ", ".join(f"{e.check} (margin {e.margin:.3e})" for e in rep.failures())
            raise ConditionsNotCertified(f"subsystem {i + 1} not certified: {bad}")
    spec, comp = compose(scenario, systems, results, M)
    if comp.condition5_margin > tol.definiteness_tol:
        raise ConditionsNotCertified(
            f"coupling dissipativity condition fails: largest eigenvalue {comp.condition5_margin:.3e}")
    if comp.condition6_residual > tol.residual_tol:
        raise ConditionsNotCertified(
            f"abstract coupling condition W M H = What Mhat fails: residual {comp.condition6_residual:.3e}")
    comp_rep = verify_composite(spec, comp.mu, comp.Mhat_coupling,
                                samples=scenario.verification["samples"],
                                seed=scenario.verification["seed"], tol=tol)
    sim = scenario.simulation
    rng = np.random.default_rng(sim["seed"])
    x0, xh0, V0 = _initial_states(scenario, spec, rng)
    m_hat = sum(a.m for _, a, _ in spec.subsystems)
    uhat = _schedule_signal(sim["schedule"], m_hat)
    run = cosimulate_network(spec, comp.Mhat_coupling, x0, xh0, uhat, sim["T"], sim["dt"])
    cf = comp.composite_cf
    u_sup = max(float(sim["uhat_bound"]), uhat.sup_norm(sim["T"])) if cf.rho_coeff else 0.0
    bound = error_bound(cf, V0, u_sup, run.times, use_half=True)
    err = run.error
    trace = np.column_stack([run.times, err, bound])
    violations = int(np.sum(err > bound + 1e-9))
    sg = None
    if scenario.subsystems is None and scenario.coupling.get("type") == "complete":
        sg = small_gain_compare(scenario.coupling["n"], scenario.lam)
    summary = {
        "scenario": scenario.name,
        "passed": bool(comp.passed and all(r.passed for r in reports) and comp_rep.passed
                       and violations == 0),
        "subsystem_reports": [r.to_dict() for r in reports],
        "composition": {k: v for k, v in comp.to_dict().items() if k != "X_assembled"},
        "composite_verification": comp_rep.to_dict(),
        "V0": V0,
        "uhat_sup": u_sup,
        "max_error": float(err.max()),
        "max_bound": float(bound.max()),
        "bound_violations": violations,
        "construction_logs": [[{"step": s, "residual": r} for s, r in res.construction_log]
                              for res in results],
        "small_gain": sg,
        "metadata": scenario.metadata,
    }
    art = RunArtifacts(reports, comp, comp_rep, run, trace, summary, _trajectories(spec, run))
    if outdir is not None:
        art.write(outdir)
    return art


def small_gain_compare(n, lam):
    """Coupling dissipativity margin vs. the small-gain quantity on a complete graph.

    The margin is the largest eigenvalue of ``-L - L^T`` (never positive);
    the small-gain quantity ``(n-1)/(n-1+lam)`` tends to one as ``n`` grows.
    """
    if n < 2 or not lam > 0:
        raise ValueError("need n >= 2 and lam > 0")
    L = build_laplacian({"type": "complete", "n": int(n)})
    eig = np.linalg.eigvalsh(L)
    return {
        "n": int(n), "lambda": float(lam),
        "dissipativity_margin": max_eigenvalue(-L - L.T),
        "small_gain_value": (n - 1) / (n - 1 + lam),
        "spectral_radius": float(np.max(np.abs(eig))),
    }


# -- static plot ---------------------------------------------------------------

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _polyline(xs, ys, box, color, dash=None):
    (x0, x1), (y0, y1), (w, h, ox, oy) = box
    sx = w / (x1 - x0 or 1.0)
    sy = h / (y1 - y0 or 1.0)
    step = max(1, len(xs) // 800)
    pts = " ".join(f"{ox + (x - x0) * sx:.1f},{oy + h - (y - y0) * sy:.1f}"
                   for x, y in zip(xs[::step], ys[::step]))
    d = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{d} points="{pts}"/>'


def _panel(title, xr, yr, w=420, h=260, ox=50, oy=30):
    frame = (f'<rect x="{ox}" y="{oy}" width="{w}" height="{h}" fill="none" stroke="#444"/>'
             f'<text x="{ox}" y="{oy - 8}" font-size="13">{html.escape(title)}</text>'
             f'<text x="{ox - 45}" y="{oy + 10}" font-size="10">{yr[1]:.3g}</text>'
             f'<text x="{ox - 45}" y="{oy + h}" font-size="10">{yr[0]:.3g}</text>'
             f'<text x="{ox}" y="{oy + h + 14}" font-size="10">{xr[0]:.3g}</text>'
             f'<text x="{ox + w - 20}" y="{oy + h + 14}" font-size="10">{xr[1]:.3g}</text>')
    return frame, (xr, yr, (w, h, ox, oy))


def render_plot(art):
    """Self-contained HTML page with inline SVG line plots."""
    t, err, bound = art.error_trace.T
    run = art.run
    top = max(float(bound.max()), float(err.max()), 1e-12)
    f1, b1 = _panel("output error ||z - zh|| (solid) and bound (dashed)", (t[0], t[-1]), (0, top * 1.05))
    svg1 = f1 + _polyline(t, err, b1, _COLORS[0]) + _polyline(t, bound, b1, _COLORS[1], "5,3")
    lo = float(min(run.outputs.min(), run.abstract_outputs.min()))
    hi = float(max(run.outputs.max(), run.abstract_outputs.max()))
    f2, b2 = _panel("outputs z (solid) and zh (dashed)", (t[0], t[-1]), (lo, hi if hi > lo else lo + 1))
    svg2 = f2
    for j in range(run.outputs.shape[1]):
        c = _COLORS[j % len(_COLORS)]
        svg2 += _polyline(t, run.outputs[:, j], b2, c) + _polyline(t, run.abstract_outputs[:, j], b2, c, "4,3")
    panels = [svg1, svg2]
    boxes = art.summary.get("metadata", {}).get("boxes") if isinstance(art.summary.get("metadata"), dict) else None
    if boxes and run.outputs.shape[1] >= 2:
        f3, b3 = _panel("output plane (z1, z2) with boxes", (0, 10), (0, 10), w=260, h=260)
        svg3 = f3
        (x0, x1), (y0, y1), (w, h, ox, oy) = b3
        for name, box in boxes.items():
            (a0, a1), (c0, c1) = box[0], box[1]
            color = "#d62728" if name.startswith("T") else ("#1f77b4" if name.startswith("O") else "#999")
            svg3 += (f'<rect x="{ox + (a0 - x0) * w / (x1 - x0):.1f}" y="{oy + h - (c1 - y0) * h / (y1 - y0):.1f}" '
                     f'width="{(a1 - a0) * w / (x1 - x0):.1f}" height="{(c1 - c0) * h / (y1 - y0):.1f}" '
                     f'fill="{color}" fill-opacity="0.15" stroke="{color}"/>')
        svg3 += _polyline(run.outputs[:, 0], run.outputs[:, 1], b3, "#000")
        panels.append(svg3)
    body = "".join(f'<svg xmlns="http://www.w3.org/2000/svg" width="520" height="330">{p}</svg>' for p in panels)
    s = art.summary
    info = html.escape(json.dumps({k: s[k] for k in ("passed", "max_error", "max_bound", "bound_violations")}))
    return (f"<!DOCTYPE html><html><head><meta charset='utf-8'><title>{html.escape(s['scenario'])}</title>"
            f"</head><body><h3>{html.escape(s['scenario'])}</h3><pre>{info}</pre>{body}</body></html>")
