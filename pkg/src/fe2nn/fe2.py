"""
Two-scale driver: macroscale Newton loop with Gauss-point response from
on-the-fly RVE solves (direct) or from a trained network (surrogate).
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
import logging
import time

import numpy as np

from .errors import Fe2Error, GaussPointError, IncompatibleResults, InvalidDeformation
from .fem import ConstraintSet, NewtonReport, gauss_2x2, newton_solve, structured_mesh
from .mlp import surrogate_pk, surrogate_tangent
from .rve import rve_response
from .tensors import as_tensor2, det2

log = logging.getLogger(__name__)


class LoadKind(str, Enum):
    DISPLACEMENT = "displacement"
    FORCE = "force"


class TangentPolicy(str, Enum):
    INITIAL = "initial"
    PER_ITERATION = "per_iteration"


@dataclass
class LoadSchedule:
    """Targets ``(node, dof, final value)`` reached in equal increments; dof is 1 or 2."""

    kind: LoadKind
    targets: list
    n_increments: int = 1

    def __post_init__(self):
        self.kind = LoadKind(self.kind)
        if self.n_increments < 1:
            raise ValueError("n_increments must be at least 1")
        self.targets = [(int(n), int(k), float(v)) for n, k, v in self.targets]


@dataclass
class MacroProblem:
    mesh: object
    load: LoadSchedule
    supports: list = field(default_factory=list)   # (node, dof) pairs held at zero
    quad: object = field(default_factory=gauss_2x2)

    def constraints(self, factor):
        cs = ConstraintSet(dirichlet=[(int(n), int(k), 0.0) for n, k in self.supports])
        if self.load.kind is LoadKind.DISPLACEMENT:
            cs.dirichlet += [(n, k, factor * v) for n, k, v in self.load.targets]
        return cs

    def external_forces(self, factor):
        f = np.zeros(self.mesh.n_dofs)
        if self.load.kind is LoadKind.FORCE:
            for n, k, v in self.load.targets:
                f[2 * n + k - 1] += factor * v
        return f


def default_macro_problem(n_increments=5, stretch=0.1, nx=2, ny=2):
    """Unit square, left edge fixed in X1, origin pinned, right edge pulled in X1."""
    mesh = structured_mesh(nx, ny)
    X = mesh.nodes
    left = np.flatnonzero(np.isclose(X[:, 0], 0.0))
    right = np.flatnonzero(np.isclose(X[:, 0], 1.0))
    origin = int(np.flatnonzero(np.all(np.isclose(X, 0.0), axis=1))[0])
    supports = [(int(n), 1) for n in left] + [(origin, 2)]
    load = LoadSchedule(LoadKind.DISPLACEMENT, [(int(n), 1, stretch) for n in right], n_increments)
    return MacroProblem(mesh=mesh, load=load, supports=supports)


@dataclass
class ConstitutiveProvider:
    """Source of the Gauss-point response.

    ``mode`` is ``"direct"`` (needs ``rve``) or ``"surrogate"`` (needs
    ``net``). ``amplitude`` is the training-box half width used for
    extrapolation warnings in surrogate mode.
    """

    mode: str
    rve: object = None
    net: object = None
    tangent_policy: TangentPolicy = TangentPolicy.PER_ITERATION
    amplitude: float = None
    rve_tol: float = 1e-10
    rve_max_iter: int = 25
    threads: int = 1

    def __post_init__(self):
        self.tangent_policy = TangentPolicy(self.tangent_policy)
        if self.mode == "direct" and self.rve is None:
            raise ValueError("direct mode needs an RVE problem")
        if self.mode == "surrogate":
            if self.net is None:
                raise ValueError("surrogate mode needs a trained network")
            if self.amplitude is None:
                self.amplitude = self.net.meta.get("amplitude")
        if self.mode not in ("direct", "surrogate"):
            raise ValueError(f"unknown provider mode {self.mode!r}")


def extrapolating(provider, F_M):
    return (provider.mode == "surrogate" and provider.amplitude is not None
            and np.max(np.abs(F_M - np.eye(2))) > provider.amplitude)


def gauss_point_response(provider, F_M, need_tangent=True, u0=None):
    """``(P_M, C_M or None, rve_u or None)`` at one macroscale Gauss point."""
    F_M = as_tensor2(F_M)
    J = det2(F_M)
    if not J > 0:
        raise InvalidDeformation(J)
    if provider.mode == "direct":
        P, C, sol = rve_response(provider.rve, F_M, need_tangent, tol=provider.rve_tol,
                                 max_iter=provider.rve_max_iter, u0=u0)
        return P, C, sol.u
    if extrapolating(provider, F_M):
        log.warning("surrogate evaluated outside its training box at F=%s", F_M.ravel().tolist())
    P = surrogate_pk(provider.net, F_M)
    C = surrogate_tangent(provider.net, F_M) if need_tangent else None
    return P, C, None


@dataclass
class IncrementRecord:
    step: int
    load_factor: float
    converged: bool
    u: np.ndarray
    F_gp: np.ndarray
    P_gp: np.ndarray
    newton: NewtonReport

    def to_dict(self):
        return {"step": self.step, "load_factor": self.load_factor, "converged": self.converged,
                "u": self.u.tolist(), "F_gp": self.F_gp.tolist(), "P_gp": self.P_gp.tolist(),
                "newton": self.newton.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["step"]), float(d["load_factor"]), bool(d["converged"]), np.array(d["u"], dtype=float),
                   np.array(d["F_gp"], dtype=float), np.array(d["P_gp"], dtype=float),
                   NewtonReport.from_dict(d["newton"]))


@dataclass
class SimulationResult:
    mode: str
    tangent_policy: str
    increments: list = field(default_factory=list)
    failure: str = None
    offline_seconds: float = 0.0
    online_seconds: float = 0.0
    extrapolation_warnings: int = 0
    provenance: dict = field(default_factory=dict)

    @property
    def converged(self):
        return self.failure is None

    def payload(self):
        """Everything except timing, for reproducibility checks."""
        return {"mode": self.mode, "tangent_policy": self.tangent_policy,
                "increments": [r.to_dict() for r in self.increments], "failure": self.failure,
                "extrapolation_warnings": self.extrapolation_warnings, "provenance": self.provenance}

    def to_dict(self):
        d = self.payload()
        d["timing"] = {"offline_seconds": self.offline_seconds, "online_seconds": self.online_seconds}
        return d

    @classmethod
    def from_dict(cls, d):
        t = d.get("timing", {})
        return cls(mode=d["mode"], tangent_policy=d["tangent_policy"],
                   increments=[IncrementRecord.from_dict(r) for r in d["increments"]],
                   failure=d.get("failure"), offline_seconds=float(t.get("offline_seconds", 0.0)),
                   online_seconds=float(t.get("online_seconds", 0.0)),
                   extrapolation_warnings=int(d.get("extrapolation_warnings", 0)),
                   provenance=dict(d.get("provenance", {})))

    def displacement_csv(self):
        lines = ["increment,node,u1,u2"]
        for rec in self.increments:
            for n, (u1, u2) in enumerate(rec.u.reshape(-1, 2)):
                lines.append(f"{rec.step},{n},{u1:.17g},{u2:.17g}")
        return "\n".join(lines) + "\n"


class _MacroMaterial:
    """Callable material handed to the assembly routines.

    Evaluates every Gauss point through the provider, keeps the last
    stresses for the result record, warm-starts RVE solves from the
    previous solution at the same point, and substitutes the stored initial
    tangent under the ``initial`` policy.
    """

    def __init__(self, provider, gauss_X):
        self.provider = provider
        self.gauss_X = gauss_X
        self.C_init = None
        self.rve_u = {}
        self.last_F = self.last_P = None
        self.extrapolations = 0

    def initialize(self, shape):
        ne, ng = shape
        self.C_init = np.empty((ne, ng, 2, 2, 2, 2))
        I = np.broadcast_to(np.eye(2), (ne, ng, 2, 2))
        _, self.C_init[...] = self._evaluate(I, True)

    def _point(self, e, g, F, need_tangent):
        try:
            P, C, u = gauss_point_response(self.provider, F, need_tangent, u0=self.rve_u.get((e, g)))
        except Fe2Error as err:
            raise GaussPointError(e, g, self.gauss_X[e, g], err) from err
        if u is not None:
            self.rve_u[(e, g)] = u
        return P, C

    def _evaluate(self, F, need_tangent):
        ne, ng = F.shape[:2]
        keys = [(e, g) for e in range(ne) for g in range(ng)]
        if self.provider.threads > 1:
            with ThreadPoolExecutor(max_workers=self.provider.threads) as pool:
                out = list(pool.map(lambda k: self._point(k[0], k[1], F[k], need_tangent), keys))
        else:
            out = [self._point(e, g, F[e, g], need_tangent) for e, g in keys]
        P = np.array([o[0] for o in out]).reshape(ne, ng, 2, 2)
        C = np.array([o[1] for o in out]).reshape(ne, ng, 2, 2, 2, 2) if need_tangent else None
        return P, C

    def __call__(self, F, need_tangent=True):
        per_iter = self.provider.tangent_policy is TangentPolicy.PER_ITERATION
        P, C = self._evaluate(F, need_tangent and per_iter)
        if self.provider.mode == "surrogate":
            self.extrapolations += sum(extrapolating(self.provider, Fg) for Fg in F.reshape(-1, 2, 2))
        if need_tangent and not per_iter:
            C = self.C_init
        self.last_F, self.last_P = F.copy(), P
        return P, C


def run_fe2(macro, provider, tol=1e-8, max_iter=50, provenance=None, offline_seconds=0.0):
    """Incremental-iterative macroscale solve.

    Each increment applies its load fraction and runs Newton on the
    macroscale balance with the provider's stresses; the tangent is either
    re-evaluated each iteration or frozen at its initial (F = I) value.
    Failures end the run and are recorded, not raised.
    """
    mat = _MacroMaterial(provider, macro.mesh.gauss_coordinates(macro.quad))
    ne, ng = len(macro.mesh.elements), len(macro.quad)
    result = SimulationResult(mode=provider.mode, tangent_policy=provider.tangent_policy.value,
                              provenance=dict(provenance or {}))
    t0 = time.perf_counter()
    if provider.tangent_policy is TangentPolicy.INITIAL:
        mat.initialize((ne, ng))
    t1 = time.perf_counter()
    result.offline_seconds = offline_seconds + (t1 - t0)

    u = np.zeros(macro.mesh.n_dofs)
    n = macro.load.n_increments
    for step in range(1, n + 1):
        factor = step / n
        try:
            u, report = newton_solve(macro.mesh, mat, macro.quad, macro.constraints(factor), tol=tol,
                                     max_iter=max_iter, f_ext=macro.external_forces(factor), u0=u,
                                     raise_on_failure=False)
        except Fe2Error as err:
            result.failure = f"increment {step}: {err}"
            log.error(result.failure)
            break
        result.increments.append(IncrementRecord(step, factor, report.converged, u.copy(),
                                                 mat.last_F.copy(), mat.last_P.copy(), report))
        if not report.converged:
            result.failure = (f"increment {step}: Newton did not converge in {report.iterations} "
                              f"iterations (residual {report.residual_history[-1]:.3e})")
            log.error(result.failure)
            break
    result.online_seconds = time.perf_counter() - t1
    result.extrapolation_warnings = int(mat.extrapolations)
    return result


def single_scale_solve(macro, mat, tol=1e-8, max_iter=50):
    """Same macroscale problem with the neo-Hookean law applied directly."""
    u = np.zeros(macro.mesh.n_dofs)
    out = []
    for step in range(1, macro.load.n_increments + 1):
        factor = step / macro.load.n_increments
        u, report = newton_solve(macro.mesh, mat, macro.quad, macro.constraints(factor), tol=tol,
                                 max_iter=max_iter, f_ext=macro.external_forces(factor), u0=u)
        out.append(u.copy())
    return out


@dataclass
class ComparisonRow:
    step: int
    max_du: float
    rms_du: float
    max_dP: float
    max_u: float
    max_P: float

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class ComparisonReport:
    rows: list
    time_ratio: float

    def to_dict(self):
        return {"increments": [r.to_dict() for r in self.rows], "time_ratio": self.time_ratio}

    def table(self):
        lines = [f"{'increment':>9}  {'max|du|':>12}  {'RMS|du|':>12}  {'max|dP|':>12}"]
        for r in self.rows:
            lines.append(f"{r.step:>9d}  {r.max_du:12.5e}  {r.rms_du:12.5e}  {r.max_dP:12.5e}")
        lines.append(f"online time ratio (a/b): {self.time_ratio:.4g}")
        return "\n".join(lines)


def compare_runs(a, b):
    """Per-increment displacement and stress differences between two runs."""
    if len(a.increments) != len(b.increments):
        raise IncompatibleResults(f"runs have {len(a.increments)} and {len(b.increments)} increments")
    rows = []
    for ra, rb in zip(a.increments, b.increments):
        if ra.step != rb.step or ra.u.shape != rb.u.shape or ra.P_gp.shape != rb.P_gp.shape \
                or not np.isclose(ra.load_factor, rb.load_factor):
            raise IncompatibleResults(f"increment {ra.step} differs in schedule or mesh")
        du = np.linalg.norm((ra.u - rb.u).reshape(-1, 2), axis=1)
        rows.append(ComparisonRow(
            step=ra.step, max_du=float(du.max()), rms_du=float(np.sqrt(np.mean(du ** 2))),
            max_dP=float(np.abs(ra.P_gp - rb.P_gp).max()),
            max_u=float(np.linalg.norm(ra.u.reshape(-1, 2), axis=1).max()),
            max_P=float(np.abs(ra.P_gp).max())))
    if a.online_seconds == b.online_seconds:
        ratio = 1.0
    else:
        ratio = a.online_seconds / b.online_seconds if b.online_seconds > 0 else float("inf")
    return ComparisonReport(rows=rows, time_ratio=ratio)
