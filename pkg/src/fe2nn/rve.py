"""
RVE boundary value problem and homogenization of stress and tangent.

A macroscale deformation gradient ``F_M`` is imposed on the cell either as
affine displacements ``u = (F_M - I) X`` on every boundary node, or as
corner pinning plus mirror ties between opposite faces (periodic). After
the nonlinear solve, the homogenized first Piola-Kirchhoff stress is the
dyadic sum of boundary nodal forces and reference positions over the cell
volume; the homogenized tangent comes from the Schur complement of the
RVE stiffness onto the boundary dofs.
"""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg as sla

from .errors import InvalidDeformation, MeshNotPeriodic
from .fem import (ConstraintSet, assemble, gauss_2x2, lu_factor_checked,
                  newton_solve)
from .tensors import MaterialParams, as_tensor2, det2

PAIR_TOL = 1e-10


class BcMode(str, Enum):
    AFFINE = "affine"
    PERIODIC = "periodic"


@dataclass
class RveProblem:
    """Unit cell with its material description and boundary-condition mode.

    ``mat`` is a single :class:`MaterialParams` or a mapping from phase id to
    :class:`MaterialParams` matched against ``mesh.element_materials``.
    """

    mesh: object
    mat: object
    bc_mode: BcMode = BcMode.PERIODIC
    quad: object = field(default_factory=gauss_2x2)

    def __post_init__(self):
        self.bc_mode = BcMode(self.bc_mode)
        if not isinstance(self.mat, MaterialParams):
            self.mat = {int(k): v for k, v in dict(self.mat).items()}
            if self.mesh.element_materials is None:
                raise ValueError("phase materials given but mesh has no element_materials")
            missing = set(self.mesh.element_materials.tolist()) - set(self.mat)
            if missing:
                raise ValueError(f"no material defined for phase ids {sorted(missing)}")
        self.V0 = self.mesh.volume()
        self._pairs = None
        if self.bc_mode is BcMode.PERIODIC:
            self.periodic_pairs()

    @property
    def boundary_X(self):
        return self.mesh.nodes[self.mesh.boundary_nodes]

    def periodic_pairs(self):
        """Corner nodes and ``(follower, leader)`` mirror pairs.

        Followers lie on the right and top faces, leaders on the left and
        bottom faces; corners are excluded from the pairs.
        """
        if self._pairs is None:
            self._pairs = _find_periodic_pairs(self.mesh)
        return self._pairs


def _find_periodic_pairs(mesh):
    X = mesh.nodes
    bnd = mesh.boundary_nodes
    lo, hi = X[bnd].min(axis=0), X[bnd].max(axis=0)
    on = {
        "L": bnd[np.abs(X[bnd, 0] - lo[0]) <= PAIR_TOL],
        "R": bnd[np.abs(X[bnd, 0] - hi[0]) <= PAIR_TOL],
        "B": bnd[np.abs(X[bnd, 1] - lo[1]) <= PAIR_TOL],
        "T": bnd[np.abs(X[bnd, 1] - hi[1]) <= PAIR_TOL],
    }
    corners = []
    for cx, cy in [(lo[0], lo[1]), (hi[0], lo[1]), (hi[0], hi[1]), (lo[0], hi[1])]:
        hit = bnd[np.all(np.abs(X[bnd] - [cx, cy]) <= PAIR_TOL, axis=1)]
        if len(hit) != 1:
            raise MeshNotPeriodic(f"no unique corner node at ({cx:g}, {cy:g})")
        corners.append(int(hit[0]))
    n_face = sum(len(v) for v in on.values())
    if len(set(np.concatenate(list(on.values())).tolist())) != len(bnd) or n_face - 4 != len(bnd):
        raise MeshNotPeriodic("boundary is not an axis-aligned rectangle")
    pairs = []
    for plus, minus, axis in (("R", "L", 1), ("T", "B", 0)):
        followers = [n for n in on[plus] if n not in corners]
        leaders = [n for n in on[minus] if n not in corners]
        if len(followers) != len(leaders):
            raise MeshNotPeriodic(f"faces {plus} and {minus} carry different node counts")
        for n in followers:
            match = [m for m in leaders if abs(X[m, axis] - X[n, axis]) <= PAIR_TOL]
            if len(match) != 1:
                raise MeshNotPeriodic(f"node {n} on face {plus} has no mirror image on face {minus}")
            pairs.append((int(n), int(match[0])))
    return corners, pairs


def apply_macro_bc(rve, F_M):
    F_M = as_tensor2(F_M)
    J = det2(F_M)
    if not J > 0:
        raise InvalidDeformation(J)
    H = F_M - np.eye(2)
    X = rve.mesh.nodes
    cs = ConstraintSet()
    if rve.bc_mode is BcMode.AFFINE:
        for n in rve.mesh.boundary_nodes:
            u = H @ X[n]
            cs.dirichlet += [(int(n), 1, u[0]), (int(n), 2, u[1])]
        return cs
    corners, pairs = rve.periodic_pairs()
    for n in corners:
        u = H @ X[n]
        cs.dirichlet += [(n, 1, u[0]), (n, 2, u[1])]
    for fol, lead in pairs:
        off = H @ (X[fol] - X[lead])
        cs.ties += [(fol, lead, 1, off[0]), (fol, lead, 2, off[1])]
    return cs


@dataclass
class RveSolution:
    u: np.ndarray
    f_p: np.ndarray          # (n_boundary, 2) nodal forces, ordered as mesh.boundary_nodes
    F_M_applied: np.ndarray
    report: object = None


def solve_rve(rve, F_M, tol=1e-10, max_iter=25, u0=None):
    """Equilibrate the RVE under the macro deformation ``F_M``.

    Newton starts from ``u0`` if given, otherwise from the affine field
    ``(F_M - I) X``, which already satisfies both kinds of boundary data.
    Boundary forces are the internal nodal forces at boundary nodes, i.e.
    the reactions exerted by the surroundings (zero body force).
    """
    F_M = as_tensor2(F_M)
    cs = apply_macro_bc(rve, F_M)
    if u0 is None:
        u0 = (rve.mesh.nodes @ (F_M - np.eye(2)).T).ravel()
    u, report = newton_solve(rve.mesh, rve.mat, rve.quad, cs, tol=tol, max_iter=max_iter, u0=u0)
    f, _, _, _ = assemble(rve.mesh, u, rve.mat, rve.quad, need_tangent=False)
    f_p = f.reshape(-1, 2)[rve.mesh.boundary_nodes]
    return RveSolution(u=u, f_p=f_p, F_M_applied=F_M.copy(), report=report)


def homogenized_pk(sol, rve, shift=None):
    """Volume-averaged first P-K stress, sum_i f_p^(i) (x) X^(i) / V0."""
    X = rve.boundary_X
    if shift is not None:
        X = X + np.asarray(shift, dtype=float)
    return np.einsum("ia,ib->ab", sol.f_p, X) / rve.V0


@dataclass
class BoundaryPartition:
    p: np.ndarray
    f: np.ndarray


def boundary_partition(mesh):
    bnd = mesh.boundary_nodes
    p = np.stack([2 * bnd, 2 * bnd + 1], axis=1).ravel()
    interior = np.setdiff1d(np.arange(mesh.n_nodes), bnd)
    f = np.stack([2 * interior, 2 * interior + 1], axis=1).ravel()
    return BoundaryPartition(p=p, f=f)


@dataclass
class CondensedStiffness:
    K: np.ndarray
    X: np.ndarray = None     # (n_boundary, 2) reference coordinates


def condense_stiffness(K_full, part, X=None):
    """Schur complement ``K_pp - K_pf K_ff^-1 K_fp``.

    ``K_ff`` is factorized once and back-solved against all columns of
    ``K_fp``.
    """
    K_full = np.asarray(K_full, dtype=float)
    p, f = np.asarray(part.p), np.asarray(part.f)
    K_pp = K_full[np.ix_(p, p)]
    if len(f) == 0:
        return CondensedStiffness(K=K_pp.copy(), X=X)
    lu = lu_factor_checked(K_full[np.ix_(f, f)])
    S = sla.lu_solve(lu, K_full[np.ix_(f, p)])
    return CondensedStiffness(K=K_pp - K_full[np.ix_(p, f)] @ S, X=X)


def homogenized_tangent(cs, V0, formula="derived"):
    """Homogenized tangent C[a,b,c,d] = dP_ab/dF_cd from the condensed stiffness.

    ``formula="derived"`` pairs the two coordinate factors with the two
    boundary nodes of each stiffness block, ``(1/V0) sum_ij K^(ij)_ac
    X^(i)_b X^(j)_d``. ``formula="printed"`` uses ``X^(i)_d`` for the
    second factor instead; it is kept for comparison only and is not a
    consistent tangent.
    """
    n = len(cs.X)
    Kb = cs.K.reshape(n, 2, n, 2)
    if formula == "derived":
        return np.einsum("iajc,ib,jd->abcd", Kb, cs.X, cs.X) / V0
    if formula == "printed":
        return np.einsum("iajc,ib,id->abcd", Kb, cs.X, cs.X) / V0
    raise ValueError(f"unknown tangent formula {formula!r}")


def rve_response(rve, F_M, need_tangent=True, tol=1e-10, max_iter=25, u0=None):
    """Solve the cell and return ``(P_M, C_M or None, solution)``."""
    sol = solve_rve(rve, F_M, tol=tol, max_iter=max_iter, u0=u0)
    P = homogenized_pk(sol, rve)
    C = None
    if need_tangent:
        _, K, _, _ = assemble(rve.mesh, sol.u, rve.mat, rve.quad)
        cs = condense_stiffness(K, boundary_partition(rve.mesh), rve.boundary_X)
        C = homogenized_tangent(cs, rve.V0)
    return P, C, sol


def inclusion_rve(n=4, inclusion=(1, 3), matrix=None, stiff=None, bc_mode=BcMode.PERIODIC):
    """Square two-phase cell with a centred stiff square inclusion.

    Elements whose grid indices fall in ``[inclusion[0], inclusion[1])`` in
    both directions get phase 1. Defaults: matrix lambda=mu=1, inclusion 10x.
    """
    from .fem import structured_mesh

    mesh = structured_mesh(n, n)
    ids = []
    for j in range(n):
        for i in range(n):
            inside = inclusion[0] <= i < inclusion[1] and inclusion[0] <= j < inclusion[1]
            ids.append(1 if inside else 0)
    mesh.element_materials = np.array(ids, dtype=np.int64)
    mats = {0: matrix or MaterialParams(1.0, 1.0), 1: stiff or MaterialParams(10.0, 10.0)}
    return RveProblem(mesh=mesh, mat=mats, bc_mode=bc_mode)
