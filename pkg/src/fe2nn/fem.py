"""
Total-Lagrangian finite elements on bilinear quadrilaterals.

Shared by the RVE and the macroscale. Everything is dense: the meshes this
package deals with have at most a few hundred degrees of freedom.

Degree-of-freedom numbering is node-major, ``dof = 2 * node + k`` with
``k = 0`` for the X1 component and ``k = 1`` for X2. Constraint records use
the 1-based component index (1 or 2) found in the file formats.
"""
from dataclasses import dataclass, field
from collections.abc import Mapping, Sequence
import warnings

import numpy as np
import scipy.linalg as sla

from .errors import (ConstraintError, ElementInversion, MeshError,
                     NonConvergence, SingularSystem)
from .tensors import MaterialParams, det2, neo_hookean_pk, neo_hookean_tangent

# parent-element corner coordinates, counter-clockwise
_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


# ---------------------------------------------------------------------------
# quadrature and shape functions

@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (n, 2) parent coordinates
    weights: np.ndarray  # (n,)

    def __post_init__(self):
        if not np.isclose(np.sum(self.weights), 4.0, rtol=0, atol=1e-12):
            raise ValueError("quadrature weights must sum to the parent area 4")

    def __len__(self):
        return len(self.weights)


def gauss_2x2():
    g = 1.0 / np.sqrt(3.0)
    pts = np.array([[-g, -g], [g, -g], [g, g], [-g, g]])
    return QuadratureRule(points=pts, weights=np.ones(4))


def shape_eval(xi, eta):
    """Bilinear shape functions and their parent-coordinate gradients.

    Returns
    -------
    N : ndarray, shape (4,)
    dN : ndarray, shape (4, 2)
        ``dN[I, 0] = dN_I/dxi``, ``dN[I, 1] = dN_I/deta``.
    """
    sx, sy = _CORNERS[:, 0], _CORNERS[:, 1]
    N = 0.25 * (1.0 + sx * xi) * (1.0 + sy * eta)
    dN = np.empty((4, 2))
    dN[:, 0] = 0.25 * sx * (1.0 + sy * eta)
    dN[:, 1] = 0.25 * sy * (1.0 + sx * xi)
    return N, dN


# ---------------------------------------------------------------------------
# mesh

@dataclass
class Mesh:
    """Quad4 mesh in the reference configuration.

    ``element_materials`` is an optional per-element phase id used by
    multi-phase RVEs; ``None`` means a single material.
    """

    nodes: np.ndarray
    elements: np.ndarray
    boundary_nodes: np.ndarray
    element_materials: np.ndarray = None
    _geometry: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 2)
        self.elements = np.asarray(self.elements, dtype=np.int64).reshape(-1, 4)
        self.boundary_nodes = np.asarray(self.boundary_nodes, dtype=np.int64).ravel()
        if self.element_materials is not None:
            self.element_materials = np.asarray(self.element_materials, dtype=np.int64).ravel()
        self.validate()

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_dofs(self):
        return 2 * len(self.nodes)

    def element_dofs(self):
        e = self.elements
        return np.stack([2 * e, 2 * e + 1], axis=-1).reshape(len(e), 8)

    def topological_boundary(self):
        """Node ids lying on edges that belong to exactly one element."""
        edges = {}
        for conn in self.elements:
            for k in range(4):
                key = tuple(sorted((int(conn[k]), int(conn[(k + 1) % 4]))))
                edges[key] = edges.get(key, 0) + 1
        return np.array(sorted({n for e, c in edges.items() if c == 1 for n in e}), dtype=np.int64)

    def validate(self):
        n = len(self.nodes)
        if len(self.elements) == 0:
            raise MeshError("mesh has no elements")
        if self.elements.min() < 0 or self.elements.max() >= n:
            raise MeshError("element connectivity references a missing node")
        for k, conn in enumerate(self.elements):
            if len(set(conn.tolist())) != 4:
                raise MeshError(f"element {k} repeats a node")
        if self.element_materials is not None and len(self.element_materials) != len(self.elements):
            raise MeshError("element_materials length differs from number of elements")
        quad = gauss_2x2()
        for (xi, eta) in quad.points:
            _, dN = shape_eval(xi, eta)
            Jac = np.einsum("eIi,Ij->eij", self.nodes[self.elements], dN)
            bad = np.flatnonzero(det2(Jac) <= 0.0)
            if bad.size:
                raise MeshError(f"element {bad[0]} has non-positive reference Jacobian "
                                "(connectivity must be counter-clockwise)")
        if len(set(self.boundary_nodes.tolist())) != len(self.boundary_nodes):
            raise MeshError("boundary_nodes contains duplicates")
        if set(self.boundary_nodes.tolist()) != set(self.topological_boundary().tolist()):
            raise MeshError("boundary_nodes differs from the topological boundary of the mesh")

    def geometry(self, quad):
        """Cached reference shape-function gradients and integration weights.

        Returns ``(N, dNdX, wdet)`` with shapes ``(g, 4)``, ``(e, g, 4, 2)``
        and ``(e, g)``.
        """
        key = id(quad)
        if key not in self._geometry:
            Xe = self.nodes[self.elements]
            Ns, dNdX, wdet = [], [], []
            for (xi, eta), w in zip(quad.points, quad.weights):
                N, dN = shape_eval(xi, eta)
                Jac = np.einsum("eIi,Ij->eij", Xe, dN)
                Jinv = np.linalg.inv(Jac)
                Ns.append(N)
                dNdX.append(np.einsum("Ij,eji->eIi", dN, Jinv))
                wdet.append(w * det2(Jac))
            self._geometry[key] = (quad, np.array(Ns), np.stack(dNdX, axis=1), np.stack(wdet, axis=1))
        _, N, dNdX, wdet = self._geometry[key]
        return N, dNdX, wdet

    def gauss_coordinates(self, quad):
        N, _, _ = self.geometry(quad)
        return np.einsum("gI,eIi->egi", N, self.nodes[self.elements])

    def element_areas(self):
        """Shoelace areas, independent of quadrature."""
        x = self.nodes[self.elements][:, :, 0]
        y = self.nodes[self.elements][:, :, 1]
        return 0.5 * np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)

    def volume(self):
        return float(np.sum(self.element_areas()))


def structured_mesh(nx, ny, width=1.0, height=1.0, origin=(0.0, 0.0)):
    """Regular ``nx`` by ``ny`` grid of quads.

    Nodes are numbered row by row from the origin; boundary nodes are listed
    counter-clockwise starting at the origin.
    """
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be at least 1")
    if width <= 0 or height <= 0:
        raise ValueError("mesh dimensions must be positive")
    xs = origin[0] + np.linspace(0.0, width, nx + 1)
    ys = origin[1] + np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return j * (nx + 1) + i

    elements = [[nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)]
                for j in range(ny) for i in range(nx)]
    boundary = ([nid(i, 0) for i in range(nx)] + [nid(nx, j) for j in range(ny)]
                + [nid(i, ny) for i in range(nx, 0, -1)] + [nid(0, j) for j in range(ny, 0, -1)])
    return Mesh(nodes=nodes, elements=elements, boundary_nodes=boundary)


# ---------------------------------------------------------------------------
# constitutive dispatch and assembly

def _material_arrays(mesh, mat):
    if isinstance(mat, MaterialParams):
        return mat.lam, mat.mu
    if isinstance(mat, (Mapping, Sequence)):
        if mesh.element_materials is None:
            raise MeshError("per-phase materials given but mesh has no element_materials")
        try:
            phases = [mat[int(k)] for k in mesh.element_materials]
        except (KeyError, IndexError) as err:
            raise MeshError(f"element references undefined material {err}") from None
        lam = np.array([p.lam for p in phases])[:, None]
        mu = np.array([p.mu for p in phases])[:, None]
        return lam, mu
    raise TypeError(f"unsupported material description {type(mat).__name__}")


def constitutive_response(mesh, mat, F, need_tangent=True):
    """Stress and tangent at every Gauss point.

    ``mat`` is a :class:`MaterialParams`, a phase-id indexed collection of
    them (with ``mesh.element_materials``), or a callable
    ``mat(F, need_tangent) -> (P, A)`` operating on the ``(e, g, 2, 2)`` array.
    """
    if callable(mat) and not isinstance(mat, MaterialParams):
        return mat(F, need_tangent)
    lam, mu = _material_arrays(mesh, mat)
    P = neo_hookean_pk(F, lam, mu)
    A = neo_hookean_tangent(F, lam, mu) if need_tangent else None
    return P, A


def deformation_gradients(mesh, u, quad):
    _, dNdX, _ = mesh.geometry(quad)
    ue = np.asarray(u, dtype=float).reshape(-1, 2)[mesh.elements]
    return np.eye(2) + np.einsum("eIi,egIj->egij", ue, dNdX)


def _check_inversion(F):
    J = det2(F)
    if np.any(~(J > 0.0)):
        e, g = np.argwhere(~(J > 0.0))[0]
        raise ElementInversion(e, J[e, g])


def assemble(mesh, u, mat, quad, need_tangent=True):
    """Internal force vector and (optionally) tangent stiffness.

    Returns ``(f_int, K, F, P)`` where ``F`` and ``P`` are the Gauss-point
    deformation gradients and stresses, shape ``(e, g, 2, 2)``.
    """
    _, dNdX, wdet = mesh.geometry(quad)
    F = deformation_gradients(mesh, u, quad)
    _check_inversion(F)
    P, A = constitutive_response(mesh, mat, F, need_tangent)
    dofs = mesh.element_dofs()
    fe = np.einsum("eg,egij,egIj->eIi", wdet, P, dNdX).reshape(len(dofs), 8)
    f = np.zeros(mesh.n_dofs)
    np.add.at(f, dofs, fe)
    K = None
    if need_tangent:
        Ke = np.einsum("eg,egIj,egijkl,egJl->eIiJk", wdet, dNdX, A, dNdX).reshape(len(dofs), 8, 8)
        K = np.zeros((mesh.n_dofs, mesh.n_dofs))
        np.add.at(K, (dofs[:, :, None], dofs[:, None, :]), Ke)
    return f, K, F, P


def assemble_internal_forces(mesh, u, mat, quad):
    return assemble(mesh, u, mat, quad, need_tangent=False)[0]


def assemble_tangent(mesh, u, mat, quad):
    return assemble(mesh, u, mat, quad)[1]


# ---------------------------------------------------------------------------
# constraints

@dataclass
class ConstraintSet:
    """Dirichlet values and tie constraints.

    ``dirichlet`` holds ``(node, dof, value)`` and ``ties`` holds
    ``(follower, leader, dof, offset)`` meaning
    ``u[follower, dof] = u[leader, dof] + offset``; ``dof`` is 1 or 2.
    """

    dirichlet: list = field(default_factory=list)
    ties: list = field(default_factory=list)

    def validate(self, n_dofs=None):
        fixed = set()
        for node, k, _ in self.dirichlet:
            d = _dof(node, k)
            if d in fixed:
                raise ConstraintError(f"dof {k} of node {node} fixed twice")
            fixed.add(d)
        followers, leaders = set(), set()
        for fol, lead, k, _ in self.ties:
            df, dl = _dof(fol, k), _dof(lead, k)
            if df == dl:
                raise ConstraintError(f"node {fol} tied to itself")
            if df in fixed:
                raise ConstraintError(f"dof {k} of node {fol} is both fixed and a tie follower")
            if df in followers:
                raise ConstraintError(f"dof {k} of node {fol} follows two leaders")
            followers.add(df)
            leaders.add(dl)
        if followers & leaders:
            raise ConstraintError("tie graph is cyclic or chained (a follower is also a leader)")
        if n_dofs is not None:
            every = fixed | followers | leaders
            if every and (min(every) < 0 or max(every) >= n_dofs):
                raise ConstraintError("constraint references a dof outside the model")


def _dof(node, k):
    if k not in (1, 2):
        raise ConstraintError(f"dof index must be 1 or 2, got {k}")
    return 2 * int(node) + (int(k) - 1)


class Elimination:
    """Substitution map ``u = T q + g`` from reduced unknowns ``q``.

    Dirichlet dofs drop out, tie followers are expressed through their
    leader. A follower whose leader is fixed becomes fixed itself.
    """

    def __init__(self, constraints, n_dofs):
        constraints.validate(n_dofs)
        g = np.zeros(n_dofs)
        fixed = np.zeros(n_dofs, dtype=bool)
        for node, k, value in constraints.dirichlet:
            d = _dof(node, k)
            g[d] = value
            fixed[d] = True
        follow = {}
        for fol, lead, k, offset in constraints.ties:
            follow[_dof(fol, k)] = (_dof(lead, k), float(offset))
        free = [d for d in range(n_dofs) if not fixed[d] and d not in follow]
        col = {d: j for j, d in enumerate(free)}
        T = np.zeros((n_dofs, len(free)))
        for d in free:
            T[d, col[d]] = 1.0
        for df, (dl, offset) in follow.items():
            if fixed[dl]:
                g[df] = g[dl] + offset
            else:
                T[df, col[dl]] = 1.0
                g[df] = offset
        self.T = T
        self.g = g
        self.free = np.array(free, dtype=np.int64)
        self.n_dofs = n_dofs

    @property
    def n_reduced(self):
        return self.T.shape[1]

    def expand(self, q):
        return self.T @ q + self.g

    def lift(self, u):
        """Project ``u`` onto the admissible set, keeping its free components."""
        return self.expand(np.asarray(u)[self.free])

    def reduce_vector(self, r):
        return self.T.T @ r

    def reduce_matrix(self, K):
        return self.T.T @ K @ self.T


@dataclass
class ReducedSystem:
    K: np.ndarray
    f: np.ndarray
    elimination: Elimination
    K_full: np.ndarray
    f_full: np.ndarray

    def recover(self, q):
        """Full solution and reactions ``K u - f`` of the linear system."""
        u = self.elimination.expand(q)
        return u, self.K_full @ u - self.f_full


def apply_constraints(K, f, constraints):
    """Eliminate constrained dofs from the linear system ``K u = f``."""
    K = np.asarray(K, dtype=float)
    f = np.asarray(f, dtype=float)
    el = Elimination(constraints, len(f))
    K_r = el.reduce_matrix(K)
    f_r = el.reduce_vector(f - K @ el.g)
    return ReducedSystem(K=K_r, f=f_r, elimination=el, K_full=K, f_full=f)


def solve_linear(K, rhs):
    """Dense LU solve with partial pivoting."""
    K = np.asarray(K, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    n = K.shape[0]
    if K.shape != (n, n) or rhs.shape[0] != n:
        raise ValueError(f"non-conforming system: K {K.shape}, rhs {rhs.shape}")
    if n == 0:
        return rhs.copy()
    return sla.lu_solve(lu_factor_checked(K), rhs)


def lu_factor_checked(K):
    with warnings.catch_warnings():
        # exact zero pivots are reported below with their index
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(K, check_finite=True)
    _check_pivots(lu)
    return lu, piv


def _check_pivots(lu):
    diag = np.abs(np.diag(lu))
    tol = lu.shape[0] * np.finfo(float).eps * max(diag.max(), np.abs(lu).max())
    small = np.flatnonzero(diag <= tol)
    if small.size:
        raise SingularSystem(small[0])


# ---------------------------------------------------------------------------
# Newton

@dataclass
class NewtonReport:
    converged: bool
    iterations: int
    residual_history: list

    def to_dict(self):
        return {"converged": self.converged, "iterations": self.iterations,
                "residual_history": [float(r) for r in self.residual_history]}

    @classmethod
    def from_dict(cls, d):
        return cls(bool(d["converged"]), int(d["iterations"]), [float(r) for r in d["residual_history"]])


def newton_solve(mesh, mat, quad, constraints, tol=1e-8, max_iter=20, f_ext=None, u0=None,
                 raise_on_failure=True):
    """Solve ``f_int(u) = f_ext`` subject to ``constraints``.

    The starting point ``u0`` (zero by default) is first lifted onto the
    constraint set. Each iteration is one tangent solve followed by a
    residual evaluation; convergence is the absolute 2-norm of the reduced
    residual. At least one iteration is always made.

    Returns
    -------
    u : ndarray
    report : NewtonReport
    """
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter at least 1")
    el = Elimination(constraints, mesh.n_dofs)
    f_ext = np.zeros(mesh.n_dofs) if f_ext is None else np.asarray(f_ext, dtype=float)
    u = el.lift(np.zeros(mesh.n_dofs) if u0 is None else np.asarray(u0, dtype=float))
    f, K, _, _ = assemble(mesh, u, mat, quad)
    history = []
    for it in range(1, max_iter + 1):
        r = el.reduce_vector(f - f_ext)
        dq = solve_linear(el.reduce_matrix(K), -r)
        u = u + el.T @ dq
        f, K, _, _ = assemble(mesh, u, mat, quad)
        norm = float(np.linalg.norm(el.reduce_vector(f - f_ext)))
        history.append(norm)
        if not np.isfinite(norm):
            break
        if norm <= tol:
            return u, NewtonReport(True, it, history)
    report = NewtonReport(False, len(history), history)
    if raise_on_failure:
        raise NonConvergence(history)
    return u, report
