"""
Small 2D tensor algebra and the compressible neo-Hookean law.

Second-order tensors are ``(2, 2)`` arrays, fourth-order tensors are
``(2, 2, 2, 2)`` arrays indexed ``C[a, b, c, d] = dP_ab / dF_cd``. The
vectorized helpers (``neo_hookean_pk``, ``neo_hookean_tangent``) accept any
number of leading batch dimensions and are what the assembly routines use.

Plane strain is assumed throughout: the out-of-plane stretch is 1 and
``J = det F`` of the in-plane 2x2 block.
"""
from dataclasses import dataclass
import json

import numpy as np

from .errors import InvalidDeformation


I2 = np.eye(2)


@dataclass(frozen=True)
class MaterialParams:
    """Lame parameters of the neo-Hookean law (plane strain)."""

    lam: float
    mu: float

    def __post_init__(self):
        if not (np.isfinite(self.lam) and np.isfinite(self.mu)) or self.lam <= 0 or self.mu <= 0:
            raise ValueError(f"Lame parameters must be positive, got lambda={self.lam}, mu={self.mu}")

    def to_dict(self):
        return {"lambda": float(self.lam), "mu": float(self.mu)}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["lambda"]), float(d["mu"]))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class KinematicState:
    F: np.ndarray
    J: float
    b: np.ndarray


def as_tensor2(A):
    A = np.asarray(A, dtype=float)
    if A.shape == (4,):
        A = A.reshape(2, 2)
    if A.shape != (2, 2):
        raise ValueError(f"expected a 2x2 tensor, got shape {A.shape}")
    return A


def det2(F):
    F = np.asarray(F)
    return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]


def inv2(F):
    """Inverse of a batch of 2x2 matrices via the adjugate."""
    F = np.asarray(F, dtype=float)
    J = det2(F)
    adj = np.empty_like(F)
    adj[..., 0, 0] = F[..., 1, 1]
    adj[..., 1, 1] = F[..., 0, 0]
    adj[..., 0, 1] = -F[..., 0, 1]
    adj[..., 1, 0] = -F[..., 1, 0]
    return adj / J[..., None, None]


def rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def kinematics_from_F(F):
    F = as_tensor2(F)
    J = float(det2(F))
    if not J > 0.0:
        raise InvalidDeformation(J)
    b = F @ F.T
    # F F^T is symmetric in exact arithmetic; make it symmetric bitwise too
    b[1, 0] = b[0, 1]
    return KinematicState(F=F, J=J, b=b)


def cauchy_neo_hookean(state, mat):
    """sigma = lam/(2J) (J^2 - 1) I + mu/J (b - I)."""
    J = state.J
    return 0.5 * mat.lam / J * (J * J - 1.0) * I2 + mat.mu / J * (state.b - I2)


def first_pk_from_cauchy(sigma, F):
    """P = J sigma F^-T."""
    F = as_tensor2(F)
    J = float(det2(F))
    if not J > 0.0:
        raise InvalidDeformation(J)
    return J * as_tensor2(sigma) @ inv2(F).T


def first_pk(F, mat):
    """Composite map F -> P through the Cauchy stress."""
    return first_pk_from_cauchy(cauchy_neo_hookean(kinematics_from_F(F), mat), F)


def neo_hookean_pk(F, lam, mu):
    """Batched first Piola-Kirchhoff stress, P = lam/2 (J^2-1) F^-T + mu (F - F^-T).

    ``lam`` and ``mu`` broadcast against the batch shape of ``F``. No
    determinant check is made here; callers screen for inversion first.
    """
    F = np.asarray(F, dtype=float)
    J = det2(F)
    FinvT = np.swapaxes(inv2(F), -1, -2)
    lam = np.asarray(lam, dtype=float)[..., None, None]
    mu = np.asarray(mu, dtype=float)[..., None, None]
    return 0.5 * lam * (J * J - 1.0)[..., None, None] * FinvT + mu * (F - FinvT)


def neo_hookean_tangent(F, lam, mu):
    """Batched consistent tangent A[..., i, j, k, l] = dP_ij / dF_kl.

    A = lam J^2 Finv_ji Finv_lk + (mu - lam/2 (J^2-1)) Finv_jk Finv_li + mu d_ik d_jl
    """
    F = np.asarray(F, dtype=float)
    J = det2(F)
    Fi = inv2(F)
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    c1 = (lam * J * J)[..., None, None, None, None]
    c2 = (mu - 0.5 * lam * (J * J - 1.0))[..., None, None, None, None]
    FiT = np.swapaxes(Fi, -1, -2)
    A = c1 * FiT[..., :, :, None, None] * FiT[..., None, None, :, :]
    A = A + c2 * np.einsum("...jk,...li->...ijkl", Fi, Fi)
    A = A + mu[..., None, None, None, None] * np.einsum("ik,jl->ijkl", I2, I2)
    return A


def material_tangent(F, mat):
    F = as_tensor2(F)
    J = det2(F)
    if not J > 0.0:
        raise InvalidDeformation(J)
    return neo_hookean_tangent(F, mat.lam, mat.mu)


def material_tangent_fd(mat, F, h=None):
    """Central-difference tangent of the composite map F -> P.

    The default step is ``1e-6 * max(1, |F|)``. Used as a reference when
    checking analytic and homogenized tangents.
    """
    F = as_tensor2(F)
    if h is None:
        h = 1e-6 * max(1.0, float(np.linalg.norm(F)))
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    C = np.zeros((2, 2, 2, 2))
    for c in range(2):
        for d in range(2):
            dF = np.zeros((2, 2))
            dF[c, d] = h
            C[:, :, c, d] = (first_pk(F + dF, mat) - first_pk(F - dF, mat)) / (2.0 * h)
    return C


def double_contract(A, B):
    return float(np.tensordot(A, B, axes=2))
