"""Offline sampling of deformation gradients and RVE-generated training data."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import hashlib
import io
import logging

import numpy as np

from .errors import DatasetGenerationFailed, Fe2Error, SamplingInfeasible
from .rve import homogenized_pk, solve_rve
from .tensors import det2

log = logging.getLogger(__name__)

CSV_HEADER = "F11,F12,F21,F22,P11,P12,P21,P22"


@dataclass
class SamplingSpec:
    n_samples: int = 500
    amplitude: float = 0.15
    min_det: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        if not 0 < self.min_det < 1:
            raise ValueError("min_det must lie in (0, 1)")


def sample_deformation_gradients(spec):
    """Identity first, then ``I + delta`` with delta uniform in the box, det-screened."""
    rng = np.random.default_rng(spec.seed)
    out = [np.eye(2)]
    drawn = rejected = 0
    while len(out) < spec.n_samples:
        F = np.eye(2) + rng.uniform(-spec.amplitude, spec.amplitude, size=(2, 2))
        drawn += 1
        if det2(F) < spec.min_det:
            rejected += 1
            if drawn >= 1000 and rejected > 0.99 * drawn:
                raise SamplingInfeasible(f"rejected {rejected} of {drawn} draws; amplitude "
                                         f"{spec.amplitude} is too large for min_det {spec.min_det}")
            continue
        out.append(F)
    return out


@dataclass
class Dataset:
    F: np.ndarray   # (n, 4), row-major flattened
    P: np.ndarray   # (n, 4)

    def __post_init__(self):
        self.F = np.asarray(self.F, dtype=float).reshape(-1, 4)
        self.P = np.asarray(self.P, dtype=float).reshape(-1, 4)
        if len(self.F) != len(self.P):
            raise ValueError("F and P row counts differ")
        dets = self.F[:, 0] * self.F[:, 3] - self.F[:, 1] * self.F[:, 2]
        if np.any(~(dets > 0)):
            raise ValueError(f"dataset row {int(np.argmin(dets))} has non-positive det F")
        if len(np.unique(self.F, axis=0)) != len(self.F):
            raise ValueError("dataset contains duplicate F rows")

    def __len__(self):
        return len(self.F)

    def split(self, holdout=0.2, seed=0):
        idx = np.random.default_rng(seed).permutation(len(self))
        n_test = int(round(holdout * len(self)))
        test, train = idx[:n_test], idx[n_test:]
        return Dataset(self.F[train], self.P[train]), Dataset(self.F[test], self.P[test])

    def to_csv(self):
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for f, p in zip(self.F, self.P):
            buf.write(",".join(f"{v:.17g}" for v in (*f, *p)) + "\n")
        return buf.getvalue()

    def save(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text):
        lines = text.splitlines()
        if not lines or lines[0].strip() != CSV_HEADER:
            raise ValueError(f"dataset header must be {CSV_HEADER!r}")
        rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:] if ln.strip()])
        if rows.size == 0:
            return cls(np.zeros((0, 4)), np.zeros((0, 4)))
        if rows.shape[1] != 8:
            raise ValueError("dataset rows must have 8 columns")
        return cls(rows[:, :4], rows[:, 4:])

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_csv(fh.read())

    def digest(self):
        return hashlib.sha256(self.to_csv().encode()).hexdigest()


def _solve_one(rve, F, tol, max_iter):
    try:
        return homogenized_pk(solve_rve(rve, F, tol=tol, max_iter=max_iter), rve), None
    except Fe2Error as err:
        return None, str(err)


def generate_dataset(rve, samples, tol=1e-10, max_iter=25, threads=1, max_failure_rate=0.1):
    """Solve the RVE for every sample and collect ``(F, P_M)`` rows.

    Repeated samples are solved once. Failed solves are skipped; more than
    ``max_failure_rate`` failures raises :class:`DatasetGenerationFailed`.

    Returns
    -------
    dataset : Dataset
        Rows in input order.
    failures : list of (index, message)
    """
    samples = [np.asarray(F, dtype=float).reshape(2, 2) for F in samples]
    seen, unique = set(), []
    for k, F in enumerate(samples):
        key = F.tobytes()
        if key not in seen:
            seen.add(key)
            unique.append(k)
    if len(unique) < len(samples):
        log.warning("dropping %d duplicate deformation gradients", len(samples) - len(unique))

    def work(k):
        return _solve_one(rve, samples[k], tol, max_iter)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, unique))
    else:
        results = [work(k) for k in unique]

    failures = [(k, msg) for k, (P, msg) in zip(unique, results) if P is None]
    if len(failures) > max_failure_rate * len(unique):
        raise DatasetGenerationFailed(failures, len(unique))
    if failures:
        log.warning("%d of %d RVE solves failed and were skipped", len(failures), len(unique))
    rows = [(samples[k].ravel(), P.ravel()) for k, (P, _) in zip(unique, results) if P is not None]
    F = np.array([r[0] for r in rows]).reshape(-1, 4)
    P = np.array([r[1] for r in rows]).reshape(-1, 4)
    return Dataset(F, P), failures
