"""
Feed-forward network surrogate for the RVE map F_M -> P_M.

Hidden layers use the symmetric sigmoid ``2 / (1 + exp(-2x)) - 1``; the
output layer is linear. Inputs and outputs pass through per-component
affine normalizations fitted on the training data. Training is
Levenberg-Marquardt on the mean squared error in normalized units, with
the residual Jacobian built by reverse-mode sweeps over the batch.
"""
from dataclasses import dataclass, field
import hashlib
import json

import numpy as np
import scipy.linalg as sla

from .errors import EmptyDataset, InvalidDeformation, ShapeError, TrainingDiverged
from .tensors import as_tensor2, det2


def activation(x):
    """Symmetric sigmoid 2/(1+e^{-2x}) - 1, evaluated as tanh (same function)."""
    return np.tanh(x)


def activation_deriv_from_value(a):
    return 1.0 - a * a


@dataclass
class Normalization:
    shift: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.shift = np.asarray(self.shift, dtype=float).ravel()
        self.scale = np.asarray(self.scale, dtype=float).ravel()
        if self.shift.shape != self.scale.shape:
            raise ShapeError("normalization shift and scale differ in length")
        if np.any(~(self.scale > 0)):
            raise ValueError("normalization scales must be strictly positive")

    @classmethod
    def identity(cls, n):
        return cls(np.zeros(n), np.ones(n))

    @classmethod
    def fit(cls, values):
        """Zero mean and unit range per column; constant columns get scale 1."""
        values = np.asarray(values, dtype=float)
        span = values.max(axis=0) - values.min(axis=0)
        return cls(values.mean(axis=0), np.where(span > 0, span, 1.0))

    def normalize(self, v):
        return (v - self.shift) / self.scale

    def denormalize(self, v):
        return v * self.scale + self.shift

    def to_dict(self):
        return {"shift": self.shift.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["shift"], d["scale"])


@dataclass
class MlpNetwork:
    layer_sizes: tuple
    weights: list            # weights[k] has shape (layer_sizes[k+1], layer_sizes[k])
    biases: list
    input_norm: Normalization = None
    output_norm: Normalization = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        self.weights = [np.asarray(w, dtype=float).reshape(self.layer_sizes[k + 1], self.layer_sizes[k])
                        for k, w in enumerate(self.weights)]
        self.biases = [np.asarray(b, dtype=float).ravel() for b in self.biases]
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("number of weight/bias arrays does not match layer_sizes")
        for k, b in enumerate(self.biases):
            if b.shape != (self.layer_sizes[k + 1],):
                raise ShapeError(f"bias {k} has shape {b.shape}")
        if self.input_norm is None:
            self.input_norm = Normalization.identity(self.n_in)
        if self.output_norm is None:
            self.output_norm = Normalization.identity(self.n_out)
        if len(self.input_norm.shift) != self.n_in or len(self.output_norm.shift) != self.n_out:
            raise ShapeError("normalization length does not match network width")

    @property
    def n_in(self):
        return self.layer_sizes[0]

    @property
    def n_out(self):
        return self.layer_sizes[-1]

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    # parameter vector: per layer, row-major weights followed by biases
    def params(self):
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def with_params(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got {theta.shape}")
        weights, biases, k = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(theta[k:k + w.size].reshape(w.shape))
            k += w.size
            biases.append(theta[k:k + b.size].copy())
            k += b.size
        return MlpNetwork(self.layer_sizes, weights, biases, self.input_norm, self.output_norm, dict(self.meta))

    def copy(self):
        return self.with_params(self.params())

    def _layers(self, z):
        """Activations of every layer for normalized inputs ``z`` (batch, n_in)."""
        acts = [z]
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            s = acts[-1] @ w.T + b
            acts.append(s if k == last else activation(s))
        return acts

    def forward_normalized(self, z):
        return self._layers(np.atleast_2d(z))[-1]

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"network expects {self.n_in} inputs, got {x.shape[-1]}")
        y = self.output_norm.denormalize(self.forward_normalized(self.input_norm.normalize(np.atleast_2d(x))))
        return y[0] if single else y

    def param_jacobian(self, z):
        """d(normalized output)/d(params), shape (batch, n_out, n_params)."""
        acts = self._layers(z)
        batch = len(z)
        L = len(self.weights)
        blocks = [None] * L
        # delta[k] = d out / d s_k with shape (batch, n_out, width_k), seeded with identity
        delta = np.broadcast_to(np.eye(self.n_out), (batch, self.n_out, self.n_out))
        for k in range(L - 1, -1, -1):
            a_prev = acts[k]
            dW = delta[:, :, :, None] * a_prev[:, None, None, :]
            blocks[k] = np.concatenate([dW.reshape(batch, self.n_out, -1), delta], axis=2)
            if k > 0:
                delta = (delta @ self.weights[k]) * activation_deriv_from_value(acts[k])[:, None, :]
        return np.concatenate(blocks, axis=2)

    def input_jacobian(self, x):
        """Reverse-mode d(output)/d(input) in physical units, shape (n_out, n_in)."""
        z = self.input_norm.normalize(np.atleast_2d(np.asarray(x, dtype=float)))
        acts = self._layers(z)
        delta = np.eye(self.n_out)
        for k in range(len(self.weights) - 1, -1, -1):
            if k < len(self.weights) - 1:
                delta = delta * activation_deriv_from_value(acts[k + 1])[0][None, :]
            delta = delta @ self.weights[k]
        return self.output_norm.scale[:, None] * delta / self.input_norm.scale[None, :]

    # serialization -------------------------------------------------------
    def to_dict(self):
        return {
            "layer_sizes": list(self.layer_sizes),
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "input_norm": self.input_norm.to_dict(),
            "output_norm": self.output_norm.to_dict(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["layer_sizes"], d["weights"], d["biases"],
                   Normalization.from_dict(d["input_norm"]), Normalization.from_dict(d["output_norm"]),
                   dict(d.get("meta", {})))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def init_nguyen_widrow(layer_sizes, seed=0):
    """Nguyen-Widrow initialization.

    Each hidden layer's rows are drawn uniform in [-1, 1] and rescaled to
    norm ``0.7 * H**(1/n)`` (H units, n inputs to the layer); biases are
    evenly spaced over ``[-beta, beta]`` with the sign of the row's first
    weight. The linear output layer is drawn uniform in [-0.5, 0.5].
    """
    sizes = [int(n) for n in layer_sizes]
    if len(sizes) < 3:
        raise ValueError("need at least one hidden layer")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for k in range(len(sizes) - 1):
        n, H = sizes[k], sizes[k + 1]
        if k < len(sizes) - 2:
            beta = 0.7 * H ** (1.0 / n)
            w = rng.uniform(-1.0, 1.0, size=(H, n))
            w *= beta / np.linalg.norm(w, axis=1, keepdims=True)
            b = beta * np.linspace(-1.0, 1.0, H) * np.sign(w[:, 0]) if H > 1 else np.zeros(1)
        else:
            w = rng.uniform(-0.5, 0.5, size=(H, n))
            b = rng.uniform(-0.5, 0.5, size=H)
        weights.append(w)
        biases.append(b)
    return MlpNetwork(tuple(sizes), weights, biases)


@dataclass
class TrainingConfig:
    max_iterations: int = 500
    target_mse: float = 1e-8
    lm_lambda0: float = 1e-3
    lm_lambda_factor: float = 10.0
    lm_lambda_max: float = 1e10
    seed: int = 0

    def __post_init__(self):
        if self.target_mse <= 0 or self.lm_lambda0 <= 0 or self.lm_lambda_factor <= 1:
            raise ValueError("invalid training configuration")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")


@dataclass
class TrainingReport:
    final_mse: float
    iterations_used: int
    mse_history: list
    stop_reason: str = ""


def _mse(net, z, t):
    r = net.forward_normalized(z) - t
    return float(np.mean(r * r)), r


def train_lm(net, inputs, targets, cfg=None):
    """Levenberg-Marquardt fit of ``net`` to ``(inputs, targets)``.

    Inputs and targets are in physical units and mapped through the
    network's own normalizations, which must already be set. Each iteration
    evaluates the Jacobian once and then raises the damping until a step
    lowers the error (accept, damping divided by the factor) or the damping
    exceeds ``lm_lambda_max`` (stop).

    Returns
    -------
    net : MlpNetwork
        Trained copy; the argument is not modified.
    report : TrainingReport
    """
    cfg = cfg or TrainingConfig()
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if inputs.size == 0 or len(inputs) == 0:
        raise EmptyDataset("no training samples")
    if inputs.shape[1] != net.n_in or targets.shape[1] != net.n_out or len(inputs) != len(targets):
        raise ShapeError("training data does not match network dimensions")
    z = net.input_norm.normalize(inputs)
    t = net.output_norm.normalize(targets)
    net = net.copy()
    theta = net.params()
    mse, r = _mse(net, z, t)
    if not np.isfinite(mse):
        raise TrainingDiverged("initial loss is not finite", TrainingReport(mse, 0, [mse], "diverged"))
    history = [mse]
    lam = cfg.lm_lambda0
    reason = "max_iterations"
    it = 0
    while it < cfg.max_iterations:
        if mse <= cfg.target_mse:
            reason = "target_mse"
            break
        Jac = net.param_jacobian(z).reshape(-1, len(theta))
        g = Jac.T @ r.ravel()
        H = Jac.T @ Jac
        accepted = False
        while lam <= cfg.lm_lambda_max:
            A = H + lam * np.eye(len(theta))
            try:
                step = sla.solve(A, -g, assume_a="pos")
            except (sla.LinAlgError, ValueError):
                lam *= cfg.lm_lambda_factor
                continue
            trial = net.with_params(theta + step)
            mse_new, r_new = _mse(trial, z, t)
            if np.isfinite(mse_new) and mse_new < mse:
                net, theta, mse, r = trial, theta + step, mse_new, r_new
                lam /= cfg.lm_lambda_factor
                accepted = True
                break
            lam *= cfg.lm_lambda_factor
        it += 1
        if not accepted:
            reason = "lambda_overflow"
            break
        if not np.isfinite(mse):
            raise TrainingDiverged("loss became non-finite", TrainingReport(mse, it, history, "diverged"))
        history.append(mse)
    else:
        if mse <= cfg.target_mse:
            reason = "target_mse"
    net.meta = dict(net.meta, final_mse=mse, seed=cfg.seed)
    return net, TrainingReport(final_mse=mse, iterations_used=it, mse_history=history, stop_reason=reason)


def surrogate_pk(net, F_M):
    F_M = as_tensor2(F_M)
    J = det2(F_M)
    if not J > 0:
        raise InvalidDeformation(J)
    return net.forward(F_M.ravel()).reshape(2, 2)


def surrogate_tangent(net, F_M, h=None):
    """Central-difference tangent dP/dF of the surrogate.

    The step for component ``k`` defaults to ``1e-5`` times the input
    normalization scale of that component.
    """
    F_M = as_tensor2(F_M)
    hs = 1e-5 * net.input_norm.scale if h is None else np.full(4, float(h))
    C = np.zeros((2, 2, 2, 2))
    for k in range(4):
        c, d = divmod(k, 2)
        dF = np.zeros((2, 2))
        dF[c, d] = hs[k]
        C[:, :, c, d] = (surrogate_pk(net, F_M + dF) - surrogate_pk(net, F_M - dF)) / (2.0 * hs[k])
    return C


def fit_surrogate(F, P, hidden=(16, 16), cfg=None, amplitude=None):
    """Initialize, fit normalizations and train a 4-...-4 network on (F, P) rows."""
    cfg = cfg or TrainingConfig(target_mse=1e-7)
    F = np.asarray(F, dtype=float).reshape(-1, 4)
    P = np.asarray(P, dtype=float).reshape(-1, 4)
    net = init_nguyen_widrow([4, *hidden, 4], seed=cfg.seed)
    net.input_norm = Normalization.fit(F)
    net.output_norm = Normalization.fit(P)
    if amplitude is not None:
        net.meta["amplitude"] = float(amplitude)
    return train_lm(net, F, P, cfg)
