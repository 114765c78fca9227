"""Client objectives: loss, analytic gradient and prediction.

Three model kinds share one flat-parameter interface:

* :class:`MLR` - multinomial logistic regression with an l2 penalty on every
  parameter (strongly convex when ``reg > 0``).
* :class:`DNN2` - one hidden ReLU layer followed by a softmax layer
  (nonconvex).
* :class:`Quadratic` - ``0.5 (x - a)^T A (x - a)``, used as an oracle model
  because its proximal operator and Moreau envelope have closed forms.

Layouts (row-major)::

    MLR:   W (C x d), b (C)
    DNN2:  W1 (H x d), b1 (H), W2 (C x H), b2 (C)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .params import LayoutError, as_params, norm2_sq
from .rng import RngStream


@dataclass(frozen=True)
class Batch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0] or y.shape[0] < 1:
            raise ValueError(f"bad batch shapes: features {x.shape}, labels {y.shape}")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.shape[0]


def _log_softmax_terms(logits: np.ndarray):
    top = logits.max(axis=1, keepdims=True)
    shifted = logits - top
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return shifted - lse  # log-probabilities


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    logp = _log_softmax_terms(logits)
    return float(-logp[np.arange(labels.shape[0]), labels].mean())


def _ce_logit_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    probs = np.exp(_log_softmax_terms(logits))
    probs[np.arange(labels.shape[0]), labels] -= 1.0
    probs /= labels.shape[0]
    return probs


@dataclass(frozen=True)
class MLR:
    d: int
    C: int
    reg: float = 1e-3

    @property
    def n_params(self) -> int:
        return self.C * self.d + self.C

    def _unpack(self, params):
        cd = self.C * self.d
        return params[:cd].reshape(self.C, self.d), params[cd:]

    def scores(self, params, features):
        W, b = self._unpack(params)
        return features @ W.T + b

    def loss(self, params, batch):
        ce = _cross_entropy(self.scores(params, batch.features), batch.labels)
        return ce + 0.5 * self.reg * float(params @ params)

    def grad(self, params, batch):
        g_logits = _ce_logit_grad(self.scores(params, batch.features), batch.labels)
        out = np.empty_like(params)
        cd = self.C * self.d
        out[:cd] = (g_logits.T @ batch.features).reshape(-1)
        out[cd:] = g_logits.sum(axis=0)
        if self.reg:
            out += self.reg * params
        return out

    def check_batch(self, batch):
        if batch.features.shape[1] != self.d:
            raise LayoutError(f"MLR expects {self.d} features, got {batch.features.shape[1]}")


@dataclass(frozen=True)
class DNN2:
    d: int
    H: int
    C: int

    @property
    def n_params(self) -> int:
        return self.H * self.d + self.H + self.C * self.H + self.C

    def _unpack(self, params):
        d, H, C = self.d, self.H, self.C
        i = 0
        W1 = params[i:i + H * d].reshape(H, d); i += H * d
        b1 = params[i:i + H]; i += H
        W2 = params[i:i + C * H].reshape(C, H); i += C * H
        b2 = params[i:i + C]
        return W1, b1, W2, b2

    def _forward(self, params, features):
        W1, b1, W2, b2 = self._unpack(params)
        pre = features @ W1.T + b1
        hidden = np.maximum(pre, 0.0)
        return pre, hidden, hidden @ W2.T + b2

    def scores(self, params, features):
        return self._forward(params, features)[2]

    def loss(self, params, batch):
        return _cross_entropy(self.scores(params, batch.features), batch.labels)

    def grad(self, params, batch):
        W1, b1, W2, b2 = self._unpack(params)
        pre, hidden, logits = self._forward(params, batch.features)
        g_logits = _ce_logit_grad(logits, batch.labels)
        g_hidden = g_logits @ W2
        g_hidden[pre <= 0.0] = 0.0  # relu'(0) := 0
        d, H, C = self.d, self.H, self.C
        out = np.empty_like(params)
        i = 0
        out[i:i + H * d] = (g_hidden.T @ batch.features).reshape(-1); i += H * d
        out[i:i + H] = g_hidden.sum(axis=0); i += H
        out[i:i + C * H] = (g_logits.T @ hidden).reshape(-1); i += C * H
        out[i:i + C] = g_logits.sum(axis=0)
        return out

    def check_batch(self, batch):
        if batch.features.shape[1] != self.d:
            raise LayoutError(f"DNN2 expects {self.d} features, got {batch.features.shape[1]}")


@dataclass(frozen=True, eq=False)
class Quadratic:
    """``0.5 (x - a)^T A (x - a)``; ``A`` is a full SPD matrix or a diagonal vector.

    With ``noisy=True`` each batch row is treated as a per-sample linear
    perturbation ``xi`` and the loss gains ``mean(xi) . x``, which gives a
    stochastic gradient with controllable variance. Otherwise the batch is
    ignored.
    """

    A: np.ndarray
    a: np.ndarray
    noisy: bool = False
    _dense: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64).reshape(-1)
        A = np.asarray(self.A, dtype=np.float64)
        if A.ndim == 1 and A.shape != a.shape or A.ndim == 2 and A.shape != (a.size, a.size):
            raise LayoutError(f"curvature {A.shape} does not match center {a.shape}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "_dense", np.diag(A) if A.ndim == 1 else A)

    @property
    def n_params(self) -> int:
        return self.a.size

    @property
    def matrix(self) -> np.ndarray:
        return self._dense

    def _apply(self, v):
        return self.A * v if self.A.ndim == 1 else self.A @ v

    def _noise(self, batch):
        if self.noisy and batch is not None:
            return batch.features.mean(axis=0)
        return None

    def loss(self, params, batch=None):
        diff = params - self.a
        val = 0.5 * float(diff @ self._apply(diff))
        xi = self._noise(batch)
        return val if xi is None else val + float(xi @ params)

    def grad(self, params, batch=None):
        g = self._apply(params - self.a)
        xi = self._noise(batch)
        return g if xi is None else g + xi

    def scores(self, params, features):
        # No classes: every row scores class 0.
        return np.zeros((features.shape[0], 1))

    def check_batch(self, batch):
        if self.noisy and batch is not None and batch.features.shape[1] != self.a.size:
            raise LayoutError("noise rows must match the parameter dimension")


ModelSpec = Union[MLR, DNN2, Quadratic]


def _checked(spec, params, batch=None):
    params = as_params(params)
    if params.size != spec.n_params:
        raise LayoutError(f"{type(spec).__name__} has {spec.n_params} parameters, got {params.size}")
    if batch is not None:
        spec.check_batch(batch)
    return params


def loss(spec: ModelSpec, params, batch: Optional[Batch]) -> float:
    """Mini-batch average loss (plus regularizer for MLR)."""
    return spec.loss(_checked(spec, params, batch), batch)


def grad(spec: ModelSpec, params, batch: Optional[Batch]) -> np.ndarray:
    """Analytic gradient of :func:`loss` with respect to ``params``."""
    return spec.grad(_checked(spec, params, batch), batch)


def predict(spec: ModelSpec, params, features) -> np.ndarray:
    """Per-row argmax of class scores; ties go to the lowest class index."""
    params = _checked(spec, params)
    features = np.asarray(features, dtype=np.float64)
    if not isinstance(spec, Quadratic) and features.shape[1] != spec.d:
        raise LayoutError(f"expected {spec.d} features, got {features.shape[1]}")
    return np.argmax(spec.scores(params, features), axis=1)


def strong_convexity_modulus(spec: ModelSpec) -> Optional[float]:
    if isinstance(spec, MLR):
        return spec.reg
    if isinstance(spec, Quadratic):
        return float(np.min(spec.A) if spec.A.ndim == 1 else np.linalg.eigvalsh(spec.A)[0])
    return None


def init_params(spec: ModelSpec, stream: RngStream) -> np.ndarray:
    """Zeros for MLR/Quadratic; PyTorch-style uniform fan-in init for DNN2."""
    if not isinstance(spec, DNN2):
        return np.zeros(spec.n_params)
    d, H, C = spec.d, spec.H, spec.C
    b1 = 1.0 / np.sqrt(d)
    b2 = 1.0 / np.sqrt(H)
    bounds = np.concatenate([np.full(H * d + H, b1), np.full(C * H + C, b2)])
    return (2.0 * stream.uniform(spec.n_params) - 1.0) * bounds


@dataclass(frozen=True)
class DiversityDiagnostics:
    gamma_f_sq_hat: float
    sigma_f_sq_hat: float


def estimate_diversity(spec: Union[ModelSpec, Sequence[ModelSpec]], params, clients,
                       batch_size: int, n_draws: int, stream: RngStream) -> DiversityDiagnostics:
    """Empirical stochastic-gradient variance and client gradient diversity at ``params``.

    ``clients`` are objects with ``train_x``/``train_y``; ``spec`` may be a
    single model or one model per client.
    """
    clients = list(getattr(clients, "clients", clients))
    if not clients:
        raise ValueError("empty client set")
    if n_draws < 2:
        raise ValueError("n_draws must be at least 2")
    specs = list(spec) if isinstance(spec, (list, tuple)) else [spec] * len(clients)
    full_grads = []
    noise = []
    for sp, c in zip(specs, clients):
        full = Batch(c.train_x, c.train_y)
        g_full = grad(sp, params, full)
        full_grads.append(g_full)
        n = len(full)
        for _ in range(n_draws):
            if batch_size >= n:
                g = grad(sp, params, full)
            else:
                idx = stream.permutation(n)[:batch_size]
                g = grad(sp, params, Batch(c.train_x[idx], c.train_y[idx]))
            noise.append(norm2_sq(g - g_full))
    mean_grad = np.mean(full_grads, axis=0)
    sigma = np.mean([norm2_sq(g - mean_grad) for g in full_grads])
    return DiversityDiagnostics(float(np.mean(noise)), float(sigma))
