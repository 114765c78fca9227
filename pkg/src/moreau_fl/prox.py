"""Inexact proximal solves and the Moreau-envelope gradient.

For a client objective ``f`` and regularization weight ``lam`` the inner
problem is::

    h(theta; w, D) = f(theta; D) + lam/2 * ||theta - w||^2

:func:`prox_solve` runs a few first-order steps on ``h`` with a fixed
mini-batch ``D``; ``lam * (w - theta)`` then stands in for the envelope
gradient.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import models
from .models import Batch, ModelSpec, Quadratic
from .params import as_params, check_layout, norm2_sq


class ProxMethod(str, enum.Enum):
    GD = "gd"
    NESTEROV = "nesterov"
    CLOSED_FORM = "closed_form"


class DivergenceError(RuntimeError):
    """A solver produced a non-finite value.

    ``context`` carries where it happened (step, client id, round, ...).
    """

    def __init__(self, message: str, **context):
        self.message = message
        self.context = dict(context)
        detail = ", ".join(f"{k}={v}" for k, v in self.context.items())
        super().__init__(f"{message} ({detail})" if detail else message)

    def with_context(self, **context) -> "DivergenceError":
        merged = {**self.context, **context}
        return DivergenceError(self.message, **merged)


@dataclass(frozen=True)
class ProxOptions:
    lam: float
    K: int = 5
    inner_lr: float = 0.1
    nu: float = 0.0
    method: ProxMethod = ProxMethod.GD
    kappa: Optional[float] = None  # condition estimate, Nesterov only

    def __post_init__(self):
        object.__setattr__(self, "method", ProxMethod(self.method))
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.inner_lr <= 0:
            raise ValueError("inner_lr must be positive")
        if self.nu < 0:
            raise ValueError("nu must be non-negative")
        if self.method is ProxMethod.NESTEROV and (self.kappa is None or self.kappa < 1):
            raise ValueError("Nesterov needs a condition estimate kappa >= 1")


class ProxResult:
    """Inner-solve output.

    ``final_h_grad_sq`` is the squared norm of the last evaluated gradient of
    ``h``; it is computed on first access since the round loop never reads it.
    """

    __slots__ = ("theta", "steps_used", "_gsq", "_grad")

    def __init__(self, theta: np.ndarray, steps_used: int, final_h_grad_sq: Optional[float] = None,
                 final_grad: Optional[np.ndarray] = None):
        self.theta = theta
        self.steps_used = steps_used
        self._gsq = final_h_grad_sq
        self._grad = final_grad

    @property
    def final_h_grad_sq(self) -> float:
        if self._gsq is None:
            self._gsq = norm2_sq(self._grad) if self._grad is not None else float("nan")
        return self._gsq

    def __repr__(self):
        return f"ProxResult(steps_used={self.steps_used}, final_h_grad_sq={self.final_h_grad_sq:.3g})"


def h_grad(spec: ModelSpec, theta, w, batch: Optional[Batch], lam: float) -> np.ndarray:
    """Gradient of ``f(theta; batch) + lam/2 ||theta - w||^2`` in ``theta``."""
    theta, w = as_params(theta), as_params(w)
    check_layout(theta, w)
    return models.grad(spec, theta, batch) + lam * (theta - w)


def h_value(spec: ModelSpec, theta, w, batch: Optional[Batch], lam: float) -> float:
    diff = as_params(theta) - as_params(w)
    return models.loss(spec, theta, batch) + 0.5 * lam * float(diff @ diff)


def closed_form_prox(spec: Quadratic, w, lam: float, batch: Optional[Batch] = None) -> np.ndarray:
    """Exact minimizer ``(A + lam I)^-1 (lam w + A a - mean noise)`` for quadratics."""
    w = as_params(w)
    rhs = lam * w + spec.matrix @ spec.a
    if spec.noisy and batch is not None:
        rhs = rhs - batch.features.mean(axis=0)
    if spec.A.ndim == 1:
        return rhs / (spec.A + lam)
    return np.linalg.solve(spec.A + lam * np.eye(w.size), rhs)


def prox_solve(spec: ModelSpec, w, batch: Optional[Batch], opts: ProxOptions,
               init=None) -> ProxResult:
    """Approximately minimize ``h(.; w, batch)`` starting from ``init`` (default ``w``).

    At most ``opts.K`` gradient evaluations; stops early once
    ``||grad h||^2 <= opts.nu``. Returns the last iterate.
    """
    w = as_params(w)
    if opts.method is ProxMethod.CLOSED_FORM:
        if not isinstance(spec, Quadratic):
            raise TypeError("closed-form prox is only available for Quadratic models")
        theta = closed_form_prox(spec, w, opts.lam, batch)
        return ProxResult(theta, 0, norm2_sq(h_grad(spec, theta, w, batch, opts.lam)))

    theta = (w if init is None else as_params(init)).copy()
    check_layout(theta, w)
    lr, lam, nu = opts.inner_lr, opts.lam, opts.nu
    check_tol = nu > 0 or math.isinf(nu)
    momentum = 0.0
    if opts.method is ProxMethod.NESTEROV:
        root = math.sqrt(opts.kappa)
        momentum = (root - 1.0) / (root + 1.0)
    prev = theta
    g = None
    for step in range(opts.K):
        if momentum:
            probe = theta + momentum * (theta - prev)
        else:
            probe = theta
        g = h_grad(spec, probe, w, batch, lam)
        if not np.isfinite(g).all():
            raise DivergenceError("non-finite inner gradient", step=step)
        if check_tol:
            gsq = norm2_sq(g)
            if gsq <= nu:
                # With momentum the probe point is the one that met the tolerance.
                return ProxResult(probe, step, gsq)
        prev = theta
        theta = probe - lr * g
    if not np.isfinite(theta).all():
        raise DivergenceError("non-finite inner iterate", step=opts.K)
    return ProxResult(theta, opts.K, final_grad=g)


def envelope_grad(w, theta_tilde, lam: float) -> np.ndarray:
    """``lam * (w - theta)``: the envelope gradient at an (approximate) prox point."""
    w, theta_tilde = as_params(w), as_params(theta_tilde)
    check_layout(w, theta_tilde)
    return lam * (w - theta_tilde)


def envelope_value(spec: ModelSpec, w, theta, batch: Optional[Batch], lam: float) -> float:
    """``F(w)`` evaluated at a supplied prox point ``theta``."""
    return h_value(spec, theta, w, batch, lam)


class Curvature(str, enum.Enum):
    STRONGLY_CONVEX = "strongly_convex"
    NONCONVEX_SMOOTH = "nonconvex_smooth"


def delta_bound(lam: float, curvature: float, gamma_f_sq: float, batch_size: int, nu: float,
                case: Curvature = Curvature.STRONGLY_CONVEX) -> float:
    """Mean-squared error bound for an inexact prox point.

    ``curvature`` is the strong-convexity modulus ``mu`` in the strongly convex
    case and the smoothness constant ``L`` in the nonconvex case (which needs
    ``lam > L``). Returns the bound on ``E ||theta_tilde - theta_hat||^2``.
    """
    case = Curvature(case)
    if case is Curvature.STRONGLY_CONVEX:
        gap = lam + curvature
        if gap <= 0:
            raise ValueError("need lam + mu > 0")
    else:
        gap = lam - curvature
        if gap <= 0:
            raise ValueError(f"nonconvex bound needs lam > L, got lam={lam}, L={curvature}")
    return 2.0 / gap**2 * (gamma_f_sq / batch_size + nu)
