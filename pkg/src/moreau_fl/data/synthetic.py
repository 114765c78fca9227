"""Synthetic non-i.i.d. classification data with tunable heterogeneity.

For client ``k``::

    u_k ~ N(0, alpha_bar^2)       W_k, b_k entries ~ N(u_k, 1)
    B_k ~ N(0, beta_bar^2)        v_k[j] ~ N(B_k, 1)
    x ~ N(v_k, diag(j^-1.2))      y = argmax(W_k x + b_k)

``alpha_bar`` moves the client models apart, ``beta_bar`` the client input
distributions. Client sizes follow a clipped lognormal:
``clip(round(exp(N(4, 2))) + 50, size_min, size_max)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..rng import Domain, RngStream, draw_normal
from .dataset import ClientDataset, FederatedDataset


@dataclass(frozen=True)
class SyntheticParams:
    alpha_bar: float = 0.5
    beta_bar: float = 0.5
    N: int = 100
    d: int = 60
    C: int = 10
    size_min: int = 250
    size_max: int = 25810

    def __post_init__(self):
        if self.alpha_bar < 0 or self.beta_bar < 0:
            raise ValueError("alpha_bar and beta_bar must be non-negative")
        if not 1 <= self.size_min <= self.size_max:
            raise ValueError("need 1 <= size_min <= size_max")
        if self.N < 1:
            raise ValueError("need at least one client")


def client_sizes(params: SyntheticParams, seed: int) -> np.ndarray:
    z = draw_normal(4.0, 2.0, params.N, RngStream(seed, Domain.DATA_GEN, client=0))
    raw = np.round(np.exp(np.minimum(z, 50.0))) + 50
    return np.clip(raw, params.size_min, params.size_max).astype(np.int64)


def generate_synthetic(params: SyntheticParams, seed: int = 0) -> FederatedDataset:
    d, C = params.d, params.C
    cov_sqrt = np.arange(1, d + 1, dtype=np.float64) ** -0.6
    sizes = client_sizes(params, seed)
    clients = []
    for k, n in enumerate(sizes):
        model_stream = RngStream(seed, Domain.DATA_GEN, client=k + 1, round=0)
        u = draw_normal(0.0, params.alpha_bar, 1, model_stream)[0]
        W = draw_normal(u, 1.0, C * d, model_stream).reshape(C, d)
        b = draw_normal(u, 1.0, C, model_stream)

        data_stream = RngStream(seed, Domain.DATA_GEN, client=k + 1, round=1)
        B = draw_normal(0.0, params.beta_bar, 1, data_stream)[0]
        v = draw_normal(B, 1.0, d, data_stream)
        x = v + data_stream.normal(int(n) * d).reshape(int(n), d) * cov_sqrt
        y = np.argmax(x @ W.T + b, axis=1)

        order = RngStream(seed, Domain.SPLIT, client=k).permutation(int(n))
        cut = int(round(0.75 * n))
        tr, te = order[:cut], order[cut:]
        clients.append(ClientDataset(x[tr], y[tr], x[te], y[te],
                                     extras={"W": W, "b": b, "v": v}))
    meta = {"kind": "synthetic", "seed": int(seed), "params": asdict(params)}
    return FederatedDataset(clients, d=d, C=C, meta=meta)
