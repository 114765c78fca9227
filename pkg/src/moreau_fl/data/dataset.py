from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


@dataclass
class ClientDataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    extras: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_train(self) -> int:
        return int(self.train_y.shape[0])

    @property
    def n_test(self) -> int:
        return int(self.test_y.shape[0])

    @property
    def size(self) -> int:
        return self.n_train + self.n_test


@dataclass
class FederatedDataset:
    """Per-client train/test splits plus the header describing how they were made."""

    clients: list[ClientDataset]
    d: int
    C: int
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.clients)

    def sizes(self) -> list[int]:
        return [c.size for c in self.clients]


def placeholder_clients(n: int, dim: int = 1) -> FederatedDataset:
    """Clients holding one dummy sample each, for models that ignore data."""
    clients = [
        ClientDataset(np.zeros((1, dim)), np.zeros(1, dtype=np.int64),
                      np.zeros((1, dim)), np.zeros(1, dtype=np.int64))
        for _ in range(n)
    ]
    return FederatedDataset(clients, d=dim, C=1, meta={"kind": "placeholder"})
