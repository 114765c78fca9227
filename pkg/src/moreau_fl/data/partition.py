"""Label-restricted heterogeneous MNIST partition.

Client ``i`` holds the labels ``(L*i + j) mod C`` for ``j < L`` (``L`` labels
per client), so with 20 clients and 2 labels each every digit is shared by 4
clients. Each client's total size is drawn uniformly from ``size_range`` and
split across its labels with symmetric Dirichlet(2) fractions; the draw is
repeated until no label is asked for more samples than it has. Samples a
label does not hand out are left over and recorded in ``meta``.
"""
from __future__ import annotations

import numpy as np

from ..rng import Domain, RngStream
from .dataset import ClientDataset, FederatedDataset

MAX_ATTEMPTS = 1000


class PartitionError(ValueError):
    pass


def _dirichlet2(stream: RngStream, rows: int, cols: int) -> np.ndarray:
    # Gamma(2, 1) is a sum of two unit exponentials.
    u = stream.uniform(rows * cols * 2).reshape(rows, cols, 2)
    g = -np.log1p(-u).sum(axis=2)
    return g / g.sum(axis=1, keepdims=True)


def _split_counts(totals: np.ndarray, fractions: np.ndarray) -> np.ndarray:
    counts = np.floor(fractions * totals[:, None]).astype(np.int64)
    counts[:, -1] = totals - counts[:, :-1].sum(axis=1)
    return counts


def stratified_split(labels: np.ndarray, stream: RngStream, train_frac: float = 0.75):
    """Indices ``(train, test)`` with each label split ``train_frac`` / rest."""
    train, test = [], []
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        idx = idx[stream.permutation(idx.size)]
        cut = int(round(train_frac * idx.size))
        train.append(idx[:cut])
        test.append(idx[cut:])
    return np.concatenate(train), np.concatenate(test)


def label_sets(N: int, labels_per_client: int, C: int) -> list[tuple[int, ...]]:
    return [tuple((labels_per_client * i + j) % C for j in range(labels_per_client)) for i in range(N)]


def partition_mnist(images: np.ndarray, labels: np.ndarray, N: int = 20, labels_per_client: int = 2,
                    size_range: tuple[int, int] = (1165, 3834), seed: int = 0) -> FederatedDataset:
    """Split a labelled pool across ``N`` clients, ``labels_per_client`` labels each.

    ``images`` are uint8 rows; features are scaled to [0, 1].
    """
    labels = np.asarray(labels, dtype=np.int64)
    C = int(labels.max()) + 1
    if C != 10 or np.unique(labels).size != 10:
        raise PartitionError("expected all 10 labels in the pool")
    if (N * labels_per_client) % C:
        raise PartitionError(f"N * labels_per_client = {N * labels_per_client} is not divisible by {C}")
    lo, hi = size_range
    if not 1 <= lo <= hi:
        raise PartitionError(f"invalid size range {size_range}")

    sets = label_sets(N, labels_per_client, C)
    available = np.bincount(labels, minlength=C)
    for attempt in range(MAX_ATTEMPTS):
        stream = RngStream(seed, Domain.PARTITION, client=0, round=attempt)
        totals = lo + np.floor(stream.uniform(N) * (hi - lo + 1)).astype(np.int64)
        counts = _split_counts(totals, _dirichlet2(stream, N, labels_per_client))
        demand = np.zeros(C, dtype=np.int64)
        for i, labs in enumerate(sets):
            for j, lab in enumerate(labs):
                demand[lab] += counts[i, j]
        if np.all(demand <= available):
            break
    else:
        raise PartitionError(f"no feasible size assignment in {MAX_ATTEMPTS} attempts")

    pools = {}
    for lab in range(C):
        idx = np.flatnonzero(labels == lab)
        pools[lab] = idx[RngStream(seed, Domain.PARTITION, client=1 + lab).permutation(idx.size)]
    cursor = np.zeros(C, dtype=np.int64)

    clients = []
    for i, labs in enumerate(sets):
        owned = []
        for j, lab in enumerate(labs):
            take = counts[i, j]
            owned.append(pools[lab][cursor[lab]:cursor[lab] + take])
            cursor[lab] += take
        owned = np.concatenate(owned)
        tr, te = stratified_split(labels[owned], RngStream(seed, Domain.SPLIT, client=i))
        tr_idx, te_idx = owned[tr], owned[te]
        clients.append(ClientDataset(
            images[tr_idx].astype(np.float64) / 255.0, labels[tr_idx],
            images[te_idx].astype(np.float64) / 255.0, labels[te_idx],
            extras={"source_index_train": tr_idx, "source_index_test": te_idx},
        ))
    leftover = {int(lab): int(available[lab] - cursor[lab]) for lab in range(C)}
    meta = {
        "kind": "mnist",
        "seed": int(seed),
        "params": {"N": N, "labels_per_client": labels_per_client, "size_range": [lo, hi],
                   "attempts": attempt + 1},
        "leftover": leftover,
    }
    return FederatedDataset(clients, d=images.shape[1], C=C, meta=meta)
