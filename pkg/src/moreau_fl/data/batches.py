"""Fresh mini-batches from an epoch-cycling shuffle.

A client's training set is read through an endless sequence of random
permutations (one per epoch). Batch number ``seq`` covers positions
``[seq * size, (seq + 1) * size)`` of that sequence, so a batch is a pure
function of ``(seed, domain, client, seq)``: clients that skip work in some
rounds still see exactly the batches they would have seen otherwise.
"""
from __future__ import annotations

import logging

import numpy as np

from ..models import Batch
from ..rng import Domain, RngStream

log = logging.getLogger(__name__)


class BatchSampler:
    def __init__(self, features: np.ndarray, labels: np.ndarray, size: int, seed: int,
                 client_id: int, domain: Domain = Domain.BATCH):
        if size < 1:
            raise ValueError("batch size must be at least 1")
        n = labels.shape[0]
        if size > n:
            log.warning("client %d: batch size %d exceeds %d training samples; clamping",
                        client_id, size, n)
            size = n
        self.features = features
        self.labels = labels
        self.size = size
        self.n = n
        self.seed = seed
        self.client_id = client_id
        self.domain = domain
        self._perms: dict[int, np.ndarray] = {}

    def _epoch(self, e: int) -> np.ndarray:
        perm = self._perms.get(e)
        if perm is None:
            if len(self._perms) > 4:
                self._perms.clear()
            perm = RngStream(self.seed, self.domain, client=self.client_id, round=e).permutation(self.n)
            self._perms[e] = perm
        return perm

    def indices(self, seq: int) -> np.ndarray:
        start = seq * self.size
        stop = start + self.size
        e0, p0 = divmod(start, self.n)
        e1, p1 = divmod(stop, self.n)
        if e0 == e1:
            return self._epoch(e0)[p0:p1]
        parts = [self._epoch(e0)[p0:]]
        parts += [self._epoch(e) for e in range(e0 + 1, e1)]
        if p1:
            parts.append(self._epoch(e1)[:p1])
        return np.concatenate(parts)

    def __call__(self, seq: int) -> Batch:
        idx = self.indices(seq)
        return Batch(self.features[idx], self.labels[idx])


def fresh_batch(client, size: int, seed: int, client_id: int, seq: int,
                domain: Domain = Domain.BATCH) -> Batch:
    """Batch number ``seq`` of ``client``'s training stream."""
    return BatchSampler(client.train_x, client.train_y, size, seed, client_id, domain)(seq)
