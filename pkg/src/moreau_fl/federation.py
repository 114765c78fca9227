"""Client local updates, server aggregation and the round loop.

Every round the server broadcasts ``w_t``; clients run ``R`` local rounds of
their algorithm's update; the server uniformly samples ``S`` clients and mixes
their average into the global model with weight ``beta``::

    w_{t+1} = (1 - beta) w_t + beta * mean_{i in S_t} w_{i,R}

All randomness comes from keyed streams, so results do not depend on the
order (or the thread) in which clients are processed.
"""
from __future__ import annotations

import enum
import itertools
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import models
from .data.batches import BatchSampler
from .data.dataset import FederatedDataset
from .models import Batch, ModelSpec
from .params import as_params, mean_of, norm2_sq
from .prox import DivergenceError, ProxOptions, envelope_grad, prox_solve
from .rng import Domain, RngStream, sample_without_replacement

BatchStream = Callable[[int], Batch]


class PersonalEval(str, enum.Enum):
    LOCAL_PASS = "local_pass"
    PROX_REFRESH = "prox_refresh"


class Hessian(str, enum.Enum):
    FIRST_ORDER = "first_order"
    HVP = "hvp"


@dataclass(frozen=True)
class PFedMe:
    lam: float
    eta: float
    K: int = 5
    inner_lr: float = 0.1
    nu: float = 0.0
    method: str = "gd"

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be non-negative")

    @property
    def prox_options(self) -> ProxOptions:
        return ProxOptions(lam=self.lam, K=self.K, inner_lr=self.inner_lr, nu=self.nu,
                           method=self.method)


@dataclass(frozen=True)
class FedAvg:
    eta: float


@dataclass(frozen=True)
class PerFedAvg:
    alpha_hat: float
    beta_hat: float
    hessian: Hessian = Hessian.FIRST_ORDER

    def __post_init__(self):
        object.__setattr__(self, "hessian", Hessian(self.hessian))
        if self.alpha_hat < 0 or self.beta_hat <= 0:
            raise ValueError("Per-FedAvg needs alpha_hat >= 0 and beta_hat > 0")


AlgorithmKind = Union[PFedMe, FedAvg, PerFedAvg]
# Batch slots consumed per local round.
_SLOTS = {PFedMe: 1, FedAvg: 1, PerFedAvg: 3}


@dataclass
class ClientState:
    id: int
    local_w: np.ndarray
    personalized_theta: Optional[np.ndarray] = None


@dataclass(frozen=True)
class ServerState:
    global_w: np.ndarray
    round: int = 0


@dataclass(frozen=True)
class RoundReport:
    round: int
    global_test_acc: float
    personalized_test_acc: float
    global_train_loss: float
    personalized_train_loss: float
    wall_ms: int = 0


def _check_finite(vec, what, **context):
    if not np.isfinite(vec).all():
        raise DivergenceError(f"non-finite {what}", **context)


def local_update_pfedme(spec: ModelSpec, client: ClientState, R: int, opts: ProxOptions,
                        eta: float, batch_stream: BatchStream) -> ClientState:
    """``R`` local rounds of ``w <- w - eta * lam * (w - prox(w))``, fresh batch each round."""
    w = client.local_w.copy()
    theta = client.personalized_theta
    for r in range(R):
        batch = batch_stream(r)
        try:
            theta = prox_solve(spec, w, batch, opts, init=w).theta
        except DivergenceError as err:
            raise err.with_context(client=client.id, local_round=r) from None
        w = w - eta * envelope_grad(w, theta, opts.lam)
        _check_finite(w, "local model", client=client.id, local_round=r)
    return replace(client, local_w=w, personalized_theta=theta)


def local_update_fedavg(spec: ModelSpec, client: ClientState, R: int, eta: float,
                        batch_stream: BatchStream) -> ClientState:
    w = client.local_w.copy()
    for r in range(R):
        g = models.grad(spec, w, batch_stream(r))
        _check_finite(g, "gradient", client=client.id, local_round=r)
        w = w - eta * g
    return replace(client, local_w=w)


def hessian_vector_product(spec: ModelSpec, w: np.ndarray, v: np.ndarray, batch: Batch) -> np.ndarray:
    """Central-difference ``H(w) v`` with step ``1e-4 (1 + ||w||)`` along ``v / ||v||``."""
    vnorm = np.sqrt(norm2_sq(v))
    if vnorm == 0.0:
        return np.zeros_like(v)
    h = 1e-4 * (1.0 + np.sqrt(norm2_sq(w)))
    direction = v / vnorm
    g_plus = models.grad(spec, w + h * direction, batch)
    g_minus = models.grad(spec, w - h * direction, batch)
    return (g_plus - g_minus) * (vnorm / (2.0 * h))


def local_update_perfedavg(spec: ModelSpec, client: ClientState, R: int, alpha_hat: float,
                           beta_hat: float, hessian: Hessian, batch_stream: BatchStream) -> ClientState:
    """``R`` MAML-style meta-steps; local round ``r`` uses batch slots ``3r``, ``3r+1``, ``3r+2``."""
    hessian = Hessian(hessian)
    w = client.local_w.copy()
    for r in range(R):
        inner = w - alpha_hat * models.grad(spec, w, batch_stream(3 * r))
        outer = models.grad(spec, inner, batch_stream(3 * r + 1))
        if hessian is Hessian.HVP and alpha_hat:
            outer = outer - alpha_hat * hessian_vector_product(spec, w, outer, batch_stream(3 * r + 2))
        _check_finite(outer, "meta-gradient", client=client.id, local_round=r)
        w = w - beta_hat * outer
    return replace(client, local_w=w)


def aggregate(server: ServerState, locals_: Sequence[np.ndarray], beta: float) -> ServerState:
    if len(locals_) == 0:
        raise ValueError("cannot aggregate an empty set of local models")
    avg = mean_of(locals_)
    w = (1.0 - beta) * server.global_w + beta * avg
    return ServerState(w, server.round + 1)


def sampling_variance_identity_check(grads: Sequence[np.ndarray], S: int) -> tuple[float, float]:
    """Client-sampling variance of the subset mean, by enumeration and in closed form.

    Returns ``(lhs, rhs)`` where ``lhs`` averages ``||mean_{i in S} g_i - mean g||^2``
    over every size-``S`` subset and ``rhs = (N/S - 1)/(N - 1) * mean ||g_i - mean g||^2``.
    """
    grads = [as_params(g) for g in grads]
    N = len(grads)
    if not 1 <= S <= N:
        raise ValueError(f"need 1 <= S <= N, got S={S}, N={N}")
    full = mean_of(grads)
    subsets = list(itertools.combinations(range(N), S))
    lhs = float(np.mean([norm2_sq(mean_of([grads[i] for i in sub]) - full) for sub in subsets]))
    if S == N:
        return lhs, 0.0
    spread = float(np.mean([norm2_sq(g - full) for g in grads]))
    return lhs, (N / S - 1.0) / (N - 1.0) * spread


class Federation:
    """One training run: clients, samplers, server state and the round loop.

    Parameters
    ----------
    algorithm : PFedMe | FedAvg | PerFedAvg
    specs : list of ModelSpec
        One model per client (usually the same object repeated).
    data : FederatedDataset
    S, T, R, batch_size : int
    beta : float
        Server mixing weight.
    seed : int
        Training seed (batches, client sampling, initialization).
    eval_every : int
        Evaluate (before the round's update) every ``eval_every`` rounds and
        at the last round.
    personal_eval : PersonalEval
        How pFedMe's personalized model is formed at evaluation time.
        ``local_pass``: run the client's ``R`` local rounds from ``w_t`` on
        evaluation batches and keep the inner solution of the final round.
        ``prox_refresh``: a single prox solve at ``w_t``.
    lazy_clients : bool
        Only compute local updates for the sampled clients. Outputs are
        identical either way because sampling has its own random domain.
    threads : int
        Worker threads for client updates and evaluation.
    w0 : array, optional
        Initial global model; drawn from the Init stream when omitted.
    """

    def __init__(self, algorithm: AlgorithmKind, specs: Sequence[ModelSpec], data: FederatedDataset,
                 *, S: int, T: int, R: int, batch_size: int, beta: float = 1.0, seed: int = 0,
                 eval_every: int = 1, lazy_clients: bool = False, threads: int = 1,
                 record_time: bool = True, w0=None,
                 personal_eval: PersonalEval = PersonalEval.LOCAL_PASS):
        N = data.N
        if len(specs) != N:
            raise ValueError(f"{len(specs)} model specs for {N} clients")
        if not 1 <= S <= N:
            raise ValueError(f"need 1 <= S <= N, got S={S}, N={N}")
        if min(T, R, batch_size, eval_every) < 1:
            raise ValueError("T, R, batch_size and eval_every must be >= 1")
        if beta < 0:
            raise ValueError("beta must be non-negative")
        self.algorithm = algorithm
        self.specs = list(specs)
        self.data = data
        self.S, self.T, self.R = S, T, R
        self.batch_size = batch_size
        self.beta = beta
        self.seed = seed
        self.eval_every = eval_every
        self.lazy_clients = lazy_clients
        self.personal_eval = PersonalEval(personal_eval)
        self.threads = max(1, int(threads))
        self.record_time = record_time
        self._train_samplers = [
            BatchSampler(c.train_x, c.train_y, batch_size, seed, i, Domain.BATCH)
            for i, c in enumerate(data.clients)
        ]
        self._eval_samplers = [
            BatchSampler(c.train_x, c.train_y, batch_size, seed, i, Domain.EVAL)
            for i, c in enumerate(data.clients)
        ]
        if w0 is None:
            w0 = models.init_params(self.specs[0], RngStream(seed, Domain.INIT))
        self.server = ServerState(as_params(w0).copy(), 0)
        self.sampled_history: list[np.ndarray] = []

    @property
    def N(self) -> int:
        return self.data.N

    def _map(self, fn, items):
        items = list(items)
        if self.threads == 1 or len(items) < 2:
            return [fn(i) for i in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, items))

    def _batch_stream(self, i: int, t: int) -> BatchStream:
        slots = _SLOTS[type(self.algorithm)] * self.R
        sampler = self._train_samplers[i]
        return lambda slot: sampler(t * slots + slot)

    def local_update(self, i: int, w: np.ndarray, t: int) -> ClientState:
        alg = self.algorithm
        spec = self.specs[i]
        state = ClientState(i, w.copy())
        stream = self._batch_stream(i, t)
        try:
            if isinstance(alg, PFedMe):
                return local_update_pfedme(spec, state, self.R, alg.prox_options, alg.eta, stream)
            if isinstance(alg, FedAvg):
                return local_update_fedavg(spec, state, self.R, alg.eta, stream)
            return local_update_perfedavg(spec, state, self.R, alg.alpha_hat, alg.beta_hat,
                                          alg.hessian, stream)
        except DivergenceError as err:
            raise err.with_context(round=t) from None

    def sample_clients(self, t: int) -> np.ndarray:
        return sample_without_replacement(self.N, self.S, RngStream(self.seed, Domain.CLIENT_SAMPLE, round=t))

    def step(self, t: int) -> None:
        w = self.server.global_w
        sampled = self.sample_clients(t)
        workers = sampled if self.lazy_clients else range(self.N)
        states = dict(zip(workers, self._map(lambda i: self.local_update(int(i), w, t), workers)))
        self.sampled_history.append(sampled)
        self.server = aggregate(self.server, [states[i].local_w for i in sampled], self.beta)

    def personalized_model(self, i: int, w: np.ndarray, t: int) -> np.ndarray:
        alg = self.algorithm
        spec = self.specs[i]
        if isinstance(alg, PFedMe):
            sampler = self._eval_samplers[i]
            if self.personal_eval is PersonalEval.PROX_REFRESH:
                return prox_solve(spec, w, sampler(t), alg.prox_options, init=w).theta
            state = local_update_pfedme(spec, ClientState(i, w.copy()), self.R, alg.prox_options,
                                        alg.eta, lambda r: sampler(t * self.R + r))
            return state.personalized_theta
        if isinstance(alg, PerFedAvg):
            batch = self._eval_samplers[i](t)
            return w - alg.alpha_hat * models.grad(spec, w, batch)
        return w

    def evaluate(self, t: int, w: Optional[np.ndarray] = None) -> RoundReport:
        """Test accuracy and training loss of the global and personalized models."""
        w = self.server.global_w if w is None else w

        def per_client(i):
            c = self.data.clients[i]
            spec = self.specs[i]
            try:
                theta = self.personalized_model(i, w, t)
            except DivergenceError as err:
                raise err.with_context(client=i, round=t, phase="eval") from None
            train = Batch(c.train_x, c.train_y)
            g_hits = int(np.sum(models.predict(spec, w, c.test_x) == c.test_y))
            g_loss = models.loss(spec, w, train) * c.n_train
            if theta is w:
                return g_hits, g_hits, g_loss, g_loss
            return (
                g_hits,
                int(np.sum(models.predict(spec, theta, c.test_x) == c.test_y)),
                g_loss,
                models.loss(spec, theta, train) * c.n_train,
            )

        rows = self._map(per_client, range(self.N))
        n_test = sum(c.n_test for c in self.data.clients)
        n_train = sum(c.n_train for c in self.data.clients)
        return RoundReport(
            round=t,
            global_test_acc=sum(r[0] for r in rows) / n_test,
            personalized_test_acc=sum(r[1] for r in rows) / n_test,
            global_train_loss=sum(r[2] for r in rows) / n_train,
            personalized_train_loss=sum(r[3] for r in rows) / n_train,
        )

    def run(self, on_report: Optional[Callable[[RoundReport], None]] = None) -> list[RoundReport]:
        reports = []
        start = time.perf_counter()
        for t in range(self.T):
            if t % self.eval_every == 0 or t == self.T - 1:
                report = self.evaluate(t)
                if self.record_time:
                    report = replace(report, wall_ms=int((time.perf_counter() - start) * 1000))
                reports.append(report)
                if on_report is not None:
                    on_report(report)
            self.step(t)
        return reports


def build_federation(config, data: FederatedDataset, specs: Optional[Sequence[ModelSpec]] = None,
                     *, threads: int = 1, record_time: bool = True, w0=None) -> Federation:
    """Federation from a :class:`~moreau_fl.config.FederationConfig`."""
    if specs is None:
        specs = [config.model_spec(data.d, data.C)] * data.N
    return Federation(
        config.algorithm_kind(), specs, data,
        S=config.S, T=config.T, R=config.R, batch_size=config.batch_size, beta=config.beta,
        seed=config.seed, eval_every=config.eval_every, lazy_clients=config.lazy_clients,
        threads=threads, record_time=record_time, w0=w0, personal_eval=config.personal_eval,
    )


def run_training(config, data: FederatedDataset, specs: Optional[Sequence[ModelSpec]] = None,
                 *, threads: int = 1, record_time: bool = True,
                 on_report: Optional[Callable[[RoundReport], None]] = None) -> list[RoundReport]:
    """Run ``config.T`` rounds and return the evaluation reports."""
    if config.N != data.N:
        raise ValueError(f"config expects N={config.N} clients, dataset has {data.N}")
    return build_federation(config, data, specs, threads=threads, record_time=record_time).run(on_report)
