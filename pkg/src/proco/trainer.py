"""Single-stage training: encoder, queue, prototypes, mining and loss in one loop."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import encoder as enc
from .config import TrainConfig, canonical_method
from .dataset import Dataset, balanced_resample_iterator, shuffled_batches, split
from .errors import NonFiniteGradientError
from .loss import LossConfig, batch_proto_loss, cross_entropy, info_nce_batch, mine_for_batch
from .metrics import summarize
from .prototypes import PrototypeBank, init_prototypes, predict, update_from_batch
from .queue import SampleQueue

log = logging.getLogger(__name__)

PROTO_KEY = "prototypes"


def sgd_step(params: dict, grads: dict, velocity: dict, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
    """v <- momentum * v + grad + weight_decay * theta;  theta <- theta - lr * v.

    Arrays in ``params`` and ``velocity`` are updated in place.  Nothing is
    touched if any gradient is non-finite.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != np.shape(params[name]):
            raise ValueError(f"{name}: gradient shape {np.shape(g)} != {np.shape(params[name])}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {name!r}; step aborted")
    for name, g in grads.items():
        theta = params[name]
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(theta)
        v *= momentum
        v += g
        if weight_decay:
            v += weight_decay * theta
        theta -= lr * v


@dataclass
class TrainState:
    config: TrainConfig
    params: dict
    key: enc.MomentumEncoder
    bank: PrototypeBank
    queue: SampleQueue
    velocity: dict = field(default_factory=dict)
    data_rng: np.random.Generator | None = None
    mine_rng: np.random.Generator | None = None
    step: int = 0

    def trainable(self) -> dict:
        return {**self.params, PROTO_KEY: self.bank.P}

    def loss_config(self) -> LossConfig:
        c = self.config
        return LossConfig(
            tau=c.tau,
            gamma=c.gamma,
            E=c.E,
            proto_instances=c.proto_instances,
            recalibration=c.recalibration,
            calib_mode=c.calib_mode,
        )


def init_state(config: TrainConfig, dim: int, num_classes: int) -> TrainState:
    config.validate()
    ss = np.random.SeedSequence(config.seed)
    s_enc, s_proto, s_data, s_mine = (int(s.generate_state(1)[0]) for s in ss.spawn(4))
    params = enc.init(dim, config.hidden, config.k, seed=s_enc, g_hidden=config.g_hidden)
    return TrainState(
        config=config,
        params=params,
        key=enc.MomentumEncoder.from_online(params, config.m),
        bank=init_prototypes(num_classes, config.k, seed=s_proto, omega_init=config.omega_init, beta=config.beta),
        queue=SampleQueue(config.M, config.k, num_classes),
        data_rng=np.random.default_rng(s_data),
        mine_rng=np.random.default_rng(s_mine),
    )


def _uses_queue(method: str) -> bool:
    return method in ("proco", "info_nce", "info_nce_resample")


def train_step(state: TrainState, X: np.ndarray, y: np.ndarray) -> float:
    """One optimization step on a batch; returns the loss value."""
    cfg = state.config
    method = canonical_method(cfg.method)
    y = np.asarray(y)

    tape = ad.Tape()
    leaves = {name: tape.leaf(v, name) for name, v in state.trainable().items()}
    F, G = enc.forward(leaves, X, cfg.normalize_f, cfg.normalize_g, need_g=_uses_queue(method))

    if _uses_queue(method):
        Fk, Gk = enc.forward(state.key.key_params, X, cfg.normalize_f, cfg.normalize_g)
        Fk, Gk = Fk.value, Gk.value

    if method == "proco":
        lcfg = state.loss_config()
        mining = mine_for_batch(G.value, y, state.queue, state.bank.P, lcfg, state.mine_rng)
        loss = batch_proto_loss(
            G, F, y, state.queue.g, state.queue.labels, mining, leaves[PROTO_KEY], state.bank.calib, lcfg
        )
    elif method in ("ce", "ce_resample"):
        loss = cross_entropy(F, leaves[PROTO_KEY], y)
    else:
        loss = ad.add(cross_entropy(F, leaves[PROTO_KEY], y), info_nce_batch(G, Gk, state.queue.g, cfg.tau))

    value = float(loss.value)
    if not math.isfinite(value):
        raise FloatingPointError(f"non-finite loss at step {state.step}")
    grads = tape.backward(loss)
    sgd_step(state.trainable(), grads, state.velocity, cfg.lr, cfg.sgd_momentum, cfg.weight_decay)

    if _uses_queue(method):
        state.key.update(state.params)
        state.queue.enqueue_arrays(Gk, Fk, y)
    if method == "proco" and cfg.recalibration:
        update_from_batch(state.bank, F.value, y)
    state.step += 1
    return value


def evaluate(state: TrainState, data: Dataset) -> dict:
    if len(data) == 0:
        return {"accuracy": float("nan"), "macro_f1": float("nan"), "per_class_recall": []}
    cfg = state.config
    f, _ = enc.forward(state.params, data.X, cfg.normalize_f, need_g=False)
    pred = predict(f.value, state.bank)
    return summarize(data.y, pred, data.num_classes)


def epoch_batches(state: TrainState, data: Dataset):
    cfg = state.config
    if cfg.method.endswith("resample"):
        n_batches = math.ceil(len(data) / cfg.batch_size)
        it = balanced_resample_iterator(data, cfg.batch_size, state.data_rng)
        for _ in range(n_batches):
            yield next(it)
    else:
        yield from shuffled_batches(len(data), cfg.batch_size, state.data_rng)


@dataclass
class TrainReport:
    config: dict
    per_epoch: list
    final: dict
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        return {"config": self.config, "per_epoch": self.per_epoch, "final": self.final, "wall_clock": self.wall_clock}


def fit(config: TrainConfig, train_data: Dataset, test_data: Dataset, log_path=None):
    """Train on ``train_data``, evaluating on ``test_data`` before training and after every epoch."""
    config = config.with_overrides(method=canonical_method(config.method)).validate()
    if len(train_data) == 0:
        raise ValueError("empty training set")
    start = time.perf_counter()
    state = init_state(config, train_data.dim, train_data.num_classes)
    records = [{"epoch": 0, "loss": None, **evaluate(state, test_data)}]
    logf = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        if logf:
            logf.write(json.dumps(records[0]) + "\n")
        for epoch in range(1, config.epochs + 1):
            losses = []
            for idx in epoch_batches(state, train_data):
                losses.append(train_step(state, train_data.X[idx], train_data.y[idx]))
            rec = {"epoch": epoch, "loss": float(np.mean(losses)), **evaluate(state, test_data)}
            records.append(rec)
            if logf:
                logf.write(json.dumps(rec) + "\n")
            log.debug("epoch %d loss %.4f macro-F1 %.4f", epoch, rec["loss"], rec["macro_f1"])
    finally:
        if logf:
            logf.close()
    last = records[-1]
    final = {k: last[k] for k in ("accuracy", "macro_f1", "per_class_recall")}
    report = TrainReport(config.to_dict(), records, final, time.perf_counter() - start)
    return state, report


def train(config: TrainConfig, dataset: Dataset, log_path=None):
    """Split ``dataset`` per the config, then :func:`fit`."""
    tr, te = split(dataset, config.train_fraction, config.split_seed, config.split_mode)
    return fit(config, tr, te, log_path=log_path)
