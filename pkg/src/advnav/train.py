"""Likelihood pretraining and the alternating adversarial game.

Pretraining fits the forecaster by maximum likelihood and the planner by
imitating the demonstrated robot futures. The game then alternates, per
round, a planner step against the current forecasts and a forecaster step
against the current plans. Both steps read the same round snapshot.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from functools import lru_cache
from typing import Callable

import numpy as np

from advnav.cost import CostParams, scene_cost_graph, scene_costs_array
from advnav.diffkit import Node, ParamStore, Tape, make_optimizer, ops
from advnav.models import Batch, ModelConfig, forecast, forecast_positions, init_forecaster, init_planner, nll_graph, plan

PLAYERS = ("mle-forecaster", "nom-planner", "adv-forecaster", "safe-planner")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, round_index: int, sample: str, player: str):
        super().__init__(f"non-finite {player} loss at round {round_index}, sample {sample}")
        self.round_index = round_index
        self.sample = sample
        self.player = player


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = 2000
    batch: int = 32
    # the forecaster moves faster than the planner so the adversary keeps
    # pressure on plans close to the nominal ones
    lr_forecaster: float = 1e-3
    lr_planner: float = 1e-4
    lam: float = 0.15
    # planner imitation weight; None means "same as lam"
    beta: float | None = 1.0
    seed: int = 0
    checkpoint_every: int = 0
    adv_optimizer: str = "adam"
    # divide each player's step by max(1, weight) so huge penalties stay stable
    normalize_steps: bool = True
    mle_optimizer: str = "adam"
    mle_lr: float = 1e-3
    mle_batch: int = 64
    mle_max_epochs: int = 20
    mle_patience: int = 3
    mle_tol: float = 1e-3
    planner_objective: str = "imitation"

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.batch < 1 or self.mle_batch < 1:
            raise ValueError("batch sizes must be >= 1")
        if min(self.lr_forecaster, self.lr_planner, self.mle_lr) <= 0:
            raise ValueError("learning rates must be > 0")
        if self.lam < 0 or (self.beta is not None and self.beta < 0):
            raise ValueError("lam and beta must be >= 0")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")
        if self.adv_optimizer not in ("sgd", "adam") or self.mle_optimizer not in ("sgd", "adam"):
            raise ValueError("optimizers must be sgd|adam")
        if self.mle_max_epochs < 1 or self.mle_patience < 1:
            raise ValueError("mle_max_epochs and mle_patience must be >= 1")
        if self.planner_objective not in ("imitation", "cost"):
            raise ValueError("planner_objective must be imitation|cost")

    @property
    def beta_value(self) -> float:
        return self.lam if self.beta is None else self.beta

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class RoundLog:
    round: int
    f_cost_diff: float
    f_nll: float
    f_loss: float
    p_cost_diff: float
    p_nll: float
    p_loss: float
    plan_cost: float
    f_grad_norm: float
    p_grad_norm: float

    def __post_init__(self):
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ValueError(f"non-finite {f.name} in round {self.round}")


LOG_FIELDS = tuple(f.name for f in fields(RoundLog))


def logs_to_csv(logs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_FIELDS)
    for log in logs:
        w.writerow([repr(getattr(log, k)) if k != "round" else log.round for k in LOG_FIELDS])
    return buf.getvalue()


def logs_from_csv(text: str) -> list[RoundLog]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != LOG_FIELDS:
        raise ValueError("not a round-log CSV")
    return [RoundLog(int(r[0]), *(float(x) for x in r[1:])) for r in rows[1:]]


@dataclass
class LossResult:
    loss: Node
    per_sample: np.ndarray
    cost_diff: float
    nll: float


def _human_args(batch: Batch):
    return batch.radii[:, 0], batch.radii[:, 1:], batch.human_mask


def _human_nll(pred: Node, batch: Batch, sigma: float) -> Node:
    per_human = nll_graph(ops.getitem(pred, (slice(None), slice(1, None))), batch.human_future, sigma)
    return ops.sum(ops.mul(per_human, batch.human_mask.astype(np.float64)), axis=1)


def forecaster_loss(theta: dict, batch: Batch, plans: np.ndarray, mcfg: ModelConfig, tcfg: TrainConfig,
                    cost: CostParams = CostParams()) -> LossResult:
    """mean[c(xi_R, F) - c(plans, F)] + lam * mean[sum_h nll(F_h, xi_H)].

    ``plans`` are constants, so no gradient reaches the planner.
    """
    pred = forecast(theta, batch, mcfg)
    humans = ops.getitem(pred, (slice(None), slice(1, None)))
    r_r, r_h, mask = _human_args(batch)
    c_demo = scene_cost_graph(batch.robot_future, humans, r_r, r_h, mask, cost)
    c_plan = scene_cost_graph(np.asarray(plans), humans, r_r, r_h, mask, cost)
    diff = ops.sub(c_demo, c_plan)
    lik = _human_nll(pred, batch, mcfg.sigma)
    per = ops.add(diff, ops.scale(lik, tcfg.lam))
    return LossResult(ops.mean(per), per.value, float(np.mean(diff.value)), float(np.mean(lik.value)))


def planner_loss(psi: dict, batch: Batch, forecasts: np.ndarray, mcfg: ModelConfig, tcfg: TrainConfig,
                 cost: CostParams = CostParams()) -> LossResult:
    """mean[c(P, F) - c(xi_R, F)] + beta * mean[nll(P, xi_R)].

    ``forecasts`` are constants; the demonstration term does not depend on
    the planner and only shifts the value.
    """
    forecasts = np.asarray(forecasts)
    pred = plan(psi, batch, forecasts, mcfg)
    r_r, r_h, mask = _human_args(batch)
    humans = forecasts[:, 1:]
    c_plan = scene_cost_graph(pred, humans, r_r, r_h, mask, cost)
    c_demo = scene_costs_array(batch.robot_future, humans, r_r, r_h, mask, cost)
    diff = ops.sub(c_plan, c_demo)
    lik = nll_graph(pred, batch.robot_future, mcfg.sigma)
    per = ops.add(diff, ops.scale(lik, tcfg.beta_value))
    return LossResult(ops.mean(per), per.value, float(np.mean(diff.value)), float(np.mean(lik.value)))


@lru_cache(maxsize=8)
def _epoch_perm(n: int, seed: int, epoch: int, stream: int) -> np.ndarray:
    return np.random.default_rng([seed, stream, epoch]).permutation(n)


def minibatch_indices(n: int, size: int, seed: int, index: int, stream: int = 0) -> np.ndarray:
    """Indices of minibatch ``index`` in a stream of per-epoch permutations.

    Each epoch visits every sample once; the permutation of epoch ``e`` depends
    only on ``(seed, stream, e)``, so any minibatch can be recomputed without
    replaying the ones before it.
    """
    if n < 1:
        raise ValueError("empty dataset")
    start = index * size
    out = []
    while len(out) < size:
        epoch, offset = divmod(start + len(out), n)
        take = min(size - len(out), n - offset)
        out.extend(_epoch_perm(n, seed, epoch, stream)[offset : offset + take])
    return np.asarray(out)


def _check_finite(res: LossResult, batch: Batch, round_index: int, player: str) -> None:
    bad = ~np.isfinite(res.per_sample)
    if bad.any():
        raise NonFiniteLossError(round_index, batch.sample_id(int(np.argmax(bad))), player)
    if not math.isfinite(float(res.loss.value)):
        # every sample is finite but the batch mean overflowed; blame the largest
        raise NonFiniteLossError(round_index, batch.sample_id(int(np.argmax(np.abs(res.per_sample)))), player)


def _step(store: ParamStore, opt, res: LossResult, scale: float, round_index: int, player: str) -> float:
    """Backward plus one optimizer step whose size is multiplied by ``scale``.

    The scale goes on the learning rate rather than the gradient, because
    Adam's update does not change when its gradient is rescaled.
    """
    store.zero_grad()
    res.loss.tape.backward(res.loss)
    norm = store.grad_norm()
    if not math.isfinite(norm):
        raise NonFiniteLossError(round_index, "(gradient of the whole minibatch)", player)
    lr = opt.lr
    opt.lr = lr * scale
    try:
        opt.step(store)
    finally:
        opt.lr = lr
    return norm


def _fit(store: ParamStore, data: Batch, tcfg: TrainConfig, loss_fn: Callable, stream: int,
         log: Callable[[str], None] | None) -> list[float]:
    """Epochs of minibatch descent until the epoch loss stops improving by
    ``mle_tol`` (relative) for ``mle_patience`` epochs, or ``mle_max_epochs``.

    The learning rate follows a cosine decay from ``mle_lr`` to zero over the
    full epoch budget, so the returned iterate is not dominated by step noise.
    """
    opt = make_optimizer(tcfg.mle_optimizer, tcfg.mle_lr)
    n = data.size
    per_epoch = max(1, math.ceil(n / tcfg.mle_batch))
    total_steps = per_epoch * tcfg.mle_max_epochs
    best, stale, history = math.inf, 0, []
    for epoch in range(tcfg.mle_max_epochs):
        total = 0.0
        for j in range(per_epoch):
            opt.lr = tcfg.mle_lr * 0.5 * (1.0 + math.cos(math.pi * (epoch * per_epoch + j) / total_steps))
            idx = minibatch_indices(n, tcfg.mle_batch, tcfg.seed, epoch * per_epoch + j, stream)
            mb = data.take(idx)
            res = loss_fn(store.attach(Tape()), mb)
            _check_finite(res, mb, epoch * per_epoch + j, "pretraining")
            _step(store, opt, res, 1.0, epoch * per_epoch + j, "pretraining")
            total += float(res.loss.value)
        history.append(total / per_epoch)
        if log:
            log(f"epoch {epoch}: loss {history[-1]:.6f}")
        if history[-1] < best * (1.0 - tcfg.mle_tol):
            best, stale = history[-1], 0
        else:
            stale += 1
            if stale >= tcfg.mle_patience:
                break
    return history


def train_mle(data: Batch, mcfg: ModelConfig, tcfg: TrainConfig, cost: CostParams = CostParams(),
              log: Callable[[str], None] | None = None) -> tuple[ParamStore, ParamStore]:
    """Pretrain (theta_MLE, psi_NOM).

    The forecaster maximises the likelihood of human futures; the planner then
    imitates the demonstrated robot futures while consuming the finished
    forecaster's predictions (or, with ``planner_objective="cost"``, minimises
    the obstacle cost against them).
    """
    if data.size == 0:
        raise ValueError("cannot train on an empty dataset")
    theta = init_forecaster(mcfg)
    psi = init_planner(mcfg)

    def f_loss(p, mb):
        pred = forecast(p, mb, mcfg)
        lik = _human_nll(pred, mb, mcfg.sigma)
        return LossResult(ops.mean(lik), lik.value, 0.0, float(np.mean(lik.value)))

    _fit(theta, data, tcfg, f_loss, 1, log)
    fc = forecast_positions(theta, data, mcfg)

    def p_loss(p, mb_idx):
        mb, f = mb_idx
        pred = plan(p, mb, f, mcfg)
        if tcfg.planner_objective == "cost":
            per = scene_cost_graph(pred, f[:, 1:], mb.radii[:, 0], mb.radii[:, 1:], mb.human_mask, cost)
        else:
            per = nll_graph(pred, mb.robot_future, mcfg.sigma)
        return LossResult(ops.mean(per), per.value, 0.0, float(np.mean(per.value)))

    _fit(psi, _Paired(data, fc), tcfg, p_loss, 2, log)
    return theta, psi


class _Paired:
    """A batch together with fixed per-sample forecasts, sliced jointly."""

    def __init__(self, batch: Batch, forecasts: np.ndarray):
        self.batch, self.forecasts = batch, forecasts

    @property
    def size(self) -> int:
        return self.batch.size

    def take(self, idx):
        return _PairedView(self.batch.take(idx), self.forecasts[idx])


class _PairedView(tuple):
    def __new__(cls, batch, forecasts):
        return super().__new__(cls, (batch, forecasts))

    def sample_id(self, i: int) -> str:
        return self[0].sample_id(i)


Hook = Callable[[str, int, ParamStore, ParamStore], None]


def adversarial_round(batch: Batch, theta: ParamStore, psi: ParamStore, opt_f, opt_p, mcfg: ModelConfig,
                      tcfg: TrainConfig, cost: CostParams, round_index: int, hook: Hook | None = None) -> RoundLog:
    """One round: roll out both players, then a planner step, then a
    forecaster step, each against the other's round-start output."""
    tape = Tape()
    f_now = forecast(theta.attach(tape, trainable=False), batch, mcfg).value
    p_now = plan(psi.attach(tape, trainable=False), batch, f_now, mcfg).value
    plan_cost = float(np.mean(scene_costs_array(p_now, f_now[:, 1:], batch.radii[:, 0], batch.radii[:, 1:],
                                                batch.human_mask, cost)))
    if hook:
        hook("start", round_index, theta, psi)

    p_res = planner_loss(psi.attach(Tape()), batch, f_now, mcfg, tcfg, cost)
    _check_finite(p_res, batch, round_index, "planner")
    p_scale = 1.0 / max(1.0, tcfg.beta_value) if tcfg.normalize_steps else 1.0
    p_norm = _step(psi, opt_p, p_res, p_scale, round_index, "planner")
    if hook:
        hook("planner", round_index, theta, psi)

    f_res = forecaster_loss(theta.attach(Tape()), batch, p_now, mcfg, tcfg, cost)
    _check_finite(f_res, batch, round_index, "forecaster")
    f_scale = 1.0 / max(1.0, tcfg.lam) if tcfg.normalize_steps else 1.0
    f_norm = _step(theta, opt_f, f_res, f_scale, round_index, "forecaster")
    if hook:
        hook("forecaster", round_index, theta, psi)

    return RoundLog(round_index, f_res.cost_diff, f_res.nll, float(f_res.loss.value), p_res.cost_diff, p_res.nll,
                    float(p_res.loss.value), plan_cost, f_norm, p_norm)


def make_adv_optimizers(tcfg: TrainConfig):
    return make_optimizer(tcfg.adv_optimizer, tcfg.lr_forecaster), make_optimizer(tcfg.adv_optimizer, tcfg.lr_planner)


def adversarial_train(data: Batch, theta_mle: ParamStore, psi_nom: ParamStore, mcfg: ModelConfig, tcfg: TrainConfig,
                      cost: CostParams = CostParams(), start_round: int = 0, rounds: int | None = None,
                      optimizers=None, hook: Hook | None = None,
                      checkpoint: Callable[[int, ParamStore, ParamStore, tuple, list], None] | None = None,
                      ) -> tuple[ParamStore, ParamStore, list[RoundLog]]:
    """Alternating updates for rounds ``start_round .. start_round + rounds``.

    Returns the last iterate. The inputs are copied, never mutated. Round
    ``i`` always trains on minibatch ``i`` of the seeded stream, so a run
    resumed from a round-``k`` checkpoint reproduces the uninterrupted run.
    ``checkpoint(done, theta, psi, optimizers, logs)`` is called every
    ``checkpoint_every`` rounds and after the final round.
    """
    if data.size == 0:
        raise ValueError("cannot train on an empty dataset")
    theta, psi = theta_mle.copy(), psi_nom.copy()
    opt_f, opt_p = optimizers if optimizers is not None else make_adv_optimizers(tcfg)
    rounds = tcfg.rounds if rounds is None else rounds
    logs = []
    for i in range(start_round, start_round + rounds):
        mb = data.take(minibatch_indices(data.size, tcfg.batch, tcfg.seed, i, stream=3))
        logs.append(adversarial_round(mb, theta, psi, opt_f, opt_p, mcfg, tcfg, cost, i, hook))
        done = i + 1
        if checkpoint and tcfg.checkpoint_every and done % tcfg.checkpoint_every == 0 and done < start_round + rounds:
            checkpoint(done, theta, psi, (opt_f, opt_p), logs)
    if checkpoint and rounds:
        checkpoint(start_round + rounds, theta, psi, (opt_f, opt_p), logs)
    return theta, psi, logs


def restore_optimizer(kind: str, lr: float, state: dict, t: int):
    opt = make_optimizer(kind, lr)
    opt.load_state(state, t)
    return opt


__all__ = [
    "PLAYERS", "NonFiniteLossError", "TrainConfig", "RoundLog", "LOG_FIELDS", "logs_to_csv", "logs_from_csv",
    "LossResult", "forecaster_loss", "planner_loss", "minibatch_indices", "train_mle", "adversarial_round",
    "adversarial_train", "make_adv_optimizers", "restore_optimizer",
]
