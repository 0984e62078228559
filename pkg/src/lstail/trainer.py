"""End-to-end class-incremental training.

Phase 0 trains adapter and classifier on the bootstrap classes. Every later
phase plans a replay set, copies the previous model, grows the classifier,
freezes the adapter and fine-tunes on old and new classes with cross-entropy
plus logit distillation against the previous model. With the weight
generator enabled, the new columns are produced from support features on
every step and written once more from all new-class instances at the end.

"Until converged" is a fixed epoch budget with step learning-rate decay.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Mapping

import numpy as np

from .dataset import DatasetIndex
from .errors import ConfigError
from .metrics import MetricsReport, evaluate, fill_forgetting, restrict
from .model import ModelState, combined_loss, expand_classifier, init_state
from .mwg import Episode, MwgParams, finalize_weights, generate_columns, run_episode
from .optim import SGD, step_lr
from .partition import ClassGroups, PhaseSubsets, assign_subsets, make_groups, sort_classes
from .replay import PhasePlan, canonical_strategy, make_plan, materialize, plan_base, stack

log = logging.getLogger(__name__)

NEW_CLASS_INITS = ("random", "imprint")


@dataclass(frozen=True)
class TrainConfig:
    b: int = 20
    phase_size: int = 10
    epochs_base: int = 10
    epochs_incremental: int = 10
    lr_base: float = 0.01
    lr_base_milestones: tuple[float, ...] = (0.6, 0.8)
    lr_incremental: float = 0.002
    lr_incremental_milestones: tuple[float, ...] = (0.6,)
    lr_gamma: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 32
    use_mwg: bool = False
    use_distill: bool = True
    replay_strategy: str = "balanced_replay"
    seed: int = 0
    new_class_init: str = "random"
    freeze_adapter: bool = True
    freeze_old_columns: bool = False
    learn_sigma: bool = True
    sigma_init: float = 10.0
    adapter_out_dim: int | None = None
    adapter_hidden: int | None = None
    distill_on_replay: bool = False
    distill_scaled_logits: bool = False
    resample_each_epoch: bool = False
    one_instance_target: int | None = None
    support_size: int = 5
    mwg_tau: float = 0.1
    mwg_lr: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "replay_strategy", canonical_strategy(self.replay_strategy))
        object.__setattr__(self, "lr_base_milestones", tuple(self.lr_base_milestones))
        object.__setattr__(self, "lr_incremental_milestones", tuple(self.lr_incremental_milestones))
        for name in ("b", "phase_size", "batch_size", "support_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("epochs_base", "epochs_incremental"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.lr_base <= 0 or self.lr_incremental <= 0 or self.weight_decay < 0:
            raise ConfigError("learning rates must be positive and weight decay non-negative")
        if self.new_class_init not in NEW_CLASS_INITS:
            raise ConfigError(f"new_class_init must be one of {NEW_CLASS_INITS}")
        if self.sigma_init <= 0 or self.mwg_tau <= 0:
            raise ConfigError("sigma_init and mwg_tau must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_base_milestones"] = list(self.lr_base_milestones)
        d["lr_incremental_milestones"] = list(self.lr_incremental_milestones)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training options {sorted(unknown)}")
        return cls(**d)


@dataclass
class ExperimentRun:
    config: TrainConfig
    groups: ClassGroups
    subsets: PhaseSubsets
    states: list[ModelState] = field(default_factory=list)
    reports: list[MetricsReport] = field(default_factory=list)
    plans: list[PhasePlan] = field(default_factory=list)
    losses: list[list[float]] = field(default_factory=list)
    mwg: MwgParams | None = None
    mwg_states: list[MwgParams | None] = field(default_factory=list)

    def report_extra(self) -> dict:
        return {
            "groups": [list(g) for g in self.groups.groups],
            "plans": [
                {"phase": p.phase, "strategy": p.strategy, "feedforward_count": p.feedforward_count}
                for p in self.plans
            ],
            "epoch_losses": self.losses,
        }


def _seed_for(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def _trainable(state: ModelState, config: TrainConfig) -> dict[str, np.ndarray]:
    params = state.classifier.params()
    if not config.learn_sigma:
        params.pop("classifier.sigma")
    if not state.adapter.frozen:
        params.update(state.adapter.params())
    return params


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield perm[i : i + batch_size]


def train_base(
    index: DatasetIndex,
    groups: ClassGroups,
    config: TrainConfig,
    history: list[float] | None = None,
) -> ModelState:
    """Adapter and classifier over the bootstrap classes, cross-entropy only."""
    if index.features is None:
        raise ConfigError("training needs an index with features")
    X, y, _ = stack(materialize(index, plan_base(index, groups), groups))
    if len(X) == 0:
        raise ConfigError("bootstrap subset is empty")
    state = init_state(
        index.feature_dim,
        groups.groups[0],
        np.random.default_rng(_seed_for(config.seed, 0, 0)),
        out_dim=config.adapter_out_dim,
        hidden=config.adapter_hidden,
        sigma=config.sigma_init,
    )
    state.classifier.learn_sigma = config.learn_sigma
    rng = np.random.default_rng(_seed_for(config.seed, 0, 1))
    opt = SGD(_trainable(state, config), config.momentum, config.weight_decay)
    for epoch in range(config.epochs_base):
        lr = step_lr(config.lr_base, epoch, config.epochs_base, config.lr_base_milestones, config.lr_gamma)
        total = 0.0
        for idx in _batches(len(X), config.batch_size, rng):
            loss, grads = combined_loss(state, None, X[idx], y[idx])
            opt.step(grads, lr)
            total += loss * len(idx)
        if history is not None:
            history.append(total / len(X))
    return state


def _plan(index, groups, t, config: TrainConfig, epoch: int = 0) -> PhasePlan:
    return make_plan(
        index,
        groups,
        t,
        config.replay_strategy,
        seed=_seed_for(config.seed, t, 2, epoch),
        target_per_class=config.one_instance_target,
    )


def _sample_support(X, y, new_classes, size, rng) -> tuple[dict[int, np.ndarray], np.ndarray]:
    support, used = {}, []
    for c in new_classes:
        rows = np.flatnonzero(y == c)
        pick = rows if len(rows) <= size else np.sort(rng.choice(rows, size=size, replace=False))
        support[c] = X[pick]
        used.append(pick)
    return support, np.concatenate(used) if used else np.empty(0, dtype=np.int64)


def update_model(
    prev: ModelState,
    index: DatasetIndex,
    groups: ClassGroups,
    plan: PhasePlan,
    config: TrainConfig,
    mwg: MwgParams | None = None,
    history: list[float] | None = None,
) -> tuple[ModelState, MwgParams | None]:
    """One incremental phase. Returns the new model and the (shared) generator."""
    t = plan.phase
    new_classes = groups.groups[t]
    rng = np.random.default_rng(_seed_for(config.seed, t, 1))
    X, y, origin = stack(materialize(index, plan, groups))

    if config.use_mwg:
        if mwg is None:
            mwg = MwgParams.init(prev.classifier.W[:, : len(groups.groups[0])], tau=config.mwg_tau)
        support, _ = _sample_support(X, y, new_classes, config.support_size, rng)
        cols = generate_columns(prev, mwg, support, new_classes)
        state = expand_classifier(prev, new_classes, "mwg", weights=cols)
    elif config.new_class_init == "imprint":
        state = expand_classifier(prev, new_classes, "imprint", X=X, labels=y)
    else:
        state = expand_classifier(prev, new_classes, "random", rng=rng)
    state.phase = t
    state.adapter.frozen = config.freeze_adapter
    state.classifier.freeze_old = config.freeze_old_columns
    state.classifier.learn_sigma = config.learn_sigma

    params = _trainable(state, config)
    masks = {}
    if config.freeze_old_columns:
        m = np.ones_like(state.classifier.W)
        m[:, : state.classifier.n_old] = 0.0
        masks["classifier.W"] = m
    opt = SGD(params, config.momentum, config.weight_decay, masks=masks)
    mwg_opt = SGD(mwg.params(), config.momentum, config.weight_decay) if config.use_mwg else None
    teacher = prev if config.use_distill else None

    for epoch in range(config.epochs_incremental):
        if config.resample_each_epoch and epoch > 0:
            X, y, origin = stack(materialize(index, _plan(index, groups, t, config, epoch), groups))
        lr = step_lr(
            config.lr_incremental, epoch, config.epochs_incremental, config.lr_incremental_milestones, config.lr_gamma
        )
        distill_mask = np.ones(len(y), bool) if config.distill_on_replay else origin == t
        total = 0.0
        for idx in _batches(len(X), config.batch_size, rng):
            Xd = X[idx][distill_mask[idx]] if teacher is not None else None
            if config.use_mwg:
                support, used = _sample_support(X, y, new_classes, config.support_size, rng)
                q = np.setdiff1d(idx, used)
                ep = Episode(support, X[q], y[q], Xd)
                loss, grads = run_episode(state, mwg, ep, teacher, config.distill_scaled_logits)
                mwg_opt.step(grads, config.mwg_lr or lr)
            else:
                loss, grads = combined_loss(state, teacher, X[idx], y[idx], Xd, config.distill_scaled_logits)
            opt.step(grads, lr)
            total += loss * len(idx)
        if history is not None and len(X):
            history.append(total / len(X))

    if config.use_mwg:
        state = finalize_weights(state, mwg, X, y)
    return state, mwg


def run_experiment(
    index: DatasetIndex,
    config: TrainConfig,
    test: tuple[np.ndarray, np.ndarray],
) -> ExperimentRun:
    """Partition, then train and evaluate phase by phase. Evaluation at phase
    t only sees test samples of classes introduced up to t."""
    groups = make_groups(sort_classes(index), config.b, config.phase_size)
    run = ExperimentRun(config, groups, assign_subsets(index, groups))
    X_test, y_test = test

    hist: list[float] = []
    state = train_base(index, groups, config, hist)
    mwg = None
    for t in range(groups.T + 1):
        if t > 0:
            plan = _plan(index, groups, t, config)
            hist = []
            state, mwg = update_model(state, index, groups, plan, config, mwg, hist)
        else:
            plan = plan_base(index, groups)
        Xt, yt = restrict(X_test, y_test, groups.seen_classes(t))
        report = evaluate(state, Xt, yt, index.class_count, groups.groups[t])
        report.n_train = len(materialize(index, plan, groups))
        run.plans.append(plan)
        run.states.append(state)
        run.reports.append(report)
        run.losses.append(hist)
        run.mwg_states.append(copy.deepcopy(mwg))
        log.info("phase %d: overall %.3f old %s new %s", t, report.overall, report.old, report.new)
    run.mwg = mwg
    fill_forgetting(run.reports)
    return run
