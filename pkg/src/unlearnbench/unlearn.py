"""Original/gold training and the eight speaker-unlearning methods.

Every method maps ``(model, retain, forget, config)`` to an
:class:`UnlearnOutcome` whose ``elapsed`` comes from the injected clock.
Methods only touch the data sets they need: ``ft`` and ``cf_k`` never read
the forget set and ``ng`` never reads the retain set.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .datagen import SampleSet
from .errors import ConfigError, EmptyBatchError, NumericOverflowError, TrainingDivergedError
from .nn_core import (
    LayerMask,
    apply_step,
    backward,
    forward,
    forward_cost,
    init_model,
    step_cost,
)
from .timing import WallClock

METHODS = ("ft", "ng", "ng_plus", "cf_k", "unsir", "bt", "bt_light", "scrub")
BASELINES = ("original", "gold")

# learning-rate families: gentle for ascent/distillation methods, larger for fine-tuning ones
GENTLE_LRS = (5e-7, 1e-6, 5e-6)
AGGRESSIVE_LRS = (1e-5, 5e-5, 1e-4)
DEFAULT_LRS = {
    "ng": GENTLE_LRS, "ng_plus": GENTLE_LRS, "bt": GENTLE_LRS, "bt_light": GENTLE_LRS, "scrub": GENTLE_LRS,
    "ft": AGGRESSIVE_LRS, "cf_k": AGGRESSIVE_LRS, "unsir": AGGRESSIVE_LRS,
}


@dataclass(frozen=True)
class MethodConfig:
    method: str
    lr: float = 1e-5
    epochs: int = 1
    batch_size: int = 32
    k: int = 1
    noise_steps: int = 20
    noise_lr: float = 0.1
    scrub_max_steps: int = 2
    scrub_min_steps: int = 2
    gamma: float = 1.0
    seed: int = 0

    def validate(self, n_layers=None):
        if self.method not in METHODS + BASELINES:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS + BASELINES}")
        if not (np.isfinite(self.lr) and self.lr >= 0):
            raise ConfigError(f"lr must be finite and >= 0, got {self.lr}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.method == "cf_k" and (self.k < 1 or (n_layers is not None and self.k > n_layers)):
            raise ConfigError(f"cf_k needs 1 <= k <= {n_layers}, got {self.k}")
        if self.method == "unsir" and (self.noise_steps < 0 or self.noise_lr < 0):
            raise ConfigError("noise_steps and noise_lr must be >= 0")
        if self.method == "scrub" and (self.scrub_max_steps < 0 or self.scrub_min_steps < 0):
            raise ConfigError("scrub step counts must be >= 0")
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass(frozen=True)
class TrainRecipe:
    epochs: int = 60
    lr: float = 0.05
    batch_size: int = 32
    seed: int = 0
    hidden: tuple = (64, 64)
    optimizer: str = "sgd"

    def validate(self):
        if self.epochs < 1 or not (self.lr > 0) or self.batch_size < 1:
            raise ConfigError("recipe needs epochs >= 1, lr > 0 and batch_size >= 1")
        if self.optimizer != "sgd":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")
        return self

    def to_dict(self):
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "hidden" in data:
            data["hidden"] = tuple(data["hidden"])
        return cls(**data)


@dataclass
class UnlearnOutcome:
    model: object
    elapsed: float
    config: MethodConfig
    stages: dict = field(default_factory=dict)


def _batches(order, batch_size):
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def _sgd_epoch(model, data, lr, batch_size, rng, clock, direction="descent", mask=None,
               loss="task", teacher=None, context=""):
    """One shuffled pass of plain SGD over ``data``.

    ``teacher`` is a model whose logits serve as the KL target for ``loss``
    kinds ``"kl"`` and ``"kl+task"``.
    """
    n = len(data)
    if n == 0:
        return model
    X, y = data.X, data.y
    for b, idx in enumerate(_batches(rng.permutation(n), batch_size)):
        target = forward(teacher, X[idx]) if teacher is not None else None
        grads = backward(model, X[idx], y[idx], loss, mask, target)
        clock.charge(step_cost(model, len(idx), mask) + (forward_cost(teacher, len(idx)) if teacher is not None else 0))
        model = apply_step(model, grads, lr, direction, context=f"{context} batch {b}")
    return model


def _timed(clock, fn):
    t0 = clock.now()
    model = fn()
    return model, clock.now() - t0


def train_original(recipe: TrainRecipe, data: SampleSet, n_classes: int, clock=None):
    """Train from scratch; with retain-only data this yields the gold model."""
    recipe.validate()
    if len(data) == 0:
        raise EmptyBatchError("cannot train on an empty data set")
    clock = clock or WallClock()
    rng = np.random.default_rng(recipe.seed)

    def run():
        model = init_model([data.dim, *recipe.hidden, n_classes], recipe.seed)
        for epoch in range(recipe.epochs):
            try:
                model = _sgd_epoch(model, data, recipe.lr, recipe.batch_size, rng, clock,
                                   context=f"training epoch {epoch}")
            except NumericOverflowError as exc:
                batch = exc.context.rsplit(" ", 1)[-1] if exc.context else "?"
                raise TrainingDivergedError(epoch, batch, "training") from exc
        return model

    return _timed(clock, run)


def _check(cfg, expected, model):
    if cfg.method not in expected:
        raise ConfigError(f"config is for {cfg.method!r}, expected {expected}")
    cfg.validate(model.n_layers)


def finetune_ft(model, retain, cfg: MethodConfig, clock=None, mask=None):
    """``cfg.epochs`` of descent on the retain set only."""
    clock = clock or WallClock()
    rng = np.random.default_rng(cfg.seed)

    def run():
        m = model
        for epoch in range(cfg.epochs):
            m = _sgd_epoch(m, retain, cfg.lr, cfg.batch_size, rng, clock, mask=mask,
                           context=f"{cfg.method} epoch {epoch}")
        return m

    m, elapsed = _timed(clock, run)
    return UnlearnOutcome(m, elapsed, cfg)


def ft(model, retain, cfg: MethodConfig, clock=None):
    _check(cfg, ("ft",), model)
    return finetune_ft(model, retain, cfg, clock)


def cf_k(model, retain, cfg: MethodConfig, clock=None):
    """Fine-tune only the last ``cfg.k`` layers."""
    _check(cfg, ("cf_k",), model)
    return finetune_ft(model, retain, cfg, clock, mask=LayerMask.last_k(model.n_layers, cfg.k))


def ng(model, forget, cfg: MethodConfig, clock=None):
    """Gradient ascent on the forget set."""
    _check(cfg, ("ng",), model)
    clock = clock or WallClock()
    rng = np.random.default_rng(cfg.seed)

    def run():
        m = model
        for epoch in range(cfg.epochs):
            m = _sgd_epoch(m, forget, cfg.lr, cfg.batch_size, rng, clock, direction="ascent",
                           context=f"ng epoch {epoch}")
        return m

    m, elapsed = _timed(clock, run)
    return UnlearnOutcome(m, elapsed, cfg)


def ng_plus(model, retain, forget, cfg: MethodConfig, clock=None):
    """Alternate a retain descent batch with a forget ascent batch.

    The forget set is smaller and is cycled (reshuffled on wrap-around). The
    ascent step uses ``lr * gamma`` so the net objective is
    ``L_retain - gamma * L_forget``; ``gamma = 0`` reproduces ``ft``.
    """
    _check(cfg, ("ng_plus",), model)
    clock = clock or WallClock()
    rng = np.random.default_rng(cfg.seed)
    forget_rng = np.random.default_rng([cfg.seed, 1])
    ascend = cfg.gamma > 0 and len(forget) > 0

    def run():
        m = model
        Xr, yr = retain.X, retain.y
        if ascend:
            Xf, yf = forget.X, forget.y
            f_order, f_pos = forget_rng.permutation(len(forget)), 0
        for epoch in range(cfg.epochs):
            if len(retain) == 0:
                break
            for b, idx in enumerate(_batches(rng.permutation(len(retain)), cfg.batch_size)):
                grads = backward(m, Xr[idx], yr[idx])
                clock.charge(step_cost(m, len(idx)))
                m = apply_step(m, grads, cfg.lr, "descent", context=f"ng_plus epoch {epoch} batch {b}")
                if not ascend:
                    continue
                if f_pos >= len(f_order):
                    f_order, f_pos = forget_rng.permutation(len(forget)), 0
                fidx = f_order[f_pos:f_pos + cfg.batch_size]
                f_pos += cfg.batch_size
                grads = backward(m, Xf[fidx], yf[fidx])
                clock.charge(step_cost(m, len(fidx)))
                m = apply_step(m, grads, cfg.lr * cfg.gamma, "ascent",
                               context=f"ng_plus epoch {epoch} forget batch {b}")
        return m

    m, elapsed = _timed(clock, run)
    return UnlearnOutcome(m, elapsed, cfg)


def _noise_batch(model, labels, steps, noise_lr, rng, clock=None):
    labels = np.asarray(labels, dtype=np.int64)
    x = rng.normal(size=(len(labels), model.input_dim))
    for step in range(steps):
        _, dx = backward(model, x, labels, "task", return_input_grad=True)
        if clock is not None:
            clock.charge(step_cost(model, len(labels)) + len(labels) * model.layers[0].weights.size)
        x = x + noise_lr * dx
        if not np.isfinite(x).all():
            raise NumericOverflowError(f"non-finite noise after step {step}", "unsir noise")
    return x


def synthesize_noise(model, label, d, steps, noise_lr, seed):
    """Error-maximising input for ``label``: gradient ascent on the loss w.r.t. the input."""
    if d != model.input_dim:
        raise ConfigError(f"noise dim {d} does not match model input dim {model.input_dim}")
    if steps < 1:
        raise ConfigError("noise synthesis needs at least one step")
    return _noise_batch(model, [label], steps, noise_lr, np.random.default_rng(seed))[0]


def unsir(model, retain, forget, cfg: MethodConfig, clock=None):
    """Impair on retain plus error-maximising noise, then repair on retain.

    One noise vector is synthesised per forget sample and keeps that
    sample's label. The impaired model is kept in ``stages["impair"]``.
    """
    _check(cfg, ("unsir",), model)
    clock = clock or WallClock()
    rng = np.random.default_rng(cfg.seed)
    noise_rng = np.random.default_rng([cfg.seed, 2])
    stages = {}

    def run():
        if len(forget):
            noise = _noise_batch(model, forget.y, cfg.noise_steps, cfg.noise_lr, noise_rng, clock)
            impair_data = retain.concat(SampleSet(noise, forget.y, np.full(len(forget), -1)))
        else:
            impair_data = retain
        m = model
        for epoch in range(cfg.epochs):
            m = _sgd_epoch(m, impair_data, cfg.lr, cfg.batch_size, rng, clock, context=f"unsir impair {epoch}")
        stages["impair"] = m
        for epoch in range(cfg.epochs):
            m = _sgd_epoch(m, retain, cfg.lr, cfg.batch_size, rng, clock, context=f"unsir repair {epoch}")
        return m

    m, elapsed = _timed(clock, run)
    return UnlearnOutcome(m, elapsed, cfg, stages)


def bad_teaching(model, retain, forget, cfg: MethodConfig, clock=None, incompetent=None):
    """Distil from the original on retain and from an incompetent teacher on forget.

    ``incompetent`` defaults to ``"frozen-model"`` (a freshly initialised,
    untrained copy of the architecture) for ``bt`` and ``"uniform"`` (all-equal
    logits) for ``bt_light``.
    """
    _check(cfg, ("bt", "bt_light"), model)
    clock = clock or WallClock()
    if incompetent is None:
        incompetent = "frozen-model" if cfg.method == "bt" else "uniform"
    if incompetent not in ("frozen-model", "uniform"):
        raise ConfigError(f"unknown incompetent teacher {incompetent!r}")
    rng = np.random.default_rng(cfg.seed)
    competent = model
    bad = init_model(model.dims, seed=cfg.seed + 104729) if incompetent == "frozen-model" else None
    n_r, n_f = len(retain), len(forget)

    def run():
        if n_r + n_f == 0 or cfg.epochs == 0:
            return model
        X = np.vstack([retain.X, forget.X])
        y = np.concatenate([retain.y, forget.y])
        is_forget = np.arange(n_r + n_f) >= n_r
        m = model
        for epoch in range(cfg.epochs):
            for b, idx in enumerate(_batches(rng.permutation(n_r + n_f), cfg.batch_size)):
                xb, fb = X[idx], is_forget[idx]
                target = np.zeros((len(idx), model.n_classes))
                if (~fb).any():
                    target[~fb] = forward(competent, xb[~fb])
                if fb.any() and bad is not None:
                    target[fb] = forward(bad, xb[fb])
                grads = backward(m, xb, y[idx], "kl", None, target)
                clock.charge(step_cost(m, len(idx)) + forward_cost(competent, int((~fb).sum()))
                             + (forward_cost(bad, int(fb.sum())) if bad is not None else 0))
                m = apply_step(m, grads, cfg.lr, "descent", context=f"{cfg.method} epoch {epoch} batch {b}")
        return m

    m, elapsed = _timed(clock, run)
    return UnlearnOutcome(m, elapsed, cfg)


def scrub(model, retain, forget, cfg: MethodConfig, clock=None):
    """Teacher-student unlearning with a frozen copy of ``model`` as teacher.

    Each cycle interleaves up to ``scrub_max_steps`` ascent epochs on
    KL(student || teacher) over forget with ``scrub_min_steps`` descent
    epochs on KL + cross-entropy over retain.
    """
    _check(cfg, ("scrub",), model)
    clock = clock or WallClock()
    rng = np.random.default_rng(cfg.seed)
    teacher = model

    def run():
        m = model
        for cycle in range(cfg.epochs):
            for i in range(max(cfg.scrub_max_steps, cfg.scrub_min_steps)):
                if i < cfg.scrub_max_steps:
                    m = _sgd_epoch(m, forget, cfg.lr, cfg.batch_size, rng, clock, direction="ascent",
                                   loss="kl", teacher=teacher, context=f"scrub max {cycle}.{i}")
                if i < cfg.scrub_min_steps:
                    m = _sgd_epoch(m, retain, cfg.lr, cfg.batch_size, rng, clock, loss="kl+task",
                                   teacher=teacher, context=f"scrub min {cycle}.{i}")
        return m

    m, elapsed = _timed(clock, run)
    return UnlearnOutcome(m, elapsed, cfg)


def run_method(model, retain, forget, cfg: MethodConfig, clock=None):
    """Dispatch on ``cfg.method``; each method receives only the sets it uses."""
    cfg.validate(model.n_layers)
    m = cfg.method
    if m == "ft":
        return ft(model, retain, cfg, clock)
    if m == "cf_k":
        return cf_k(model, retain, cfg, clock)
    if m == "ng":
        return ng(model, forget, cfg, clock)
    if m == "ng_plus":
        return ng_plus(model, retain, forget, cfg, clock)
    if m == "unsir":
        return unsir(model, retain, forget, cfg, clock)
    if m in ("bt", "bt_light"):
        return bad_teaching(model, retain, forget, cfg, clock)
    if m == "scrub":
        return scrub(model, retain, forget, cfg, clock)
    raise ConfigError(f"{m!r} is a baseline, not an unlearning method")


def default_grid(methods=METHODS, **overrides):
    """One config per (method, lr) over the default learning-rate families."""
    return [replace(MethodConfig(method=m, lr=lr), **overrides) for m in methods for lr in DEFAULT_LRS[m]]
