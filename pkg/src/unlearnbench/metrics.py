"""Utility, efficacy and efficiency scores, and their GUM combination.

GUM compares an unlearned model against two anchors: the gold model
(retrained without the forget set) and the original model. Utility is the
gap in test macro-F1 to gold, efficacy is where the unlearned MIA sits on
the original-to-gold segment, and efficiency is a log-time ratio to gold
retraining.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .errors import InputShapeError, InsufficientDataError, TimingError

MIN_MIA_POOL = 20
_DEGENERATE = 1e-12


def macro_f1(preds, labels, n_classes) -> float:
    """Unweighted mean of per-class F1 over all ``n_classes`` classes.

    A class that never occurs in either ``preds`` or ``labels`` scores 0.
    """
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise InputShapeError("preds and labels must be 1-D and of equal length")
    if preds.size == 0:
        raise InputShapeError("macro_f1 needs at least one prediction")
    for arr in (preds, labels):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise InputShapeError(f"class ids must lie in [0, {n_classes})")
    cm = np.bincount(labels * n_classes + preds, minlength=n_classes * n_classes).reshape(n_classes, n_classes)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    per_class = [2 * t / d if d else 0.0 for t, d in zip(tp.tolist(), denom.tolist())]
    return sum(per_class) / n_classes


def threshold_attack(member_train, nonmember_train, member_eval, nonmember_eval) -> float:
    """Held-out balanced accuracy of the best loss threshold.

    A sample is called a member when its loss is ``<= t``. The attack-train
    partition is picked by the smallest train loss ``a`` maximising balanced
    accuracy (or ``-inf``); ``t`` is then placed halfway between ``a`` and the
    next distinct train loss, the max-margin choice within that gap.
    """
    mt = np.sort(np.asarray(member_train, dtype=np.float64))
    nt = np.sort(np.asarray(nonmember_train, dtype=np.float64))
    values = np.unique(np.concatenate([mt, nt]))
    cand = np.concatenate([[-np.inf], values])
    tp = np.searchsorted(mt, cand, side="right")
    fp = np.searchsorted(nt, cand, side="right")
    # balanced accuracy scaled by 2*|mt|*|nt|, kept integral so ties are exact
    i = int(np.argmax(tp * len(nt) - fp * len(mt)))
    t = cand[i]
    if 0 < i < len(values):
        t = t + (values[i] - t) / 2.0
    me = np.asarray(member_eval, dtype=np.float64)
    ne = np.asarray(nonmember_eval, dtype=np.float64)
    return float(((me <= t).mean() + (ne > t).mean()) / 2.0)


def mia_from_losses(member_losses, nonmember_losses, seed) -> float:
    """Seeded 50/50 attack-train/attack-eval split of both pools, then :func:`threshold_attack`."""
    m = np.asarray(member_losses, dtype=np.float64)
    n = np.asarray(nonmember_losses, dtype=np.float64)
    if min(len(m), len(n)) < MIN_MIA_POOL:
        raise InsufficientDataError(f"MIA needs at least {MIN_MIA_POOL} members and non-members")
    rng = np.random.default_rng(seed)
    m = m[rng.permutation(len(m))]
    n = n[rng.permutation(len(n))]
    hm, hn = len(m) // 2, len(n) // 2
    return threshold_attack(m[:hm], n[:hn], m[hm:], n[hn:])


def mia_score(model, forget, test, seed) -> float:
    """Loss-threshold membership inference: forget set vs. unseen test samples."""
    from .nn_core import forward, per_sample_cross_entropy

    if min(len(forget), len(test)) < MIN_MIA_POOL:
        raise InsufficientDataError(f"MIA needs at least {MIN_MIA_POOL} forget and test samples")
    rng = np.random.default_rng([seed, 0x4D4941])
    size = min(len(forget), len(test))
    f_idx = np.arange(len(forget)) if size == len(forget) else np.sort(rng.choice(len(forget), size, replace=False))
    t_idx = np.sort(rng.choice(len(test), size, replace=False))
    member = per_sample_cross_entropy(forward(model, forget.X[f_idx]), forget.y[f_idx])
    nonmember = per_sample_cross_entropy(forward(model, test.X[t_idx]), test.y[t_idx])
    return mia_from_losses(member, nonmember, seed)


def _check_unit(name, v):
    if not (0.0 <= v <= 1.0):
        raise ValueError(f"{name} must lie in [0, 1], got {v}")


def utility_u(f1_t_unlearned, f1_t_gold) -> float:
    _check_unit("f1_t_unlearned", f1_t_unlearned)
    _check_unit("f1_t_gold", f1_t_gold)
    return 1.0 - abs(f1_t_gold - f1_t_unlearned)


def efficacy_e(mia_u, mia_g, mia_o) -> float:
    for name, v in (("mia_u", mia_u), ("mia_g", mia_g), ("mia_o", mia_o)):
        _check_unit(name, v)
    sat_u = min(mia_u, mia_o)
    sat_g = min(mia_g, (sat_u + mia_o) / 2.0)
    denom = mia_o - sat_g
    if abs(denom) < _DEGENERATE:
        return 1.0 if sat_u <= sat_g else 0.0
    e = 1.0 - ((sat_u - sat_g) / denom) ** 2
    return min(max(e, 0.0), 1.0)


def efficiency_t(elapsed_u, elapsed_g) -> float:
    """1 - log(T_u + 1) / log(T_g + 1), floored at 0 when unlearning is slower than retraining."""
    if not (elapsed_u > 0 and elapsed_g > 0):
        raise TimingError(f"elapsed times must be positive, got {elapsed_u} and {elapsed_g}")
    denom = math.log1p(elapsed_g)
    if denom <= 0:
        raise TimingError("gold retraining time too small for a log ratio")
    return max(0.0, 1.0 - math.log1p(elapsed_u) / denom)


@dataclass(frozen=True)
class GumWeights:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta) and self.alpha >= 0 and self.beta >= 0):
            raise ValueError("GUM weights must be finite and non-negative")


def gum(u, e, t, weights: Optional[GumWeights] = None) -> float:
    """Weighted harmonic mean of utility, efficacy and efficiency."""
    w = weights or GumWeights()
    for name, v in (("u", u), ("e", e), ("t", t)):
        _check_unit(name, v)
    if u == 0.0 or e == 0.0 or t == 0.0:
        return 0.0
    # (1+a+b)UET / (aET + bUT + UE), divided through by UET to avoid underflow
    return (1.0 + w.alpha + w.beta) / (w.alpha / u + w.beta / e + 1.0 / t)


def nomus(f1_t, mia, accuracy_weight=0.5) -> float:
    _check_unit("f1_t", f1_t)
    _check_unit("mia", mia)
    return accuracy_weight * f1_t + (1.0 - accuracy_weight) * (1.0 - 2.0 * abs(mia - 0.5))


def speedup(elapsed_g, elapsed_u) -> float:
    if not (elapsed_g > 0 and elapsed_u > 0):
        raise TimingError(f"elapsed times must be positive, got {elapsed_g} and {elapsed_u}")
    return elapsed_g / elapsed_u


@dataclass
class EvalRecord:
    method: str
    lr: Optional[float]
    seed: int
    f1_test: Optional[float] = None
    f1_forget: Optional[float] = None
    mia: Optional[float] = None
    elapsed: Optional[float] = None
    failed: bool = False
    error: Optional[str] = None
    u: Optional[float] = None
    e: Optional[float] = None
    t: Optional[float] = None
    gum: Optional[float] = None
    nomus: Optional[float] = None
    speedup: Optional[float] = None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})

    def derive(self, gold, original, weights=None, nomus_weight=0.5, baseline=False):
        """Fill U/E/T/GUM/NoMUS/speedup against the gold and original anchors.

        Baseline rows sit at retraining cost by convention: speedup 1 and
        T = 0, hence GUM = 0.
        """
        if self.failed:
            return self
        self.u = utility_u(self.f1_test, gold.f1_test)
        self.e = efficacy_e(self.mia, gold.mia, original.mia)
        if baseline:
            self.t, self.speedup = 0.0, 1.0
        else:
            self.t = efficiency_t(self.elapsed, gold.elapsed)
            self.speedup = speedup(gold.elapsed, self.elapsed)
        self.gum = gum(self.u, self.e, self.t, weights)
        self.nomus = nomus(self.f1_test, self.mia, nomus_weight)
        return self
