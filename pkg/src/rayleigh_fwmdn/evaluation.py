"""Scores, experiment protocols and report artifacts for the inversion models."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .dataset import Dataset, NoiseSpec, apply_noise, philox, split_dataset
from .dispersion import RootSearchConfig, dispersion_curves
from .nn import (
    DenseNetSpec,
    MDNHead,
    Model,
    TrainConfig,
    predict_means,
    train,
)

__all__ = [
    "MetricError",
    "EvalReport",
    "r_squared",
    "nearest_component",
    "metric_M",
    "candidate_means",
    "forward_exact",
    "y_consistency",
    "evaluate",
    "noise_robustness_sweep",
    "toy_generate",
    "toy_experiment",
    "ToyReport",
    "nonuniqueness_probe",
    "write_csv",
]


class MetricError(ValueError):
    pass


def r_squared(pred, target, per_entry: bool = False):
    """``1 - sum (pred - t)^2 / sum (t - mean t)^2``, pooled over entries or per column."""
    p = np.asarray(pred, dtype=float)
    t = np.asarray(target, dtype=float)
    if p.shape != t.shape:
        raise MetricError(f"shape mismatch {p.shape} vs {t.shape}")
    if t.ndim == 1:
        p, t = p[:, None], t[:, None]
    if t.shape[0] < 2:
        raise MetricError("need at least 2 samples")
    ss_res = np.sum((p - t) ** 2, axis=0)
    ss_tot = np.sum((t - t.mean(axis=0)) ** 2, axis=0)
    if per_entry:
        if np.any(ss_tot == 0):
            raise MetricError("zero target variance in some entry")
        return 1.0 - ss_res / ss_tot
    if ss_tot.sum() == 0:
        raise MetricError("zero target variance")
    return float(1.0 - ss_res.sum() / ss_tot.sum())


def nearest_component(means, target) -> np.ndarray:
    """Index of the candidate closest to each target; ties go to the lowest index."""
    means = np.asarray(means, dtype=float)
    d = np.sum((means - np.asarray(target, dtype=float)[:, None, :]) ** 2, axis=2)
    return np.argmin(d, axis=1)


def metric_M(means, target, per_entry: bool = False):
    """R^2 of the candidate nearest to each target (chosen on the full vector)."""
    means = np.asarray(means, dtype=float)
    if means.ndim != 3 or means.shape[1] < 1:
        raise MetricError("means must have shape (N, K, n)")
    k = nearest_component(means, target)
    best = means[np.arange(means.shape[0]), k]
    return r_squared(best, target, per_entry=per_entry)


def candidate_means(model: Model, y) -> np.ndarray:
    """``(N, K, n)`` candidates: mixture means, or the single output of a linear head."""
    if model.spec.head is None:
        return model.predict(y)[:, None, :]
    return predict_means(model, y)


def forward_exact(x, omegas, cfg: RootSearchConfig | None = None):
    """Dispersion curves of profiles, NaN rows where the profile is unphysical or unsolvable."""
    x = np.asarray(x, dtype=float)
    out = np.full((x.shape[0], np.size(omegas)), np.nan)
    ok = np.all(x > 0, axis=1) & np.all(np.isfinite(x), axis=1)
    if ok.any():
        out[ok] = dispersion_curves(x[ok], omegas, cfg)
    return out


def y_consistency(mu_star, y_target, omegas=None, surrogate: Model | None = None, cfg=None, y_pred=None):
    """R^2 between forward-propagated predictions and ``y_target``.

    Uses the exact forward model unless ``surrogate`` is given; ``y_pred`` may
    carry precomputed curves.  Returns ``(r2, n_excluded)``; rows whose forward
    solve failed are excluded.
    """
    if y_pred is None:
        y_pred = surrogate.predict(mu_star) if surrogate is not None else forward_exact(mu_star, omegas, cfg)
    ok = np.all(np.isfinite(y_pred), axis=1)
    excluded = int((~ok).sum())
    if ok.sum() < 2:
        return math.nan, excluded
    return r_squared(y_pred[ok], np.asarray(y_target)[ok]), excluded


@dataclass
class EvalReport:
    overall: float
    per_entry: list[float]
    n_samples: int
    noise: dict
    metric: str = "M"
    y_r2: dict = field(default_factory=dict)
    y_r2_noised: dict = field(default_factory=dict)
    excluded: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(model, x, y_input, y_clean=None, omegas=None, surrogate=None, exact=True, noise: NoiseSpec | None = None, cfg=None):
    """Score one model on one (possibly noised) input set."""
    means = candidate_means(model, y_input)
    k = nearest_component(means, x)
    best = means[np.arange(len(x)), k]
    rep = EvalReport(
        overall=r_squared(best, x) if means.shape[1] == 1 else metric_M(means, x),
        per_entry=[float(v) for v in r_squared(best, x, per_entry=True)],
        n_samples=int(len(x)),
        noise=(noise or NoiseSpec()).to_dict() | {"label": (noise or NoiseSpec()).label},
        metric="R2" if means.shape[1] == 1 else "M",
    )
    y_clean = y_input if y_clean is None else y_clean
    noised = noise is not None and noise.kind != "none"
    modes = []
    if exact and omegas is not None:
        modes.append(("exact", None))
    if surrogate is not None:
        modes.append(("surrogate", surrogate))
    for label, sur in modes:
        y_pred = sur.predict(best) if sur is not None else forward_exact(best, omegas, cfg)
        rep.y_r2[label], rep.excluded[label] = y_consistency(best, y_clean, y_pred=y_pred)
        if noised:
            rep.y_r2_noised[label], _ = y_consistency(best, y_input, y_pred=y_pred)
    return rep


def noise_robustness_sweep(model, test: Dataset, specs, surrogate=None, exact=True, cfg=None):
    """One report per noise spec, in the given order."""
    reports = []
    for spec in specs:
        y_in = apply_noise(test.y, spec)
        reports.append(evaluate(model, test.x, y_in, test.y, test.omegas, surrogate, exact, spec, cfg))
    return reports


# ---------------------------------------------------------------------------
# toy problem: y = x + 0.3 sin(2 pi x) + noise, inverse is multivalued
# ---------------------------------------------------------------------------

def toy_generate(n: int, seed: int, noise=None):
    """``x ~ U(0,1)``, ``eps ~ U(-0.1, 0.1)``, ``y = x + 0.3 sin(2 pi x) + eps``.

    ``noise`` overrides the drawn eps (scalar or array).
    """
    if n < 1:
        raise MetricError("n must be at least 1")
    gen = philox(seed, 0x544F_59)
    x = gen.random(n)
    eps = gen.uniform(-0.1, 0.1, n) if noise is None else np.broadcast_to(np.asarray(noise, float), (n,))
    return x, x + 0.3 * np.sin(2 * np.pi * x) + eps


@dataclass
class ToyReport:
    fnn_r2: float
    mdn_M: float
    fnn_train_r2: float
    n: int
    seed: int
    scatter_fnn: np.ndarray = field(repr=False, default=None)
    scatter_mdn: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {"fnn_r2": self.fnn_r2, "mdn_M": self.mdn_M, "fnn_train_r2": self.fnn_train_r2, "n": self.n, "seed": self.seed}


TOY_HIDDEN = (32, 32)
TOY_TRAIN = TrainConfig(lr=3e-3, batch_size=128, epochs=400, patience=30)


def toy_experiment(seed: int = 0, n: int = 10_000, n_plot: int = 200, hidden=TOY_HIDDEN, cfg: TrainConfig = TOY_TRAIN,
                   K: int = 4, sigma_scale: float = 1.0):
    """Fit ``x | y`` with a plain FNN and a K-component MDN; scores on the test split.

    Plot data: ``n_plot`` test rows of ``(y, x_true, x_pred)``; MDN predictions
    are single draws from each row's full mixture.
    """
    x, y = toy_generate(n, seed)
    X, Y = x[:, None], y[:, None]
    sp = split_dataset(n, seed)
    tr, va, te = sp.train, sp.validation, sp.test
    cfg = TrainConfig(**{**asdict(cfg), "seed": seed})

    fnn = Model.create(DenseNetSpec.build(1, hidden, 1, alpha_w=1e-5, alpha_b=1e-5), Y[tr], X[tr], seed=seed)
    train(fnn, "mse", Y[tr], X[tr], Y[va], X[va], cfg)
    fnn_r2 = r_squared(fnn.predict(Y[te]), X[te])
    fnn_train = r_squared(fnn.predict(Y[tr]), X[tr])

    head = MDNHead(K, 1, sigma_scale)
    mdn = Model.create(DenseNetSpec.build(1, hidden, mdn=head, alpha_w=1e-5, alpha_b=1e-5), Y[tr], X[tr], seed=seed)
    train(mdn, "nll", Y[tr], X[tr], Y[va], X[va], cfg)
    M = metric_M(predict_means(mdn, Y[te]), X[te])

    rows = philox(seed, 0x504C_4F54).choice(te, size=min(n_plot, te.size), replace=False)
    draws = mdn.mixture(Y[rows]).sample(philox(seed, 0x4452_4157))[:, 0]
    scatter_fnn = np.column_stack([y[rows], x[rows], fnn.predict(Y[rows])[:, 0]])
    scatter_mdn = np.column_stack([y[rows], x[rows], draws])
    return ToyReport(float(fnn_r2), float(M), float(fnn_train), n, seed, scatter_fnn, scatter_mdn)


# ---------------------------------------------------------------------------
# non-uniqueness
# ---------------------------------------------------------------------------

def _pair_mask(x, y, i, j, y_rel, x_rel):
    ny = np.minimum(np.linalg.norm(y[i], axis=1), np.linalg.norm(y[j], axis=1))
    nx = np.maximum(np.linalg.norm(x[i], axis=1), np.linalg.norm(x[j], axis=1))
    dy = np.linalg.norm(y[i] - y[j], axis=1)
    dx = np.linalg.norm(x[i] - x[j], axis=1)
    return (dy < y_rel * ny) & (dx > x_rel * nx), dy / ny, dx / nx


_PAIR_BLOCK = 1 << 18


def nonuniqueness_probe(x, y, y_rel: float = 0.005, x_rel: float = 0.10):
    """Pairs ``i < j`` with close curves but distant profiles.

    ``|y_i - y_j| < y_rel * min(|y_i|, |y_j|)`` and
    ``|x_i - x_j| > x_rel * max(|x_i|, |x_j|)`` (Euclidean norms).  Returns an
    ``(P, 4)`` array of ``(i, j, dy_rel, dx_rel)`` sorted by ``dy_rel``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2:
        raise MetricError("need at least 2 samples")
    r = y_rel * np.linalg.norm(y, axis=1).max()
    cand = cKDTree(y).query_pairs(r, output_type="ndarray")
    if cand.size == 0:
        return np.empty((0, 4))
    cand = cand[np.lexsort((cand[:, 1], cand[:, 0]))]
    parts = []
    for s in range(0, len(cand), _PAIR_BLOCK):
        c = cand[s:s + _PAIR_BLOCK]
        ok, dy, dx = _pair_mask(x, y, c[:, 0], c[:, 1], y_rel, x_rel)
        parts.append(np.column_stack([c[ok, 0], c[ok, 1], dy[ok], dx[ok]]))
    out = np.concatenate(parts)
    return out[np.argsort(out[:, 2], kind="stable")]


def write_csv(path, header: list[str], rows) -> None:
    """Plot data: one comma-separated header line, then full-precision rows."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(f"{v:.17g}" for v in r) + "\n")


def save_reports(path, reports, extra: dict | None = None) -> None:
    doc = {"reports": [r.to_dict() if hasattr(r, "to_dict") else r for r in reports]}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
