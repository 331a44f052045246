"""Small dense-network engine in float64 numpy with exact backpropagation.

Three losses are supported:

* ``mse``     linear head, mean over batch and outputs of squared error
* ``nll``     mixture-density head, diagonal Gaussian negative log likelihood
* ``fwmdn``   ``nll`` plus ``|y_hat - y|^2`` where ``y_hat = sum_k pi_k f(mu_k)``
              goes through a frozen forward surrogate ``f``

Weights are stored as ``W`` of shape ``(fan_in, fan_out)`` so a batch is pushed
through as ``a @ W + b``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dataset import philox

FORMAT_VERSION = 1
LOG_2PI = math.log(2.0 * math.pi)
SIGMA_FLOOR = 1e-8  # relative to sigma_scale

__all__ = [
    "NetworkError",
    "TrainingFault",
    "MDNHead",
    "DenseNetSpec",
    "Parameters",
    "MixtureParams",
    "Model",
    "TrainConfig",
    "TrainLog",
    "init_params",
    "forward",
    "forward_cached",
    "backward",
    "mdn_head",
    "mdn_nll",
    "mdn_nll_grad",
    "fwmdn_loss",
    "loss_and_grad",
    "regularization",
    "train",
    "predict_means",
    "save_model",
    "load_model",
    "FW_FNN_HIDDEN",
    "FWMDN_HIDDEN",
    "FNN9_HIDDEN",
    "FNN35_HIDDEN",
]

# hidden layer widths of the reference architectures
FW_FNN_HIDDEN = (40, 100, 200, 200)
FWMDN_HIDDEN = (400, 300, 300, 300, 300)
FNN9_HIDDEN = (400, 400, 300, 300, 300)
FNN35_HIDDEN = (150, 150, 150, 100, 100)


class NetworkError(ValueError):
    pass


class TrainingFault(RuntimeError):
    def __init__(self, msg, sample_index=None, log=None):
        super().__init__(msg)
        self.sample_index = sample_index
        self.log = log


# ---------------------------------------------------------------------------
# specs and parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MDNHead:
    K: int
    n: int
    sigma_scale: float = 1e-3

    def __post_init__(self):
        if self.K < 1 or self.n < 1 or not self.sigma_scale > 0:
            raise NetworkError(f"invalid mixture head {self}")

    @property
    def width(self) -> int:
        return (2 * self.n + 1) * self.K


@dataclass(frozen=True)
class DenseNetSpec:
    layer_sizes: tuple[int, ...]
    hidden_activation: str = "tanh"
    head: MDNHead | None = None
    alpha_w: float = 0.0
    alpha_b: float = 0.0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 3 or min(sizes) < 1:
            raise NetworkError("need input, at least one hidden layer, and output sizes")
        if self.hidden_activation not in _ACT:
            raise NetworkError(f"unknown activation {self.hidden_activation!r}")
        if self.head is not None and sizes[-1] != self.head.width:
            raise NetworkError(f"mixture head needs {self.head.width} outputs, got {sizes[-1]}")
        if self.alpha_w < 0 or self.alpha_b < 0:
            raise NetworkError("regularization coefficients must be non-negative")

    @classmethod
    def build(cls, n_in, hidden, n_out=None, activation="tanh", mdn: MDNHead | None = None, alpha_w=0.0, alpha_b=0.0):
        out = mdn.width if mdn is not None else n_out
        return cls((n_in, *hidden, out), activation, mdn, alpha_w, alpha_b)

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_sizes"] = list(self.layer_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DenseNetSpec":
        head = MDNHead(**d["head"]) if d.get("head") else None
        return cls(tuple(d["layer_sizes"]), d["hidden_activation"], head, float(d["alpha_w"]), float(d["alpha_b"]))


@dataclass
class Parameters:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def flat(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts += [W.ravel(), b.ravel()]
        return np.concatenate(parts)

    @classmethod
    def unflat(cls, spec: DenseNetSpec, vec) -> "Parameters":
        vec = np.asarray(vec, dtype=float)
        if vec.size != spec.n_params:
            raise NetworkError(f"expected {spec.n_params} parameters, got {vec.size}")
        Ws, bs, i = [], [], 0
        for a, b in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
            Ws.append(vec[i:i + a * b].reshape(a, b).copy())
            i += a * b
            bs.append(vec[i:i + b].copy())
            i += b
        return cls(Ws, bs)

    def zeros_like(self) -> "Parameters":
        return Parameters([np.zeros_like(W) for W in self.weights], [np.zeros_like(b) for b in self.biases])

    def copy(self) -> "Parameters":
        return Parameters([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def check(self, spec: DenseNetSpec) -> None:
        s = spec.layer_sizes
        if len(self.weights) != len(s) - 1 or len(self.biases) != len(s) - 1:
            raise NetworkError("layer count does not match spec")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (s[i], s[i + 1]) or b.shape != (s[i + 1],):
                raise NetworkError(f"layer {i} shape mismatch")


def init_params(spec: DenseNetSpec, seed: int) -> Parameters:
    """Fan-in scaled uniform weights U(-sqrt(3/fan_in), sqrt(3/fan_in)), zero biases."""
    gen = philox(seed, 0x494E_4954)
    Ws, bs = [], []
    for a, b in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        lim = math.sqrt(3.0 / a)
        Ws.append(gen.uniform(-lim, lim, size=(a, b)))
        bs.append(np.zeros(b))
    return Parameters(Ws, bs)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _relu_grad(a):
    return (a > 0).astype(float)


_ACT: dict[str, tuple[Callable, Callable]] = {
    # derivative expressed through the activation output
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "relu": (lambda z: np.maximum(z, 0.0), _relu_grad),
}


def forward_cached(spec: DenseNetSpec, params: Parameters, X) -> tuple[np.ndarray, list[np.ndarray]]:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != spec.n_in:
        raise NetworkError(f"input width {X.shape[-1]} != {spec.n_in}")
    act = _ACT[spec.hidden_activation][0]
    acts = [X]
    a = X
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W + b
        a = z if i == last else act(z)
        acts.append(a)
    return a, acts


def forward(spec: DenseNetSpec, params: Parameters, X) -> np.ndarray:
    """Raw network outputs (before any mixture head)."""
    return forward_cached(spec, params, X)[0]


def backward(spec: DenseNetSpec, params: Parameters, acts, d_out, need_input=False):
    """Gradients of a scalar loss given ``d_out = dL/d(raw outputs)``.

    Returns ``(grads, d_input)``; ``d_input`` is None unless requested.
    """
    dact = _ACT[spec.hidden_activation][1]
    grads = params.zeros_like()
    delta = np.asarray(d_out, dtype=float)
    L = len(params.weights)
    for i in range(L - 1, -1, -1):
        grads.weights[i] = acts[i].T @ delta
        grads.biases[i] = delta.sum(axis=0)
        if i > 0 or need_input:
            delta = delta @ params.weights[i].T
            if i > 0:
                delta = delta * dact(acts[i])
    return grads, (delta if need_input else None)


def regularization(spec: DenseNetSpec, params: Parameters) -> float:
    w = sum(float(np.sum(W * W)) for W in params.weights)
    b = sum(float(np.sum(v * v)) for v in params.biases)
    return spec.alpha_w * w + spec.alpha_b * b


def _add_regularization_grad(spec, params, grads):
    for i in range(len(params.weights)):
        grads.weights[i] += 2.0 * spec.alpha_w * params.weights[i]
        grads.biases[i] += 2.0 * spec.alpha_b * params.biases[i]


# ---------------------------------------------------------------------------
# mixture head
# ---------------------------------------------------------------------------

@dataclass
class MixtureParams:
    """Batched mixture: ``pis (B, K)``, ``mus (B, K, n)``, ``sigmas (B, K, n)``."""

    pis: np.ndarray
    mus: np.ndarray
    sigmas: np.ndarray
    logits: np.ndarray | None = None
    sig_raw: np.ndarray | None = None
    mu_raw: np.ndarray | None = None

    @property
    def K(self) -> int:
        return self.pis.shape[-1]

    def sample(self, gen: np.random.Generator) -> np.ndarray:
        """One draw from each row's mixture."""
        B = self.pis.shape[0]
        u = gen.random(B)
        k = np.minimum((np.cumsum(self.pis, axis=1) < u[:, None]).sum(axis=1), self.K - 1)
        rows = np.arange(B)
        return self.mus[rows, k] + self.sigmas[rows, k] * gen.standard_normal((B, self.mus.shape[2]))


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def mdn_head(raw, K: int, n: int, sigma_scale: float = 1e-3) -> MixtureParams:
    """Split raw outputs ``(B, (2n+1)K)`` into mixture parameters.

    Component ``k`` occupies slots ``[(2n+1)k, (2n+1)(k+1))``: n means (ReLU),
    n scales (``sigma_scale * sigmoid``), then one weight logit (softmax over k).
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    if raw.shape[-1] != (2 * n + 1) * K:
        raise NetworkError(f"raw width {raw.shape[-1]} != (2n+1)K = {(2 * n + 1) * K}")
    blk = raw.reshape(raw.shape[0], K, 2 * n + 1)
    mu_raw = blk[:, :, :n]
    sig_raw = blk[:, :, n:2 * n]
    logits = blk[:, :, 2 * n]
    sig = np.maximum(sigma_scale * _sigmoid(sig_raw), SIGMA_FLOOR * sigma_scale)
    return MixtureParams(_softmax(logits), np.maximum(mu_raw, 0.0), sig, logits, sig_raw, mu_raw)


def _component_logp(mix: MixtureParams, x):
    x = np.asarray(x, dtype=float)[:, None, :]
    z = (x - mix.mus) / mix.sigmas
    logp = -0.5 * np.sum(z * z + LOG_2PI, axis=2) - np.sum(np.log(mix.sigmas), axis=2)
    with np.errstate(divide="ignore"):
        return logp + np.log(mix.pis), z


def mdn_nll(mix: MixtureParams, x, reduction: str = "sum"):
    """``-sum_j log sum_k pi_k N(x_j; mu_k, diag sigma_k^2)`` via log-sum-exp.

    ``reduction`` is ``sum``, ``mean`` or ``none`` (per-sample values).
    """
    lp, _ = _component_logp(mix, x)
    m = lp.max(axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        per = -(m[:, 0] + np.log(np.exp(lp - m).sum(axis=1)))
    bad = ~np.isfinite(per)
    if bad.any():
        raise TrainingFault("non-finite mixture likelihood", sample_index=int(np.argmax(bad)))
    if reduction == "none":
        return per
    return float(per.sum() if reduction == "sum" else per.mean())


def _head_backward(mix: MixtureParams, head: MDNHead, d_mu, d_sig, d_logit):
    """Chain mixture-parameter gradients back to the raw output slots."""
    B, K, n = mix.mus.shape
    g_mu = d_mu * (mix.mu_raw > 0)
    s = _sigmoid(mix.sig_raw)
    floored = head.sigma_scale * s <= SIGMA_FLOOR * head.sigma_scale
    g_sig = np.where(floored, 0.0, d_sig * head.sigma_scale * s * (1.0 - s))
    out = np.empty((B, K, 2 * n + 1))
    out[:, :, :n] = g_mu
    out[:, :, n:2 * n] = g_sig
    out[:, :, 2 * n] = d_logit
    return out.reshape(B, K * (2 * n + 1))


def mdn_nll_grad(mix: MixtureParams, x, head: MDNHead, weight=1.0):
    """Per-sample NLL and its gradient w.r.t. raw outputs, each scaled by ``weight``."""
    lp, z = _component_logp(mix, x)
    m = lp.max(axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        se = np.exp(lp - m)
        tot = se.sum(axis=1, keepdims=True)
        per = -(m[:, 0] + np.log(tot[:, 0]))
    bad = ~np.isfinite(per)
    if bad.any():
        raise TrainingFault("non-finite mixture likelihood", sample_index=int(np.argmax(bad)))
    r = (se / tot)[:, :, None]  # responsibilities
    d_mu = -r * z / mix.sigmas
    d_sig = r * (1.0 - z * z) / mix.sigmas
    d_logit = mix.pis - r[:, :, 0]
    return per * weight, _head_backward(mix, head, d_mu * weight, d_sig * weight, d_logit * weight)


# ---------------------------------------------------------------------------
# models with standardization
# ---------------------------------------------------------------------------

@dataclass
class Model:
    """Network plus the affine maps tying it to physical units.

    Inputs are standardized with ``in_mean``/``in_std``.  A linear head's raw
    output is mapped back as ``raw * out_std + out_mean``; mixture heads emit
    physical means directly.  ``create`` with ``targets`` fits the output map
    (linear head) or sets the mean-slot biases to the target mean (mixture head).
    """

    spec: DenseNetSpec
    params: Parameters
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray | None = None
    out_std: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def create(cls, spec, inputs, targets=None, seed=0, meta=None):
        inputs = np.asarray(inputs, dtype=float)
        sd = inputs.std(axis=0)
        m = cls(spec, init_params(spec, seed), inputs.mean(axis=0), np.where(sd > 0, sd, 1.0), meta=dict(meta or {}))
        if targets is None:
            return m
        t = np.asarray(targets, dtype=float)
        if spec.head is None:
            ts = t.std(axis=0)
            m.out_mean, m.out_std = t.mean(axis=0), np.where(ts > 0, ts, 1.0)
        else:
            # start every component mean at the target mean, inside the ReLU's active region
            h = spec.head
            b = m.params.biases[-1].reshape(h.K, 2 * h.n + 1)
            b[:, :h.n] = t.mean(axis=0)
            m.params.biases[-1] = b.ravel()
        return m

    def standardize(self, inputs):
        return (np.asarray(inputs, dtype=float) - self.in_mean) / self.in_std

    def encode_targets(self, t):
        if self.spec.head is not None or self.out_mean is None:
            return np.asarray(t, dtype=float)
        return (np.asarray(t, dtype=float) - self.out_mean) / self.out_std

    def raw(self, inputs):
        return forward(self.spec, self.params, self.standardize(inputs))

    def predict(self, inputs) -> np.ndarray:
        """Physical outputs of a linear-head model."""
        if self.spec.head is not None:
            raise NetworkError("predict() is for linear heads; use mixture() or predict_means()")
        out = self.raw(inputs)
        return out * self.out_std + self.out_mean if self.out_mean is not None else out

    def mixture(self, inputs) -> MixtureParams:
        h = self.spec.head
        if h is None:
            raise NetworkError("model has no mixture head")
        return mdn_head(self.raw(inputs), h.K, h.n, h.sigma_scale)

    def value_and_input_grad(self, inputs, d_out):
        """Physical outputs and the vector-Jacobian product ``d_out^T d(out)/d(inputs)``."""
        z = self.standardize(inputs)
        raw, acts = forward_cached(self.spec, self.params, z)
        scale = self.out_std if self.out_mean is not None else 1.0
        shift = self.out_mean if self.out_mean is not None else 0.0
        _, d_in = backward(self.spec, self.params, acts, np.asarray(d_out) * scale, need_input=True)
        return raw * scale + shift, d_in / self.in_std


def predict_means(model: Model, y) -> np.ndarray:
    """The K component means for each input row, shape ``(B, K, n)``."""
    return model.mixture(y).mus


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _fw_term(mix: MixtureParams, y, surrogate: Model, weight: float):
    """``|sum_k pi_k f(mu_k) - y|^2`` per sample and its gradients w.r.t. pis and mus."""
    B, K, n = mix.mus.shape
    mus = mix.mus.reshape(B * K, n)
    f_mu = surrogate.predict(mus).reshape(B, K, -1)
    y_hat = np.einsum("bk,bkw->bw", mix.pis, f_mu)
    res = y_hat - np.asarray(y, dtype=float)
    per = np.sum(res * res, axis=1)
    g_yhat = 2.0 * res * weight
    g_pi = np.einsum("bw,bkw->bk", g_yhat, f_mu)
    d_out = (mix.pis[:, :, None] * g_yhat[:, None, :]).reshape(B * K, -1)
    _, g_mu = surrogate.value_and_input_grad(mus, d_out)
    return per * weight, g_pi, g_mu.reshape(B, K, n), y_hat


def fwmdn_loss(mix: MixtureParams, x, y, surrogate: Model, spec: DenseNetSpec, params: Parameters, reduction="sum"):
    """Mixture NLL + forward misfit + ``alpha_b sum b^2 + alpha_w sum w^2`` of the trunk."""
    nll = mdn_nll(mix, x, reduction="none")
    fw, _, _, _ = _fw_term(mix, y, surrogate, 1.0)
    data = nll + fw
    total = data.sum() if reduction == "sum" else data.mean()
    return float(total) + regularization(spec, params)


def loss_and_grad(model: Model, kind: str, inputs, targets, surrogate: Model | None = None, y_clean=None, reduction="mean"):
    """Total loss (data term reduced per ``reduction`` plus regularization) and parameter gradients.

    ``inputs`` are physical (unstandardized).  For ``fwmdn`` the forward term
    compares against ``y_clean`` (defaults to ``inputs``).
    """
    spec, params = model.spec, model.params
    z = model.standardize(inputs)
    raw, acts = forward_cached(spec, params, z)
    B = raw.shape[0]
    w = 1.0 / B if reduction == "mean" else 1.0
    if kind == "mse":
        if spec.head is not None:
            raise NetworkError("mse loss needs a linear head")
        t = model.encode_targets(targets)
        diff = raw - t
        data = float(np.sum(diff * diff)) / diff.shape[1] * w
        d_out = 2.0 * diff / diff.shape[1] * w
    elif kind in ("nll", "fwmdn"):
        h = spec.head
        if h is None:
            raise NetworkError(f"{kind} loss needs a mixture head")
        mix = mdn_head(raw, h.K, h.n, h.sigma_scale)
        per, d_out = mdn_nll_grad(mix, targets, h, weight=w)
        data = float(per.sum())
        if kind == "fwmdn":
            if surrogate is None:
                raise NetworkError("fwmdn loss needs a surrogate")
            yc = inputs if y_clean is None else y_clean
            fw, g_pi, g_mu, _ = _fw_term(mix, yc, surrogate, w)
            data += float(fw.sum())
            g_logit = mix.pis * (g_pi - np.sum(mix.pis * g_pi, axis=1, keepdims=True))
            d_out = d_out + _head_backward(mix, h, g_mu, np.zeros_like(mix.sigmas), g_logit)
    else:
        raise NetworkError(f"unknown loss kind {kind!r}")
    grads, _ = backward(spec, params, acts, d_out)
    _add_regularization_grad(spec, params, grads)
    return data + regularization(spec, params), grads


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 500
    patience: int = 20
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (self.lr > 0 and self.batch_size > 0 and self.epochs > 0 and self.patience > 0):
            raise NetworkError("training hyper-parameters must be positive")


@dataclass
class TrainLog:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def digest(self) -> str:
        blob = json.dumps({"t": self.train_loss, "v": self.val_loss, "b": self.best_epoch})
        return hashlib.sha256(blob.encode()).hexdigest()


def _eval_loss(model, kind, inputs, targets, surrogate, y_clean, batch=4096):
    tot = 0.0
    for s in range(0, len(inputs), batch):
        sl = slice(s, s + batch)
        yc = None if y_clean is None else y_clean[sl]
        # data term only, summed, then averaged over the full set
        z = model.standardize(inputs[sl])
        raw = forward(model.spec, model.params, z)
        if kind == "mse":
            d = raw - model.encode_targets(targets[sl])
            tot += float(np.sum(d * d)) / d.shape[1]
        else:
            h = model.spec.head
            mix = mdn_head(raw, h.K, h.n, h.sigma_scale)
            tot += float(mdn_nll(mix, targets[sl], reduction="sum"))
            if kind == "fwmdn":
                tot += float(_fw_term(mix, inputs[sl] if yc is None else yc, surrogate, 1.0)[0].sum())
    return tot / len(inputs) + regularization(model.spec, model.params)


def train(
    model: Model,
    kind: str,
    inputs,
    targets,
    val_inputs,
    val_targets,
    cfg: TrainConfig = TrainConfig(),
    surrogate: Model | None = None,
    y_clean=None,
    val_y_clean=None,
    progress=None,
) -> TrainLog:
    """Adam on mean mini-batch loss with early stopping; ``model`` ends at its best-validation state."""
    inputs, targets = np.asarray(inputs, float), np.asarray(targets, float)
    val_inputs, val_targets = np.asarray(val_inputs, float), np.asarray(val_targets, float)
    if kind == "fwmdn" and surrogate is None:
        raise NetworkError("fwmdn training needs a frozen surrogate")
    N = len(inputs)
    params = model.params
    m = [np.zeros_like(a) for a in params.weights + params.biases]
    v = [np.zeros_like(a) for a in params.weights + params.biases]
    log = TrainLog()
    best, best_val, wait, step = params.copy(), math.inf, 0, 0
    for epoch in range(cfg.epochs):
        order = philox(cfg.seed, 0x4550_4F43, epoch).permutation(N)
        tot = 0.0
        for s in range(0, N, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            yc = None if y_clean is None else y_clean[idx]
            loss, g = loss_and_grad(model, kind, inputs[idx], targets[idx], surrogate, yc)
            if not math.isfinite(loss):
                raise TrainingFault(f"loss diverged at epoch {epoch}", log=log)
            tot += loss * len(idx)
            step += 1
            c1 = 1.0 - cfg.beta1 ** step
            c2 = 1.0 - cfg.beta2 ** step
            for i, (p, gp) in enumerate(zip(params.weights + params.biases, g.weights + g.biases)):
                m[i] *= cfg.beta1
                m[i] += (1.0 - cfg.beta1) * gp
                v[i] *= cfg.beta2
                v[i] += (1.0 - cfg.beta2) * gp * gp
                p -= cfg.lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + cfg.eps)
        val = _eval_loss(model, kind, val_inputs, val_targets, surrogate, val_y_clean)
        if not math.isfinite(val):
            raise TrainingFault(f"validation loss diverged at epoch {epoch}", log=log)
        log.train_loss.append(tot / N)
        log.val_loss.append(val)
        if val < best_val:
            best_val, best, wait, log.best_epoch = val, params.copy(), 0, epoch
        else:
            wait += 1
        if progress is not None:
            progress(epoch, tot / N, val)
        if wait >= cfg.patience:
            break
    model.params = best
    return log


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _arr(a):
    return None if a is None else [float(v) for v in np.asarray(a).ravel()]


def save_model(model: Model, path, log: TrainLog | None = None) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "spec": model.spec.to_dict(),
        "standardization": {
            "in_mean": _arr(model.in_mean), "in_std": _arr(model.in_std),
            "out_mean": _arr(model.out_mean), "out_std": _arr(model.out_std),
        },
        "params": _arr(model.params.flat()),
        "seed": model.meta.get("seed"),
        "log_digest": log.digest() if log is not None else None,
        "meta": model.meta,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def load_model(path) -> Model:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise NetworkError(f"corrupt checkpoint: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format_version") != FORMAT_VERSION:
        raise NetworkError("unsupported or missing checkpoint format_version")
    spec = DenseNetSpec.from_dict(doc["spec"])
    params = Parameters.unflat(spec, doc["params"])
    st = doc["standardization"]

    def arr(k, n):
        if st.get(k) is None:
            return None
        a = np.array(st[k], dtype=float)
        if a.size != n:
            raise NetworkError(f"standardization {k} has {a.size} entries, expected {n}")
        return a

    return Model(
        spec, params, arr("in_mean", spec.n_in), arr("in_std", spec.n_in),
        arr("out_mean", spec.n_out), arr("out_std", spec.n_out), doc.get("meta") or {},
    )
