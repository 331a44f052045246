"""Synthetic (Vs profile, dispersion curve) sample sets.

Random numbers come from numpy's Philox4x64 counter-based generator.  Sample
``i`` of a run with seed ``s`` owns the stream
``Philox(SeedSequence(s, spawn_key=(i,)))``; redraws after a failed forward solve
continue on that same stream, so the output never depends on batching or on
the order in which samples are processed.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .dispersion import (
    DEFAULT_THICKNESS,
    RootSearchConfig,
    dispersion_curves,
    default_frequency_grid,
)

FORMAT_VERSION = 1
_STREAM_SPLIT = 0x5350_4C49_54  # spawn key used for the train/val/test permutation
_STREAM_NOISE = 0x4E4F_4953_45

__all__ = [
    "DatasetError",
    "GenerationError",
    "SampleRanges",
    "Dataset",
    "DatasetSplit",
    "NoiseSpec",
    "philox",
    "load_presets",
    "sample_models",
    "generate_dataset",
    "split_dataset",
    "noise_factors",
    "apply_noise",
    "save_dataset",
    "load_dataset",
]


class DatasetError(ValueError):
    pass


class GenerationError(RuntimeError):
    pass


def philox(seed: int, *key: int) -> np.random.Generator:
    """Generator on the Philox stream identified by ``(seed, key...)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=tuple(key))))


@dataclass(frozen=True)
class SampleRanges:
    """Per-layer uniform bounds ``[a_l, b_l]`` in km/s, surface layer first."""

    bounds: tuple[tuple[float, float], ...]
    name: str | None = None

    def __post_init__(self):
        b = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if not b:
            raise DatasetError("at least one layer range is required")
        for lo, hi in b:
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo <= 0 or hi < lo:
                raise DatasetError(f"invalid range [{lo}, {hi}]")
        object.__setattr__(self, "bounds", b)

    @property
    def n_layers(self) -> int:
        return len(self.bounds)

    @property
    def lo(self) -> np.ndarray:
        return np.array([b[0] for b in self.bounds])

    @property
    def hi(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds])

    @classmethod
    def preset(cls, n_layers: int) -> "SampleRanges":
        presets = load_presets()
        if n_layers not in presets:
            raise DatasetError(f"no preset for {n_layers} layers; available: {sorted(presets)}")
        return presets[n_layers]


def load_presets() -> dict[int, SampleRanges]:
    text = resources.files(__package__).joinpath("data/ranges.json").read_text()
    raw = json.loads(text)
    return {int(k): SampleRanges(tuple(map(tuple, v)), name=f"{k}-layer") for k, v in raw.items()}


def _draw(gen: np.random.Generator, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return lo + (hi - lo) * gen.random(lo.size)


def sample_models(ranges: SampleRanges, n: int, seed: int) -> np.ndarray:
    """``n`` profiles with entries independently uniform on their ranges."""
    if n < 1:
        raise DatasetError("n must be at least 1")
    lo, hi = ranges.lo, ranges.hi
    return np.stack([_draw(philox(seed, i), lo, hi) for i in range(n)])


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    omegas: np.ndarray
    seed: int | None = None
    ranges: SampleRanges | None = None
    thickness: float = DEFAULT_THICKNESS
    discarded: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        self.omegas = np.asarray(self.omegas, dtype=float)
        if self.x.shape[0] != self.y.shape[0]:
            raise DatasetError("x and y have different sample counts")
        if self.y.shape[1] != self.omegas.size:
            raise DatasetError("y width does not match the frequency grid")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def n_layers(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.omegas, self.seed, self.ranges, self.thickness, 0, dict(self.meta))


def _solve_chunk(args):
    """Fill samples ``ids``; each failed draw is replaced from the sample's own stream."""
    ids, lo, hi, omegas, seed, cfg, thickness, budget = args
    gens = {int(i): philox(seed, int(i)) for i in ids}
    X = np.empty((ids.size, lo.size))
    Y = np.empty((ids.size, omegas.size))
    pos = {int(i): k for k, i in enumerate(ids)}
    pending, attempts = ids, 0
    while pending.size:
        if attempts + pending.size > budget:
            raise GenerationError(f"replacement budget of {budget} draws exhausted")
        attempts += pending.size
        xs = np.stack([_draw(gens[int(i)], lo, hi) for i in pending])
        ys = dispersion_curves(xs, omegas, cfg, thickness)
        ok = np.all(np.isfinite(ys), axis=1)
        rows = [pos[int(i)] for i in pending[ok]]
        X[rows] = xs[ok]
        Y[rows] = ys[ok]
        pending = pending[~ok]
    return X, Y, attempts


def generate_dataset(
    ranges: SampleRanges,
    n: int,
    omegas=None,
    seed: int = 0,
    cfg: RootSearchConfig | None = None,
    thickness: float = DEFAULT_THICKNESS,
    chunk: int = 256,
    progress=None,
    workers: int = 1,
) -> Dataset:
    """Draw ``n`` profiles and pair each with its fundamental-mode curve.

    A profile whose curve cannot be solved at every frequency is redrawn from
    its own stream.  More than ``10 n`` draws in total raises GenerationError.
    ``workers > 1`` solves chunks in separate processes; the result is the same.
    """
    if n < 1:
        raise DatasetError("n must be at least 1")
    omegas = default_frequency_grid() if omegas is None else np.asarray(omegas, dtype=float)
    budget = 10 * n
    jobs = [
        (np.arange(s, min(n, s + chunk)), ranges.lo, ranges.hi, omegas, seed, cfg, thickness, budget)
        for s in range(0, n, chunk)
    ]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        pool = ProcessPoolExecutor(workers)
        results = pool.map(_solve_chunk, jobs)
    else:
        pool = None
        results = map(_solve_chunk, jobs)
    X = np.empty((n, ranges.n_layers))
    Y = np.empty((n, omegas.size))
    attempts = 0
    try:
        for job, (xs, ys, a) in zip(jobs, results):
            ids = job[0]
            X[ids], Y[ids] = xs, ys
            attempts += a
            if attempts > budget:
                raise GenerationError(f"replacement budget of {budget} draws exhausted")
            if progress is not None:
                progress(int(ids[-1]) + 1, n)
    finally:
        if pool is not None:
            pool.shutdown(cancel_futures=True)
    return Dataset(X, Y, omegas, seed, ranges, thickness, discarded=attempts - n)


@dataclass(frozen=True)
class DatasetSplit:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    seed: int


def split_dataset(n: int, seed: int) -> DatasetSplit:
    """Random 80/10/10 partition of ``range(n)``; validation and test get round(n/10) each."""
    if n < 10:
        raise DatasetError("need at least 10 samples to split")
    perm = philox(seed, _STREAM_SPLIT).permutation(n)
    n_hold = int(round(0.1 * n))
    n_train = n - 2 * n_hold
    return DatasetSplit(
        train=np.sort(perm[:n_train]),
        validation=np.sort(perm[n_train:n_train + n_hold]),
        test=np.sort(perm[n_train + n_hold:]),
        seed=int(seed),
    )


@dataclass(frozen=True)
class NoiseSpec:
    """Multiplicative noise ``y (1 + eps)``, eps drawn independently per entry.

    ``uniform``: eps ~ U(p1, p2); ``gaussian``: eps ~ N(p1, p2**2); ``none``.
    Parameters are fractions (0.005 is 0.5%).
    """

    kind: str = "none"
    p1: float = 0.0
    p2: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "uniform", "gaussian"):
            raise DatasetError(f"unknown noise kind {self.kind!r}")
        if self.kind == "uniform" and not self.p1 < self.p2:
            raise DatasetError("uniform noise needs p1 < p2")
        if self.kind == "gaussian" and not self.p2 >= 0:
            raise DatasetError("gaussian noise needs p2 >= 0")

    @property
    def label(self) -> str:
        if self.kind == "none":
            return "none"
        if self.kind == "uniform":
            return f"Unif({100 * self.p1:g}%, {100 * self.p2:g}%)"
        return f"N({100 * self.p1:g}%, {100 * self.p2:g}%^2)"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "p1": self.p1, "p2": self.p2, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return cls(d.get("kind", "none"), float(d.get("p1", 0.0)), float(d.get("p2", 0.0)), int(d.get("seed", 0)))


def noise_factors(shape, spec: NoiseSpec) -> np.ndarray:
    """The eps array for one application of ``spec``."""
    if spec.kind == "none":
        return np.zeros(shape)
    gen = philox(spec.seed, _STREAM_NOISE)
    if spec.kind == "uniform":
        return gen.uniform(spec.p1, spec.p2, size=shape)
    return gen.normal(spec.p1, spec.p2, size=shape)


def apply_noise(y, spec: NoiseSpec, eps=None) -> np.ndarray:
    """``y * (1 + eps)``; ``eps`` is drawn from ``spec`` unless given."""
    y = np.asarray(y, dtype=float)
    if eps is None:
        if spec.kind == "none":
            return y.copy()
        eps = noise_factors(y.shape, spec)
    return y * (1.0 + np.asarray(eps, dtype=float))


# ---------------------------------------------------------------------------
# CSV persistence
# ---------------------------------------------------------------------------

def _header(ds: Dataset) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "n_layers": ds.n_layers,
        "n_omega": int(ds.omegas.size),
        "n_samples": len(ds),
        "seed": ds.seed,
        "preset": ds.ranges.name if ds.ranges is not None else None,
        "ranges": [list(b) for b in ds.ranges.bounds] if ds.ranges is not None else None,
        "thickness": ds.thickness,
        "discarded": ds.discarded,
        "omegas": [float(w) for w in ds.omegas],
        "meta": ds.meta,
    }


def save_dataset(ds: Dataset, path) -> None:
    buf = io.StringIO()
    buf.write("# " + json.dumps(_header(ds), sort_keys=True) + "\n")
    cols = [f"x{i}" for i in range(ds.n_layers)] + [f"y{j}" for j in range(ds.omegas.size)]
    np.savetxt(buf, np.hstack([ds.x, ds.y]), fmt="%.17g", delimiter=",", header=",".join(cols), comments="")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def load_dataset(path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    first, _, rest = text.partition("\n")
    if not first.startswith("# "):
        raise DatasetError("missing JSON header line")
    try:
        head = json.loads(first[2:])
    except json.JSONDecodeError as exc:
        raise DatasetError(f"malformed header: {exc}") from None
    if head.get("format_version") != FORMAT_VERSION:
        raise DatasetError(f"unsupported format version {head.get('format_version')}")
    nz, nw = int(head["n_layers"]), int(head["n_omega"])
    cols, _, body = rest.partition("\n")
    if len(cols.split(",")) != nz + nw:
        raise DatasetError(f"column header has {len(cols.split(','))} fields, expected {nz + nw}")
    data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2) if body.strip() else np.empty((0, nz + nw))
    if data.shape[1] != nz + nw:
        raise DatasetError(f"rows have {data.shape[1]} values, header says {nz}+{nw}")
    if "n_samples" in head and data.shape[0] != head["n_samples"]:
        raise DatasetError("row count does not match header")
    ranges = None
    if head.get("ranges") is not None:
        ranges = SampleRanges(tuple(map(tuple, head["ranges"])), name=head.get("preset"))
    return Dataset(
        data[:, :nz], data[:, nz:], np.array(head["omegas"], dtype=float), head.get("seed"),
        ranges, float(head.get("thickness", DEFAULT_THICKNESS)), int(head.get("discarded", 0)),
        head.get("meta") or {},
    )
