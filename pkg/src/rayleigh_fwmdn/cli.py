"""Command-line pipeline: forward solves, data generation, training, evaluation, toy run.

Every subcommand takes its randomness from ``--seed`` and writes no
timestamps, so reruns with the same inputs and ``--threads 1`` reproduce every
artifact byte for byte.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from importlib import resources
from pathlib import Path

import numpy as np

from . import dataset as dsm
from . import evaluation as ev
from . import nn
from .dispersion import (
    DispersionError,
    EarthStack,
    LayerParams,
    RootSearchConfig,
    VP_VS_RATIO,
    dispersion_curve,
    elastic_params_from_vs,
    default_frequency_grid,
)

log = logging.getLogger("rayleigh_fwmdn")

THREADS_ENV = "RAYLEIGH_FWMDN_THREADS"


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def config_schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("data/config_schema.json").read_text())


def load_config(path) -> dict:
    """Read and schema-validate a run configuration; returns {} for no path."""
    import jsonschema

    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    try:
        jsonschema.validate(cfg, config_schema())
    except jsonschema.ValidationError as exc:
        raise UsageError(f"invalid config {path}: {exc.message}") from None
    return cfg


class UsageError(Exception):
    pass


def _grid(cfg: dict, args=None) -> np.ndarray:
    g = dict(cfg.get("grid", {}))
    if args is not None:
        for k in ("n_omega", "omega_min", "omega_max"):
            v = getattr(args, k, None)
            if v is not None:
                g[k] = v
    return default_frequency_grid(g.get("n_omega", 50), g.get("omega_min", 0.0785), g.get("omega_max", 12.57))


def _root_cfg(cfg: dict) -> RootSearchConfig:
    return RootSearchConfig(**cfg.get("root_search", {}))


def _train_cfg(cfg: dict, seed: int) -> nn.TrainConfig:
    return nn.TrainConfig(**{**cfg.get("train", {}), "seed": seed})


def resolve_threads(flag) -> int:
    if flag is not None:
        return max(1, int(flag))
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _svg(path, xs, ys, xlabel, ylabel, labels=None, markers=False):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "rayleigh-fwmdn"
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, (x, y) in enumerate(zip(xs, ys)):
        lab = labels[i] if labels else None
        if markers:
            ax.plot(x, y, ".", ms=3, label=lab)
        else:
            ax.plot(x, y, "-", label=lab)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if labels:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _parse_vs(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise UsageError(f"cannot parse Vs list {text!r}") from None
    if not vals:
        raise UsageError("empty Vs list")
    return vals


def cmd_forward(args, cfg) -> int:
    if (args.vs is None) == (args.model_file is None):
        raise UsageError("give exactly one of --vs or --model-file")
    if args.vs is not None:
        vs = _parse_vs(args.vs)
    else:
        doc = json.loads(Path(args.model_file).read_text())
        vs = [float(v) for v in (doc["vs"] if isinstance(doc, dict) else doc)]
    if any(v <= 0 for v in vs):
        raise UsageError("shear velocities must be positive")
    if args.poisson:
        layers = tuple(
            LayerParams.from_velocities(v, VP_VS_RATIO * v, elastic_params_from_vs(v).rho) for v in vs
        )
        stack = EarthStack(layers, (args.thickness,) * (len(vs) - 1))
    else:
        stack = EarthStack.from_vs(vs, args.thickness)
    omegas = _grid(cfg, args)
    curve = dispersion_curve(stack, omegas, _root_cfg(cfg))
    ev.write_csv(args.out, ["omega", "c"], np.column_stack([curve.omegas, curve.velocities]))
    if args.svg:
        _svg(args.svg, [curve.omegas], [curve.velocities], "omega (rad/s)", "phase velocity C (km/s)")
    print(f"wrote {len(omegas)} points to {args.out}")
    return 0


def cmd_gen_data(args, cfg) -> int:
    ranges = dsm.SampleRanges.preset(args.layers)
    ds = dsm.generate_dataset(
        ranges, args.num, _grid(cfg), args.seed, _root_cfg(cfg), cfg.get("thickness", 4.0),
        workers=args.threads,
        progress=lambda a, b: log.info("generated %d/%d", a, b),
    )
    dsm.save_dataset(ds, args.out)
    print(f"wrote {len(ds)} samples to {args.out}; discarded {ds.discarded}")
    return 0


DEFAULT_ARCH = {
    "fw-fnn": {"hidden": list(nn.FW_FNN_HIDDEN), "activation": "tanh", "alpha_w": 1e-3, "alpha_b": 1e-3},
    "fnn": {"activation": "tanh", "alpha_w": 1e-3, "alpha_b": 1e-3},
    "fwmdn": {"hidden": list(nn.FWMDN_HIDDEN), "activation": "tanh", "alpha_w": 1e-5, "alpha_b": 1e-5,
              "K": 2, "sigma_scale": 1e-3},
    "mdn-toy": {"hidden": list(ev.TOY_HIDDEN), "activation": "tanh", "alpha_w": 1e-5, "alpha_b": 1e-5,
                "K": 4, "sigma_scale": 1.0},
}
SURROGATE_R2_GATE = 0.96


def _arch(kind: str, cfg: dict, n_layers: int | None) -> dict:
    a = {**DEFAULT_ARCH[kind], **cfg.get("architecture", {})}
    if "hidden" not in a:
        a["hidden"] = list(nn.FNN9_HIDDEN if n_layers == 9 else nn.FNN35_HIDDEN)
    return a


def cmd_train(args, cfg) -> int:
    kind = args.kind
    if kind == "fwmdn" and not args.surrogate:
        raise UsageError("--kind fwmdn requires --surrogate (a trained fw-fnn checkpoint)")
    seed = args.seed
    tcfg = _train_cfg(cfg, seed)
    meta = {"kind": kind, "seed": seed, "config": cfg, "train_config": asdict(tcfg)}

    if kind == "mdn-toy":
        arch = _arch(kind, cfg, None)
        x, y = ev.toy_generate(cfg.get("toy_n", 10_000), seed)
        X, Y = x[:, None], y[:, None]
        sp = dsm.split_dataset(len(x), seed)
        head = nn.MDNHead(arch["K"], 1, arch["sigma_scale"])
        spec = nn.DenseNetSpec.build(1, arch["hidden"], mdn=head, activation=arch["activation"],
                                     alpha_w=arch["alpha_w"], alpha_b=arch["alpha_b"])
        model = nn.Model.create(spec, Y[sp.train], X[sp.train], seed=seed, meta=meta)
        tlog = nn.train(model, "nll", Y[sp.train], X[sp.train], Y[sp.validation], X[sp.validation], tcfg)
        meta["test_M"] = ev.metric_M(nn.predict_means(model, Y[sp.test]), X[sp.test])
    else:
        if not args.data:
            raise UsageError(f"--kind {kind} requires --data")
        ds = dsm.load_dataset(args.data)
        split_seed = cfg.get("split_seed", seed)
        sp = dsm.split_dataset(len(ds), split_seed)
        meta.update(data_digest=_digest(args.data), split_seed=split_seed, n_layers=ds.n_layers)
        arch = _arch(kind, cfg, ds.n_layers)
        progress = lambda e, a, b: log.info("epoch %d train %.6g val %.6g", e, a, b)
        tr, va, te = sp.train, sp.validation, sp.test
        if kind == "fw-fnn":
            spec = nn.DenseNetSpec.build(ds.n_layers, arch["hidden"], ds.y.shape[1], arch["activation"],
                                         alpha_w=arch["alpha_w"], alpha_b=arch["alpha_b"])
            model = nn.Model.create(spec, ds.x[tr], ds.y[tr], seed=seed, meta=meta)
            tlog = nn.train(model, "mse", ds.x[tr], ds.y[tr], ds.x[va], ds.y[va], tcfg, progress=progress)
            r2 = {s: ev.r_squared(model.predict(ds.x[i]), ds.y[i]) for s, i in (("train", tr), ("validation", va), ("test", te))}
            meta["r2"] = r2
            meta["accepted"] = bool(r2["validation"] >= SURROGATE_R2_GATE)
            if not meta["accepted"]:
                log.warning("surrogate validation R^2 %.4f below gate %.2f", r2["validation"], SURROGATE_R2_GATE)
        elif kind == "fnn":
            spec = nn.DenseNetSpec.build(ds.y.shape[1], arch["hidden"], ds.n_layers, arch["activation"],
                                         alpha_w=arch["alpha_w"], alpha_b=arch["alpha_b"])
            model = nn.Model.create(spec, ds.y[tr], ds.x[tr], seed=seed, meta=meta)
            tlog = nn.train(model, "mse", ds.y[tr], ds.x[tr], ds.y[va], ds.x[va], tcfg, progress=progress)
            meta["test_r2"] = ev.r_squared(model.predict(ds.y[te]), ds.x[te])
        else:
            surrogate = nn.load_model(args.surrogate)
            meta["surrogate_digest"] = _digest(args.surrogate)
            noise = dsm.NoiseSpec.from_dict(cfg["noise_train"]) if "noise_train" in cfg else dsm.NoiseSpec()
            y_in = dsm.apply_noise(ds.y, noise)  # one fixed noised copy of the whole set
            meta["noise_train"] = noise.to_dict()
            head = nn.MDNHead(arch["K"], ds.n_layers, arch["sigma_scale"])
            spec = nn.DenseNetSpec.build(ds.y.shape[1], arch["hidden"], mdn=head, activation=arch["activation"],
                                         alpha_w=arch["alpha_w"], alpha_b=arch["alpha_b"])
            model = nn.Model.create(spec, y_in[tr], ds.x[tr], seed=seed, meta=meta)
            tlog = nn.train(model, "fwmdn", y_in[tr], ds.x[tr], y_in[va], ds.x[va], tcfg, surrogate=surrogate,
                            y_clean=ds.y[tr], val_y_clean=ds.y[va], progress=progress)
            meta["test_M_clean"] = ev.metric_M(nn.predict_means(model, ds.y[te]), ds.x[te])
    meta["epochs_run"] = len(tlog.val_loss)
    meta["best_epoch"] = tlog.best_epoch
    model.meta = meta
    nn.save_model(model, args.out, tlog)
    if args.log:
        _write_json(args.log, {"train_loss": tlog.train_loss, "val_loss": tlog.val_loss, "best_epoch": tlog.best_epoch})
    print(f"wrote {kind} checkpoint to {args.out}")
    return 0


def _noise_specs(arg, seed):
    if arg is None or arg == "none":
        return [dsm.NoiseSpec()]
    if arg == "table":
        raw = json.loads(resources.files(__package__).joinpath("data/noise_table.json").read_text())
    else:
        raw = json.loads(Path(arg).read_text())
    return [dsm.NoiseSpec.from_dict({"seed": seed + i, **d}) for i, d in enumerate(raw)]


def cmd_eval(args, cfg) -> int:
    model = nn.load_model(args.model)
    ds = dsm.load_dataset(args.data)
    split_seed = model.meta.get("split_seed", cfg.get("split_seed", args.seed))
    test = ds.subset(dsm.split_dataset(len(ds), split_seed).test)
    if model.meta.get("kind") == "fw-fnn":
        raise UsageError("eval scores inverse models; the fw-fnn surrogate is scored at training time")
    surrogate = nn.load_model(args.surrogate) if args.surrogate else None
    specs = _noise_specs(args.noise_specs, args.seed)
    reports = ev.noise_robustness_sweep(model, test, specs, surrogate=surrogate, exact=not args.no_exact,
                                        cfg=_root_cfg(cfg))
    out = Path(args.out)
    ev.save_reports(out, reports, {"model_digest": _digest(args.model), "data_digest": _digest(args.data),
                                   "split_seed": split_seed})
    plots = Path(args.plots_dir) if args.plots_dir else out.parent
    plots.mkdir(parents=True, exist_ok=True)
    rows = dsm.philox(args.seed, 0x504C_4F54).choice(len(test), size=min(4, len(test)), replace=False)
    for si, spec in enumerate(specs):
        y_in = dsm.apply_noise(test.y, spec)
        means = ev.candidate_means(model, y_in[rows])
        k = ev.nearest_component(means, test.x[rows])
        best = means[np.arange(len(rows)), k]
        y_hat = ev.forward_exact(best, test.omegas, _root_cfg(cfg)) if not args.no_exact else surrogate.predict(best) if surrogate else None
        for r, j in enumerate(rows):
            cols = np.column_stack([np.arange(test.n_layers), test.x[j], best[r]] + [means[r, kk] for kk in range(means.shape[1])])
            ev.write_csv(plots / f"profile_spec{si}_sample{j}.csv",
                         ["layer", "x_true", "mu_star"] + [f"mu_{kk}" for kk in range(means.shape[1])], cols)
            ycols = [test.omegas, test.y[j], y_in[j]] + ([y_hat[r]] if y_hat is not None else [])
            ev.write_csv(plots / f"curve_spec{si}_sample{j}.csv",
                         ["omega", "y", "y_noised"] + (["y_pred"] if y_hat is not None else []), np.column_stack(ycols))
    for rep in reports:
        print(f"{rep.noise['label']:>22s}  {rep.metric} = {rep.overall:.4f}  y-R2 = {rep.y_r2}")
    return 0


def cmd_toy(args, cfg) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tcfg = nn.TrainConfig(**{**asdict(ev.TOY_TRAIN), **cfg.get("train", {})})
    rep = ev.toy_experiment(args.seed, cfg.get("toy_n", 10_000), cfg=tcfg)
    _write_json(out / "toy_report.json", rep.to_dict())
    ev.write_csv(out / "toy_fnn_scatter.csv", ["y", "x_true", "x_pred"], rep.scatter_fnn)
    ev.write_csv(out / "toy_mdn_scatter.csv", ["y", "x_true", "x_sampled"], rep.scatter_mdn)
    if args.svg:
        for name, sc in (("fnn", rep.scatter_fnn), ("mdn", rep.scatter_mdn)):
            _svg(out / f"toy_{name}.svg", [sc[:, 0], sc[:, 0]], [sc[:, 1], sc[:, 2]], "y", "x",
                 labels=["true", "predicted"], markers=True)
    print(f"FNN test R2 = {rep.fnn_r2:.4f}; MDN M = {rep.mdn_M:.4f}")
    return 0


def cmd_probe(args, cfg) -> int:
    ds = dsm.load_dataset(args.data)
    pairs = ev.nonuniqueness_probe(ds.x, ds.y, args.y_rel, args.x_rel)
    ev.write_csv(args.out, ["i", "j", "dy_rel", "dx_rel"], pairs if len(pairs) else np.empty((0, 4)))
    if len(pairs):
        i, j = int(pairs[0, 0]), int(pairs[0, 1])
        base = Path(args.out).with_suffix("")
        ev.write_csv(f"{base}_best_x.csv", ["layer", "x_i", "x_j"], np.column_stack([np.arange(ds.n_layers), ds.x[i], ds.x[j]]))
        ev.write_csv(f"{base}_best_y.csv", ["omega", "y_i", "y_j"], np.column_stack([ds.omegas, ds.y[i], ds.y[j]]))
    print(f"found {len(pairs)} pairs")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rayleigh-fwmdn", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker/BLAS threads (default: ${THREADS_ENV} or all cores; 1 is bit-reproducible)")
    p.add_argument("--config", default=None, help="JSON run configuration")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("forward", help="dispersion curve of one profile")
    f.add_argument("--vs", help="comma-separated Vs (km/s), surface first")
    f.add_argument("--model-file", help="JSON list of Vs, or {\"vs\": [...]}")
    f.add_argument("--poisson", action="store_true", help="vp = 1.732 vs instead of the lambda = mu value")
    f.add_argument("--thickness", type=float, default=4.0)
    f.add_argument("--n-omega", type=int)
    f.add_argument("--omega-min", type=float)
    f.add_argument("--omega-max", type=float)
    f.add_argument("--out", default="dispersion.csv")
    f.add_argument("--svg")
    f.set_defaults(func=cmd_forward)

    g = sub.add_parser("gen-data", help="generate a sample set from a range preset")
    g.add_argument("--layers", type=int, choices=(3, 5, 9), required=True)
    g.add_argument("--num", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a network")
    t.add_argument("--kind", choices=("fw-fnn", "fnn", "fwmdn", "mdn-toy"), required=True)
    t.add_argument("--data")
    t.add_argument("--surrogate", help="fw-fnn checkpoint (required for fwmdn)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="write per-epoch losses as JSON")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score an inverse model on the test split")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--noise-specs", "--noise", default="none", help="'none', 'table', or a JSON list of noise specs")
    e.add_argument("--surrogate", help="fw-fnn checkpoint for surrogate-mode y consistency")
    e.add_argument("--no-exact", action="store_true", help="skip exact-forward y consistency")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.add_argument("--plots-dir")
    e.set_defaults(func=cmd_eval)

    y = sub.add_parser("toy", help="multivalued toy problem: FNN vs K=4 MDN")
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--out", required=True, help="output directory")
    y.add_argument("--svg", action="store_true")
    y.set_defaults(func=cmd_toy)

    q = sub.add_parser("probe", help="find near-identical curves from distant profiles")
    q.add_argument("--data", required=True)
    q.add_argument("--y-rel", type=float, default=0.005)
    q.add_argument("--x-rel", type=float, default=0.10)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_probe)
    for sp in (f, g, t, e, y, q):
        # also accepted after the subcommand name
        sp.add_argument("--config", default=argparse.SUPPRESS, help="JSON run configuration")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.threads = resolve_threads(args.threads)
        cfg = load_config(args.config)
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=args.threads):
            return args.func(args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DispersionError, dsm.DatasetError, dsm.GenerationError, nn.NetworkError, nn.TrainingFault,
            ev.MetricError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
