"""Command-line interface.

    deepmp train         train with PasP message passing or BinaryNet
    deepmp evaluate      errors and overlaps of a checkpoint
    deepmp local-energy  flip-fraction profile of one or more checkpoints
    deepmp continual     sequential training on permuted tasks
    deepmp timing        seconds per epoch across algorithms and batch sizes
    deepmp plot          SVG line chart of a CSV column

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical abort.
Datasets are looked up under ``$DEEPMP_DATA`` (or ``--data-root``).
"""

import argparse
import csv
import json
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, evalkit
from .binarynet import BinaryNetConfig, train_binarynet
from .checkpoint import CheckpointError, layer_tensors, load_checkpoint, save_checkpoint, unpack_layers
from .data import SCALINGS, DataError, load_dataset, permuted_tasks
from .layers import ALGORITHMS, NumericalError
from .trainer import ConfigError, PaspConfig, train, train_continual

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

RUN_KEYS = {"dataset": "mnist2", "scaling": "unit", "n_tasks": 1, "task_seed": 0}
BN_KEYS = {"lr", "loss"}


def _read_config(path):
    if path is None:
        return {}
    path = Path(path)
    try:
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            with open(path, "rb") as f:
                return tomllib.load(f)
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except ValueError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from None


def _floats(s):
    vals = [float(v) for v in s.split(",")]
    return vals[0] if len(vals) == 1 else vals


def _ints(s):
    return [int(v) for v in s.split(",") if v != ""]


def _overrides(args):
    out = {}
    pairs = [
        ("algorithm", args.algo),
        ("arch", args.arch),
        ("dataset", args.dataset),
        ("epochs", args.epochs),
        ("seed", args.seed),
        ("batch_size", args.batch_size),
        ("rho", args.rho),
        ("alpha", args.alpha),
        ("epsilon", args.epsilon),
        ("tau_max", args.tau_max),
        ("lr", args.lr),
        ("scaling", args.scaling),
        ("argmax_approach", args.argmax_approach),
    ]
    for k, v in pairs:
        if v is not None:
            out[k] = v
    if args.no_bayes:
        out["bayes"] = False
    if getattr(args, "n_tasks", None) is not None:
        out["n_tasks"] = args.n_tasks
    return out


def build_config(raw):
    """Split a flat dict into run options and a PasP or BinaryNet config."""
    raw = dict(raw)
    run = {k: raw.pop(k, v) for k, v in RUN_KEYS.items()}
    if run["scaling"] not in SCALINGS:
        raise ConfigError(f"scaling must be one of {SCALINGS}")
    algo = raw.get("algorithm", "bp")
    if isinstance(algo, str) and algo.lower() == "binarynet":
        raw.pop("algorithm")
        keep = {"arch", "batch_size", "epochs", "seed"} | BN_KEYS
        extra = set(raw) - keep - {"bayes"}
        if extra:
            raise ConfigError(f"keys not used by binarynet: {sorted(extra)}")
        raw.pop("bayes", None)
        return run, BinaryNetConfig(**raw)
    if set(raw) & BN_KEYS:
        raise ConfigError(f"keys {sorted(set(raw) & BN_KEYS)} only apply to binarynet")
    try:
        return run, PaspConfig.from_dict(raw)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def _load_splits(run, root):
    tr = load_dataset(run["dataset"], "train", root, scaling=run["scaling"])
    te = load_dataset(run["dataset"], "test", root, scaling=run["scaling"])
    return tr, te


def _manifest(command, run, cfg, datasets, started):
    return {
        "command": command,
        "config": {**run, **cfg.to_dict()},
        "datasets": {d.name: {"n": len(d), "sha256": d.content_hash()} for d in datasets},
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed": cfg.seed,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
    }


def _trainer_for(cfg):
    return train_binarynet if isinstance(cfg, BinaryNetConfig) else train


def _save_run(out, run, cfg, result, n_classes):
    kind = "binarynet" if isinstance(cfg, BinaryNetConfig) else "pasp"
    tensors = layer_tensors("w", result.weights)
    tensors.update(layer_tensors("m", result.means))
    if kind == "pasp":
        tensors.update(layer_tensors("theta", result.state.thetas))
    extra = {"dataset": run["dataset"], "scaling": run["scaling"], "n_classes": n_classes}
    save_checkpoint(out / "checkpoint.bin", tensors, {**run, **cfg.to_dict()}, kind, extra)


def _log_epoch(rec, _state):
    print(
        f"epoch {rec.epoch:4d}  train {rec.train_err:.4f}  test {rec.test_err:.4f}"
        f"  bayes {rec.bayes_test_err:.4f}  {rec.seconds:.1f}s",
        file=sys.stderr,
        flush=True,
    )


def _train_one(raw, root, out, command, quiet):
    started = datetime.now(timezone.utc).isoformat()
    run, cfg = build_config(raw)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    tr, te = _load_splits(run, root)
    result = _trainer_for(cfg)(tr, cfg, test=te, on_epoch=None if quiet else _log_epoch)
    result.to_csv(out / "metrics.csv")
    _save_run(out, run, cfg, result, tr.n_classes)
    with open(out / "manifest.json", "w") as f:
        json.dump(_manifest(command, run, cfg, [tr, te], started), f, indent=2)
    return str(out)


def _repeat(fn, raw, args, command):
    if args.repeat <= 1:
        return [fn(raw, args.data_root, args.out, command, args.quiet)]
    base = raw.get("seed", 0)
    jobs = []
    with ProcessPoolExecutor(max_workers=args.repeat) as ex:
        for j in range(args.repeat):
            r = {**raw, "seed": base + j}
            out = Path(args.out) / f"seed{base + j}"
            jobs.append(ex.submit(fn, r, args.data_root, out, command, args.quiet))
        return [j.result() for j in jobs]


def cmd_train(args):
    raw = {**_read_config(args.config), **_overrides(args)}
    build_config(raw)
    for out in _repeat(_train_one, raw, args, " ".join(sys.argv)):
        print(out)
    return 0


def _load_weights(path):
    try:
        tensors, header = load_checkpoint(path)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    except CheckpointError as e:
        raise DataError(str(e)) from None
    means = unpack_layers(tensors, "m") or [np.tanh(t) for t in unpack_layers(tensors, "theta")]
    return unpack_layers(tensors, "w"), means, header


def _dataset_for(args, header, split):
    extra = header.get("extra", {})
    name = args.dataset or extra.get("dataset")
    scaling = args.scaling or extra.get("scaling", "unit")
    if name is None:
        raise ConfigError("no dataset given and none recorded in the checkpoint")
    return load_dataset(name, split, args.data_root, scaling=scaling)


def cmd_evaluate(args):
    W, M, header = _load_weights(args.checkpoint)
    out = {}
    for split in ("train", "test"):
        d = _dataset_for(args, header, split)
        out[f"{split}_err"] = evalkit.pointwise_error(W, d)
        if header["kind"] == "pasp":
            out[f"bayes_{split}_err"] = evalkit.bayesian_error(M, d)
    rep = evalkit.overlaps(M)
    if args.overlaps:
        rep.to_csv(args.overlaps)
    out["q0"], out["qab"] = rep.q0, rep.qab
    print(json.dumps(out, indent=2))
    return 0


def cmd_local_energy(args):
    p_grid = np.linspace(0.0, args.p_max, args.n_p)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labels = args.label or [Path(c).parent.name or Path(c).stem for c in args.checkpoint]
    if len(labels) != len(args.checkpoint):
        raise ConfigError("need one --label per checkpoint")
    for ckpt, label in zip(args.checkpoint, labels):
        W, _, header = _load_weights(ckpt)
        d = _dataset_for(args, header, "train")
        prof = evalkit.local_energy(W, d, p_grid, args.n_masks, args.seed)
        path = out / f"{label}.csv"
        prof.to_csv(path)
        print(path)
    return 0


def _continual_one(raw, root, out, command, quiet):
    started = datetime.now(timezone.utc).isoformat()
    run, cfg = build_config(raw)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    tr, te = _load_splits(run, root)
    tasks = permuted_tasks(tr, run["n_tasks"], run["task_seed"])
    tests = permuted_tasks(te, run["n_tasks"], run["task_seed"])
    res = train_continual(tasks, cfg, tests, trainer=_trainer_for(cfg))
    res.to_csv(out / "accuracy.csv")
    with open(out / "first_task.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["task", "epoch", "test_acc"])
        for task, epoch, acc in res.first_task_curve:
            w.writerow([task, epoch, repr(float(acc))])
    for j, r in enumerate(res.runs):
        r.to_csv(out / f"metrics_task{j + 1}.csv")
    with open(out / "manifest.json", "w") as f:
        json.dump(_manifest(command, run, cfg, [tr, te], started), f, indent=2)
    return str(out)


def cmd_continual(args):
    raw = {**_read_config(args.config), **_overrides(args)}
    build_config(raw)
    for out in _repeat(_continual_one, raw, args, " ".join(sys.argv)):
        print(out)
    return 0


def cmd_timing(args):
    tr = load_dataset(args.dataset, "train", args.data_root)
    if args.n_samples:
        tr = tr.subset(np.arange(min(args.n_samples, len(tr))))
    rows = []
    for algo in args.algos.split(","):
        for bs in _ints(args.batch_sizes):
            if algo == "binarynet":
                cfg = BinaryNetConfig(arch=_ints(args.arch), batch_size=bs, epochs=1, seed=args.seed)
                t0 = time.perf_counter()
                train_binarynet(tr, cfg)
            else:
                cfg = PaspConfig(arch=_ints(args.arch), algorithm=algo, batch_size=bs, epochs=1, seed=args.seed, bayes=False)
                t0 = time.perf_counter()
                train(tr, cfg)
            sec = time.perf_counter() - t0
            rows.append({"algo": algo, "batch_size": bs, "n_samples": len(tr), "seconds": sec, "seconds_per_sample": sec / len(tr)})
            print(f"{algo:10s} bs={bs:5d} {sec:8.2f}s", file=sys.stderr, flush=True)
    with open(args.out, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    print(args.out)
    return 0


def render_svg(series, xlabel, ylabel, width=480, height=320):
    """Minimal SVG line chart; ``series`` maps a label to (x, y) arrays."""
    pad = 48
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()])
    ok = np.isfinite(ys)
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys[ok].min()), float(ys[ok].max())
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="12" y="{height / 2}" font-size="12" transform="rotate(-90 12 {height / 2})" text-anchor="middle">{ylabel}</text>',
        f'<text x="{pad}" y="{height - pad + 14}" font-size="10">{x0:g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 14}" font-size="10" text-anchor="end">{x1:g}</text>',
        f'<text x="{pad - 4}" y="{height - pad}" font-size="10" text-anchor="end">{y0:.3g}</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" font-size="10" text-anchor="end">{y1:.3g}</text>',
    ]
    for j, (label, (x, y)) in enumerate(series.items()):
        c = colors[j % len(colors)]
        pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x, y) if np.isfinite(b))
        parts.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{width - pad}" y="{pad + 14 * j}" font-size="11" fill="{c}" text-anchor="end">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def cmd_plot(args):
    series = {}
    for path in args.csv:
        try:
            with open(path) as f:
                rows = list(csv.DictReader(f))
        except FileNotFoundError:
            raise DataError(f"no such file: {path}") from None
        if not rows or args.x not in rows[0] or args.y not in rows[0]:
            raise ConfigError(f"{path} lacks column {args.x!r} or {args.y!r}")
        if "layer" in rows[0]:
            rows = [r for r in rows if r["layer"] == str(args.layer)]
        series[Path(path).stem] = ([float(r[args.x]) for r in rows], [float(r[args.y]) for r in rows])
    with open(args.out, "w") as f:
        f.write(render_svg(series, args.x, args.y))
    print(args.out)
    return 0


def _add_train_options(p):
    p.add_argument("--config", help="JSON or TOML file with flat config keys")
    p.add_argument("--algo", help=f"one of {', '.join(ALGORITHMS)}, binarynet, or a comma list per layer")
    p.add_argument("--arch", type=_ints, help="hidden widths, e.g. 101,101")
    p.add_argument("--dataset", help="mnist, fashion, cifar10, with suffix 2 for even/odd")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--rho", type=_floats, help="scalar or one value per weight layer")
    p.add_argument("--alpha", type=_floats, help="scalar or one value per weight layer")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--tau-max", type=int)
    p.add_argument("--argmax-approach", type=int, choices=(1, 2))
    p.add_argument("--lr", type=float, help="BinaryNet learning rate")
    p.add_argument("--scaling", choices=SCALINGS)
    p.add_argument("--no-bayes", action="store_true", help="skip the Bayesian error columns")
    p.add_argument("--out", default="run", help="output directory")
    p.add_argument("--repeat", type=int, default=1, help="run k consecutive seeds in parallel")
    p.add_argument("--quiet", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(prog="deepmp", description=__doc__.split("\n")[0])
    ap.add_argument("--data-root", default=None, help="dataset root (default $DEEPMP_DATA)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network")
    _add_train_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="errors and overlaps of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--dataset")
    p.add_argument("--scaling", choices=SCALINGS)
    p.add_argument("--overlaps", help="write the layer,q0,qab CSV here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("local-energy", help="local energy profile of checkpoints")
    p.add_argument("checkpoint", nargs="+")
    p.add_argument("--label", action="append")
    p.add_argument("--dataset")
    p.add_argument("--scaling", choices=SCALINGS)
    p.add_argument("--p-max", type=float, default=0.5)
    p.add_argument("--n-p", type=int, default=11)
    p.add_argument("--n-masks", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="local_energy")
    p.set_defaults(func=cmd_local_energy)

    p = sub.add_parser("continual", help="sequential training on permuted tasks")
    _add_train_options(p)
    p.add_argument("--n-tasks", type=int)
    p.set_defaults(func=cmd_continual)

    p = sub.add_parser("timing", help="seconds per epoch across batch sizes")
    p.add_argument("--arch", default="101,101")
    p.add_argument("--dataset", default="mnist2")
    p.add_argument("--algos", default="bp,bpi,mf,amp")
    p.add_argument("--batch-sizes", default="1,16,128,1024")
    p.add_argument("--n-samples", type=int, default=0, help="train on the first n samples only")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="timing.csv")
    p.set_defaults(func=cmd_timing)

    p = sub.add_parser("plot", help="SVG line chart of CSV columns")
    p.add_argument("csv", nargs="+")
    p.add_argument("--x", default="epoch")
    p.add_argument("--y", default="test_err")
    p.add_argument("--layer", type=int, default=0, help="layer rows to keep in per-layer CSVs")
    p.add_argument("--out", default="plot.svg")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
