"""Experiment harness: JSON-configured subcommands writing CSV, JSON, and PNG.

Subcommands: toy1d | toy2d | hnn | cnn | pid-check | audit. Experiments are
described by JSON configs (flags only override paths and the seed); every run
writes a manifest recording the effective config, its hash, and the artifact
list. Reruns with identical config and seed produce byte-identical CSVs up to
the informational wall-clock column.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, arch, cnn, metrics, nn, physics, plots
from .arch import UnsupportedParityError
from .linalg import (
    IdentityExcludedError,
    NotInvolutoryError,
    SingularMatrixError,
    parse_matrix_text,
)
from .symmetry import (
    BlockInvarianceSpec,
    IncompatibleOffsetError,
    block_spec,
    blocks_from_json,
    classify,
    involutory_spec,
    load_spec,
)

NUMERICAL_ERRORS = (SingularMatrixError, NotInvolutoryError, IdentityExcludedError,
                    IncompatibleOffsetError, FloatingPointError)


class ConfigError(ValueError):
    pass


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = val
    return out


def _load_config(defaults: dict, args) -> dict:
    cfg = dict(defaults)
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                cfg = _deep_merge(cfg, json.load(fh))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}")
    if getattr(args, "model", None):
        cfg["model"] = args.model
    if getattr(args, "epochs", None):
        cfg.setdefault("train", {})
        cfg["train"]["epochs"] = args.epochs
    if getattr(args, "repeats", None):
        cfg["repeats"] = args.repeats
    if getattr(args, "seed", None) is not None:
        cfg.setdefault("train", {})
        cfg["train"]["seed"] = args.seed
    env_out = os.environ.get("INVOLUTE_OUT")
    if env_out:
        cfg["out_dir"] = env_out
    if getattr(args, "out", None):
        cfg["out_dir"] = args.out
    return cfg


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, task: str, cfg: dict, seed: int, artifacts: list[str],
                    extras: dict | None = None) -> None:
    canonical = json.dumps(cfg, sort_keys=True)
    doc = {
        "task": task,
        "config": cfg,
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": seed,
        "artifacts": sorted(artifacts),
        "involute_version": __version__,
    }
    if extras:
        doc.update(extras)
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)


def _parse_single_spec(doc: dict):
    try:
        return involutory_spec(doc["A"], int(doc["parity"]), doc.get("mu"))
    except KeyError as e:
        raise ConfigError(f"spec is missing field {e}")


def _spec_from_config(doc) -> object:
    if isinstance(doc, dict) and "blocks" in doc:
        return blocks_from_json(doc["blocks"])
    if isinstance(doc, dict):
        return _parse_single_spec(doc)
    raise ConfigError("spec must be an object or {'blocks': [...]}")


def _spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


# -- toy1d -------------------------------------------------------------------

TOY1D_DEFAULTS = {
    "task": "toy1d",
    "model": "vn",
    "spec": {"A": [[-1.0]], "parity": 1, "mu": None},
    "train": {"epochs": 5000, "lr": 0.005, "seed": 0, "hidden": [10, 10],
              "activation": "sigmoid", "noise_std": 0.25},
    "repeats": 1,
    "n_train": 100,
    "train_interval": [-1.5, 1.5],
    "n_val": 200,
    "val_interval": [-3.0, 3.0],
    "out_dir": "out/toy1d",
}

TOY_MODELS = ("vn", "hln", "san", "iptn", "hub-multi")


def _build_toy_model(kind: str, spec, input_dim: int, train: dict, rng):
    if kind not in TOY_MODELS:
        raise ConfigError(f"model must be one of {TOY_MODELS}, got {kind!r}")
    if kind == "san" and not isinstance(spec, BlockInvarianceSpec) and spec.parity != 1:
        raise ConfigError("san forbids parity -1")
    if kind == "hub-multi" and not isinstance(spec, BlockInvarianceSpec):
        # a plain even sign-flip spec lifts to one single-dimension block
        if spec.parity != 1 or spec.n != 1 or abs(spec.A[0, 0] + 1.0) > 1e-12:
            raise ConfigError("hub-multi needs sign-flip blocks with parity +1")
        spec = block_spec([((0,), spec)])
    try:
        return arch.build_model(kind, spec, input_dim, train["hidden"],
                                train["activation"], rng)
    except UnsupportedParityError as e:
        raise ConfigError(str(e))


def run_toy1d(cfg: dict) -> list[str]:
    out = _out_dir(cfg)
    train = cfg["train"]
    spec = _spec_from_config(cfg["spec"])
    base_seed = int(train["seed"])
    kind = cfg["model"]
    lo, hi = cfg["train_interval"]
    vlo, vhi = cfg["val_interval"]
    a_flip = np.array([[-1.0]])
    rows = []
    artifacts = []
    model = None
    for r in range(int(cfg["repeats"])):
        data_rng, weight_rng, val_rng = _spawn_rngs(base_seed + r, 3)
        x = data_rng.uniform(lo, hi, int(cfg["n_train"]))
        t = np.cos(x) + data_rng.normal(0.0, train["noise_std"], x.size)
        xs = x[:, None]
        model = _build_toy_model(kind, spec, 1, train, weight_rng)
        if kind == "iptn":
            xs, t = model.prepare_dataset(xs, t)
        val = val_rng.uniform(vlo, vhi, int(cfg["n_val"]))[:, None]
        hook = lambda m: metrics.violation_metric_batch(m.predict, val, a_flip, 1)
        records = arch.train_regression(model, xs, t, int(train["epochs"]),
                                        float(train["lr"]), hook)
        final_vio = metrics.violation_metric(model.value, val, a_flip, 1)
        run_csv = f"run_r{r}.csv"
        metrics.emit_csv(records, out / run_csv)
        model_json = f"model_r{r}.json"
        arch.save_model(model, out / model_json)
        artifacts += [run_csv, model_json]
        rows.append((r, records[-1].train_loss, final_vio))
        if r == 0:
            plots.save_training_curves(records, out / "curves.png",
                                       title=f"{kind} on cos x")
            artifacts.append("curves.png")
    losses = np.array([row[1] for row in rows])
    vios = np.array([row[2] for row in rows])
    lines = ["repeat,final_loss,final_violation,final_loss_std,final_violation_std"]
    for r, loss, vio in rows:
        lines.append(f"{r},{_fmt(loss)},{_fmt(vio)},,")
    lines.append(f"aggregate,{_fmt(losses.mean())},{_fmt(vios.mean())},"
                 f"{_fmt(losses.std())},{_fmt(vios.std())}")
    (out / "summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    artifacts.append("summary.csv")
    _write_manifest(out, "toy1d", cfg, base_seed, artifacts)
    print(f"{kind}: loss={losses.mean():.3e}±{losses.std():.1e} "
          f"violation={vios.mean():.3e}±{vios.std():.1e}")
    return artifacts


# -- toy2d -------------------------------------------------------------------

TOY2D_DEFAULTS = {
    "task": "toy2d",
    "model": "vn",
    "spec": {"blocks": [
        {"dims": [0], "A": [[-1.0]], "parity": -1, "mu": None},
        {"dims": [1], "A": [[-1.0]], "parity": -1, "mu": None},
    ]},
    "train": {"epochs": 2000, "lr": 0.005, "seed": 0, "hidden": [10, 10],
              "activation": "sigmoid", "noise_std": 0.25},
    "n_train": 200,
    "train_interval": [-1.5, 1.5],
    "resolution": 50,
    "out_dir": "out/toy2d",
}


def _mirrored_axis(extent: float, resolution: int) -> np.ndarray:
    """Symmetric grid axis with no zero; mirrored bitwise by construction."""
    if resolution % 2:
        raise ConfigError("grid resolution must be even")
    pos = np.linspace(extent / resolution, extent, resolution // 2)
    return np.concatenate([-pos[::-1], pos])


def run_toy2d(cfg: dict) -> list[str]:
    out = _out_dir(cfg)
    train = cfg["train"]
    kind = cfg["model"]
    if kind not in ("vn", "iptn"):
        raise ConfigError("toy2d supports models 'vn' and 'iptn' "
                          "(per-axis odd parity excludes san and hub-multi)")
    spec = _spec_from_config(cfg["spec"])
    base_seed = int(train["seed"])
    data_rng, weight_rng, val_rng = _spawn_rngs(base_seed, 3)
    lo, hi = cfg["train_interval"]
    xs = data_rng.uniform(lo, hi, size=(int(cfg["n_train"]), 2))
    t = np.sin(xs[:, 0]) + np.sin(xs[:, 1]) + data_rng.normal(0.0, train["noise_std"], xs.shape[0])
    model = _build_toy_model(kind, spec, 2, train, weight_rng)
    if kind == "iptn":
        xs, t = model.prepare_dataset(xs, t)
    flip_x = np.diag([-1.0, 1.0])
    flip_y = np.diag([1.0, -1.0])
    val = val_rng.uniform(-3.0, 3.0, size=(200, 2))
    hook = lambda m: metrics.violation_metric_batch(m.predict, val, flip_x, -1)
    records = arch.train_regression(model, xs, t, int(train["epochs"]),
                                    float(train["lr"]), hook)
    axis = _mirrored_axis(3.0, int(cfg["resolution"]))
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    preds = model.predict(pts)
    lines = ["x,y,pred"]
    for (px, py), pv in zip(pts, preds):
        lines.append(f"{_fmt(px)},{_fmt(py)},{_fmt(pv)}")
    (out / "grid.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    metrics.emit_csv(records, out / "run.csv")
    arch.save_model(model, out / "model.json")
    plots.save_contour(axis, axis, preds.reshape(gx.shape).T, out / "contour.png",
                       title=f"{kind}: sin x + sin y")
    residual_x = metrics.violation_metric_batch(model.predict, pts, flip_x, -1)
    residual_y = metrics.violation_metric_batch(model.predict, pts, flip_y, -1)
    artifacts = ["grid.csv", "run.csv", "model.json", "contour.png"]
    _write_manifest(out, "toy2d", cfg, base_seed, artifacts,
                    extras={"antisymmetry_residual_x": residual_x,
                            "antisymmetry_residual_y": residual_y})
    print(f"{kind}: antisymmetry residual x={residual_x:.3e} y={residual_y:.3e}")
    return artifacts


# -- hnn ---------------------------------------------------------------------

HNN_DEFAULTS = {
    "task": "hnn",
    "model": "iptn",
    "spring": {"k": 1.0, "m": 1.0, "samples": 1000, "noise_std": 0.05,
               "seed": 0, "amplitude_range": [0.5, 1.5]},
    "train": {"epochs": 1200, "lr": 0.005, "seed": 0, "hidden": [16, 16],
              "activation": "tanh"},
    "out_dir": "out/hnn",
}


def run_hnn(cfg: dict) -> list[str]:
    out = _out_dir(cfg)
    kind = cfg["model"]
    if kind not in ("vn", "iptn"):
        raise ConfigError("hnn supports models 'vn' (baseline) and 'iptn'")
    s = cfg["spring"]
    spring = physics.SpringConfig(k=s["k"], m=s["m"], samples=int(s["samples"]),
                                  noise_std=s["noise_std"], seed=int(s["seed"]),
                                  amplitude_range=tuple(s["amplitude_range"]))
    t = cfg["train"]
    train = physics.HnnTrainConfig(epochs=int(t["epochs"]), lr=float(t["lr"]),
                                   seed=int(t["seed"]), hidden=tuple(t["hidden"]),
                                   activation=t["activation"])
    result = physics.run_hnn_experiment(spring, use_ipt=(kind == "iptn"), train=train)
    metrics.emit_csv(result.records, out / "run.csv")
    physics.emit_trajectory_csv(result.rollout, out / "trajectory.csv")
    plots.save_hnn_report(result.rollout.t, result.rollout.trajectory, result.reference,
                          result.rollout.energy, out / "hnn.png",
                          title=f"ideal spring ({kind})")
    artifacts = ["run.csv", "trajectory.csv", "hnn.png"]
    _write_manifest(out, "hnn", cfg, train.seed, artifacts, extras={
        "final_loss": result.final_loss,
        "coord_mse": result.coord_mse,
        "energy_variance": result.energy_variance,
        "diverged": result.rollout.diverged,
    })
    print(f"{kind}: loss={result.final_loss:.3e} coord_mse={result.coord_mse:.3e} "
          f"energy_var={result.energy_variance:.3e}")
    return artifacts


# -- cnn ---------------------------------------------------------------------

CNN_DEFAULTS = {
    "task": "cnn",
    "model": "ikcnn",
    "dataset": {"classes": 3, "per_class": 20, "h": 12, "w": 12, "noise_std": 0.15},
    "data_dir": None,
    "train": {"epochs": 200, "lr": 0.001, "seed": 0, "kernel_size": 3,
              "num_filters": 8, "hidden_units": 32, "flip_axis": "horizontal",
              "conv_activation": "relu", "hidden_activation": "relu",
              "augment": False},
    "out_dir": "out/cnn",
}


def run_cnn(cfg: dict) -> list[str]:
    out = _out_dir(cfg)
    kind = cfg["model"]
    if kind not in ("vcnn", "ikcnn"):
        raise ConfigError("cnn supports models 'vcnn' and 'ikcnn'")
    t = cfg["train"]
    train = cnn.CnnTrainConfig(
        epochs=int(t["epochs"]), lr=float(t["lr"]), seed=int(t["seed"]),
        kernel_size=int(t["kernel_size"]), num_filters=int(t["num_filters"]),
        hidden_units=int(t["hidden_units"]), invariant=(kind == "ikcnn"),
        flip_axis=t["flip_axis"], conv_activation=t["conv_activation"],
        hidden_activation=t["hidden_activation"], augment=bool(t["augment"]),
    )
    if cfg.get("data_dir"):
        imgs, labels, _names = cnn.load_pgm_directory(cfg["data_dir"])
    else:
        d = cfg["dataset"]
        imgs, labels = cnn.synth_symmetric_dataset(
            int(d["classes"]), int(d["per_class"]), int(d["h"]), int(d["w"]),
            seed=train.seed, flip_axis=train.flip_axis, noise_std=d["noise_std"])
    model, records, meta = cnn.cnn_train(imgs, labels, train)
    metrics.emit_csv(records, out / "run.csv")
    cnn.save_cnn(model, out / "model.json")
    plots.save_cnn_curves(records, out / "cnn.png", title=kind)
    lines = ["model,final_loss,train_accuracy,flip_violation",
             f"{kind},{_fmt(records[-1].train_loss)},{_fmt(meta['train_accuracy'])},"
             f"{_fmt(meta['flip_violation'])}"]
    (out / "summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    artifacts = ["run.csv", "model.json", "cnn.png", "summary.csv"]
    _write_manifest(out, "cnn", cfg, train.seed, artifacts, extras={
        "train_accuracy": meta["train_accuracy"],
        "flip_violation": meta["flip_violation"],
        "warnings": meta["warnings"],
    })
    print(f"{kind}: accuracy={meta['train_accuracy']:.3f} "
          f"flip_violation={meta['flip_violation']}")
    return artifacts


# -- audit -------------------------------------------------------------------

AUDIT_DEFAULTS = {
    "task": "audit",
    "activation": "sigmoid",
    "parity": 1,
    "tol": 1e-6,
    "out_dir": "out/audit",
}


def run_audit(cfg: dict, activation_override: str | None = None) -> list[str]:
    out = _out_dir(cfg)
    kind = activation_override or cfg["activation"]
    if kind not in nn.ACTIVATIONS:
        raise ConfigError(f"unknown activation {kind!r}")
    parity = int(cfg["parity"])
    report = arch.audit_activation(kind, tol=float(cfg["tol"]), parity=parity)
    sign = "+" if parity == 1 else "-"
    if report.unsafe:
        disp = ", ".join(format(0.0 if abs(b) < 1e-9 else b, ".6g") for b in report.found)
        print(f"UNSAFE{sign} at b*={disp}")
    else:
        print(f"SAFE{sign} on searched grid")
    lines = ["b,residual"]
    for b, r in zip(report.grid_b, report.grid_residual):
        lines.append(f"{_fmt(b)},{_fmt(r)}")
    (out / "audit.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    plots.save_audit_plot(report, out / "audit.png")
    artifacts = ["audit.csv", "audit.png"]
    _write_manifest(out, "audit", cfg, 0, artifacts, extras={
        "activation": kind,
        "found": report.found,
        "search_grid": report.search_grid,
        "unsafe": report.unsafe,
    })
    return artifacts


# -- pid-check ----------------------------------------------------------------

PID_DEFAULTS = {"task": "pid-check", "out_dir": "out/pid-check"}


def run_pid_check(cfg: dict, args, stdin=None) -> list[str]:
    if getattr(args, "spec", None):
        spec = load_spec(args.spec)
    elif getattr(args, "matrix", None):
        a = parse_matrix_text(Path(args.matrix).read_text(encoding="utf-8"))
        spec = involutory_spec(a, getattr(args, "parity", 1) or 1)
    else:
        raise ConfigError("pid-check needs --spec SPEC.json or --matrix A.txt")
    stdin = stdin if stdin is not None else sys.stdin
    count = 0
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        vals = [float(tok) for tok in line.replace(",", " ").split()]
        if len(vals) != spec.n:
            raise ConfigError(f"expected {spec.n} coordinates per line, got {len(vals)}")
        print(classify(np.array(vals), spec).value)
        count += 1
    out = _out_dir(cfg)
    _write_manifest(out, "pid-check", cfg, 0, [], extras={"vectors_classified": count})
    return []


# -- entry point ---------------------------------------------------------------

DEFAULTS = {
    "toy1d": TOY1D_DEFAULTS,
    "toy2d": TOY2D_DEFAULTS,
    "hnn": HNN_DEFAULTS,
    "cnn": CNN_DEFAULTS,
    "audit": AUDIT_DEFAULTS,
    "pid-check": PID_DEFAULTS,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="involute",
        description="Experiments for networks with exact involutory invariance.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("toy1d", "toy2d", "hnn", "cnn", "audit", "pid-check"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config overriding the defaults")
        sp.add_argument("--out", help="output directory (beats INVOLUTE_OUT)")
        sp.add_argument("--seed", type=int, help="override train.seed")
        if name in ("toy1d", "toy2d", "hnn", "cnn"):
            sp.add_argument("--model", help="model kind for the task")
            sp.add_argument("--epochs", type=int)
        if name == "toy1d":
            sp.add_argument("--repeats", type=int)
        if name == "audit":
            sp.add_argument("activation", nargs="?", help="activation to audit")
        if name == "pid-check":
            sp.add_argument("--spec", help="InvolutorySpec JSON file")
            sp.add_argument("--matrix", help="plain-text matrix file (parity +1)")
            sp.add_argument("--parity", type=int, choices=(1, -1), default=1)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load_config(DEFAULTS[args.command], args)
        if args.command == "toy1d":
            run_toy1d(cfg)
        elif args.command == "toy2d":
            run_toy2d(cfg)
        elif args.command == "hnn":
            run_hnn(cfg)
        elif args.command == "cnn":
            run_cnn(cfg)
        elif args.command == "audit":
            run_audit(cfg, getattr(args, "activation", None))
        elif args.command == "pid-check":
            run_pid_check(cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
