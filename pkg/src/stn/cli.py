"""Command-line entry point: ``stn {gen,train,ablate,gradcheck,export}``.

Settings resolve as defaults < ``--config`` JSON file < flags. Every command
writes the resolved settings to ``<out>/resolved_config.json``; passing that
file back via ``--config`` reruns the command exactly.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, fields, replace
from pathlib import Path

from .data import HdaDataset, SynthSpec, gen_synthetic, load_dir, write_csv
from .errors import ConfigError, StnError
from .evalkit import accuracy, export_embeddings, gradcheck_suite, run_ablations, write_trial_traces
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .trainer import ALL_VARIANTS, VARIANTS, TrainConfig, predict, train, write_trace_csv

log = logging.getLogger("stn")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3, 4

_SYNTH_KEYS = {f.name for f in fields(SynthSpec)} - {"seed"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}

DEFAULTS = {
    **{k: v for k, v in asdict(SynthSpec()).items() if k != "seed"},
    **asdict(TrainConfig()),
    "d": 256,
    "hidden": None,
    "slope": 0.2,
    "seed": 0,
    "trials": 20,
    "jobs": 1,
    "data": None,
    "out": "stn_out",
    "checkpoint": None,
    "variants": list(VARIANTS),
    "tol": 1e-5,
}

# flag name -> config key
_FLAG_KEYS = {
    "beta": "beta", "tau": "tau", "lr": "lr", "iters": "iters", "dim": "d",
    "hidden": "hidden", "slope": "slope", "seed": "seed", "trials": "trials",
    "variant": "variant", "jobs": "jobs", "data": "data", "out": "out",
    "noise": "noise", "separation": "separation", "classes": "n_classes",
    "checkpoint": "checkpoint", "tol": "tol",
}


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON file of flat key/value settings")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help="directory with source.csv, target_labeled.csv, target_unlabeled.csv")
    p.add_argument("--classes", type=int, help="number of classes")
    p.add_argument("--noise", type=float, help="synthetic observation noise")
    p.add_argument("--separation", type=float, help="synthetic class-mean separation")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_model_train(p: argparse.ArgumentParser):
    p.add_argument("--beta", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--dim", type=int, help="common subspace dimension d")
    p.add_argument("--hidden", type=int, help="hidden width (default: d)")
    p.add_argument("--slope", type=float, help="leaky relu negative slope")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stn", description="Soft Transfer Network for heterogeneous domain adaptation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic heterogeneous dataset")
    _add_common(p)

    p = sub.add_parser("train", help="train one model and score it")
    _add_common(p)
    _add_model_train(p)
    p.add_argument("--variant", choices=ALL_VARIANTS)

    p = sub.add_parser("ablate", help="run every variant over paired seeds")
    _add_common(p)
    _add_model_train(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--jobs", type=int, help="parallel worker processes")
    p.add_argument("--variants", help="comma-separated subset of variants")

    p = sub.add_parser("gradcheck", help="finite-difference check of the training objective")
    _add_common(p)
    p.add_argument("--beta", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--tol", type=float)

    p = sub.add_parser("export", help="write projected embeddings of a dataset")
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint written by train")
    return parser


def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config is not None:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {args.config} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON: {exc}") from None
        unknown = set(loaded) - set(DEFAULTS) - {"command"}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update({k: v for k, v in loaded.items() if k != "command"})
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = value
    variants = getattr(args, "variants", None)
    if variants is not None:
        cfg["variants"] = [v.strip() for v in variants.split(",") if v.strip()]
    bad = [v for v in cfg["variants"] if v not in ALL_VARIANTS]
    if bad:
        raise ConfigError(f"unknown variants: {', '.join(bad)}")
    cfg["command"] = args.command
    return cfg


def synth_spec(cfg) -> SynthSpec:
    return SynthSpec(seed=int(cfg["seed"]), **{k: cfg[k] for k in _SYNTH_KEYS})


def train_config(cfg) -> TrainConfig:
    return TrainConfig(**{k: cfg[k] for k in _TRAIN_KEYS})


def model_config(cfg, dataset: HdaDataset) -> ModelConfig:
    return ModelConfig(d_s=dataset.d_s, d_t=dataset.d_t, n_classes=dataset.n_classes,
                       d=int(cfg["d"]), hidden=cfg["hidden"], slope=float(cfg["slope"]),
                       init_seed=int(cfg["seed"]))


def load_data(cfg):
    """The user dataset if ``data`` is set, otherwise the synthetic spec."""
    if cfg["data"]:
        return load_dir(cfg["data"], int(cfg["n_classes"]))
    return synth_spec(cfg)


def _dataset(cfg) -> HdaDataset:
    src = load_data(cfg)
    return gen_synthetic(src) if isinstance(src, SynthSpec) else src


def _prepare_out(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def _summary(out: Path, lines):
    stamp = time.strftime("%Y-%m-%dT%H:%M:%S")
    with open(out / "summary.log", "a", encoding="utf-8") as fh:
        for line in lines:
            fh.write(f"{stamp} {line}\n")


def cmd_gen(cfg) -> int:
    out = _prepare_out(cfg)
    ds = gen_synthetic(synth_spec(cfg))
    paths = write_csv(ds, out)
    print(f"wrote {ds.n_s} source, {ds.n_l} labeled target, {ds.n_u} unlabeled target rows to {out}")
    _summary(out, [f"gen {p}" for p in paths.values()])
    return EXIT_OK


def cmd_train(cfg) -> int:
    out = _prepare_out(cfg)
    ds = _dataset(cfg)
    mcfg = model_config(cfg, ds)
    tcfg = train_config(cfg)
    start = time.perf_counter()
    trace = train(ds, mcfg, tcfg)
    wall = time.perf_counter() - start
    save_checkpoint(out / "checkpoint.npz", mcfg, trace.params)
    write_trace_csv(trace, out / "trace.csv")
    metrics = {"variant": tcfg.variant, "iterations": len(trace),
               "initial_total": trace.records[0].total, "final_total": trace.records[-1].total}
    if ds.y_u_truth is not None:
        metrics["accuracy"] = accuracy(predict(trace.params, ds.X_u, mcfg.slope), ds.y_u_truth.reveal())
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n", encoding="utf-8")
    msg = f"{tcfg.variant}: objective {metrics['initial_total']:.6g} -> {metrics['final_total']:.6g}"
    if "accuracy" in metrics:
        msg += f", unlabeled-target accuracy {100 * metrics['accuracy']:.2f}%"
    print(msg)
    _summary(out, [msg, f"wall_seconds {wall:.3f}"])
    return EXIT_OK


def cmd_ablate(cfg) -> int:
    out = _prepare_out(cfg)
    src = load_data(cfg)
    probe = gen_synthetic(replace(src, seed=int(cfg["seed"]))) if isinstance(src, SynthSpec) else src
    report = run_ablations(src, model_config(cfg, probe), train_config(cfg), int(cfg["trials"]),
                           int(cfg["seed"]), variants=cfg["variants"], n_jobs=int(cfg["jobs"]))
    report.dump(out / "suite.json")
    write_trial_traces(report, out / "traces")
    table = report.summary_table()
    print(table)
    print("(std is the population standard deviation over trials)")
    _summary(out, table.splitlines())
    return EXIT_OK


def cmd_gradcheck(cfg) -> int:
    out = _prepare_out(cfg)
    tcfg = TrainConfig(beta=cfg["beta"], tau=cfg["tau"], iters=int(cfg["iters"]))
    results = gradcheck_suite(tcfg, variants=VARIANTS, seed=int(cfg["seed"]), tol=float(cfg["tol"]))
    lines = [f"{variant:<8} r={r:<4} {rep}" for variant, r, rep in results]
    ok = all(rep.passed for _, _, rep in results)
    lines.append("gradcheck " + ("PASS" if ok else "FAIL"))
    (out / "gradcheck.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_export(cfg) -> int:
    if not cfg["checkpoint"]:
        raise ConfigError("export needs --checkpoint")
    out = _prepare_out(cfg)
    try:
        mcfg, params = load_checkpoint(cfg["checkpoint"])
    except FileNotFoundError:
        raise ConfigError(f"checkpoint {cfg['checkpoint']} not found") from None
    ds = _dataset(cfg)
    path = export_embeddings(params, ds, out / "embeddings.csv", mcfg.slope)
    print(f"wrote {ds.n_s + ds.n_l + ds.n_u} embeddings of dimension {mcfg.d} to {path}")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "export": cmd_export,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except StnError as exc:
        print(f"stn {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, TypeError) as exc:
        print(f"stn {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
