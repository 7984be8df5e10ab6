"""Command-line front end.

    proco generate  --classes 5 --n-max 800 --ratio 50 --dim 32 --out data.csv
    proco train     --data data.csv --method proco --epochs 200 --out runs/proco
    proco evaluate  --checkpoint runs/proco/checkpoint.json --data data.csv
    proco ablate    --seeds 5 --out ablation.csv
    proco compare   --seeds 5 --out baselines.csv
    proco gradcheck --trials 100 --tol 1e-4

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import checkpoint, gradcheck
from .benchmark import ABLATIONS, BASELINES, REFERENCE_CONFIG, ReferenceData, run_grid, summarize_grid
from .config import TrainConfig, canonical_method, parse_overrides, read_config_file
from .dataset import generate_long_tailed, load_embeddings_csv, save_csv, split
from .encoder import forward
from .errors import ConfigError
from .metrics import imbalance_ratio, summarize
from .prototypes import predict
from .trainer import fit

log = logging.getLogger("proco")

METHOD_CHOICES = ("proco", "ce", "ce-resample", "infonce", "infonce-resample")


def _hash(obj) -> str:
    return hashlib.sha1(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def manifest(command: str, config: dict, seed, inputs: dict, outputs: dict) -> dict:
    return {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
        "config_hash": _hash(config),
    }


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _resolve_config(args, base: TrainConfig) -> TrainConfig:
    kw = {}
    if getattr(args, "config", None):
        kw.update(read_config_file(args.config))
    if getattr(args, "set", None):
        pairs = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            k, v = item.split("=", 1)
            pairs[k.strip()] = v.strip()
        kw.update(parse_overrides(pairs))
    for flag, key in (("method", "method"), ("epochs", "epochs"), ("seed", "seed"), ("split_mode", "split_mode")):
        value = getattr(args, flag, None)
        if value is not None:
            kw[key] = canonical_method(value) if key == "method" else value
    return base.with_overrides(**kw).validate()


def cmd_generate(args) -> int:
    ds = generate_long_tailed(args.classes, args.n_max, args.ratio, args.dim, args.separation, args.seed)
    out = Path(args.out)
    save_csv(ds, out)
    config = {
        "classes": args.classes,
        "n_max": args.n_max,
        "ratio": args.ratio,
        "dim": args.dim,
        "separation": args.separation,
    }
    man = manifest("generate", config, args.seed, {}, {"data": str(out)})
    man["class_counts"] = ds.class_counts.tolist()
    man["imbalance_ratio"] = imbalance_ratio(ds)
    _write_json(out.with_name(out.name + ".manifest.json"), man)
    print(f"wrote {len(ds)} rows to {out} (class counts {ds.class_counts.tolist()}, ratio {man['imbalance_ratio']:.2f})")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args, TrainConfig())
    ds = load_embeddings_csv(args.data)
    tr, te = split(ds, cfg.train_fraction, cfg.split_seed, cfg.split_mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "checkpoint": str(out / "checkpoint.json"),
        "report": str(out / "report.json"),
        "log": str(out / "train_log.jsonl"),
    }
    state, report = fit(cfg, tr, te, log_path=paths["log"])
    checkpoint.save(paths["checkpoint"], state.params, state.bank, cfg, state.key.key_params)
    man = manifest("train", cfg.to_dict(), cfg.seed, {"data": str(args.data)}, paths)
    _write_json(
        paths["report"],
        {"manifest": man, "per_epoch": report.per_epoch, "final": report.final, "wall_clock": report.wall_clock},
    )
    f = report.final
    print(f"{cfg.method}: accuracy {f['accuracy']:.4f}  macro-F1 {f['macro_f1']:.4f}  ({report.wall_clock:.1f}s)")
    return 0


def cmd_evaluate(args) -> int:
    params, bank, cfg = checkpoint.load(args.checkpoint)
    cfg = cfg or TrainConfig()
    ds = load_embeddings_csv(args.data)
    if args.split == "test":
        _, ds = split(ds, cfg.train_fraction, cfg.split_seed, cfg.split_mode)
    elif args.split == "train":
        ds, _ = split(ds, cfg.train_fraction, cfg.split_seed, cfg.split_mode)
    f, _ = forward(params, ds.X, cfg.normalize_f, need_g=False)
    result = summarize(ds.y, predict(f.value, bank), max(ds.num_classes, bank.num_classes))
    result["manifest"] = manifest(
        "evaluate", cfg.to_dict(), cfg.seed, {"checkpoint": str(args.checkpoint), "data": str(args.data)}, {}
    )
    text = json.dumps(result, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _grid_command(args, variants, name) -> int:
    cfg = _resolve_config(args, REFERENCE_CONFIG)
    data = load_embeddings_csv(args.data) if args.data else ReferenceData()
    seeds = list(range(args.seed_offset, args.seed_offset + args.seeds))
    rows = summarize_grid(run_grid(variants, seeds, cfg, data))
    out = Path(args.out)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    man = manifest(
        name,
        cfg.to_dict(),
        seeds,
        {"data": str(args.data) if args.data else "reference-synthetic"},
        {"table": str(out)},
    )
    man["variants"] = variants
    _write_json(out.with_name(out.name + ".manifest.json"), man)
    for r in rows:
        print(
            f"{r['config']:>18}  acc {r['accuracy_mean']:.4f}±{r['accuracy_sd']:.4f}"
            f"  macro-F1 {r['macro_f1_mean']:.4f}±{r['macro_f1_sd']:.4f}"
        )
    return 0


def cmd_ablate(args) -> int:
    return _grid_command(args, ABLATIONS, "ablate")


def cmd_compare(args) -> int:
    return _grid_command(args, BASELINES, "compare")


def cmd_gradcheck(args) -> int:
    if args.trials == 0:
        log.warning("--trials 0: nothing checked")
        print("gradcheck: 0 trials, vacuous pass")
        return 0
    results = gradcheck.run(args.trials, args.tol, args.seed)
    ok = True
    for name, r in results.items():
        status = "PASS" if r["failures"] == 0 else "FAIL"
        ok &= r["failures"] == 0
        print(f"{name:>14}: {status}  max_rel_err {r['max_rel_err']:.3e}  failures {r['failures']}/{r['trials']}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="proco", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic long-tailed dataset as CSV")
    g.add_argument("--classes", type=int, default=5)
    g.add_argument("--n-max", type=int, default=800)
    g.add_argument("--ratio", type=float, default=50.0)
    g.add_argument("--dim", type=int, default=32)
    g.add_argument("--separation", type=float, default=3.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    def config_flags(sp):
        sp.add_argument("--config", help="key = value file with TrainConfig fields")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--split-mode", dest="split_mode", choices=("stratified", "random"))

    t = sub.add_parser("train", help="train one model and write checkpoint + report")
    t.add_argument("--data", required=True)
    t.add_argument("--method", choices=METHOD_CHOICES, default="proco")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    config_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint on a CSV dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("all", "train", "test"), default="test")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    for name, func, help_ in (
        ("ablate", cmd_ablate, "loss-only / +proto-instance / +recalibration / full over seeds"),
        ("compare", cmd_compare, "ProCo against the CE and InfoNCE baselines over seeds"),
    ):
        a = sub.add_parser(name, help=help_)
        a.add_argument("--data", help="CSV dataset; default: reference synthetic benchmark, one draw per seed")
        a.add_argument("--seeds", type=int, default=5)
        a.add_argument("--seed-offset", type=int, default=0)
        a.add_argument("--out", required=True)
        config_flags(a)
        a.set_defaults(func=func)

    c = sub.add_parser("gradcheck", help="finite-difference checks of the losses")
    c.add_argument("--trials", type=int, default=100)
    c.add_argument("--tol", type=float, default=1e-4)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"proco: configuration error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, ArithmeticError, RuntimeError) as e:
        print(f"proco: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
