"""``shapnoise`` command-line interface.

Commands::

    synth             write a synthetic train/test pair of dataset CSVs
    value             data Shapley values of a training set, one table per metric
    noise-experiment  inject label noise, value the noisy set, report detection
    report            print a summary of an output directory

Every run writes ``manifest.json`` next to its outputs. Passing that file back
with ``--manifest`` replays the run with identical numeric outputs. Only
``--out-dir`` and ``--threads`` may change on a replay.

Exit codes: 0 success, 2 input error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import math
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io
from ._version import __version__
from .core import Dataset, DatasetError, Label
from .harness import (
    Direction,
    NoiseSpec,
    SynthConfig,
    class_mapping_table,
    detection_report,
    inject_noise,
    rank_by_value,
    synth_gaussian,
)
from .metrics import MetricKind, SingleClassTestSetError, Utility, parse_kinds, score
from .model import TrainConfig
from .shapley import (
    SamplerConfig,
    TooManyPlayersError,
    efficiency_gap,
    exact_shapley_multi,
    mc_shapley_multi,
)

log = logging.getLogger("shapnoise")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

# options that determine numeric outputs, per command; everything else is runtime
REPRO_KEYS = {
    "synth": ["n_positive", "n_negative", "dim", "separation", "seed"],
    "value": [
        "train", "test", "metric", "exact", "permutations", "seed", "checkpoint_every",
        "window", "conv_tol", "early_stop", "track_ids", "learning_rate", "max_epochs",
        "l2", "class_weight", "train_tol",
    ],
    "noise-experiment": [
        "train", "test", "metric", "permutations", "seed", "checkpoint_every", "window",
        "conv_tol", "early_stop", "track_ids", "learning_rate", "max_epochs", "l2",
        "class_weight", "train_tol", "levels", "bottom_fraction", "n_positive", "n_negative",
        "dim", "separation",
    ],
}


class InputError(Exception):
    pass


def roman(n: int) -> str:
    out = []
    for value, sym in ((10, "X"), (9, "IX"), (5, "V"), (4, "IV"), (1, "I")):
        while n >= value:
            out.append(sym)
            n -= value
    return "".join(out)


def _levels(text: str) -> list[float]:
    try:
        levels = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad --levels {text!r}") from None
    if not levels or any(not 0 <= lv < 1 for lv in levels):
        raise argparse.ArgumentTypeError("noise levels must lie in [0, 1)")
    return levels


def _class_weight(text: str) -> Optional[float]:
    if text == "auto":
        return None
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("--class-weight takes a number or 'auto'") from None


def _ids(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad id list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapnoise", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    runtime = argparse.ArgumentParser(add_help=False)
    runtime.add_argument("--out-dir", type=Path, default=Path("out"), help="output directory (default: out)")
    runtime.add_argument("--manifest", type=Path, help="replay the run recorded in this manifest")

    synth_opts = argparse.ArgumentParser(add_help=False)
    synth_opts.add_argument("--n-positive", type=int, default=100)
    synth_opts.add_argument("--n-negative", type=int, default=400)
    synth_opts.add_argument("--dim", type=int, default=16)
    synth_opts.add_argument("--separation", type=float, default=4.0)

    valuation = argparse.ArgumentParser(add_help=False)
    valuation.add_argument("--train", type=Path, help="training CSV (id,label,f0,...)")
    valuation.add_argument("--test", type=Path, help="held-out test CSV, same columns")
    valuation.add_argument(
        "--metric", action="append", choices=[k.value for k in MetricKind],
        help="repeatable; default: all three",
    )
    valuation.add_argument("--permutations", type=int, help="maximum permutations (default 3N)")
    valuation.add_argument("--checkpoint-every", type=int, default=1)
    valuation.add_argument("--window", type=int, help="convergence window in checkpoints (default N)")
    valuation.add_argument("--conv-tol", type=float, default=0.05)
    valuation.add_argument(
        "--no-early-stop", dest="early_stop", action="store_false",
        help="run all permutations even after the convergence monitor fires",
    )
    valuation.add_argument("--track-ids", type=_ids, help="ids in the trace (default 2 per class)")
    valuation.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
    valuation.add_argument("--learning-rate", type=float, default=0.1)
    valuation.add_argument("--max-epochs", type=int, default=200)
    valuation.add_argument("--l2", type=float, default=1e-4)
    valuation.add_argument(
        "--class-weight", type=_class_weight, default=1.0, help="positive-class loss weight, or 'auto'"
    )
    valuation.add_argument("--train-tol", type=float, default=1e-6, help="stop when the loss changes less than this")

    p = sub.add_parser("synth", parents=[runtime, synth_opts], help="write synthetic datasets")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("value", parents=[runtime, valuation], help="compute data Shapley values")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exact", action="store_true", help="exact enumeration (N <= 16)")

    p = sub.add_parser(
        "noise-experiment", parents=[runtime, valuation, synth_opts],
        help="label-noise detection experiments (synthetic data unless --train/--test)",
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--levels", type=_levels, default=[0.1, 0.2, 0.3], help="comma-separated noise levels")
    p.add_argument(
        "--bottom-fraction", type=float, default=0.3, help="slice used when the level is 0 (default 0.3)"
    )

    p = sub.add_parser("report", help="summarize an output directory")
    p.add_argument("--out-dir", type=Path, default=Path("out"))
    return parser


def _apply_manifest(args: argparse.Namespace) -> dict:
    manifest = io.read_manifest(args.manifest)
    if manifest["command"] != args.command:
        raise InputError(f"manifest records a {manifest['command']!r} run, not {args.command!r}")
    for key, value in manifest["args"].items():
        if key in ("train", "test") and value is not None:
            value = Path(value)
        setattr(args, key, value)
    for role, info in manifest.get("inputs", {}).items():
        digest = io.sha256_of(info["path"])
        if digest != info["sha256"]:
            raise InputError(f"{role} file {info['path']} changed since the manifest was written")
    return manifest


def _manifest(args: argparse.Namespace, started: float, **extra) -> dict:
    repro = {}
    for key in REPRO_KEYS[args.command]:
        value = getattr(args, key)
        repro[key] = str(value.resolve()) if isinstance(value, Path) else value
    inputs = {
        role: {"path": repro[role], "sha256": io.sha256_of(repro[role])}
        for role in ("train", "test")
        if repro.get(role)
    }
    return {
        "schema": io.MANIFEST_SCHEMA,
        "artifact_version": __version__,
        "command": args.command,
        "args": repro,
        "inputs": inputs,
        **extra,
        "runtime": {
            "threads": getattr(args, "threads", 1),
            "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
            "elapsed_s": round(time.time() - started, 3),
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.learning_rate,
        max_epochs=args.max_epochs,
        l2_penalty=args.l2,
        class_weight_positive=args.class_weight,
        convergence_tol=args.train_tol,
        seed=args.seed,
    )


def _sampler(args) -> SamplerConfig:
    return SamplerConfig(
        max_permutations=args.permutations,
        checkpoint_every=args.checkpoint_every,
        convergence_window=args.window,
        convergence_tol=args.conv_tol,
        seed=args.seed,
        early_stop=args.early_stop,
    )


def default_track_ids(data: Dataset, seed: int, per_class: int = 2) -> list[int]:
    """``per_class`` randomly chosen ids of each input label, seeded."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    chosen: list[int] = []
    for label in (Label.POSITIVE, Label.NEGATIVE):
        ids = data.ids[data.labels == int(label)]
        k = min(per_class, ids.shape[0])
        chosen += rng.choice(ids, size=k, replace=False).tolist()
    return sorted(int(i) for i in chosen)


def _load_pair(args) -> tuple[Dataset, Dataset]:
    if not args.train or not args.test:
        raise InputError("--train and --test are required")
    return io.read_dataset(args.train), io.read_dataset(args.test)


def _value_dataset(args, train: Dataset, test: Dataset, out: Path, exact: bool = False) -> dict:
    """Value ``train`` under every requested metric and write tables into ``out``."""
    kinds = parse_kinds(args.metric or [k.value for k in MetricKind])
    config = _train_config(args)
    util = Utility(train, test, config)
    track = args.track_ids or default_track_ids(train, args.seed)
    train.positions(track)
    summary = {}
    if exact:
        vectors = exact_shapley_multi(train, test, kinds, config, utility=util)
        full = util.counts_for_mask((1 << train.n) - 1)
        empty = util.counts_for_mask(0)
        for kind, sv in vectors.items():
            io.write_values(out / f"sv_{kind}.csv", sv, train)
            v_full, v_empty = score(full, kind), score(empty, kind)
            summary[kind.value] = {
                "method": sv.method,
                "n_permutations": 0,
                "v_full": v_full,
                "v_empty": v_empty,
                "efficiency_gap": efficiency_gap(sv, v_full, v_empty),
            }
        return {"vectors": vectors, "summary": summary, "sampler": None}

    sampler = _sampler(args)
    runs = mc_shapley_multi(train, test, kinds, config, sampler, threads=args.threads, utility=util)
    for kind, run in runs.items():
        io.write_values(out / f"sv_{kind}.csv", run.estimates, train)
        io.write_trace(out / f"trace_{kind}.csv", run, track)
        summary[kind.value] = {
            "method": run.estimates.method,
            "n_permutations": run.n_permutations,
            "converged_at": run.converged_at,
            "v_full": run.v_full,
            "v_empty": run.v_empty,
            "efficiency_gap": efficiency_gap(run.estimates, run.v_full, run.v_empty),
        }
    resolved = next(iter(runs.values())).sampler
    return {
        "vectors": {k: r.estimates for k, r in runs.items()},
        "summary": summary,
        "sampler": resolved.to_dict(),
        "track_ids": track,
    }


def cmd_synth(args) -> None:
    started = time.time()
    cfg = SynthConfig(args.n_positive, args.n_negative, args.dim, args.separation, args.seed)
    train, test = synth_gaussian(cfg)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    io.write_dataset(out / "train.csv", train)
    io.write_dataset(out / "test.csv", test)
    io.write_manifest(out / io.MANIFEST_NAME, _manifest(args, started, synth=vars(cfg)))
    log.info("wrote %d train / %d test rows to %s", train.n, test.n, out)


def cmd_value(args) -> None:
    started = time.time()
    train, test = _load_pair(args)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    result = _value_dataset(args, train, test, out, exact=args.exact)
    io.write_manifest(
        out / io.MANIFEST_NAME,
        _manifest(
            args, started,
            train_config=_train_config(args).to_dict(),
            sampler=result["sampler"],
            results=result["summary"],
        ),
    )


def cmd_noise_experiment(args) -> None:
    started = time.time()
    if args.train or args.test:
        clean, test = _load_pair(args)
        synth = None
    else:
        cfg = SynthConfig(args.n_positive, args.n_negative, args.dim, args.separation, args.seed)
        clean, test = synth_gaussian(cfg)
        synth = vars(cfg)
    if not 0 < args.bottom_fraction <= 1:
        raise InputError("--bottom-fraction must be in (0, 1]")
    kinds = parse_kinds(args.metric or [k.value for k in MetricKind])
    root = args.out_dir
    root.mkdir(parents=True, exist_ok=True)
    if synth:
        io.write_dataset(root / "clean_train.csv", clean)
        io.write_dataset(root / "test.csv", test)

    summary_rows = []
    experiments = {}
    for idx, level in enumerate(args.levels, start=1):
        name = f"exp-{roman(idx)}"
        out = root / name
        out.mkdir(exist_ok=True)
        noisy, record = inject_noise(clean, NoiseSpec(level, level, args.seed))
        io.write_dataset(out / "noisy_train.csv", noisy)
        io.write_flips(out / "flips.csv", record)
        result = _value_dataset(args, noisy, test, out)
        fractions = sorted({level, args.bottom_fraction} - {0.0})
        for kind in kinds:
            sv = result["vectors"][kind]
            ranking = rank_by_value(sv)
            reports = {f: detection_report(ranking, record, f) for f in fractions}
            io.write_detection(out / f"detection_{kind}.csv", list(reports.values()))
            io.write_mapping(out / f"mapping_{kind}.csv", class_mapping_table(ranking, noisy, clean))
            at_level = reports[level if level > 0 else args.bottom_fraction]
            at_bottom = reports[args.bottom_fraction]
            for direction in Direction:
                summary_rows.append({
                    "experiment": name,
                    "level": io.fmt(level),
                    "metric": kind.value,
                    "direction": direction.value,
                    "n_flipped": len(record.ids(direction)),
                    "capture_at_level": io.fmt(at_level.capture(direction)),
                    "capture_at_bottom": io.fmt(at_bottom.capture(direction)),
                    "vacuous": int(len(record.ids(direction)) == 0),
                })
        experiments[name] = {
            "level": level,
            "n_flipped": len(record),
            "results": result["summary"],
            "sampler": result["sampler"],
        }
        io.write_manifest(
            out / io.MANIFEST_NAME,
            _manifest(args, started, experiment=name, noise=vars(NoiseSpec(level, level, args.seed)),
                      train_config=_train_config(args).to_dict(), sampler=result["sampler"],
                      results=result["summary"], synth=synth),
        )
        log.info("%s (level %.2f) done", name, level)

    io.write_csv_dicts(root / "summary.csv", SUMMARY_HEADER, summary_rows)
    io.write_manifest(
        root / io.MANIFEST_NAME,
        _manifest(args, started, train_config=_train_config(args).to_dict(),
                  synth=synth, experiments=experiments),
    )


SUMMARY_HEADER = [
    "experiment", "level", "metric", "direction", "n_flipped",
    "capture_at_level", "capture_at_bottom", "vacuous",
]


def cmd_report(args, stream=None) -> None:
    stream = stream or sys.stdout
    root = args.out_dir
    summary = root / "summary.csv"
    if summary.exists():
        rows = io.read_csv_dicts(summary)
        stream.write(f"{'experiment':<10} {'level':>5} {'metric':<11} {'direction':<10} "
                     f"{'flipped':>7} {'@level':>7} {'@bottom':>7}\n")
        for r in rows:
            note = " (vacuous)" if r["vacuous"] == "1" else ""
            stream.write(
                f"{r['experiment']:<10} {float(r['level']):>5.2f} {r['metric']:<11} "
                f"{r['direction']:<10} {int(r['n_flipped']):>7} "
                f"{float(r['capture_at_level']):>7.3f} {float(r['capture_at_bottom']):>7.3f}{note}\n"
            )
        return
    tables = sorted(root.glob("sv_*.csv"))
    if not tables:
        raise InputError(f"{root} holds neither summary.csv nor sv_*.csv tables")
    stream.write(f"{'metric':<11} {'n':>5} {'sum':>10} {'mean(pos)':>10} {'mean(neg)':>10}\n")
    for path in tables:
        rows = io.read_csv_dicts(path)
        vals = {lab: [float(r["sv"]) for r in rows if r["input_label"] == lab] for lab in ("pos", "neg")}
        total = math.fsum(float(r["sv"]) for r in rows)
        means = {k: (sum(v) / len(v) if v else math.nan) for k, v in vals.items()}
        stream.write(f"{path.stem[3:]:<11} {len(rows):>5} {total:>10.6f} "
                     f"{means['pos']:>10.6f} {means['neg']:>10.6f}\n")


COMMANDS = {
    "synth": cmd_synth,
    "value": cmd_value,
    "noise-experiment": cmd_noise_experiment,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if getattr(args, "manifest", None):
            _apply_manifest(args)
        COMMANDS[args.command](args)
    except (InputError, DatasetError, SingleClassTestSetError, TooManyPlayersError, KeyError,
            ValueError) as exc:
        print(f"shapnoise: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ArithmeticError as exc:
        print(f"shapnoise: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"shapnoise: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
