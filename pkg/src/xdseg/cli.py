"""Command-line entry point: ``xdseg {synth,train,eval,analyze,metrics}``.

Exit codes: 0 ok, 1 runtime abort (non-finite loss), 2 input-contract
violation, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from xdseg.config import ConfigError, ExperimentConfig
from xdseg.data.volume import VolumeFormatError, load_volume
from xdseg.metrics.report import evaluate_volume, to_csv
from xdseg.metrics.surface import ExtentMismatchError
from xdseg.network.checkpoint import CheckpointError
from xdseg.training.loop import TrainingDiverged

EXIT_OK, EXIT_ABORT, EXIT_CONTRACT, EXIT_IO = 0, 1, 2, 3


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", type=Path, help="output (run or dataset) directory")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; VALUE is parsed as JSON when possible")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xdseg", description="Cross-domain segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multi-domain dataset and manifest")
    _shared(p)

    p = sub.add_parser("train", help="train segmenter and discriminator")
    _shared(p)
    p.add_argument("--manifest", type=Path)
    p.add_argument("--sweep", action="append", default=[], metavar="KEY=V1,V2",
                   help="train one run per value (repeatable; combinations are crossed)")
    p.add_argument("--eval", action="store_true", help="evaluate each run after training")

    for name, text in (("eval", "evaluate a checkpoint on the test split"),
                       ("analyze", "sparsity and response histograms of a checkpoint")):
        p = sub.add_parser(name, help=text)
        _shared(p)
        p.add_argument("--run", type=Path, help="run directory (reads its config.json)")
        p.add_argument("--manifest", type=Path)
        p.add_argument("--checkpoint", type=Path)
        if name == "eval":
            p.add_argument("--oracle", action="store_true",
                           help="score the ground truth against itself (pipeline check)")
            p.add_argument("--no-filter", action="store_true", help="skip the connected-component filter")

    p = sub.add_parser("metrics", help="metric report for one segmentation/reference pair")
    p.add_argument("seg", type=Path)
    p.add_argument("ref", type=Path)
    p.add_argument("--class", dest="cls", type=int, default=1)
    p.add_argument("--voxel-units", action="store_true", help="distances in voxels instead of mm")
    p.add_argument("--csv", action="store_true", help="emit a CSV row instead of JSON")
    return parser


def _config(args) -> ExperimentConfig:
    src = args.config
    run = getattr(args, "run", None)
    if src is None and run is not None:
        src = run / "config.json"
    cfg = ExperimentConfig.load(src) if src is not None else ExperimentConfig()
    cfg = cfg.with_overrides(args.overrides)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=str(args.out))
    elif run is not None:
        cfg = replace(cfg, out=str(run))
    if getattr(args, "manifest", None) is not None:
        cfg = replace(cfg, manifest=str(args.manifest))
    return cfg


def _parse_sweep(items: list[str]) -> dict[str, list]:
    out = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep or not raw:
            raise ConfigError(f"sweep {item!r} is not of the form KEY=V1,V2")
        vals = []
        for tok in raw.split(","):
            try:
                vals.append(json.loads(tok))
            except json.JSONDecodeError:
                vals.append(tok)
        out[key.strip()] = vals
    return out


def _checkpoint(args):
    if args.checkpoint is not None:
        return args.checkpoint
    if args.run is not None:
        return args.run / "checkpoints" / "unet_final.ckpt"
    return None


def cmd_synth(args) -> int:
    from xdseg.pipeline import run_synth

    cfg = _config(args)
    cfg.domain_specs()
    path = run_synth(cfg, Path(cfg.out))
    _log(f"wrote {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    from xdseg.pipeline import run_eval, run_train

    cfg = _config(args)
    if args.sweep:
        cfg = replace(cfg, sweep={**cfg.sweep, **_parse_sweep(args.sweep)})
    cfg.validate(need_manifest=True)
    base = Path(cfg.out)
    for name, sub in cfg.expand_sweep():
        run_dir = base / name if name else base
        sub = replace(sub, out=str(run_dir))
        _log(f"training {run_dir} ({sub.norm_spec().label}, T={sub.T}, adv_weight={sub.adv_weight})")
        run_train(sub, run_dir, log=_log)
        if args.eval:
            summary = run_eval(sub, run_dir)
            _log(f"{run_dir}: overall score {summary['overall']['overall']:.2f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from xdseg.pipeline import run_eval

    cfg = _config(args)
    if args.no_filter:
        cfg = replace(cfg, post_filter=False)
    summary = run_eval(cfg, Path(cfg.out), _checkpoint(args), oracle=args.oracle)
    for d, r in summary["domains"].items():
        _log(f"{d or 'untagged'}: VO {r['vo']:.2f} overall {r['overall']:.2f}")
    _log(f"overall {summary['overall']['overall']:.2f}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    from xdseg.pipeline import run_analyze

    cfg = _config(args)
    run_analyze(cfg, Path(cfg.out), _checkpoint(args))
    _log(f"wrote {Path(cfg.out) / 'reports'}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    seg, ref = load_volume(args.seg), load_volume(args.ref)
    if seg.extents != ref.extents:
        raise ExtentMismatchError(f"extent mismatch: {seg.extents} vs {ref.extents}")
    report = evaluate_volume(seg, ref, args.cls, physical=not args.voxel_units)
    sys.stdout.write(to_csv(report) if args.csv else report.to_json() + "\n")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "analyze": cmd_analyze, "metrics": cmd_metrics}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except TrainingDiverged as exc:
        _log(f"aborted: {exc}")
        return EXIT_ABORT
    except (VolumeFormatError, CheckpointError, OSError) as exc:
        _log(f"I/O error: {exc}")
        return EXIT_IO
    except ValueError as exc:
        # Covers config errors, shape/extent mismatches and undefined metrics.
        _log(f"error: {exc}")
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
