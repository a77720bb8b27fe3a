"""The work behind each CLI command, callable without going through argparse."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from xdseg import tensor as T
from xdseg.config import ConfigError, ExperimentConfig
from xdseg.data.manifest import ManifestEntry, load_slices, read_manifest, write_manifest
from xdseg.data.preprocess import connected_component_filter, rescale_contrast, stack_slices
from xdseg.data.synth import synth_generate
from xdseg.data.volume import Volume, load_volume, save_volume
from xdseg.metrics.report import CSV_COLUMNS, MetricReport, csv_row, evaluate_volume, mean_report
from xdseg.network.checkpoint import load_checkpoint, save_checkpoint
from xdseg.network.diagnostics import domain_histograms, write_histograms_csv
from xdseg.network.unet import Discriminator, UNet
from xdseg.training.loop import LossCsvWriter, recalibrate_batch_stats, train_loop

CKPT_DIR = "checkpoints"
REPORT_DIR = "reports"


class ContractError(ValueError):
    """Inputs that contradict each other (e.g. checkpoint vs config)."""


# ---- synth -------------------------------------------------------------------

def run_synth(cfg: ExperimentConfig, out: Path) -> Path:
    specs = cfg.domain_specs()
    n, n_train = int(cfg.synth_volumes_per_domain), int(cfg.synth_train_per_domain)
    if n < 1 or not 0 <= n_train <= n:
        raise ConfigError("need synth_volumes_per_domain >= 1 and 0 <= synth_train_per_domain <= it")
    if len(cfg.synth_extents) != 3 or len(cfg.synth_spacing) != 3:
        raise ConfigError("synth_extents and synth_spacing need three entries (x, y, z)")
    cases = synth_generate(specs, n, tuple(int(e) for e in cfg.synth_extents), int(cfg.seed),
                           tuple(float(s) for s in cfg.synth_spacing))
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for c in cases:
        img, lab = f"{c.case_id}_img.xdv", f"{c.case_id}_lab.xdv"
        save_volume(c.intensity, out / img)
        save_volume(c.label, out / lab)
        split = "train" if int(c.case_id.rsplit("_", 1)[1]) < n_train else "test"
        entries.append(ManifestEntry(img, lab, c.domain_tag, split))
    path = out / "manifest.json"
    write_manifest(path, entries)
    return path


# ---- train -------------------------------------------------------------------

def _split(cfg: ExperimentConfig, split: str) -> list[ManifestEntry]:
    entries = [e for e in read_manifest(cfg.manifest) if e.split == split]
    if not entries:
        raise ConfigError(f"manifest {cfg.manifest} has no '{split}' entries")
    return entries


def run_train(cfg: ExperimentConfig, run_dir: Path, log=None) -> Path:
    """Train one configuration into ``run_dir``; returns the final segmenter checkpoint."""
    cfg.validate(need_manifest=True)
    entries = _split(cfg, "train")
    samples = load_slices(entries, int(cfg.T), int(cfg.num_classes), cfg.lo_pct, cfg.hi_pct)
    ucfg = cfg.unet_config()
    unet = UNet(ucfg, seed=int(cfg.seed))
    disc = Discriminator(cfg.disc_config(), seed=int(cfg.seed) + 1)

    ckpt = run_dir / CKPT_DIR
    ckpt.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(cfg.to_json())
    tags = sorted({e.domain_tag for e in entries})
    every = int(cfg.checkpoint_every)
    with LossCsvWriter(run_dir / "losses.csv", tags) as writer:
        for r in train_loop(unet, disc, samples, cfg.train_config()):
            writer(r)
            done = r.iteration + 1
            if log is not None and (done % 100 == 0 or done == cfg.iterations):
                log(f"iter {done}: L_cls={r.l_cls:.4f} L_Gen={r.l_gen:.4f} L_Disc={r.l_disc:.4f}")
            if every and done % every == 0 and done < cfg.iterations:
                save_checkpoint(ckpt / f"unet_iter{done:06d}.ckpt", unet, {"iteration": done})
    if not any(unet.tracked_counts().values()):
        # no train-mode step ran (iterations=0); give eval mode valid statistics
        recalibrate_batch_stats(unet, samples, int(cfg.batch_size))
    final = ckpt / "unet_final.ckpt"
    save_checkpoint(final, unet, {"iteration": int(cfg.iterations)})
    save_checkpoint(ckpt / "disc_final.ckpt", disc, {"iteration": int(cfg.iterations)})
    return final


# ---- inference ---------------------------------------------------------------

def load_segmenter(cfg: ExperimentConfig, path) -> UNet:
    model, _ = load_checkpoint(path)
    if not isinstance(model, UNet):
        raise ContractError(f"{path} holds a discriminator, not a segmenter")
    mc = model.config
    if mc.in_channels != cfg.in_channels or mc.num_classes != cfg.num_classes:
        raise ContractError(
            f"checkpoint expects {mc.in_channels} input channels and {mc.num_classes} classes; "
            f"config gives {cfg.in_channels} (T={cfg.T}) and {cfg.num_classes}")
    return model


def _slice_images(cfg: ExperimentConfig, intensity: Volume) -> np.ndarray:
    img = rescale_contrast(intensity, cfg.lo_pct, cfg.hi_pct)
    return np.stack([s.image for s in stack_slices(img, None, int(cfg.T), int(cfg.num_classes))])


def predict_volume(model: UNet, cfg: ExperimentConfig, intensity: Volume) -> Volume:
    """Slice-wise argmax prediction reassembled into a label volume."""
    x = _slice_images(cfg, intensity)
    dtype = next(iter(model.parameters().values())).dtype
    out = []
    for i in range(0, len(x), int(cfg.eval_batch)):
        logits = model(T.Tensor(x[i:i + int(cfg.eval_batch)].astype(dtype)), "eval")
        out.append(np.argmax(logits.data, axis=1))
    pred = np.concatenate(out).astype(np.float32)
    return intensity.with_voxels(pred, kind="label")


def _write_table(path: Path, rows: list[tuple[str, str, MetricReport]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case", "domain"] + CSV_COLUMNS)
        for case, domain, rep in rows:
            w.writerow([case, domain] + csv_row(rep))


def run_eval(cfg: ExperimentConfig, run_dir: Path, checkpoint=None, oracle: bool = False) -> dict:
    """Evaluate the test split; writes ``reports/eval.csv`` and ``reports/eval.json``."""
    cfg.validate(need_manifest=True)
    entries = _split(cfg, "test")
    model = None
    if not oracle:
        model = load_segmenter(cfg, checkpoint or run_dir / CKPT_DIR / "unet_final.ckpt")
    reports = run_dir / REPORT_DIR
    pred_dir = reports / "predictions"
    pred_dir.mkdir(parents=True, exist_ok=True)
    fg = int(cfg.foreground_class)
    scales = cfg.score_scales()
    per_case: list[tuple[str, str, MetricReport]] = []
    for e in entries:
        ref = load_volume(e.label_path)
        if oracle:
            pred = ref
        else:
            pred = predict_volume(model, cfg, load_volume(e.intensity_path))
        if cfg.post_filter:
            pred = connected_component_filter(pred, fg)
        if cfg.save_predictions:
            save_volume(pred, pred_dir / f"{e.case_id}_pred.xdv")
        rep = evaluate_volume(pred, ref, fg, bool(cfg.physical_units), scales,
                              classes=tuple(range(1, int(cfg.num_classes))))
        per_case.append((e.case_id, e.domain_tag, rep))

    domains = sorted({d for _, d, _ in per_case})
    by_domain = {d: mean_report([r for _, dd, r in per_case if dd == d]) for d in domains}
    overall = mean_report(list(by_domain.values()))
    rows = per_case + [(f"mean:{d or 'untagged'}", d, r) for d, r in by_domain.items()]
    rows.append(("mean:overall", "", overall))
    _write_table(reports / "eval.csv", rows)
    summary = {
        "cases": {c: {"domain": d, **r.to_dict()} for c, d, r in per_case},
        "domains": {d: r.to_dict() for d, r in by_domain.items()},
        "overall": overall.to_dict(),
    }
    (reports / "eval.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


# ---- analyze -----------------------------------------------------------------

def run_analyze(cfg: ExperimentConfig, run_dir: Path, checkpoint=None) -> dict:
    """Per-layer, per-domain sparsity plus histograms of randomly chosen kernels.

    Uses the test split when present, else every manifest entry.
    """
    cfg.validate(need_manifest=True)
    model = load_segmenter(cfg, checkpoint or run_dir / CKPT_DIR / "unet_final.ckpt")
    entries = [e for e in read_manifest(cfg.manifest) if e.split == "test"] or read_manifest(cfg.manifest)
    blocks = model.conv_blocks()
    layers = list(cfg.analyze_layers) or list(blocks)
    missing = [l for l in layers if l not in blocks]
    if missing:
        raise ConfigError(f"unknown layers for analysis: {missing}")
    rng = np.random.default_rng(int(cfg.seed))
    kernels = {}
    for l in layers:
        width = blocks[l].cout
        kernels[l] = sorted(rng.choice(width, size=min(int(cfg.analyze_kernels), width), replace=False).tolist())

    dtype = next(iter(model.parameters().values())).dtype
    positives: dict[tuple[str, str], int] = {}
    totals: dict[tuple[str, str], int] = {}
    responses: dict[str, dict[str, list[np.ndarray]]] = {l: {} for l in layers}
    for e in entries:
        x = _slice_images(cfg, load_volume(e.intensity_path))
        for i in range(0, len(x), int(cfg.eval_batch)):
            cap: dict[str, np.ndarray] = {}
            model(T.Tensor(x[i:i + int(cfg.eval_batch)].astype(dtype)), "eval", capture=cap)
            for l in layers:
                a = cap[l]
                key = (l, e.domain_tag)
                positives[key] = positives.get(key, 0) + int(np.count_nonzero(a > 0))
                totals[key] = totals.get(key, 0) + a.size
                responses[l].setdefault(e.domain_tag, []).append(a[:, kernels[l]])

    reports = run_dir / REPORT_DIR
    hist_dir = reports / "histograms"
    hist_dir.mkdir(parents=True, exist_ok=True)
    sparsity = {f"{l}|{d}": positives[(l, d)] / totals[(l, d)] for (l, d) in sorted(totals)}
    with open(reports / "sparsity.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "domain", "sparsity_fraction", "positive", "total"])
        for (l, d) in sorted(totals, key=lambda k: (layers.index(k[0]), k[1])):
            w.writerow([l, d, f"{positives[(l, d)] / totals[(l, d)]:.6f}", positives[(l, d)], totals[(l, d)]])

    means: dict[str, dict] = {}
    for l in layers:
        by_domain = {d: np.concatenate(v) for d, v in responses[l].items()}
        hists = []
        for j, k in enumerate(kernels[l]):
            hs = domain_histograms({d: a[:, j:j + 1] for d, a in by_domain.items()}, 0,
                                   int(cfg.analyze_bins), layer=l)
            for h in hs:
                h.kernel_index = k
                means.setdefault(l, {}).setdefault(str(k), {})[h.domain_tag] = h.mean
            hists.extend(hs)
        write_histograms_csv(hist_dir / f"{l}.csv", hists)
    summary = {"kernels": kernels, "sparsity": sparsity, "histogram_means": means}
    (reports / "analyze.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
