"""Alternating adversarial training over pooled multi-domain batches."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from xdseg import tensor as T
from xdseg.data.preprocess import SliceSample
from xdseg.network.blocks import NormKind
from xdseg.network.unet import Discriminator, UNet
from xdseg.tensor import Tensor
from xdseg.training.adam import Adam
from xdseg.training.losses import cross_entropy_loss, disc_loss, gen_adv_loss


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    iterations: int = 2000
    adv_weight: float = 0.001
    batch_size: int = 4
    seed: int = 0
    domain_weights: dict[str, float] = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    disc_steps_per_gen: int = 1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.adv_weight < 0:
            raise ValueError("adv_weight must be >= 0")
        if any(w < 0 for w in self.domain_weights.values()):
            raise ValueError("domain weights must be >= 0")
        if self.batch_size < 1 or self.iterations < 0 or self.disc_steps_per_gen < 0:
            raise ValueError("batch_size >= 1, iterations >= 0 and disc_steps_per_gen >= 0 required")

    def weight_for(self, tag: str) -> float:
        return float(self.domain_weights.get(tag, 1.0))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossReport:
    iteration: int
    l_cls: float
    l_gen: float
    l_disc: float
    l_total: float
    domain_counts: dict[str, int]


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, components: dict[str, float]):
        self.iteration = iteration
        self.components = components
        parts = ", ".join(f"{k}={v!r}" for k, v in components.items())
        super().__init__(f"non-finite loss at iteration {iteration}: {parts}")


def make_batch(samples: Sequence[SliceSample], idx: np.ndarray, dtype=np.float32):
    x = np.stack([samples[i].image for i in idx]).astype(dtype)
    y = np.stack([samples[i].label for i in idx]).astype(dtype)
    tags = [samples[i].domain_tag for i in idx]
    return x, y, tags


def train_loop(unet: UNet, disc: Discriminator, samples: Sequence[SliceSample],
               config: TrainConfig,
               callback: Optional[Callable[[LossReport], None]] = None) -> Iterator[LossReport]:
    """Yield one :class:`LossReport` per iteration.

    Per iteration: draw a batch uniformly (with replacement) from the pooled
    samples; run the segmenter once; take ``disc_steps_per_gen`` ascent steps
    on the discriminator objective with the segmenter's output held fixed;
    then one descent step on ``L_cls - adv_weight * L_gen`` for the segmenter.
    Domain tags only select the per-sample weight and fill the counts.
    """
    if not samples:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    dtype = next(iter(unet.parameters().values())).dtype
    opt_g = Adam(unet.parameters(), config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    opt_d = Adam(disc.parameters(), config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    lam = config.adv_weight
    for it in range(config.iterations):
        idx = rng.integers(0, len(samples), size=config.batch_size)
        xb, yb, tags = make_batch(samples, idx, dtype)
        weights = np.array([config.weight_for(t) for t in tags], dtype=dtype)
        x, y = Tensor(xb), Tensor(yb)

        tape_g = T.Tape()
        with tape_g:
            logits = unet(x, "train")
            probs = T.softmax_channels(logits)
            l_cls = cross_entropy_loss(logits, y, weights)

        l_disc_val = float("nan")
        fixed_pred = Tensor(probs.data)
        for _ in range(config.disc_steps_per_gen):
            tape_d = T.Tape()
            with tape_d:
                ld = disc_loss(disc(x, y), disc(x, fixed_pred))
                objective = T.neg(ld)
            l_disc_val = ld.item()
            if math.isfinite(l_disc_val):
                tape_d.backward(objective)
                opt_d.step()
            tape_d.release()
            tape_d.release()

        if lam > 0:
            with tape_g:
                lg = gen_adv_loss(disc(x, probs))
                objective = l_cls - lam * lg
        else:
            lg = gen_adv_loss(disc(x, fixed_pred))
            objective = l_cls
        l_cls_val, l_gen_val = l_cls.item(), lg.item()
        total = l_cls_val + lam * l_gen_val
        if not all(math.isfinite(v) for v in (l_cls_val, l_gen_val, total)) or (
                config.disc_steps_per_gen and not math.isfinite(l_disc_val)):
            raise TrainingDiverged(it, {"L_cls": l_cls_val, "L_Gen": l_gen_val,
                                        "L_Disc": l_disc_val, "L_total": total})
        tape_g.backward(objective)
        opt_g.step()
        tape_g.release()
        tape_g.release()

        counts: dict[str, int] = {}
        for t in tags:
            counts[t] = counts.get(t, 0) + 1
        report = LossReport(it, l_cls_val, l_gen_val, l_disc_val, total, counts)
        if callback is not None:
            callback(report)
        yield report


def recalibrate_batch_stats(unet: UNet, samples: Sequence[SliceSample], batch_size: int = 8) -> None:
    """Set Batch-kind running stats to exact pooled statistics over ``samples``.

    With small batches the momentum average only remembers the last few
    batches, so the stats seen at inference depend on which domains happened
    to be drawn last. One train-mode pass without a tape, in sample order,
    replaces them with the population mean and variance.
    """
    blocks = [b for b in unet.conv_blocks().values() if b.norm.kind is NormKind.BATCH]
    if not blocks or not samples:
        return
    dtype = blocks[0].weight.data.dtype
    for b in blocks:
        b.calibration = []
    try:
        for start in range(0, len(samples), batch_size):
            x = np.stack([s.image for s in samples[start:start + batch_size]])
            unet(Tensor(x.astype(dtype)), "train")
    except BaseException:
        for b in blocks:
            b.calibration = None
        raise
    for b in blocks:
        b.finish_calibration()


def loss_csv_header(domain_tags: Sequence[str]) -> list[str]:
    return ["iteration", "L_cls", "L_Gen", "L_Disc", "L_total"] + [f"n_{t or 'untagged'}" for t in domain_tags]


def loss_csv_row(r: LossReport, domain_tags: Sequence[str]) -> list:
    return [r.iteration, repr(r.l_cls), repr(r.l_gen), repr(r.l_disc), repr(r.l_total)] + [
        r.domain_counts.get(t, 0) for t in domain_tags]


class LossCsvWriter:
    def __init__(self, path, domain_tags: Sequence[str]):
        self.tags = list(domain_tags)
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(loss_csv_header(self.tags))

    def __call__(self, r: LossReport) -> None:
        self._w.writerow(loss_csv_row(r, self.tags))

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
