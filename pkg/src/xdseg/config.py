"""Experiment configuration: one flat JSON document, overridable from the command line."""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from xdseg.data.synth import SyntheticDomainSpec, default_domains
from xdseg.metrics.report import ScoreScales
from xdseg.network.blocks import NormSpec
from xdseg.network.unet import DiscriminatorConfig, UNetConfig
from xdseg.training.loop import TrainConfig


class ConfigError(ValueError):
    pass


def _default_domains() -> list[dict]:
    return [d.to_dict() for d in default_domains()]


@dataclass
class ExperimentConfig:
    # data
    manifest: str = ""
    T: int = 1
    lo_pct: float = 1.0
    hi_pct: float = 99.0
    # model
    num_classes: int = 2
    levels: int = 4
    base_channels: int = 16
    kernel_size: int = 3
    norm_kind: str = "batch"
    norm_ordering: str = "pre"
    norm_epsilon: float = 1e-5
    disc_widths: list[int] = field(default_factory=lambda: [16, 32, 64])
    # training
    learning_rate: float = 0.001
    iterations: int = 2000
    adv_weight: float = 0.001
    batch_size: int = 4
    domain_weights: dict[str, float] = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    disc_steps_per_gen: int = 1
    checkpoint_every: int = 500
    # evaluation
    post_filter: bool = True
    foreground_class: int = 1
    physical_units: bool = True
    ref_scales: dict[str, float] = field(default_factory=lambda: asdict(ScoreScales()))
    save_predictions: bool = True
    eval_batch: int = 8
    # diagnostics
    analyze_kernels: int = 4
    analyze_bins: int = 32
    analyze_layers: list[str] = field(default_factory=list)
    # synthetic data
    synth_domains: list[dict] = field(default_factory=_default_domains)
    synth_volumes_per_domain: int = 8
    synth_train_per_domain: int = 6
    synth_extents: list[int] = field(default_factory=lambda: [64, 64, 16])
    synth_spacing: list[float] = field(default_factory=lambda: [1.0, 1.0, 1.0])
    # run
    seed: int = 0
    out: str = "run"
    sweep: dict[str, list] = field(default_factory=dict)

    # ---- construction -------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def with_overrides(self, pairs: list[str]) -> "ExperimentConfig":
        """Apply ``key=value`` strings; values are parsed as JSON, else kept as text."""
        d = self.to_dict()
        for p in pairs:
            key, sep, raw = p.partition("=")
            if not sep:
                raise ConfigError(f"override {p!r} is not of the form key=value")
            key = key.strip()
            if key not in d:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                val: Any = json.loads(raw)
            except json.JSONDecodeError:
                val = raw
            d[key] = val
        return ExperimentConfig.from_dict(d)

    # ---- derived objects ----------------------------------------------
    @property
    def in_channels(self) -> int:
        return 2 * int(self.T) + 1

    def norm_spec(self) -> NormSpec:
        return NormSpec(self.norm_kind, self.norm_ordering, float(self.norm_epsilon))

    def unet_config(self) -> UNetConfig:
        return UNetConfig(self.in_channels, int(self.num_classes), int(self.levels),
                          int(self.base_channels), int(self.kernel_size), self.norm_spec())

    def disc_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig.for_unet(self.unet_config(), widths=tuple(self.disc_widths),
                                            kernel_size=int(self.kernel_size))

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=float(self.learning_rate), iterations=int(self.iterations),
            adv_weight=float(self.adv_weight), batch_size=int(self.batch_size), seed=int(self.seed),
            domain_weights={k: float(v) for k, v in self.domain_weights.items()},
            beta1=float(self.beta1), beta2=float(self.beta2), adam_eps=float(self.adam_eps),
            disc_steps_per_gen=int(self.disc_steps_per_gen))

    def score_scales(self) -> ScoreScales:
        try:
            return ScoreScales(**{k: float(v) for k, v in self.ref_scales.items()})
        except TypeError as exc:
            raise ConfigError(f"bad ref_scales: {exc}") from exc

    def domain_specs(self) -> list[SyntheticDomainSpec]:
        if len(self.synth_domains) < 2:
            raise ConfigError("synth_domains must list at least two domain specs")
        try:
            return [SyntheticDomainSpec.from_dict(d) for d in self.synth_domains]
        except TypeError as exc:
            raise ConfigError(f"bad synthetic domain spec: {exc}") from exc

    # ---- validation -----------------------------------------------------
    def validate(self, need_manifest: bool = False) -> None:
        """Build every derived object once so bad values fail before any work starts."""
        if int(self.T) < 0:
            raise ConfigError("T must be >= 0")
        if not 0 <= float(self.lo_pct) < float(self.hi_pct) <= 100:
            raise ConfigError("need 0 <= lo_pct < hi_pct <= 100")
        if not 1 <= int(self.foreground_class) < int(self.num_classes):
            raise ConfigError("foreground_class must be a non-background class index")
        if int(self.checkpoint_every) < 0 or int(self.eval_batch) < 1:
            raise ConfigError("checkpoint_every >= 0 and eval_batch >= 1 required")
        self.unet_config()
        self.disc_config()
        self.train_config()
        self.score_scales()
        for key, values in self.sweep.items():
            if key not in {f.name for f in fields(self)} or key in ("sweep", "out"):
                raise ConfigError(f"cannot sweep over {key!r}")
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep list for {key!r} must be non-empty")
        if need_manifest:
            if not self.manifest:
                raise ConfigError("no manifest given")
            if not Path(self.manifest).is_file():
                raise FileNotFoundError(f"manifest not found: {self.manifest}")

    def expand_sweep(self) -> list[tuple[str, "ExperimentConfig"]]:
        """(run-name, config) per sweep combination; a single ("", self) without a sweep."""
        if not self.sweep:
            return [("", self)]
        keys = sorted(self.sweep)
        out = []
        for combo in itertools.product(*(self.sweep[k] for k in keys)):
            name = "_".join(f"{k}={v}" for k, v in zip(keys, combo))
            cfg = replace(self, sweep={}, **dict(zip(keys, combo)))
            cfg.validate()
            out.append((name, cfg))
        return out
