from xdseg.network.blocks import ConvBlock, Mode, NormKind, NormSpec, Ordering
from xdseg.network.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from xdseg.network.diagnostics import (
    Histogram,
    domain_histograms,
    response_histogram,
    sparsity_fraction,
    write_histograms_csv,
)
from xdseg.network.unet import Discriminator, DiscriminatorConfig, UNet, UNetConfig

__all__ = [
    "ConvBlock", "Mode", "NormKind", "NormSpec", "Ordering",
    "CheckpointError", "load_checkpoint", "save_checkpoint",
    "Histogram", "domain_histograms", "response_histogram", "sparsity_fraction",
    "write_histograms_csv",
    "Discriminator", "DiscriminatorConfig", "UNet", "UNetConfig",
]
