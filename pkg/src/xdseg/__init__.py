"""Cross-domain segmentation on a small numpy autodiff core.

Subpackages: ``tensor`` (ops and tape), ``network`` (conv blocks, U-Net,
discriminator, diagnostics, checkpoints), ``training``, ``data``,
``metrics``; ``pipeline`` and ``cli`` tie them into runs.
"""

from xdseg.config import ConfigError, ExperimentConfig

__version__ = "0.1.0"

__all__ = ["ConfigError", "ExperimentConfig", "__version__"]
