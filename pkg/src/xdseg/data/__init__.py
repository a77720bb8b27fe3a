from xdseg.data.manifest import ManifestEntry, load_slices, read_manifest, write_manifest
from xdseg.data.preprocess import (
    SliceSample,
    connected_component_filter,
    largest_component,
    one_hot,
    rescale_contrast,
    stack_slices,
)
from xdseg.data.synth import SynthCase, SyntheticDomainSpec, default_domains, synth_generate
from xdseg.data.volume import (
    BadMagicError,
    SizeMismatchError,
    TruncatedVolumeError,
    Volume,
    VolumeFormatError,
    load_volume,
    save_volume,
)

__all__ = [
    "ManifestEntry", "load_slices", "read_manifest", "write_manifest",
    "SliceSample", "connected_component_filter", "largest_component", "one_hot",
    "rescale_contrast", "stack_slices",
    "SynthCase", "SyntheticDomainSpec", "default_domains", "synth_generate",
    "BadMagicError", "SizeMismatchError", "TruncatedVolumeError", "Volume",
    "VolumeFormatError", "load_volume", "save_volume",
]
