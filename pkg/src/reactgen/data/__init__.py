from .formats import (
    FeatureStream,
    FileFormatError,
    read_feature_stream,
    read_motion,
    write_feature_stream,
    write_motion,
)
from .manifest import DatasetManifest, build_manifest, load_manifest, save_manifest
from .synthetic import SCENARIOS, GeneratorParams, PairedSample, generate_arrays, generate_pair

__all__ = [
    "FeatureStream", "FileFormatError", "read_feature_stream", "read_motion",
    "write_feature_stream", "write_motion",
    "DatasetManifest", "build_manifest", "load_manifest", "save_manifest",
    "SCENARIOS", "GeneratorParams", "PairedSample", "generate_arrays", "generate_pair",
]
