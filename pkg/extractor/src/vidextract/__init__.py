"""Feature-extraction adapter for the vidcap captioning package."""

from .backbones import REGISTRY, Backbone, BackboneSpec, build_backbone, build_backbones
from .errors import ExtractError, JobError, SetupError
from .extract import ExtractionJob, append_manifest_entry, run_job

__all__ = [
    "REGISTRY", "Backbone", "BackboneSpec", "build_backbone", "build_backbones",
    "ExtractError", "JobError", "SetupError",
    "ExtractionJob", "append_manifest_entry", "run_job",
]
