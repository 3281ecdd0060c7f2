"""Dump per-layer hidden states of pretrained speech encoders as .ssle files."""

from .exporter import ExportJob, JobError, export_layer_states, truncate_to_shorter

__all__ = ["ExportJob", "JobError", "export_layer_states", "truncate_to_shorter"]
__version__ = "0.1.0"
