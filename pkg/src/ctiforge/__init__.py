"""CTI report processing: ingestion, semantic extraction, rule synthesis, evaluation."""

__version__ = "0.1.0"
