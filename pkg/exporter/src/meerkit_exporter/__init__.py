"""meerkit-exporter: call-level SSL embeddings in meerkit's feature CSV format."""

__version__ = "0.1.0"
