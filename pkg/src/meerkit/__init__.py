"""meerkit: meerkat call-type classification toolkit."""

__version__ = "0.1.0"
