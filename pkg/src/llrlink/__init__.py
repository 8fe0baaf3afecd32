"""Low-latency region analysis for a shared best-effort FIFO link."""

__version__ = "0.1.0"
