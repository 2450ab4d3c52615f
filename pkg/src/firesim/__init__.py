"""firesim: deterministic firefighting-UGV mission simulator and autonomy stack."""

__version__ = "0.1.0"
