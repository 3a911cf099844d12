"""EV user clustering and flexibility-aware OPF for wind curtailment studies."""

__version__ = "0.1.0"
