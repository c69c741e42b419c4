"""Joint VNF placement, priority assignment and routing solvers."""

__version__ = "0.1.0"
