"""Random-matrix toolkit: Schwinger-Dyson series for unitarily invariant
multi-matrix models, equilibrium measures, flow-based transport maps and
local eigenvalue statistics."""

__version__ = "0.1.0"
