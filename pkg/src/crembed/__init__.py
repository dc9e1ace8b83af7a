"""Numerical model of a Nash-Moser scheme for local CR embeddings: lattice domains,
Hölder norms, tangential CR operators, smoothing, homotopy solves, the iteration
driver and a log-domain schedule certifier."""

__version__ = "0.1.0"
