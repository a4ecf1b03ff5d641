"""stlmine: learn STL predicates from trajectories with conformal guarantees."""

__version__ = "0.1.0"
