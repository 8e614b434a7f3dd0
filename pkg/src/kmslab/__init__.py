"""kmslab: a numerical laboratory for thermal states of the free scalar
field, detector response along relativistic trajectories, and
return-to-equilibrium dynamics of truncated detector-field models."""

__version__ = "0.1.0"
