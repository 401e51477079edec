"""Finite C*-quantum groupoids from Temperley-Lieb towers.

The package builds path models on linear Bratteli diagrams, equips the
Temperley-Lieb relative commutants of a depth-2 tower segment with dual weak
Hopf (quantum groupoid) structures, verifies all axioms numerically,
reproduces the 13-dimensional worked example coefficient by coefficient,
computes duals, performs the regular deformation, and assembles finite
crossed-product ladders with their Markov traces and relative commutants.
"""

__version__ = "0.1.0"

from . import matalg, bratteli, weakhopf, tlgroupoid, deform, crossprod  # noqa: F401
