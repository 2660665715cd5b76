"""Rigid planar-algebra calculus for finite-dimensional multi-matrix inclusions.

The package splits into an exact diagrammatic layer and a numeric layer that
certify each other:

``tl``
    Temperley-Lieb diagrams, words and rewriting over exact Laurent
    polynomials in the loop weight.
``tangles``
    Layered rigid planar tangles: validation, composition, reflection,
    winding angles and isotopy normalization.
``towers``
    Multi-matrix inclusions, conditional expectations, the basic
    construction, Jones towers and Pimsner-Popa bases.
``invariant``
    Relative commutants, canonical states, Radon-Nikodym derivatives,
    modular maps and the rotation family.
``evaluator``
    The partition-function evaluator sending tangles to maps between tower
    bimodules, plus the rigid/spherical conversion.
``cli``
    Command line front end.
"""

from . import errors, tangles, tl, towers  # noqa: F401

__version__ = "0.1.0"
