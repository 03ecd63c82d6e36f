"""pbop: a numerical workbench for polynomially bounded operators.

Constructs the explicit finite-dimensional operators behind the
cyclic-polynomially-bounded-but-not-similar-to-a-contraction examples and
machine-verifies the identities, norm bounds, and intertwining relations
they satisfy at desk scale.
"""

__version__ = "0.1.0"
