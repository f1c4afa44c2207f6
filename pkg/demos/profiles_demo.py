"""Orthogonality scores and decoupling of rescaled Gaussian profiles.

Run with ``python demos/profiles_demo.py``.
"""
import math

import numpy as np

from nlsmass import diagnostics as dg
from nlsmass.grid import make_grid

phi = lambda *x: np.exp(-np.pi * sum(c**2 for c in x))
base = dg.ProfileParams()
spec = make_grid(1, 384.0, 4096)
for s in (4.0, 16.0, 64.0):
    r = 0.5 * (s + math.sqrt(s * s - 4))
    other = dg.ProfileParams(r)
    cross = dg.pythagorean_defect([phi, phi], spec, [base, other])
    print(f"score {dg.orthogonality_score(other, base):5.1f}   cross term {cross:.4f}   2/sqrt(s) = {2 / math.sqrt(s):.4f}")
