"""Refined Strichartz ratios and the greedy bilinear decomposition on random data.

Run with ``python demos/strichartz_and_decomposition.py``.
"""
import numpy as np

from nlsmass import diagnostics as dg
from nlsmass.grid import make_grid
from nlsmass.refine import decompose, tube_cover
from nlsmass.spectral import Propagator, TimeBox, free_spacetime_norm

spec = make_grid(1, 64.0, 512)
box = TimeBox(-8.0, 8.0, 513)
cal = dg.calibrate_refined_constant(spec, box, samples=16, seed=0)
print(f"calibrated constant C_emp = {cal.c_emp:.3f}")

rng = np.random.default_rng(1)
g = dg.random_localized_input(spec, rng)
print(f"fresh input: refined ratio {dg.refined_ratio(g, box).ratio:.3f}")

eps = 0.3 * free_spacetime_norm(g, box.times, 6.0, Propagator(spec))
dec = decompose(g, eps, box, cal.c_emp)
print(f"decomposition at eps = {eps:.3f}: {len(dec.pieces)} pieces, "
      f"Pythagorean defect {dec.pythagorean_defect():.1e}")
for k, piece in enumerate(dec.pieces):
    cover = tube_cover(piece, eps, box)
    print(f"  piece {k}: {len(cover.tubes)} tubes, exterior norm / eps = {cover.exterior_norm / eps:.3f}")
