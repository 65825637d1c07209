"""
Partial waves for an attractive square well
===========================================

Phase shifts from the Numerov radial solver, checked against the closed
s-wave formula, followed by the differential cross section, the optical
theorem and the first Born approximation for comparison.
"""
import numpy as np

from bohmflux.evolution import SquareWell
from bohmflux.stationary import (born_cross_section, differential_cross_section,
                                 optical_theorem_residual, phase_shifts, square_well_s_wave,
                                 total_cross_section)

well = SquareWell(v0=-2.0, a=1.0)

for k in (0.5, 1.0, 2.0):
    table = phase_shifts(well, k)
    exact = square_well_s_wave(-2.0, 1.0, k)
    print(f"k = {k}: l_max = {table.l_max}, delta_0 = {table.deltas[0]:+.10f} "
          f"(closed form {exact:+.10f}), optical theorem residual "
          f"{optical_theorem_residual(table):.1e}, sigma_tot = {total_cross_section(table):.5f}")

# angular distribution at k = 2; the well is not weak, so Born is only qualitative
table = phase_shifts(well, 2.0)
theta = np.radians([0, 30, 60, 90, 120, 150, 180])
for th, exact, born in zip(np.degrees(theta), differential_cross_section(table, theta),
                           born_cross_section(well, 2.0, theta)):
    print(f"theta = {th:5.0f}  dsigma/dOmega = {exact:.5f}   Born = {born:.5f}")
