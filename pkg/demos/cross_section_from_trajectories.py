"""
Exit statistics of Bohmian trajectories
=======================================

Positions are drawn from |psi_0|^2 and moved along the guidance field until
they first leave a sphere.  The fraction exiting through each angular bin is
compared with two independent numbers: the time-integrated flux through the
bin, and the momentum-space weight of the bin.
"""
import numpy as np

from bohmflux import SphereSpec, flux_table, make_gaussian, polar_partition
from bohmflux.stats import ScatteringScenario, cross_section_check, run_ensemble
from bohmflux.surfaces import momentum_probabilities

packet = make_gaussian([0, 0, 0], [0, 0, 4], 1.0)
bins = polar_partition(np.radians([0, 4, 8, 14, 180]), 8)  # 32 bins
scenario = ScatteringScenario(packet, radii=(40.0,), bins=bins, n_traj=4000, seed=17)

results = run_ensemble(scenario)
res = results[40.0]
print(f"{res.n_traj} trajectories, {int(res.exits.sum())} exited, {res.aborts} aborted")

# same sphere, same bins, same time window for the flux side
table = flux_table(packet, SphereSpec(40.0, 48, 16), bins, list(res.t_span), rel_tol=1e-8)
momentum = momentum_probabilities(packet, bins)
report = cross_section_check(res, table, momentum)

print(" ring  sector   exits/n     flux   momentum      z")
for i, row in enumerate(report["bins"][::4]):
    print(f"{(4 * i) // 8:5d} {(4 * i) % 8:7d} {row['sigma_hat']:9.4f} {row['signed_flux']:8.4f} "
          f"{row['momentum_prediction']:10.4f} {row['z']:6.2f}")
print(f"bins within 3 s.e. of the flux: {report['pass_fraction_flux']:.0%}, "
      f"of the momentum weight: {report['pass_fraction_momentum']:.0%}")
