"""
Flux across far spheres for a free Gaussian packet
==================================================

A packet with mean momentum (0, 0, 4) leaves the origin.  The probability
that flows through a forward cone of a sphere of radius R, integrated over
time, approaches the momentum-space weight of that cone as R grows.
"""
import numpy as np

from bohmflux import SphereSpec, cone, flux_across_surface, make_gaussian
from bohmflux.surfaces import escape_horizon, momentum_cone_probability

packet = make_gaussian(center=[0, 0, 0], k0=[0, 0, 4], sigma=1.0)
forward = cone(np.radians(20.0))

# weight of the cone in momentum space
target = momentum_cone_probability(packet, forward)
print(f"momentum weight of the 20 degree cone: {target:.6f}")

# integrate j.n over the cone cap and over [0, T*] for growing spheres;
# T* is long enough for all but a 1e-3 tail of slow momenta to get out
for R in (10.0, 20.0, 40.0, 80.0, 160.0):
    T = escape_horizon(packet, R)
    res = flux_across_surface(packet, SphereSpec(R, 64, 128), forward, (0.0, T))
    err = abs(res.signed - target) / target
    print(f"R = {R:6.1f}  T* = {T:7.1f}  flux = {res.signed:.6f}  "
          f"inward = {res.inward:.1e}  rel. error = {err:.2e}")

# The relative error drops by about 4 per doubling of R (1/R^2 here): the
# cone seen from the origin and the cone of outgoing momenta only agree once
# the sphere is large compared with the packet width.
