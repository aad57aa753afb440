import math

import numpy as np

from lagweb.errors import PhaseBlowup
from lagweb.geoflow import GeodesicSpec, geodesic_ivp
from lagweb.laggrass import random_maslov_zero_pair
from lagweb.numkernel import IntegratorConfig


def random_flow_spec(rng, n, amin=-2.0, amax=-0.05):
    """Random negative-coefficient flow verified to stay inside the chart.

    Coefficients start in [amin, amax) and shrink until a coarse integration
    confirms the phase remains safely below pi/2.
    """
    l0, _, _, basis = random_maslov_zero_pair(rng, n)
    room = 0.5 * math.pi - 0.08 - l0.phase
    a = rng.uniform(amin, amax, size=n)
    a *= min(1.0, room / (2.0 * np.abs(a).sum()))
    while True:
        spec = GeodesicSpec(base=l0, adapted_basis=basis, coefficients=a, phase0=l0.phase)
        try:
            traj = geodesic_ivp(spec, IntegratorConfig(200))
        except PhaseBlowup:
            a = 0.5 * a
            continue
        if traj.phases[-1] > 0.5 * math.pi - 0.1:
            a = 0.7 * a
            continue
        return spec
