"""Run one replica and follow the support radius over time.

Simulates the 1-D white-noise equation with a bump initial condition for a
sub-linear and a super-linear exponent, then prints how far the field
extends above three thresholds.

Run: python3 demos/02_single_run.py
"""

from csplab.config import RunConfig
from csplab.solver import simulate

base = RunConfig(dim=1, n=256, L=16.0, T=0.5, stride=20, weight_rates=(1.0,))

for lam in (0.5, 1.3):
    traj = simulate(base.with_(lam=lam), replica=0)
    print(f"\nlambda = {lam}: {traj.metadata['nsteps']} steps of dt = {traj.metadata['dt']:.2e}, "
          f"clipped mass {traj.clipped_mass:.3g}")
    eps_list = sorted(traj.support_radius, reverse=True)
    print(f"{'time':>6} {'max u':>8} {'mass':>8} " + " ".join(f"{'R(' + format(e, '.0e') + ')':>10}" for e in eps_list))
    for k, t in enumerate(traj.times):
        radii = " ".join(f"{traj.support_radius[e][k] or 0.0:>10.3f}" for e in eps_list)
        print(f"{t:>6.3f} {traj.maximum[k]:>8.4f} {traj.mass[k]:>8.4f} {radii}")
