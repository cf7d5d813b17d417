"""Guided modes of a thin and a wide fiber, and how far the fiber carries
the collective coupling.

Run: python3 demos/01_fiber_modes.py
"""

import numpy as np

from fibercollective import CouplingParams, FiberSpec, gamma_1d, solve_dispersion

for radius in (1.0, 5.0):
    spec = FiberSpec.calibrated(radius)
    table = solve_dispersion(spec)
    coupled = table.coupled()
    print(f"a = {radius} um: {len(table)} guided modes, {len(coupled)} couple to an "
          f"on-axis x dipole, sum chi = {table.chi.sum():.2f}")
    for m in sorted(coupled.modes, key=lambda m: -m.chi)[:4]:
        print(f"    nu={m.nu} root={m.root_index:<2d} beta_bar={m.beta_bar:.6f} chi={m.chi:.3f}")

    # many modes dephase: the guided kernel no longer reaches along the whole chain
    params = CouplingParams(alpha=1.0, modes=table)
    xi = np.linspace(0.0, 100 * np.pi, 20001)
    g = np.abs(gamma_1d(xi, params)) / gamma_1d(0.0, params)
    for lo, hi in ((0, 30), (30, 60), (60, 200), (200, 100 * np.pi)):
        sel = (xi > lo) & (xi <= hi)
        print(f"    max |G1D|/G1D(0) for xi in ({lo:.0f}, {hi:.0f}]: {g[sel].max():.3f}")
