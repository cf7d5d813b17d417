"""Half-inverted states: the phase pattern decides between sub- and
superradiance.

A uniform phase (transverse pulse) does not match the guided mode, while a
phase imprinted by light travelling along the fiber does.

Run: python3 demos/04_ramsey_dichotomy.py
"""

import numpy as np

from fibercollective import (CouplingParams, EmitterChain, build, ramsey_longitudinal,
                             ramsey_transverse)
from fibercollective.dynamics import independent_evolve, me_evolve

n = 6
chain = EmitterChain.regular(n, 0.59)
coupling = build(chain, CouplingParams(alpha=0.75))
for state in (ramsey_transverse(n), ramsey_longitudinal(chain, beta0_bar=1.2)):
    me = me_evolve(coupling, state, 3.0)
    ind = independent_evolve(coupling, state, 3.0)
    print(state.kind)
    for t in (0.25, 0.5, 1.0, 2.0, 3.0):
        i = int(np.argmin(np.abs(me.times - t)))
        print(f"  t={t:4.2f}  exact {me.sz[i]:.4f}  independent {ind.sz[i]:.4f}")
