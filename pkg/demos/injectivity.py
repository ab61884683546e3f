"""Which sensor positions can separate the eigenspaces?

A point sensor at x0 sees mode k through sin(k x0). At x0 = pi/2 every
even mode vanishes, so those eigenvalue groups cannot be reconstructed.
At pi/3 modes 3 and 6 are almost invisible: the discrete eigenvectors
are not exactly zero there, but the signal is too weak to invert. An
irrational multiple of pi sees every mode with comparable strength.

    python3 demos/injectivity.py
"""
import numpy as np

from jmgtlab.inversion import ObservationOp, build_Blambda
from jmgtlab.spectral import Grid, build_basis

g = Grid((np.pi,), (64,))
basis = build_basis(g, 1.0, 1.0, 16)
M = 8
for label, x0 in [("pi/2", np.pi / 2), ("pi/3", np.pi / 3), ("golden", np.pi * (np.sqrt(5) - 1) / 2)]:
    maps = build_Blambda(ObservationOp.points(g, [[x0]]), basis, M, raise_errors=False)
    sv = np.array([m.singular_values[-1] for m in maps])
    bad = [m.group + 1 for m in maps if m.singular_values[-1] < 1e-8]
    weak = [m.group + 1 for m in maps if 1e-8 <= m.singular_values[-1] < 1e-3 * sv.max()]
    print(f"sensor at {label:7s} (x0 = {x0:.4f}): failed modes {bad or 'none'}, "
          f"nearly blind {weak or 'none'}")
    print("   |B_lambda| per mode:", " ".join(f"{m.singular_values[-1]:.2e}" for m in maps))
