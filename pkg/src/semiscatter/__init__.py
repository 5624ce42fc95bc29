"""Semiclassical wave-packet scattering laboratory.

Classical scattering trajectories, Riccati/Gaussian propagation for the
time-dependent quadratic Hamiltonian along a trajectory, the nonlinear
envelope equation, and the exact small-parameter Schrodinger equation in a
co-moving frame, together with the harness that measures how fast the
wave-packet approximation converges.
"""

__version__ = "0.1.0"
