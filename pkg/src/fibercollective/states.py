"""Initial conditions for the decay runs.

Single-atom conventions: basis order ``(|g>, |e>)``, ``sigma^- = |g><e|``
and ``sigma^+ = (sigma^x + i sigma^y) / 2``.  A Bloch vector
``(x, y, z)`` therefore has ``<sigma^-> = (x - i y) / 2`` and excited
population ``(1 + z) / 2``.

The tilted product state uses ``|phi> = cos(theta/2)|g> + sin(theta/2)|e>``
so that ``theta = pi`` is full inversion (excited population
``sin^2(theta/2)``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .couplings import CouplingSet, EmitterChain
from .fiber import ModeTable

STATE_KINDS = ("inverted", "ground", "product_theta", "ramsey_transverse",
               "ramsey_longitudinal")


@dataclass(frozen=True)
class PreparedState:
    """A product state given by one Bloch vector per atom."""

    kind: str
    bloch: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.bloch, dtype=float))
        if b.shape[1] != 3:
            raise ValueError("bloch must have shape (N, 3)")
        if np.any(np.linalg.norm(b, axis=1) > 1 + 1e-12):
            raise ValueError("Bloch vectors must have norm <= 1")
        object.__setattr__(self, "bloch", b)

    @property
    def n(self) -> int:
        return self.bloch.shape[0]

    @property
    def populations(self) -> np.ndarray:
        return 0.5 * (1 + self.bloch[:, 2])

    @property
    def phases(self) -> np.ndarray:
        """Azimuthal angle of each Bloch vector, ``atan2(y, x)``."""
        return np.arctan2(self.bloch[:, 1], self.bloch[:, 0])

    def total_excitation(self) -> float:
        return float(self.populations.sum())


@dataclass(frozen=True)
class PulseSpec:
    """Resonant square pulse.  The rotation angle is ``2 * rabi * duration``."""

    rabi: float
    duration: float

    def __post_init__(self):
        if self.rabi < 0 or self.duration < 0:
            raise ValueError("rabi and duration must be non-negative")

    @classmethod
    def for_angle(cls, theta: float, rabi: float) -> "PulseSpec":
        return cls(rabi=rabi, duration=theta / (2 * rabi))

    @property
    def angle(self) -> float:
        return 2 * self.rabi * self.duration


def fully_inverted(n: int) -> PreparedState:
    """Every atom excited, no transverse spin."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return PreparedState("inverted", np.tile([0.0, 0.0, 1.0], (n, 1)))


def ground(n: int) -> PreparedState:
    return PreparedState("ground", np.tile([0.0, 0.0, -1.0], (n, 1)))


def product_theta(n: int, theta: float) -> PreparedState:
    """Identical atoms rotated by ``theta`` from the ground state about y.

    Excited population ``sin^2(theta/2)``, transverse spin ``sin(theta)``.
    """
    if not 0 <= theta <= np.pi:
        raise ValueError(f"theta must lie in [0, pi], got {theta}")
    vec = [np.sin(theta), 0.0, -np.cos(theta)]
    return PreparedState("product_theta", np.tile(vec, (n, 1)),
                         {"theta": float(theta)})


def ramsey_transverse(n: int) -> PreparedState:
    """``(|g> + |e>)/sqrt(2)`` on every atom."""
    return PreparedState("ramsey_transverse", np.tile([1.0, 0.0, 0.0], (n, 1)))


def ramsey_longitudinal(chain: EmitterChain, beta0_bar: float | None = None,
                        modes: ModeTable | None = None) -> PreparedState:
    """Half inversion with the phase ``phi_j = beta0_bar k0 z_j`` imprinted.

    Atom ``j`` gets the Bloch vector ``(cos phi_j, sin phi_j, 0)``, i.e.
    ``<sigma^+_j> = exp(i phi_j) / 2``.  Either ``beta0_bar`` or a mode
    table (whose fundamental mode sets it) must be given.
    """
    if beta0_bar is None:
        if modes is None or len(modes) == 0:
            raise ValueError("ramsey_longitudinal needs beta0_bar or a mode table")
        beta0_bar = modes.fundamental.beta_bar
    phi = beta0_bar * 2 * np.pi * chain.positions
    bloch = np.column_stack([np.cos(phi), np.sin(phi), np.zeros_like(phi)])
    return PreparedState("ramsey_longitudinal", bloch,
                         {"beta0_bar": float(beta0_bar)})


def make_state(kind: str, n: int, chain: EmitterChain | None = None,
               **params) -> PreparedState:
    """Dispatch on the state ``kind`` used in scenario configs."""
    if kind == "inverted":
        return fully_inverted(n)
    if kind == "ground":
        return ground(n)
    if kind == "product_theta":
        return product_theta(n, params["theta"])
    if kind == "ramsey_transverse":
        return ramsey_transverse(n)
    if kind == "ramsey_longitudinal":
        if chain is None:
            raise ValueError("ramsey_longitudinal needs the emitter chain")
        return ramsey_longitudinal(chain, params.get("beta0_bar"),
                                   params.get("modes"))
    raise ValueError(f"unknown state kind {kind!r}; expected one of {STATE_KINDS}")


def simulate_pulse(coupling: CouplingSet, pulse: PulseSpec, solver: str = "mpc",
                   **options):
    """Drive the ground state with ``rabi * sum_i sigma^x_i`` for the pulse
    duration, including all coherent and dissipative couplings.

    Returns the post-pulse :class:`~fibercollective.dynamics.EnsembleState`
    of the chosen backend (``"me"``, ``"mpc"`` or ``"mf"``).  For
    ``"independent"`` the pulse acts on uncoupled atoms (mean field with the
    diagonal rates only, which is exact there) and an ``"mf"`` state is
    returned.
    """
    from . import dynamics

    if solver == "independent":
        # uncoupled atoms: drive each one with its own decay only
        diag = np.diag(np.diag(coupling.gamma))
        coupling = CouplingSet(np.zeros_like(diag), diag, coupling.gamma_total,
                               coupling.broadened)
        solver = "mf"
    evolve = {"me": dynamics.me_evolve, "mpc": dynamics.mpc_evolve,
              "mf": dynamics.mf_evolve}.get(solver)
    if evolve is None:
        raise ValueError(f"unknown pulse solver {solver!r}")
    start = ground(coupling.n)
    if pulse.duration == 0:
        return dynamics.encode(start, solver)
    traj = evolve(coupling, start, pulse.duration, rabi=pulse.rabi, **options)
    return traj.final
