"""Collective coupling matrices for a chain of emitters along a fiber.

All rates and shifts are in units of the free-space single-atom decay rate
``Gamma``; distances enter through ``xi = k0 |z_i - z_j|``.
"""

from __future__ import annotations

import io
import warnings
from math import factorial
from dataclasses import dataclass, field

import numpy as np

from .fiber import FiberSpec, ModeTable


@dataclass(frozen=True)
class EmitterChain:
    """Emitter positions along the fiber axis, in units of the wavelength.

    Dipoles are transverse (along x) and identical.
    """

    positions: np.ndarray

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.positions, dtype=float))
        if z.ndim != 1 or z.size < 1:
            raise ValueError("need at least one emitter position")
        if np.any(np.diff(z) <= 0):
            raise ValueError("positions must be strictly increasing")
        object.__setattr__(self, "positions", z)

    @classmethod
    def regular(cls, n: int, spacing: float) -> "EmitterChain":
        """``n`` emitters at ``z_j = j * spacing`` (spacing in wavelengths)."""
        if n < 1:
            raise ValueError("n must be >= 1")
        if n > 1 and not spacing > 0:
            raise ValueError("spacing must be positive")
        return cls(np.arange(n) * float(spacing))

    @property
    def n(self) -> int:
        return self.positions.size

    def xi(self) -> np.ndarray:
        """Pairwise ``k0 |z_i - z_j|``."""
        z = self.positions
        return 2 * np.pi * np.abs(z[:, None] - z[None, :])


@dataclass(frozen=True)
class CouplingParams:
    """Strength of the guided-mode channel and which terms to include.

    ``broadening`` is ``None`` (discrete modes), a scalar or per-mode array
    of Lorentzian half-widths in units of ``k0``, or ``"auto"`` for
    :func:`default_broadening`.
    """

    alpha: float
    modes: ModeTable = field(default_factory=ModeTable.single)
    include_3d: bool = True
    broadening: object = None

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        widths = self.widths()
        if np.any(widths < 0):
            raise ValueError("broadening must be non-negative")

    @property
    def broadened(self) -> bool:
        return bool(np.any(self.widths() > 0))

    def widths(self) -> np.ndarray:
        n = len(self.modes)
        if self.broadening is None:
            return np.zeros(n)
        if isinstance(self.broadening, str):
            if self.broadening != "auto":
                raise ValueError(f"unknown broadening {self.broadening!r}")
            return np.full(n, default_broadening(self.modes))
        return np.broadcast_to(np.asarray(self.broadening, dtype=float), (n,)).copy()


@dataclass(frozen=True)
class CouplingSet:
    """Coherent (``omega``) and dissipative (``gamma``) coupling matrices."""

    omega: np.ndarray
    gamma: np.ndarray
    gamma_total: float
    broadened: bool = False

    @property
    def n(self) -> int:
        return self.gamma.shape[0]

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.gamma).min())

    def is_psd(self, tol: float = 1e-9) -> bool:
        return self.min_eigenvalue() >= -tol * max(1.0, self.gamma_total)

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"# N={self.n} gamma_total={self.gamma_total!r} "
                  f"broadened={self.broadened}\n# omega\n")
        np.savetxt(buf, self.omega, fmt="%.16e")
        buf.write("# gamma\n")
        np.savetxt(buf, self.gamma, fmt="%.16e")
        return buf.getvalue()

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "CouplingSet":
        head, rest = text.split("# omega\n")
        om_txt, ga_txt = rest.split("# gamma\n")
        meta = dict(tok.split("=") for tok in head.lstrip("# ").split())
        omega = np.loadtxt(io.StringIO(om_txt), ndmin=2)
        gamma = np.loadtxt(io.StringIO(ga_txt), ndmin=2)
        return cls(omega, gamma, float(meta["gamma_total"]),
                   meta["broadened"] == "True")


# ----------------------------------------------------------------------
# kernels
# ----------------------------------------------------------------------

def omega_3d(xi):
    """Free-space dipole-dipole shift between parallel transverse dipoles."""
    xi = np.asarray(xi, dtype=float)
    if np.any(xi <= 0):
        raise ValueError("omega_3d diverges at xi = 0")
    c, s = np.cos(xi), np.sin(xi)
    return -0.75 * (c / xi - s / xi**2 + c / xi**3)


# Taylor coefficients of gamma_3d in xi^2, used below _SERIES_XI where the
# closed form cancels: 3/2 (-1)^m [1/(2m+1)! - 1/(2m+2)! + 1/(2m+3)!]
_SERIES_XI = 0.5
_SERIES = np.array([1.5 * (-1) ** m * (1 / factorial(2 * m + 1) - 1 / factorial(2 * m + 2)
                                       + 1 / factorial(2 * m + 3)) for m in range(10)])


def gamma_3d(xi):
    """Free-space collective decay kernel; equals 1 at ``xi = 0``."""
    xi = np.abs(np.asarray(xi, dtype=float))
    small = xi < _SERIES_XI
    xs = np.where(small, 1.0, xi)
    s, c = np.sin(xs), np.cos(xs)
    full = 1.5 * (s / xs + c / xs**2 - s / xs**3)
    series = np.polynomial.polynomial.polyval(xi**2, _SERIES)
    return np.where(small, series, full)


def _mode_sum(xi, params: CouplingParams, trig):
    keep = params.modes.chi > 0
    if not np.any(keep):
        warnings.warn("no coupled guided modes: guided-mode couplings are zero",
                      RuntimeWarning, stacklevel=3)
        return np.zeros_like(np.asarray(xi, dtype=float))
    modes = params.modes.coupled()
    widths = params.widths()[keep]
    xi = np.asarray(xi, dtype=float)
    b, chi = modes.beta_bar, modes.chi
    arg = xi[..., None]
    return np.sum(chi * trig(b * arg) * np.exp(-widths * arg), axis=-1)


def omega_1d(xi, params: CouplingParams):
    """Guided-mode shift ``(alpha/2) sum chi sin(beta_bar xi) exp(-delta xi)``."""
    return 0.5 * params.alpha * _mode_sum(xi, params, np.sin)


def gamma_1d(xi, params: CouplingParams):
    """Guided-mode decay ``alpha sum chi cos(beta_bar xi) exp(-delta xi)``."""
    return params.alpha * _mode_sum(xi, params, np.cos)


def alpha_from_geometry(spec: FiberSpec) -> float:
    """Ratio of guided to free-space decay, ``3 pi / (k0^2 pi a^2)``."""
    return 3 * np.pi / (spec.k0**2 * spec.area)


def default_broadening(modes: ModeTable) -> float:
    """Half-width giving a few-percent overlap: 2% of the mean mode spacing."""
    b = np.sort(modes.coupled().beta_bar)
    if b.size < 2:
        return 0.0
    return 0.02 * float(np.mean(np.diff(b)))


def build(chain: EmitterChain, params: CouplingParams) -> CouplingSet:
    """Coupling matrices for a collinear chain.

    Off-diagonal entries sum the free-space kernels (if enabled) and the
    guided-mode sums at ``xi_ij``; the diagonal of ``gamma`` is the total
    single-atom rate ``1 * include_3d + alpha * sum chi``.
    """
    xi = chain.xi()
    n = chain.n
    off = ~np.eye(n, dtype=bool)
    if np.any(xi[off] == 0):
        raise ValueError("coincident emitter positions")
    omega = np.zeros((n, n))
    gamma = np.zeros((n, n))
    if params.include_3d:
        omega[off] += omega_3d(xi[off])
        gamma[off] += gamma_3d(xi[off])
    if n > 1:
        omega[off] += omega_1d(xi[off], params)
        gamma[off] += gamma_1d(xi[off], params)
    g_tot = float(params.include_3d) + float(gamma_1d(0.0, params))
    np.fill_diagonal(gamma, g_tot)
    # exact symmetry regardless of summation order
    omega = 0.5 * (omega + omega.T)
    gamma = 0.5 * (gamma + gamma.T)
    return CouplingSet(omega=omega, gamma=gamma, gamma_total=g_tot,
                       broadened=params.broadened)


def kernel_scan(xi, params: CouplingParams) -> np.ndarray:
    """Rows ``(xi, Omega3D, Gamma3D, Omega1D, Gamma1D)``."""
    xi = np.asarray(xi, dtype=float)
    return np.column_stack([xi, omega_3d(xi), gamma_3d(xi),
                            omega_1d(xi, params), gamma_1d(xi, params)])
