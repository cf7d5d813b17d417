"""Guided modes of an infinite step-index cylindrical fiber.

Lengths are in any consistent unit (micrometres throughout the examples);
propagation constants are reported scaled by the vacuum wavenumber,
``beta_bar = beta / k0``.  Fields carry an implicit ``exp(i nu phi)``
azimuthal factor and are expressed with the magnetic amplitudes already
multiplied by ``omega * mu0`` so that every coefficient has units of field.
"""

from __future__ import annotations

import io
import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate, optimize, special

log = logging.getLogger(__name__)

_EDGE = 1e-9
_GRID = 4096
_TAIL_DECAY = 50.0

# Core index and azimuthal cap calibrated so that lambda0 = 0.689 um gives
# 6 guided modes at a = 1 um and 39 at a = 5 um (any n_core in
# (1.102935, 1.103006) works with nu_max = 2).  A fitted value, not a
# measured material constant.
CALIBRATED_N_CORE = 1.10297
CALIBRATED_NU_MAX = 2


class FiberError(RuntimeError):
    """Numerical failure of the dispersion solver."""


class ModeCutoffError(FiberError):
    """Raised when a mode cannot be tracked to a perturbed wavenumber."""


@dataclass(frozen=True)
class FiberSpec:
    """Geometry and optics of a step-index fiber.

    Parameters
    ----------
    radius : float
        Core radius ``a``, same length unit as ``wavelength``.
    n_core, n_clad : float
        Core and cladding refractive indices, ``n_core > n_clad >= 1``.
    wavelength : float
        Vacuum wavelength of the atomic transition.
    nu_max : int
        Largest azimuthal index searched by :func:`solve_dispersion`.
    """

    radius: float
    n_core: float
    n_clad: float = 1.0
    wavelength: float = 0.689
    nu_max: int = 60

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not self.wavelength > 0:
            raise ValueError(f"wavelength must be positive, got {self.wavelength}")
        if not self.n_clad >= 1:
            raise ValueError(f"n_clad must be >= 1, got {self.n_clad}")
        if not self.n_core > self.n_clad:
            raise ValueError("n_core must exceed n_clad")
        if self.nu_max < 0:
            raise ValueError("nu_max must be non-negative")

    @classmethod
    def calibrated(cls, radius: float, wavelength: float = 0.689) -> "FiberSpec":
        """Spec with the calibrated ``n_core`` and ``nu_max``, vacuum cladding."""
        return cls(radius, CALIBRATED_N_CORE, 1.0, wavelength, CALIBRATED_NU_MAX)

    @property
    def k0(self) -> float:
        return 2 * np.pi / self.wavelength

    @property
    def v_number(self) -> float:
        return self.k0 * self.radius * np.sqrt(self.n_core**2 - self.n_clad**2)

    @property
    def area(self) -> float:
        return np.pi * self.radius**2


@dataclass(frozen=True)
class GuidedMode:
    """One solved guided mode.

    ``coeffs`` holds ``(A, B, C, D)`` where ``A``/``C`` are the axial
    electric amplitudes inside/outside the core and ``B``/``D`` the axial
    magnetic amplitudes times ``omega * mu0``.  ``norm`` is the power-like
    integral of ``n^2 |E|^2`` over the cross-section for these coefficients,
    so dividing the fields by ``sqrt(norm)`` normalizes them.
    """

    nu: int
    beta_bar: float
    h: float = float("nan")
    q: float = float("nan")
    coeffs: tuple = (0j, 0j, 0j, 0j)
    norm: float = float("nan")
    group_slope: float = float("nan")
    chi: float = float("nan")
    root_index: int = 0

    @property
    def is_solved(self) -> bool:
        return np.isfinite(self.h) and np.isfinite(self.norm) and self.norm > 0


@dataclass(frozen=True)
class ModeTable:
    """Ordered collection of guided modes (descending ``beta_bar``)."""

    modes: tuple[GuidedMode, ...] = ()
    provenance: str = "solved"
    spec: FiberSpec | None = None

    def __post_init__(self):
        if self.provenance not in ("solved", "user"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        b = np.sort(self.beta_bar)
        if np.any(np.diff(b) < 1e-12):
            raise ValueError("beta_bar values must be distinct")
        if np.any(self.chi < 0):
            raise ValueError("chi must be non-negative")

    def __len__(self):
        return len(self.modes)

    def __iter__(self):
        return iter(self.modes)

    def __getitem__(self, i):
        return self.modes[i]

    @property
    def beta_bar(self) -> np.ndarray:
        return np.array([m.beta_bar for m in self.modes], dtype=float)

    @property
    def chi(self) -> np.ndarray:
        return np.array([m.chi for m in self.modes], dtype=float)

    @property
    def fundamental(self) -> GuidedMode:
        if not self.modes:
            raise FiberError("empty mode table has no fundamental mode")
        return self.modes[0]

    def coupled(self) -> "ModeTable":
        """Modes with non-zero weight, i.e. those entering coupling sums."""
        return replace(self, modes=tuple(m for m in self.modes if m.chi > 0))

    @classmethod
    def from_values(cls, beta_bar: Sequence[float], chi: Sequence[float],
                    nu: Sequence[int] | None = None) -> "ModeTable":
        beta_bar = np.atleast_1d(np.asarray(beta_bar, dtype=float))
        chi = np.atleast_1d(np.asarray(chi, dtype=float))
        if beta_bar.shape != chi.shape:
            raise ValueError("beta_bar and chi must have equal length")
        if nu is None:
            nu = [1] * len(beta_bar)
        order = np.argsort(-beta_bar)
        modes = tuple(GuidedMode(nu=int(nu[i]), beta_bar=float(beta_bar[i]),
                                 chi=float(chi[i]), root_index=int(j))
                      for j, i in enumerate(order))
        return cls(modes=modes, provenance="user")

    @classmethod
    def single(cls, beta_bar: float = 1.2, chi: float = 1.0) -> "ModeTable":
        """One-mode toy table, e.g. ``beta_bar = 1.2, chi = 1``."""
        return cls.from_values([beta_bar], [chi])

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"# provenance: {self.provenance}\n")
        if self.spec is not None:
            s = self.spec
            buf.write(f"# fiber: radius={s.radius!r} n_core={s.n_core!r} "
                      f"n_clad={s.n_clad!r} wavelength={s.wavelength!r}\n")
        buf.write("# nu beta_bar chi group_slope\n")
        for m in self.modes:
            buf.write(f"{m.nu:d} {m.beta_bar:.16e} {m.chi:.16e} {m.group_slope:.16e}\n")
        return buf.getvalue()

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "ModeTable":
        """Parse a table with rows ``nu beta_bar chi group_slope`` or
        ``beta_bar chi``; ``#`` lines are comments."""
        rows = [ln.split() for ln in text.splitlines()
                if ln.strip() and not ln.lstrip().startswith("#")]
        if not rows:
            return cls(modes=(), provenance="user")
        widths = {len(r) for r in rows}
        if widths == {2}:
            data = np.array(rows, dtype=float)
            return cls.from_values(data[:, 0], data[:, 1])
        if widths != {4}:
            raise ValueError("mode table rows must have 2 or 4 columns")
        data = np.array(rows, dtype=float)
        order = np.argsort(-data[:, 1])
        modes = tuple(GuidedMode(nu=int(data[i, 0]), beta_bar=data[i, 1],
                                 chi=data[i, 2], group_slope=data[i, 3],
                                 root_index=j)
                      for j, i in enumerate(order))
        return cls(modes=modes, provenance="user")

    @classmethod
    def load(cls, path) -> "ModeTable":
        with open(path) as f:
            return cls.from_text(f.read())


# ----------------------------------------------------------------------
# characteristic equation
# ----------------------------------------------------------------------

def _log_derivs(nu, u, w):
    """J'/(u J) and K'/(w K) via the order recurrences."""
    jn = special.jv(nu, u)
    jp = 0.5 * (special.jv(nu - 1, u) - special.jv(nu + 1, u))
    # exponentially scaled K keeps the ratio finite for large w
    kn = special.kve(nu, w)
    kp = -0.5 * (special.kve(nu - 1, w) + special.kve(nu + 1, w))
    with np.errstate(divide="ignore", invalid="ignore"):
        return jp / (u * jn), kp / (w * kn)


def _uw(beta_bar, nu, spec: FiberSpec, k=None):
    k = spec.k0 if k is None else k
    ka = k * spec.radius
    u = ka * np.sqrt(spec.n_core**2 - beta_bar**2)
    w = ka * np.sqrt(beta_bar**2 - spec.n_clad**2)
    return u, w


def _residual(beta_bar, nu, spec, k=None):
    u, w = _uw(beta_bar, nu, spec, k)
    jr, kr = _log_derivs(nu, u, w)
    n1s, n2s = spec.n_core**2, spec.n_clad**2
    with np.errstate(invalid="ignore", over="ignore"):
        res = (jr + kr) * (n1s * jr + n2s * kr) \
            - nu**2 * (1 / u**2 + 1 / w**2) ** 2 * beta_bar**2
    # at a zero of J_nu the residual diverges to +inf from both sides
    return np.where(np.isfinite(res), res, np.inf)


def eigenvalue_residual(beta_bar: float, nu: int, spec: FiberSpec) -> float:
    """Left-hand side of the step-index characteristic equation.

    Zero at a guided mode.  At zeros of ``J_nu(ha)`` the function has a
    pole and ``+inf`` is returned.

    Raises
    ------
    ValueError
        If ``beta_bar`` is not strictly between the cladding and core indices.
    """
    if not spec.n_clad < beta_bar < spec.n_core:
        raise ValueError(
            f"beta_bar={beta_bar} outside ({spec.n_clad}, {spec.n_core})")
    return float(_residual(np.float64(beta_bar), nu, spec))


def _pole_betas(nu, spec, k=None):
    """beta_bar positions of the zeros of J_nu(ha), descending."""
    k = spec.k0 if k is None else k
    ka = k * spec.radius
    vmax = ka * np.sqrt(spec.n_core**2 - spec.n_clad**2)
    zeros = []
    count = 8
    while True:
        z = special.jn_zeros(nu, count)
        if z[-1] > vmax:
            zeros = z[z < vmax]
            break
        count *= 2
    return np.sqrt(spec.n_core**2 - (zeros / ka) ** 2)


def _bisect_root(f, lo, hi):
    root = optimize.brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                           maxiter=500)
    return root


def _te_tm_factor(beta_bar, spec, k, tm):
    u, w = _uw(beta_bar, 0, spec, k)
    jr, kr = _log_derivs(0, u, w)
    res = spec.n_core**2 * jr + spec.n_clad**2 * kr if tm else jr + kr
    return np.where(np.isfinite(res), res, np.inf)


def _roots_for_order(nu, spec, k=None, grid=_GRID):
    if nu == 0:
        # TE and TM roots can be closer than a grid cell; bracket each factor
        roots = []
        for tm in (False, True):
            f = lambda x, tm=tm: _te_tm_factor(x, spec, k, tm)
            roots += _bracketed_roots(f, 0, spec, k, grid)
    else:
        roots = _bracketed_roots(lambda x: _residual(x, nu, spec, k), nu, spec, k, grid)
    return sorted(roots, reverse=True)


def _bracketed_roots(fun, nu, spec, k, grid):
    lo = spec.n_clad + _EDGE
    hi = spec.n_core - _EDGE
    poles = _pole_betas(nu, spec, k)
    b = np.linspace(lo, hi, grid)
    b = np.unique(np.concatenate([b, poles]))
    f = fun(b)
    pole_mask = np.isin(b, poles)
    roots = []
    func = lambda x: float(fun(np.float64(x)))
    for i in range(len(b) - 1):
        if pole_mask[i] or pole_mask[i + 1]:
            continue
        fa, fb = f[i], f[i + 1]
        if not (np.isfinite(fa) and np.isfinite(fb)):
            continue
        if fa == 0.0:
            roots.append(b[i])
        elif fa * fb < 0:
            roots.append(_bisect_root(func, b[i], b[i + 1]))
    return roots


# ----------------------------------------------------------------------
# fields
# ----------------------------------------------------------------------

def _coefficients(nu, beta_bar, spec, amplitude=1.0):
    k = spec.k0
    u, w = _uw(beta_bar, nu, spec)
    jr, kr = _log_derivs(nu, u, w)
    n1s, n2s = spec.n_core**2, spec.n_clad**2
    if nu == 0:
        # TE branch has E_z = 0, TM branch has H_z = 0
        te = abs(jr + kr) < abs(n1s * jr + n2s * kr) / n1s
        a_coef = 0.0 if te else amplitude
        b_coef = amplitude * k if te else 0.0
    else:
        a_coef = amplitude
        b_coef = 1j * beta_bar * k * nu * amplitude * (1 / u**2 + 1 / w**2) / (jr + kr)
    ratio = special.jv(nu, u) / special.kv(nu, w)
    return (complex(a_coef), complex(b_coef),
            complex(a_coef * ratio), complex(b_coef * ratio))


def _fields_polar(mode: GuidedMode, spec: FiberSpec, r):
    """(E_z, E_r, E_phi) without the exp(i nu phi) factor."""
    r = np.asarray(r, dtype=float)
    nu, h, q = mode.nu, mode.h, mode.q
    beta = mode.beta_bar * spec.k0
    A, B, _, _ = mode.coeffs
    a = spec.radius
    u, w = h * a, q * a
    ez = np.zeros(r.shape, complex)
    er = np.zeros(r.shape, complex)
    ep = np.zeros(r.shape, complex)

    inside = r < a
    ri = r[inside]
    if ri.size:
        x = h * ri
        jn = special.jv(nu, x)
        jp = special.jvp(nu, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            j_over_r = np.where(ri > 0, jn / np.where(ri > 0, ri, 1.0),
                                h / 2 if nu == 1 else 0.0)
        ez[inside] = A * jn
        er[inside] = (-1j / h**2) * (beta * h * A * jp + 1j * nu * B * j_over_r)
        ep[inside] = (-1j / h**2) * (1j * beta * nu * A * j_over_r - h * B * jp)

    outside = (~inside) & (r <= a + _TAIL_DECAY / q)
    ro = r[outside]
    if ro.size:
        x = q * ro
        # K_nu(q r) / K_nu(q a) in scaled form to avoid underflow
        scale = np.exp(-(x - w)) / special.kve(nu, w)
        kn = special.kve(nu, x) * scale
        kp = -0.5 * (special.kve(nu - 1, x) + special.kve(nu + 1, x)) * scale
        jw = special.jv(nu, u)
        C, D = A * jw, B * jw
        ez[outside] = C * kn
        er[outside] = (1j / q**2) * (beta * q * C * kp + 1j * nu * D * kn / ro)
        ep[outside] = (1j / q**2) * (1j * beta * nu * C * kn / ro - q * D * kp)
    return ez, er, ep


def field_components(mode: GuidedMode, spec: FiberSpec, r, phi=0.0,
                     normalized: bool = True):
    """Electric field ``(E_z, E_r, E_phi)`` of a mode at ``(r, phi)``.

    With ``normalized`` the fields are divided by ``sqrt(mode.norm)`` so
    that the cross-section integral of ``n^2 |E|^2`` is one.  Beyond
    ``r = a + 50/q`` the evanescent tail is set to zero.
    """
    if np.any(np.asarray(r) < 0):
        raise ValueError("r must be non-negative")
    if normalized and not mode.is_solved:
        raise FiberError("mode has no normalization; solve it first")
    ez, er, ep = _fields_polar(mode, spec, r)
    phase = np.exp(1j * mode.nu * np.asarray(phi, dtype=float))
    s = 1 / np.sqrt(mode.norm) if normalized else 1.0
    return ez * phase * s, er * phase * s, ep * phase * s


def field_x(mode: GuidedMode, spec: FiberSpec, r, phi=0.0, normalized=True):
    """Cartesian ``E_x = E_r cos(phi) - E_phi sin(phi)``."""
    _, er, ep = field_components(mode, spec, r, phi, normalized)
    return er * np.cos(phi) - ep * np.sin(phi)


def _normalization(mode: GuidedMode, spec: FiberSpec) -> float:
    a = spec.radius

    def density(r, n2):
        ez, er, ep = _fields_polar(mode, spec, np.array([r]))
        return r * n2 * float(abs(ez[0])**2 + abs(er[0])**2 + abs(ep[0])**2)

    n1s, n2s = spec.n_core**2, spec.n_clad**2
    inner, _ = integrate.quad(density, 0.0, a, args=(n1s,), limit=400,
                              epsabs=0, epsrel=1e-11)
    outer, _ = integrate.quad(density, a, a + _TAIL_DECAY / mode.q, args=(n2s,),
                              limit=400, epsabs=0, epsrel=1e-11)
    return 2 * np.pi * (inner + outer)


def _build_mode(nu, beta_bar, spec, amplitude=1.0, root_index=0) -> GuidedMode:
    k = spec.k0
    h = k * np.sqrt(spec.n_core**2 - beta_bar**2)
    q = k * np.sqrt(beta_bar**2 - spec.n_clad**2)
    coeffs = _coefficients(nu, beta_bar, spec, amplitude)
    mode = GuidedMode(nu=nu, beta_bar=float(beta_bar), h=float(h), q=float(q),
                      coeffs=coeffs, root_index=root_index)
    return replace(mode, norm=_normalization(mode, spec))


# ----------------------------------------------------------------------
# group velocity and weights
# ----------------------------------------------------------------------

def _mode_function(mode: GuidedMode, spec, k):
    if mode.nu == 0:
        tm = mode.coeffs[0] != 0
        return lambda x: _te_tm_factor(x, spec, k, tm)
    return lambda x: _residual(x, mode.nu, spec, k)


def _track_root(mode: GuidedMode, spec, k, window=1e-4):
    b0 = mode.beta_bar
    fun = _mode_function(mode, spec, k)
    lo_lim = spec.n_clad + _EDGE
    hi_lim = spec.n_core - _EDGE
    poles = _pole_betas(mode.nu, spec, k)
    while window <= 1e-2:
        lo, hi = max(b0 - window, lo_lim), min(b0 + window, hi_lim)
        inner = poles[(poles > lo) & (poles < hi)]
        b = np.unique(np.concatenate([np.linspace(lo, hi, 65), inner]))
        f = fun(b)
        is_pole = np.isin(b, inner)
        found = []
        for i in range(len(b) - 1):
            if is_pole[i] or is_pole[i + 1] or not np.isfinite(f[i] * f[i + 1]):
                continue
            if f[i] * f[i + 1] < 0:
                found.append(_bisect_root(lambda x: float(fun(np.float64(x))),
                                          b[i], b[i + 1]))
        if found:
            return min(found, key=lambda x: abs(x - b0))
        window *= 4
    raise ModeCutoffError(f"mode nu={mode.nu} near beta_bar={b0:.6f} lost (cutoff)")


def group_slope(mode: GuidedMode, spec: FiberSpec, eps: float = 1e-5) -> float:
    """``d beta / d k`` at the design wavenumber by central differences.

    The mode is re-solved at ``k0 (1 +/- eps)``, picking the root nearest
    the unperturbed one.  Raises :class:`ModeCutoffError` if the root
    disappears.
    """
    k0 = spec.k0
    kp, km = k0 * (1 + eps), k0 * (1 - eps)
    bp = _track_root(mode, spec, kp)
    bm = _track_root(mode, spec, km)
    return (bp * kp - bm * km) / (kp - km)


def mode_weight(mode: GuidedMode, spec: FiberSpec, r_atom: float = 0.0,
                phi_atom: float = 0.0, slope: float | None = None) -> float:
    """Dimensionless coupling weight of a mode for an x-oriented dipole.

    ``chi = (d beta/d k) * (pi a^2 / norm) * |E_x(r_atom, phi_atom)|^2``
    with the unnormalized field, so the result is independent of the
    arbitrary amplitude the coefficients were built with.
    """
    if not mode.is_solved:
        raise FiberError("mode is not normalized")
    slope = mode.group_slope if slope is None else slope
    ex = field_x(mode, spec, np.array([r_atom]), phi_atom, normalized=False)[0]
    intensity = abs(ex) ** 2
    if intensity == 0.0:
        return 0.0
    return float(slope * spec.area / mode.norm * intensity)


def solve_dispersion(spec: FiberSpec, r_atom: float = 0.0, phi_atom: float = 0.0,
                     amplitude: float = 1.0, with_weights: bool = True,
                     orders: Iterable[int] | None = None) -> ModeTable:
    """All guided modes for ``nu = 0 .. spec.nu_max``.

    Roots are bracketed by sign changes on a 4096-point grid per order
    (poles at the zeros of ``J_nu`` are split out) and refined to machine
    precision.  Each mode gets its coefficients, normalization, group slope
    and weight ``chi`` for an atom at ``(r_atom, phi_atom)``.

    Raises
    ------
    FiberError
        If no ``nu = 1`` root exists; the fundamental mode has no cutoff,
        so its absence means the solver failed.
    """
    orders = range(spec.nu_max + 1) if orders is None else orders
    modes = []
    for nu in orders:
        for j, b in enumerate(_roots_for_order(nu, spec)):
            mode = _build_mode(nu, b, spec, amplitude, root_index=j)
            if with_weights:
                try:
                    slope = group_slope(mode, spec)
                except ModeCutoffError as exc:
                    warnings.warn(f"{exc}; weight set to zero", RuntimeWarning)
                    mode = replace(mode, chi=0.0)
                else:
                    mode = replace(mode, group_slope=slope)
                    mode = replace(mode, chi=mode_weight(mode, spec, r_atom, phi_atom))
            modes.append(mode)
    if 1 in orders and not any(m.nu == 1 for m in modes):
        raise FiberError("no nu=1 root found; the fundamental mode must exist")
    modes.sort(key=lambda m: -m.beta_bar)
    return ModeTable(modes=tuple(modes), provenance="solved", spec=spec)


def count_modes(spec: FiberSpec) -> int:
    """Number of guided (nu, root) branches without building fields."""
    return sum(len(_roots_for_order(nu, spec)) for nu in range(spec.nu_max + 1))


def dispersion_scan(n_core: float, a_over_lambda: Sequence[float],
                    n_clad: float = 1.0, nu_max: int = 60,
                    wavelength: float = 1.0) -> list[tuple[float, int, int, float]]:
    """Rows ``(a/lambda0, nu, root_index, beta_bar)`` over a radius scan."""
    rows = []
    for x in a_over_lambda:
        spec = FiberSpec(radius=x * wavelength, n_core=n_core, n_clad=n_clad,
                         wavelength=wavelength, nu_max=nu_max)
        for nu in range(nu_max + 1):
            for j, b in enumerate(_roots_for_order(nu, spec)):
                rows.append((float(x), nu, j, float(b)))
    return rows
