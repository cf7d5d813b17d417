"""Time evolution of the collective emitter ensemble.

Four backends share one calling convention and return a :class:`Trajectory`:

* :func:`me_evolve`: exact master equation on the ``2^N`` density matrix.
* :func:`mpc_evolve`: single-site Bloch vectors plus all pair correlations,
  with connected three-body correlations dropped.
* :func:`mf_evolve`: product-state (Bloch vector) dynamics.
* :func:`independent_evolve`: closed-form uncoupled decay.

The generator is

    d rho/dt = -sum_ij M_ij s+_i s-_j rho - sum_ij M*_ij rho s+_i s-_j
               + sum_ij Gamma_ij s-_j rho s+_i - i [H_L, rho],

with ``M = Gamma/2 + i Omega`` (``Omega_ii = 0``) and the optional drive
``H_L = rabi * sum_i sigma^x_i``.  Time is in units of ``1/Gamma``.

The reduced equations follow from tracing the generator over all but a set
``S`` of sites.  Writing ``Phi_i = sum_{m not in S} M_im Tr_m(s-_m rho_{S+m})``
one finds ``d rho_S = L_S[rho_S] + X + X^dagger`` with
``X = -sum_{i in S} [s+_i, Phi_i]``, where ``L_S`` is the generator
restricted to ``S``.  Mean field closes ``Phi`` with product states, the
pair closure with ``rho_klm ~ rho_kl rho_m + rho_km rho_l + rho_k rho_lm
- 2 rho_k rho_l rho_m``.
"""

from __future__ import annotations

import copy
import io
import logging
import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.integrate import DOP853, RK45

from .couplings import CouplingSet
from .states import PreparedState

log = logging.getLogger(__name__)

ME_MAX_SITES = 12
EIG_WARN = -1e-7
EIG_FAIL = -1e-4

# single-site operators, basis (|g>, |e>)
SM = np.array([[0, 1], [0, 0]], dtype=complex)
SP = SM.T.copy()
NUM = np.diag([0.0, 1.0]).astype(complex)
ID2 = np.eye(2, dtype=complex)
PAULI = np.array([ID2,
                  [[0, 1], [1, 0]],
                  [[0, 1j], [-1j, 0]],
                  [[-1, 0], [0, 1]]], dtype=complex)
# PAULI2[a, b] = kron(PAULI[a], PAULI[b])
PAULI2 = np.einsum("aij,bkl->abikjl", PAULI, PAULI).reshape(4, 4, 4, 4)


class IntegrationError(RuntimeError):
    """The ODE solver failed to meet its tolerance."""


class PositivityError(RuntimeError):
    """The density matrix developed a significantly negative eigenvalue."""


# ----------------------------------------------------------------------
# state containers
# ----------------------------------------------------------------------

@dataclass
class EnsembleState:
    """Backend-specific state.

    ``kind`` is ``"me"`` (``rho`` set), ``"mf"`` (``bloch`` set) or
    ``"mpc"`` (``bloch`` and ``pairs`` set).  ``pairs[p]`` holds the full
    second moments ``<sigma^a_k sigma^b_l>`` for the ``p``-th pair ``k < l``
    in :func:`pair_index` order.
    """

    kind: str
    n: int
    rho: np.ndarray | None = None
    bloch: np.ndarray | None = None
    pairs: np.ndarray | None = None

    def total_excitation(self) -> float:
        if self.kind == "me":
            return float(me_populations(self.rho, self.n).sum())
        return float(0.5 * (1 + self.bloch[:, 2]).sum())

    def bloch_vectors(self) -> np.ndarray:
        if self.kind == "me":
            return me_bloch(self.rho, self.n)
        return self.bloch.copy()

    def populations(self) -> np.ndarray:
        return 0.5 * (1 + self.bloch_vectors()[:, 2])


def pair_index(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-major ``k < l`` pair lists."""
    return np.triu_indices(n, k=1)


def product_density_matrix(bloch: np.ndarray) -> np.ndarray:
    """``kron`` of single-site density matrices; site 0 is the leading factor."""
    rho = np.ones((1, 1), dtype=complex)
    for r in np.atleast_2d(bloch):
        rho = np.kron(rho, 0.5 * (ID2 + np.einsum("a,aij->ij", r, PAULI[1:])))
    return rho


def encode(state: PreparedState | EnsembleState, kind: str) -> EnsembleState:
    """Convert a prepared product state into a backend state."""
    if isinstance(state, EnsembleState):
        if state.kind != kind:
            raise ValueError(f"cannot feed a {state.kind} state to the {kind} solver")
        return state
    b = state.bloch.copy()
    n = state.n
    if kind == "me":
        return EnsembleState("me", n, rho=product_density_matrix(b))
    if kind == "mf":
        return EnsembleState("mf", n, bloch=b)
    if kind == "mpc":
        k, l = pair_index(n)
        return EnsembleState("mpc", n, bloch=b,
                             pairs=np.einsum("pa,pb->pab", b[k], b[l]))
    raise ValueError(f"unknown backend {kind!r}")


# ----------------------------------------------------------------------
# trajectories
# ----------------------------------------------------------------------

@dataclass
class Trajectory:
    """Sampled observables of one run.

    ``sz`` is the total excitation ``sum_i <s+_i s-_i>`` and ``bloch`` (if
    kept) the per-atom Bloch vectors, shape ``(len(times), N, 3)``.
    """

    times: np.ndarray
    sz: np.ndarray
    solver: str
    bloch: np.ndarray | None = None
    final: EnsembleState | None = None
    meta: dict = field(default_factory=dict)

    @property
    def populations(self) -> np.ndarray | None:
        if self.bloch is None:
            return None
        return 0.5 * (1 + self.bloch[..., 2])

    def half_decay_time(self) -> float | None:
        return half_decay_time(self.times, self.sz)

    def to_text(self, header: dict | None = None) -> str:
        buf = io.StringIO()
        info = {"solver": self.solver, **self.meta, **(header or {})}
        for key in sorted(info):
            buf.write(f"# {key}: {info[key]}\n")
        cols = ["t", "sz"]
        data = [self.times, self.sz]
        if self.bloch is not None:
            n = self.bloch.shape[1]
            cols += [f"pop{j}" for j in range(n)]
            data += list(self.populations.T)
        buf.write("# columns: " + " ".join(cols) + "\n")
        np.savetxt(buf, np.column_stack(data), fmt="%.12e")
        return buf.getvalue()

    def save(self, path, header: dict | None = None) -> None:
        with open(path, "w") as f:
            f.write(self.to_text(header))


def total_excitation(state) -> float:
    """Total excitation of an :class:`EnsembleState` or prepared state."""
    return state.total_excitation()


def half_decay_time(times, sz) -> float | None:
    """First time ``sz`` falls to half its initial value (linear interpolation).

    Returns ``None`` if the threshold is never reached.
    """
    times = np.asarray(times, float)
    sz = np.asarray(sz, float)
    target = 0.5 * sz[0]
    below = np.nonzero(sz <= target)[0]
    if below.size == 0 or below[0] == 0:
        return None
    i = below[0]
    t0, t1, s0, s1 = times[i - 1], times[i], sz[i - 1], sz[i]
    return float(t0 + (target - s0) * (t1 - t0) / (s1 - s0))


# ----------------------------------------------------------------------
# shared integration driver
# ----------------------------------------------------------------------

_METHODS = {"DOP853": DOP853, "RK45": RK45}


def _restrict(dense, select):
    """Interpolant of the components ``y[select]`` only.

    Valid because the Runge-Kutta interpolants are linear in the stage
    derivatives; avoids evaluating the full state between steps.
    """
    sub = copy.copy(dense)
    sub.y_old = dense.y_old[select]
    if hasattr(dense, "F"):       # DOP853
        sub.F = dense.F[:, select]
    else:                         # RK45 and friends
        sub.Q = dense.Q[select]
    return sub


def _integrate(rhs, y0, t_end, n_samples, observe, rtol, atol, method="DOP853",
               checkpoint=None, n_checkpoints=0, select=None):
    """Step an explicit solver and sample ``observe(y)`` on a uniform grid.

    Only the samples are stored; the step interpolant fills grid points
    inside each step.  If ``select`` is given, ``observe`` receives only
    ``y[select]``.  ``checkpoint(t, y)`` is called on roughly
    ``n_checkpoints`` evenly spaced steps.
    """
    pick = (lambda y: y) if select is None else (lambda y: y[select])
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    grid = np.linspace(0.0, t_end, n_samples)
    solver = _METHODS[method](rhs, 0.0, y0, t_end, rtol=rtol, atol=atol)
    samples = [observe(pick(y0))]
    idx = 1
    next_check = t_end / n_checkpoints if n_checkpoints else math.inf
    while idx < grid.size:
        msg = solver.step()
        if solver.status == "failed":
            raise IntegrationError(
                f"{method} failed at t={solver.t:.6g} ({msg}); "
                f"steps={solver.nfev // 12 if method == 'DOP853' else solver.nfev // 6}, "
                f"nfev={solver.nfev}, last step={solver.step_size}")
        dense = None
        while idx < grid.size and grid[idx] <= solver.t:
            if grid[idx] == solver.t:
                samples.append(observe(pick(solver.y)))
            else:
                if dense is None:
                    dense = solver.dense_output()
                    if select is not None:
                        dense = _restrict(dense, select)
                samples.append(observe(dense(grid[idx])))
            idx += 1
        if checkpoint is not None and solver.t >= next_check:
            checkpoint(solver.t, solver.y)
            next_check += t_end / n_checkpoints
    stats = {"nfev": solver.nfev, "method": method, "rtol": rtol, "atol": atol}
    return grid, samples, solver.y, stats


def _check_coupling(coupling: CouplingSet):
    if not coupling.is_psd():
        msg = (f"Gamma matrix is not positive semidefinite "
               f"(min eigenvalue {coupling.min_eigenvalue():.3e})")
        if coupling.broadened:
            warnings.warn(msg + "; continuing because couplings are broadened",
                          RuntimeWarning, stacklevel=3)
        else:
            raise ValueError(msg + "; enable broadening or fix the couplings")


def _mmat(coupling: CouplingSet) -> np.ndarray:
    om = coupling.omega - np.diag(np.diag(coupling.omega))
    return 0.5 * coupling.gamma + 1j * om


# ----------------------------------------------------------------------
# exact master equation
# ----------------------------------------------------------------------

@numba.njit(cache=True)
def _me_half(rho, M, G, rabi, bits, out):
    """``out`` = half generator ``D`` with ``d rho = D + D^dagger``."""
    dim = rho.shape[0]
    n = bits.size
    for r in range(dim):
        for c in range(dim):
            out[r, c] = 0.0
        # -(K rho), K = sum_ij M_ij s+_i s-_j
        for i in range(n):
            bi = bits[i]
            if r & bi:
                m = M[i, i]
                for c in range(dim):
                    out[r, c] -= m * rho[r, c]
                for j in range(n):
                    bj = bits[j]
                    if not (r & bj):
                        rr = r ^ bi ^ bj
                        m = M[i, j]
                        for c in range(dim):
                            out[r, c] -= m * rho[rr, c]
        # half of the jump term sum_ij Gamma_ij s-_j rho s+_i
        for j in range(n):
            bj = bits[j]
            if r & bj:
                continue
            rr = r | bj
            for i in range(n):
                g = 0.5 * G[i, j]
                if g == 0.0:
                    continue
                bi = bits[i]
                # columns c with bit i clear, in contiguous runs of length bi
                for hi in range(0, dim, 2 * bi):
                    for c in range(hi, hi + bi):
                        out[r, c] += g * rho[rr, c + bi]
        if rabi != 0.0:
            h = -0.5j * rabi
            for i in range(n):
                bi = bits[i]
                for c in range(dim):
                    out[r, c] += h * (rho[r ^ bi, c] - rho[r, c ^ bi])


@numba.njit(cache=True)
def _hermitian_sum(a, out, block=32):
    """``out = a + a^dagger`` with a tiled transpose."""
    dim = a.shape[0]
    for r0 in range(0, dim, block):
        for c0 in range(0, dim, block):
            for r in range(r0, min(r0 + block, dim)):
                for c in range(c0, min(c0 + block, dim)):
                    out[r, c] = a[r, c] + np.conj(a[c, r])


def _site_bits(n: int) -> np.ndarray:
    # site 0 is the most significant bit (leading kron factor)
    return np.array([1 << (n - 1 - j) for j in range(n)], dtype=np.int64)


def me_generator(coupling: CouplingSet, rabi: float = 0.0):
    """Return ``f(rho) -> d rho/dt`` for the full density matrix."""
    n = coupling.n
    M = np.ascontiguousarray(_mmat(coupling))
    G = np.ascontiguousarray(coupling.gamma, dtype=float)
    bits = _site_bits(n)
    buf = np.empty((2**n, 2**n), dtype=complex)

    def apply(rho):
        _me_half(np.ascontiguousarray(rho), M, G, float(rabi), bits, buf)
        out = np.empty_like(buf)
        _hermitian_sum(buf, out)
        return out

    return apply


def me_populations(rho: np.ndarray, n: int) -> np.ndarray:
    return np.real(np.diagonal(rho)) @ _excitation_bits(n)


def me_lowering(rho: np.ndarray, n: int) -> np.ndarray:
    """``<s-_j> = sum_{r: bit j clear} rho[r | b_j, r]``."""
    idx = np.arange(2**n)
    out = np.empty(n, dtype=complex)
    for j, b in enumerate(_site_bits(n)):
        r = idx[(idx & b) == 0]
        out[j] = rho[r | b, r].sum()
    return out


def me_bloch(rho: np.ndarray, n: int) -> np.ndarray:
    s = me_lowering(rho, n)
    z = 2 * me_populations(rho, n) - 1
    return np.column_stack([2 * s.real, -2 * s.imag, z])


def me_pair(rho: np.ndarray, n: int, i: int, j: int) -> complex:
    """``<s+_i s-_j>`` from the full density matrix."""
    bits = _site_bits(n)
    idx = np.arange(2**n)
    if i == j:
        return complex(me_populations(rho, n)[i])
    bi, bj = bits[i], bits[j]
    # <s+_i s-_j> = Tr(rho s+_i s-_j) = sum_c rho[c, r] with r = c ^ bi ^ bj,
    # bit i set in r and bit j clear in r
    r = idx[((idx & bi) != 0) & ((idx & bj) == 0)]
    return complex(rho[r ^ bi ^ bj, r].sum())


def me_evolve(coupling: CouplingSet, state, t_end: float, *, rabi: float = 0.0,
              n_samples: int = 400, rtol: float = 1e-8, atol: float = 1e-10,
              method: str = "DOP853", keep_bloch: bool = False,
              max_sites: int = ME_MAX_SITES, n_checkpoints: int = 8) -> Trajectory:
    """Exact master-equation evolution.

    Raises ``ValueError`` above ``max_sites`` atoms, on a non-PSD ``Gamma``
    (unless broadened) and :class:`PositivityError` if the state loses
    positivity beyond round-off.
    """
    n = coupling.n
    if n > max_sites:
        raise ValueError(f"master equation limited to N <= {max_sites}, got N={n}; "
                         "use the mpc or mf solver for larger chains")
    _check_coupling(coupling)
    st = encode(state, "me")
    dim = 2**n
    gen = me_generator(coupling, rabi)
    counts = _excitation_counts(n)

    def rhs(t, y):
        return gen(y.reshape(dim, dim)).ravel()

    # sample only the diagonal and, if requested, the <s-_j> entries
    idx = np.arange(dim)
    select = [idx * (dim + 1)]
    if keep_bloch:
        for b in _site_bits(n):
            r = idx[(idx & b) == 0]
            select.append((r | b) * dim + r)
    select = np.concatenate(select)
    drift = {"trace": 0.0, "hermiticity": 0.0, "eig": 0.0}

    def observe(y):
        diag = y[:dim]
        drift["trace"] = max(drift["trace"], abs(diag.sum() - 1))
        sz = float(diag.real @ counts)
        if not keep_bloch:
            return (sz, None)
        low = y[dim:].reshape(n, dim // 2).sum(axis=1)
        z = 2 * (diag.real @ _excitation_bits(n)) - 1
        return (sz, np.column_stack([2 * low.real, -2 * low.imag, z]))

    def checkpoint(t, y):
        rho = y.reshape(dim, dim)
        drift["hermiticity"] = max(drift["hermiticity"],
                                   float(np.abs(rho - rho.conj().T).max()))
        ev = float(np.linalg.eigvalsh(rho).min())
        drift["eig"] = min(drift["eig"], ev)
        if ev < EIG_FAIL:
            raise PositivityError(f"min eigenvalue {ev:.3e} at t={t:.4g}")
        if ev < EIG_WARN:
            warnings.warn(f"density matrix eigenvalue {ev:.3e} at t={t:.4g}",
                          RuntimeWarning, stacklevel=3)

    grid, samples, y_end, stats = _integrate(
        rhs, st.rho.ravel().astype(complex), t_end, n_samples, observe, rtol, atol,
        method, checkpoint, n_checkpoints if n >= 2 else 0, select=select)
    rho_end = y_end.reshape(dim, dim)
    checkpoint(t_end, y_end)
    stats.update(trace_drift=drift["trace"], hermiticity_drift=drift["hermiticity"],
                 min_eigenvalue=drift["eig"])
    return _assemble(grid, samples, "me", EnsembleState("me", n, rho=rho_end),
                     stats, keep_bloch)


def _excitation_counts(n: int) -> np.ndarray:
    """Number of excited atoms in each basis state."""
    idx = np.arange(2**n)
    return np.array([bin(i).count("1") for i in idx], dtype=float)


def _excitation_bits(n: int) -> np.ndarray:
    """``(2^n, n)`` occupation of each site in each basis state."""
    idx = np.arange(2**n)[:, None]
    return ((idx & _site_bits(n)[None, :]) != 0).astype(float)


def _assemble(grid, samples, solver, final, stats, keep_bloch):
    sz = np.array([s[0] for s in samples])
    bloch = np.array([s[1] for s in samples]) if keep_bloch else None
    return Trajectory(grid, sz, solver, bloch=bloch, final=final, meta=stats)


# ----------------------------------------------------------------------
# reduced descriptions
# ----------------------------------------------------------------------

def _rho1(bloch):
    """Single-site density matrices, shape (N, 2, 2)."""
    return 0.5 * (ID2 + np.einsum("na,aij->nij", bloch, PAULI[1:]))


def _single_generator(rho, gkk, rabi):
    """Local one-site Lindbladian acting on a stack of 2x2 matrices."""
    g = gkk[:, None, None]
    out = -0.5 * g * (NUM @ rho + rho @ NUM) + g * (SM @ rho @ SP)
    if rabi:
        X = PAULI[1]
        out = out - 1j * rabi * (X @ rho - rho @ X)
    return out


def _commutator_term(op_plus, phi):
    """``X + X^dagger`` with ``X = -[op_plus, Phi]``."""
    X = -(op_plus @ phi - phi @ op_plus)
    return X + np.conj(np.swapaxes(X, -1, -2))


def _mf_rhs(bloch, M, gkk, rabi):
    rho = _rho1(bloch)
    s = 0.5 * (bloch[:, 0] - 1j * bloch[:, 1])
    h = M @ s
    drho = _single_generator(rho, gkk, rabi) + _commutator_term(SP, h[:, None, None] * rho)
    return np.real(np.einsum("nij,aji->na", drho, PAULI[1:]))


def mf_evolve(coupling: CouplingSet, state, t_end: float, *, rabi: float = 0.0,
              n_samples: int = 400, rtol: float = 1e-8, atol: float = 1e-10,
              method: str = "DOP853", keep_bloch: bool = False) -> Trajectory:
    """Mean-field (product state) evolution of the Bloch vectors."""
    _check_coupling(coupling)
    st = encode(state, "mf")
    n = st.n
    M = _mmat(coupling)
    np.fill_diagonal(M, 0)
    gkk = np.diag(coupling.gamma).astype(float)

    def rhs(t, y):
        return _mf_rhs(y.reshape(n, 3), M, gkk, rabi).ravel()

    def observe(y):
        b = y.reshape(n, 3)
        return (float(0.5 * (1 + b[:, 2]).sum()), b.copy() if keep_bloch else None)

    grid, samples, y_end, stats = _integrate(rhs, st.bloch.ravel(), t_end, n_samples,
                                             observe, rtol, atol, method)
    final = EnsembleState("mf", n, bloch=y_end.reshape(n, 3).copy())
    return _assemble(grid, samples, "mf", final, stats, keep_bloch)


class PairClosure:
    """Right-hand side of the pair-correlation closure.

    State vector: the ``3N`` Bloch components followed by the ``9 N(N-1)/2``
    second moments ``<sigma^a_k sigma^b_l>`` (``a, b`` in x, y, z) for
    ``k < l``.  Together with the equal-site identities
    ``sigma^a sigma^b = delta_ab + i eps_abc sigma^c`` these determine every
    one- and two-point function.

    Counting: the symmetric ``3N x 3N`` second-moment matrix has
    ``3N(3N+1)/2`` entries; its ``N`` same-site ``3x3`` blocks (``6N``
    entries) are fixed by Pauli algebra and its lower triangle mirrors the
    upper one, leaving ``9 N(N-1)/2`` pair variables (see :func:`mpc_size`).
    """

    def __init__(self, coupling: CouplingSet, rabi: float = 0.0):
        n = coupling.n
        self.n = n
        self.rabi = float(rabi)
        M = _mmat(coupling)
        self.gkk = np.diag(coupling.gamma).astype(float)
        self.M_off = M - np.diag(np.diag(M))
        self.k, self.l = pair_index(n)
        self.n_pairs = self.k.size
        kk, ll = self.k, self.l
        self.m_kl = self.M_off[kk, ll]
        self.g_kl = coupling.gamma[kk, ll]
        # operators on the pair space
        self.sp1, self.sp2 = np.kron(SP, ID2), np.kron(ID2, SP)
        self.sm1, self.sm2 = np.kron(SM, ID2), np.kron(ID2, SM)
        self.n1, self.n2 = np.kron(NUM, ID2), np.kron(ID2, NUM)
        self.flip = self.sp1 @ self.sm2 + self.sm1 @ self.sp2
        self.xdrive = np.kron(PAULI[1], ID2) + np.kron(ID2, PAULI[1])

    @property
    def size(self) -> int:
        return 3 * self.n + 9 * self.n_pairs

    def pack(self, bloch, pairs) -> np.ndarray:
        return np.concatenate([np.ravel(bloch), np.ravel(pairs)])

    def unpack(self, y):
        n = self.n
        return y[:3 * n].reshape(n, 3), y[3 * n:].reshape(self.n_pairs, 3, 3)

    def pair_matrices(self, bloch, pairs) -> np.ndarray:
        """Two-site density matrices, shape (P, 4, 4)."""
        T = np.empty((self.n_pairs, 4, 4))
        T[:, 0, 0] = 1
        T[:, 1:, 0] = bloch[self.k]
        T[:, 0, 1:] = bloch[self.l]
        T[:, 1:, 1:] = pairs
        return 0.25 * np.einsum("pab,abij->pij", T, PAULI2)

    def cumulants(self, bloch, pairs) -> np.ndarray:
        """Connected correlations ``K[k, m, a, b]``, zero on the diagonal."""
        n = self.n
        K = np.zeros((n, n, 3, 3))
        conn = pairs - np.einsum("pa,pb->pab", bloch[self.k], bloch[self.l])
        K[self.k, self.l] = conn
        K[self.l, self.k] = np.swapaxes(conn, 1, 2)
        return K

    def __call__(self, t, y):
        bloch, pairs = self.unpack(y)
        k, l = self.k, self.l
        Mo = self.M_off

        s = 0.5 * (bloch[:, 0] - 1j * bloch[:, 1])
        h = Mo @ s
        K = self.cumulants(bloch, pairs)
        # c[k, m] = Tr_m(s-_m rho_km) - rho_k s_m, an operator on site k
        cm = 0.5 * (K[..., 0] - 1j * K[..., 1])              # (N, N, 3)
        c = 0.5 * np.einsum("kma,aij->kmij", cm, PAULI[1:])   # (N, N, 2, 2)
        C = np.einsum("km,kmij->kij", Mo, c)
        E = np.einsum("km,lmij->klij", Mo, c)

        # single sites
        rho1 = _rho1(bloch)
        phi1 = h[:, None, None] * rho1 + C
        d1 = _single_generator(rho1, self.gkk, self.rabi) + _commutator_term(SP, phi1)
        dbloch = np.real(np.einsum("nij,aji->na", d1, PAULI[1:]))

        # pairs
        rho2 = self.pair_matrices(bloch, pairs)
        mkl = self.m_kl[:, None, None]
        rk, rl = rho1[k], rho1[l]
        opk = C[k] - mkl * c[k, l]
        opl = C[l] - mkl * c[l, k]
        phi_k = ((h[k] - self.m_kl * s[l])[:, None, None] * rho2
                 + _kron_stack(opk, rl) + _kron_stack(rk, E[k, l]))
        phi_l = ((h[l] - self.m_kl * s[k])[:, None, None] * rho2
                 + _kron_stack(E[l, k], rl) + _kron_stack(rk, opl))

        gk = self.gkk[k][:, None, None]
        gl = self.gkk[l][:, None, None]
        Kloc = 0.5 * gk * self.n1 + 0.5 * gl * self.n2 + mkl * self.flip
        d2 = -(Kloc @ rho2) - rho2 @ np.conj(np.swapaxes(Kloc, 1, 2))
        d2 = d2 + gk * (self.sm1 @ rho2 @ self.sp1) + gl * (self.sm2 @ rho2 @ self.sp2)
        gkl = self.g_kl[:, None, None]
        d2 = d2 + gkl * (self.sm2 @ rho2 @ self.sp1 + self.sm1 @ rho2 @ self.sp2)
        if self.rabi:
            d2 = d2 - 1j * self.rabi * (self.xdrive @ rho2 - rho2 @ self.xdrive)
        d2 = d2 + _commutator_term(self.sp1, phi_k) + _commutator_term(self.sp2, phi_l)
        dpairs = np.real(np.einsum("pij,abji->pab", d2, PAULI2[1:, 1:]))
        return self.pack(dbloch, dpairs)


def mpc_size(n: int) -> int:
    """Number of real variables integrated by the pair closure."""
    return 3 * n + 3 * n * (3 * n + 1) // 2 - 6 * n


def _kron_stack(a, b):
    """Batched ``kron`` of (P, 2, 2) stacks."""
    return np.einsum("pij,pkl->pikjl", a, b).reshape(a.shape[0], 4, 4)


def mpc_evolve(coupling: CouplingSet, state, t_end: float, *, rabi: float = 0.0,
               n_samples: int = 400, rtol: float = 1e-8, atol: float = 1e-10,
               method: str = "DOP853", keep_bloch: bool = False) -> Trajectory:
    """Pair-correlation closure evolution (connected three-body terms dropped)."""
    _check_coupling(coupling)
    st = encode(state, "mpc")
    n = st.n
    rhs = PairClosure(coupling, rabi)

    def observe(y):
        b = y[:3 * n].reshape(n, 3)
        return (float(0.5 * (1 + b[:, 2]).sum()), b.copy() if keep_bloch else None)

    grid, samples, y_end, stats = _integrate(rhs, rhs.pack(st.bloch, st.pairs), t_end,
                                             n_samples, observe, rtol, atol, method)
    b, p = rhs.unpack(y_end)
    final = EnsembleState("mpc", n, bloch=b.copy(), pairs=p.copy())
    stats["n_variables"] = rhs.size
    return _assemble(grid, samples, "mpc", final, stats, keep_bloch)


def independent_evolve(gamma_total, state, t_end: float, *,
                       n_samples: int = 400, keep_bloch: bool = False,
                       **_ignored) -> Trajectory:
    """Uncoupled decay, closed form.

    ``gamma_total`` is a scalar rate, a per-atom array, or a
    :class:`CouplingSet` (its diagonal is used).
    """
    st = encode(state, "mf") if isinstance(state, PreparedState) else state
    b0 = st.bloch_vectors()
    if isinstance(gamma_total, CouplingSet):
        rates = np.diag(gamma_total.gamma)
    else:
        rates = np.broadcast_to(np.asarray(gamma_total, dtype=float), (st.n,))
    g = rates[None, :]
    t = np.linspace(0.0, t_end, n_samples)[:, None]
    pop = 0.5 * (1 + b0[:, 2])[None, :] * np.exp(-g * t)
    coh = np.exp(-0.5 * g * t)
    bloch = np.stack([b0[:, 0] * coh, b0[:, 1] * coh, 2 * pop - 1], axis=-1)
    final = EnsembleState("mf", st.n, bloch=bloch[-1].copy())
    return Trajectory(t[:, 0], pop.sum(axis=1), "independent",
                      bloch=bloch if keep_bloch else None, final=final,
                      meta={"method": "closed-form"})


SOLVERS = {"me": me_evolve, "mpc": mpc_evolve, "mf": mf_evolve,
           "independent": independent_evolve}


def evolve(solver: str, coupling: CouplingSet, state, t_end: float, **options):
    """Dispatch to one backend by name."""
    try:
        fn = SOLVERS[solver]
    except KeyError:
        raise ValueError(f"unknown solver {solver!r}; choose from {sorted(SOLVERS)}") from None
    return fn(coupling, state, t_end, **options)
