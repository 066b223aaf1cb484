"""Fourier-multiplier engine and the spatial integral operators built on it.

Wavenumbers are angular (kappa = 2*pi*frequency), so the symbol 4*pi^2|xi|^2 of
the ordinary-frequency convention is |kappa|^2 here.  All operators act on the
doubled periodic box; half-space inputs are extended first.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Literal, Optional, Sequence

import numpy as np
from scipy import fft as sfft

from .errors import GridMismatch, NegativeTime, SymbolSingularity
from .fields import (
    BoundaryField,
    GridSpec,
    ScalarField,
    TimeSeriesField,
    extend_array,
    reflect_array,
    restrict_array,
)

log = logging.getLogger(__name__)

Wavevector = Sequence[np.ndarray]


def flip_index(a: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """Return a(-k) for a spectrum stored in FFT order along ``axes``."""
    out = np.flip(a, axis=tuple(axes))
    return np.roll(out, 1, axis=tuple(axes))


def hermitian_part(m: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """Replace m by (m(k) + conj m(-k))/2; only Nyquist planes change for Hermitian symbols."""
    return 0.5 * (m + np.conj(flip_index(m, axes)))


def fd4_derivative(a: np.ndarray, grid: GridSpec, j: int) -> np.ndarray:
    """Fourth-order centred d/dx_j of a (..., *half) array, zero-extended in x_n.

    Equal to the fd4 symbol applied on the doubled box, evaluated in real space.
    """
    n = grid.n
    ax = a.ndim - n + j
    if j == n - 1:
        pad = [(0, 0)] * a.ndim
        pad[ax] = (2, 2)
        b = np.pad(a, pad)
        sl = lambda o: b[(slice(None),) * ax + (slice(2 + o, b.shape[ax] - 2 + o),)]
        h = grid.h_nrm
        return (8 * (sl(1) - sl(-1)) - (sl(2) - sl(-2))) / (12 * h)
    h = grid.h_tan
    r = lambda o: np.roll(a, -o, axis=ax)
    return (8 * (r(1) - r(-1)) - (r(2) - r(-2))) / (12 * h)


class SpectralGrid:
    """Cached wavenumber tables for one grid."""

    def __init__(self, grid: GridSpec):
        self.grid = grid
        n, N = grid.n, grid.N
        self.kt = 2 * np.pi * np.fft.fftfreq(N, grid.h_tan)
        self.kt_d = self.kt.copy()
        self.kt_d[N // 2] = 0.0  # odd symbols vanish on the Nyquist plane
        self.kn = 2 * np.pi * np.fft.fftfreq(N, grid.h_nrm)
        self.kn_r = 2 * np.pi * np.fft.rfftfreq(N, grid.h_nrm)
        # full-box wavevector in complex layout
        self.K = [self._axis(self.kt, j, n) for j in range(n - 1)] + [self._axis(self.kn, n - 1, n)]
        # full-box wavevector in real-to-complex layout (last axis halved)
        self.Kr = self.K[:-1] + [self._axis(self.kn_r, n - 1, n)]
        # tangential-only wavevector, shaped for (N,)*(n-1) boundary arrays
        self.Kb = [self._axis(self.kt, j, n - 1) for j in range(n - 1)]
        self.kabs_b = np.sqrt(sum(k**2 for k in self.Kb))
        self.tan_axes = tuple(range(n - 1))
        self.axes = tuple(range(n))

    @staticmethod
    def _axis(k: np.ndarray, j: int, ndim: int) -> np.ndarray:
        shape = [1] * ndim
        shape[j] = k.size
        return k.reshape(shape)

    def k2_full(self) -> np.ndarray:
        return sum(k**2 for k in self.K)

    def k2_r(self) -> np.ndarray:
        return sum(k**2 for k in self.Kr)

    def kt_abs_r(self) -> np.ndarray:
        """|kappa'| broadcast against the real-to-complex layout."""
        return self.kabs_b[..., None]

    def deriv_r(self, j: int) -> np.ndarray:
        """Hermitian-consistent i*kappa_j in real-to-complex layout (zero on the Nyquist plane)."""
        n = self.grid.n
        if j == n - 1:
            k = self.kn_r.copy()
            k[-1] = 0.0
            return 1j * self._axis(k, j, n)
        return 1j * self._axis(self.kt_d, j, n)

    def fd4_r(self, j: int) -> np.ndarray:
        """Symbol of the fourth-order centred difference d/dx_j (real-to-complex layout)."""
        n = self.grid.n
        if j == n - 1:
            k, h = self.kn_r, self.grid.h_nrm
        else:
            k, h = self.kt, self.grid.h_tan
        sym = 1j * (8 * np.sin(k * h) - np.sin(2 * k * h)) / (6 * h)
        return self._axis(sym, j, n)

    def deriv_b(self, j: int) -> np.ndarray:
        return 1j * self._axis(self.kt_d, j, self.grid.n - 1)

    def riesz_b(self, j: int) -> np.ndarray:
        """Tangential Riesz symbol -i kappa_j/|kappa'| on the boundary grid, DC zeroed."""
        k = np.where(self.kabs_b > 0, self.kabs_b, 1.0)
        return np.where(self.kabs_b > 0, -self.deriv_b(j) / k, 0.0)

    # transforms --------------------------------------------------------------
    def rfftn(self, a: np.ndarray) -> np.ndarray:
        return sfft.rfftn(a, axes=tuple(range(a.ndim - self.grid.n, a.ndim)))

    def irfftn(self, a: np.ndarray) -> np.ndarray:
        n = self.grid.n
        return sfft.irfftn(a, s=self.grid.full_shape, axes=tuple(range(a.ndim - n, a.ndim)))

    def fft_tan(self, a: np.ndarray, last_is_normal: bool = True) -> np.ndarray:
        off = 1 if last_is_normal else 0
        n1 = self.grid.n - 1
        return sfft.fftn(a, axes=tuple(range(a.ndim - n1 - off, a.ndim - off)))

    def ifft_tan(self, a: np.ndarray, last_is_normal: bool = True) -> np.ndarray:
        off = 1 if last_is_normal else 0
        n1 = self.grid.n - 1
        return sfft.ifftn(a, axes=tuple(range(a.ndim - n1 - off, a.ndim - off))).real

    def trace_hat(self, X: np.ndarray) -> np.ndarray:
        """Tangential spectrum of the x_n = 0 trace of a field given by its rfftn spectrum X."""
        N = self.grid.N
        s1 = X.sum(axis=-1)
        s2 = X[..., 1 : N // 2].sum(axis=-1)
        n1 = self.grid.n - 1
        axes = tuple(range(s2.ndim - n1, s2.ndim))
        return (s1 + np.conj(flip_index(s2, axes))) / N

    def reflect_hat(self, X: np.ndarray) -> np.ndarray:
        """rfftn spectrum of the x_n-reflection of the field with spectrum X."""
        n1 = self.grid.n - 1
        axes = tuple(range(X.ndim - 1 - n1, X.ndim - 1))
        return np.conj(flip_index(X, axes))

    def poisson_factor(self) -> np.ndarray:
        """exp(-x_n |kappa'|) on (tangential spectrum) x (half-space normal samples)."""
        return np.exp(-self.kabs_b[..., None] * self.grid.normal_coords())

    def poisson(self, gh: np.ndarray) -> np.ndarray:
        """Harmonic extension of boundary data given by its tangential spectrum."""
        return self.ifft_tan(gh[..., None] * self.poisson_factor())


@lru_cache(maxsize=16)
def spectral(grid: GridSpec) -> SpectralGrid:
    return SpectralGrid(grid)


# generic multipliers -----------------------------------------------------------

@dataclass(frozen=True)
class MultiplierSymbol:
    """Symbol m(kappa) evaluated on angular wavevectors.

    ``rule`` receives the list of broadcastable wavevector components.  ``singular``
    optionally flags points of the declared singular set.  ``dc`` is "zero" (the
    DC coefficient is dropped) or "preserve" (the DC coefficient passes unchanged).
    """

    rule: Callable[[Wavevector], np.ndarray]
    singular: Optional[Callable[[Wavevector], np.ndarray]] = None
    dc: Literal["zero", "preserve"] = "zero"
    name: str = ""


def symbol_values(grid: GridSpec, m: MultiplierSymbol) -> np.ndarray:
    sg = spectral(grid)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        vals = np.broadcast_to(np.asarray(m.rule(sg.K), dtype=complex), grid.full_shape).copy()
    bad = ~np.isfinite(vals)
    if m.singular is not None:
        bad |= np.broadcast_to(np.asarray(m.singular(sg.K), dtype=bool), grid.full_shape)
    bad[(0,) * grid.n] = False
    if bad.any():
        idx = tuple(int(i[0]) for i in np.nonzero(bad))
        raise SymbolSingularity(f"symbol {m.name or '?'} singular at resolved frequency index {idx}")
    vals[(0,) * grid.n] = 0.0 if m.dc == "zero" else 1.0
    return hermitian_part(vals, range(grid.n))


def apply_multiplier(f: ScalarField, m: MultiplierSymbol) -> ScalarField:
    if not f.full:
        raise GridMismatch("apply_multiplier expects a field on the doubled box")
    vals = symbol_values(f.grid, m)
    out = sfft.ifftn(vals * sfft.fftn(f.samples))
    resid = np.linalg.norm(out.imag)
    if resid > 1e-10 * max(np.linalg.norm(f.samples), 1e-300):
        log.warning("multiplier %s left imaginary residue %.3e", m.name, resid)
    return ScalarField(f.grid, out.real, full=True)


def _riesz_rule(i: int):
    def rule(K):
        k = np.sqrt(sum(kk**2 for kk in K))
        return -1j * K[i] / k
    return rule


def riesz_full(f: ScalarField, i: int) -> ScalarField:
    return apply_multiplier(f, MultiplierSymbol(_riesz_rule(i), dc="zero", name=f"R{i}"))


def _slice_multiplier(a: np.ndarray, grid: GridSpec, sym_b: np.ndarray) -> np.ndarray:
    sg = spectral(grid)
    sym = hermitian_part(sym_b, range(grid.n - 1))
    return sg.ifft_tan(sym[..., None] * sg.fft_tan(a))


def riesz_tan_array(a: np.ndarray, grid: GridSpec, i: int) -> np.ndarray:
    return _slice_multiplier(a, grid, spectral(grid).riesz_b(i))


def riesz_tan(f: ScalarField, i: int) -> ScalarField:
    if not 0 <= i < f.grid.n - 1:
        raise GridMismatch(f"tangential index {i} out of range")
    return ScalarField(f.grid, riesz_tan_array(f.samples, f.grid, i), f.full)


def hilbert_array(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Periodic discrete Hilbert transform, symbol -i sign(omega), DC and Nyquist zeroed."""
    X = sfft.rfft(x, axis=axis)
    M = x.shape[axis]
    h = np.full(X.shape[axis], -1j)
    h[0] = 0.0
    if M % 2 == 0:
        h[-1] = 0.0
    shape = [1] * x.ndim
    shape[axis] = -1
    return sfft.irfft(X * h.reshape(shape), n=M, axis=axis)


def hilbert_time(f: TimeSeriesField) -> TimeSeriesField:
    """Hilbert transform in t, treating [0, T) as one period (sample N_t repeats sample 0)."""
    body = hilbert_array(f.data[:-1], axis=0)
    return TimeSeriesField(f.grid, f.time, np.concatenate([body, body[:1]]), f.full)


def singular_transform(f, kind: Literal["riesz_full", "riesz_tan", "hilbert_time"], i: int = 0):
    if kind == "riesz_full":
        return riesz_full(f, i)
    if kind == "riesz_tan":
        return riesz_tan(f, i)
    if kind == "hilbert_time":
        return hilbert_time(f)
    raise ValueError(f"unknown transform {kind!r}")


# kernel operators ---------------------------------------------------------------

def poisson_extend(g: BoundaryField, kind: Literal["halfspace"] = "halfspace") -> ScalarField:
    sg = spectral(g.grid)
    return ScalarField(g.grid, sg.poisson(sg.fft_tan(g.samples, last_is_normal=False)))


def _heat_full(a: np.ndarray, grid: GridSpec, t: float) -> np.ndarray:
    sg = spectral(grid)
    return sg.irfftn(np.exp(-t * sg.k2_r()) * sg.rfftn(a))


def heat_semigroup(f: ScalarField, t: float, mode: Literal["full", "dirichlet", "reflected"] = "full") -> ScalarField:
    if t < 0:
        raise NegativeTime(f"t = {t} < 0")
    if mode == "full":
        if not f.full:
            raise GridMismatch("full mode expects a doubled-box field")
        return ScalarField(f.grid, _heat_full(f.samples, f.grid, t), full=True)
    if f.full:
        raise GridMismatch(f"{mode} mode expects a half-space field")
    if mode == "dirichlet":
        a = extend_array(f.samples, "odd")
    elif mode == "reflected":
        a = reflect_array(extend_array(f.samples, "zero"))
    else:
        raise ValueError(f"unknown heat mode {mode!r}")
    return ScalarField(f.grid, restrict_array(_heat_full(a, f.grid, t)))


def exponential_weights(lam: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(E, w0, w1) with int_0^dt exp(-lam (dt - s)) f(s) ds = w0 f(0) + w1 f(dt) for linear f.

    With z = lam dt: w0 = dt B(z), w1 = dt (A(z) - B(z)), A = (1 - e^-z)/z and
    B = (1 - (1 + z) e^-z)/z^2.  Small z uses Taylor series (A -> 1, B -> 1/2,
    the trapezoid rule); large z gives w1 -> 1/lam, the quasi-static response.
    """
    z = np.asarray(lam, dtype=float) * dt
    E = np.exp(-z)
    small = z < 1e-2
    zs = np.where(small, 1.0, z)
    A = np.where(small, 1 - z / 2 + z**2 / 6 - z**3 / 24, -np.expm1(-zs) / zs)
    B = np.where(small, 0.5 - z / 6 + z**2 / 24 - z**3 / 120, (-np.expm1(-zs) - zs * np.exp(-zs)) / zs**2)
    return E, dt * B, dt * (A - B)


def duhamel_spectra(F_hat_steps, lam: np.ndarray, dt: float):
    """Yield Duhamel spectra U_k = int_0^{t_k} exp(-lam (t_k - s)) F(s) ds, F piecewise linear in time.

    Recursion: U_k = E U_{k-1} + w0 F_{k-1} + w1 F_k (exponential_weights), exact
    for piecewise-linear forcing at every stiffness lam dt.
    """
    E, w0, w1 = exponential_weights(lam, dt)
    U = None
    prev = None
    for Fh in F_hat_steps:
        if U is None:
            U = np.zeros_like(Fh)
        else:
            U = E * U + w0 * prev + w1 * Fh
        prev = Fh
        yield U


def duhamel_heat(f: TimeSeriesField, mode: Literal["direct", "dirichlet", "reflected"] = "direct") -> TimeSeriesField:
    """Volume heat potential of a forcing history.

    Half-space input is zero-extended (direct/reflected) or odd-extended
    (dirichlet) and the result restricted; doubled-box input stays on the box.
    """
    grid, time = f.grid, f.time
    sg = spectral(grid)
    lam = sg.k2_r()

    def prepare(a):
        if f.full:
            if mode == "dirichlet":
                a = a - reflect_array(a)
            elif mode == "reflected":
                a = reflect_array(a)
            return a
        if mode == "dirichlet":
            return extend_array(a, "odd")
        a = extend_array(a, "zero")
        return reflect_array(a) if mode == "reflected" else a

    if mode not in ("direct", "dirichlet", "reflected"):
        raise ValueError(f"unknown Duhamel mode {mode!r}")
    steps = (sg.rfftn(prepare(f.data[k])) for k in range(time.N_t + 1))
    out = np.empty(f.data.shape)
    for k, U in enumerate(duhamel_spectra(steps, lam, time.dt)):
        u = sg.irfftn(U)
        out[k] = u if f.full else restrict_array(u)
    return TimeSeriesField(grid, time, out, f.full)


def newtonian_dirichlet(g: ScalarField) -> ScalarField:
    """Solve Lap w = g on the half-space box with w = 0 on x_n = 0 (DC mode zeroed)."""
    sg = spectral(g.grid)
    k2 = sg.k2_r()
    inv = np.where(k2 > 0, -1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    a = extend_array(g.samples, "odd")
    return ScalarField(g.grid, restrict_array(sg.irfftn(inv * sg.rfftn(a))))


def calI_symbol(grid: GridSpec) -> np.ndarray:
    """Tangential symbol -1/(2|kappa'|) of the single-layer operator, DC zeroed."""
    k = spectral(grid).kabs_b
    return np.where(k > 0, -0.5 / np.where(k > 0, k, 1.0), 0.0)


def calI_array(a: np.ndarray, grid: GridSpec) -> np.ndarray:
    return _slice_multiplier(a, grid, calI_symbol(grid).astype(complex))


def calI_tangential(g: ScalarField) -> ScalarField:
    return ScalarField(g.grid, calI_array(g.samples, g.grid), g.full)
