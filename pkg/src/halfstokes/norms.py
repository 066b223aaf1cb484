"""Littlewood-Paley shells, Besov/Sobolev/mixed norms and multiplier-decay probes.

Frequencies are angular wavenumbers kappa.  Half-space fields are measured through
an extension to the doubled box: "odd"/"even" extensions are measured over the
half-space (half the box integral), "zero" extensions over the whole box.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, Optional, Sequence

import numpy as np
from scipy import fft as sfft
from scipy import special

from . import fractime
from .errors import BandTooNarrow, GridMismatch, OrderOutOfRange
from .fields import GridSpec, ScalarField, TimeSeriesField, extend_array, restrict_array

log = logging.getLogger(__name__)

Extension = Optional[Literal["odd", "even", "zero"]]


# smooth cutoffs -------------------------------------------------------------------

def _smooth_step(x: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for x <= 0, 1 for x >= 1, built from exp(-1/x)."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


def eta(r: np.ndarray) -> np.ndarray:
    """Radial cutoff: 1 on r <= 1, 0 on r >= 2."""
    return 1.0 - _smooth_step(np.asarray(r, dtype=float) - 1.0)


def phi_hat(r: np.ndarray) -> np.ndarray:
    """Dyadic bump eta(r) - eta(2r), supported in 1/2 < r < 2."""
    r = np.asarray(r, dtype=float)
    return eta(r) - eta(2.0 * r)


@dataclass(frozen=True)
class DyadicPartition:
    j_min: int
    j_max: int

    def __post_init__(self):
        if self.j_max - self.j_min + 1 < 3:
            raise BandTooNarrow(f"only {self.j_max - self.j_min + 1} dyadic shells between {self.j_min} and {self.j_max}")

    @property
    def shells(self) -> range:
        return range(self.j_min, self.j_max + 1)

    def phi(self, j: int, kabs: np.ndarray) -> np.ndarray:
        return phi_hat(kabs * 2.0**-j)

    def psi(self, kabs: np.ndarray) -> np.ndarray:
        return eta(kabs)

    def Phi(self, j: int, kabs: np.ndarray) -> np.ndarray:
        """Fattened shell symbol phi_{j-1} + phi_j + phi_{j+1}, equal to 1 on supp phi_j."""
        return sum(self.phi(i, kabs) for i in (j - 1, j, j + 1))

    def covers(self, kabs: np.ndarray) -> np.ndarray:
        k = np.asarray(kabs)
        return (k >= 2.0**self.j_min) & (k <= 2.0**self.j_max)


def build_dyadic_partition(j_min: int, j_max: int) -> DyadicPartition:
    if not j_min < 0 < j_max:
        raise BandTooNarrow(f"need j_min < 0 < j_max, got ({j_min}, {j_max})")
    return DyadicPartition(int(j_min), int(j_max))


def kabs_grid(shape: Sequence[int], spacings: Sequence[float]) -> np.ndarray:
    ks = [2 * np.pi * np.fft.fftfreq(N, h) for N, h in zip(shape, spacings)]
    mesh = np.meshgrid(*ks, indexing="ij", sparse=True)
    return np.sqrt(sum(k**2 for k in mesh))


def partition_for(shape: Sequence[int], spacings: Sequence[float]) -> DyadicPartition:
    """Smallest partition whose band covers every nonzero resolved frequency."""
    k = kabs_grid(shape, spacings)
    kmin = k[k > 0].min()
    kmax = k.max()
    j_min = min(int(math.floor(math.log2(kmin))), -1)
    j_max = max(int(math.ceil(math.log2(kmax))), 1)
    return build_dyadic_partition(j_min, j_max)


@dataclass(frozen=True)
class NormSpec:
    alpha: float
    p: float = 2.0
    q: float = 2.0
    homogeneous: bool = True
    domain: Literal["full", "halfspace"] = "full"

    def __post_init__(self):
        if not (1 < self.p < math.inf and 1 < self.q < math.inf):
            raise OrderOutOfRange(f"need 1 < p, q < inf, got p={self.p}, q={self.q}")


# field plumbing ----------------------------------------------------------------------

def _as_box(f, extension: Extension) -> tuple[np.ndarray, tuple[float, ...], float]:
    """Return (doubled-box array, spacings, measure factor)."""
    if isinstance(f, ScalarField):
        g = f.grid
        if f.full:
            return f.samples, g.spacings, 1.0
        ext = extension or "even"
        return extend_array(f.samples, ext), g.spacings, 1.0 if ext == "zero" else 0.5
    raise GridMismatch(f"unsupported field type {type(f).__name__}")


def lp_norm(a: np.ndarray, p: float, cell: float, factor: float = 1.0) -> float:
    return float((factor * cell * np.sum(np.abs(a) ** p)) ** (1.0 / p))


def sobolev_symbol(kabs: np.ndarray, alpha: float, homogeneous: bool) -> np.ndarray:
    if alpha == 0:
        return np.ones_like(kabs)
    if homogeneous:
        with np.errstate(divide="ignore"):
            s = np.where(kabs > 0, np.where(kabs > 0, kabs, 1.0) ** alpha, 0.0)
        return s
    return (1.0 + kabs**2) ** (alpha / 2)


@lru_cache(maxsize=32)
def _kabs_r(shape: tuple[int, ...], spacings: tuple[float, ...]) -> np.ndarray:
    ks = [2 * np.pi * np.fft.fftfreq(N, h) for N, h in zip(shape[:-1], spacings[:-1])]
    ks.append(2 * np.pi * np.fft.rfftfreq(shape[-1], spacings[-1]))
    mesh = np.meshgrid(*ks, indexing="ij", sparse=True)
    return np.sqrt(sum(k**2 for k in mesh))


def apply_radial(a: np.ndarray, spacings: Sequence[float], symbol: np.ndarray | None = None, rule=None) -> np.ndarray:
    """Apply a real radial symbol to the trailing len(spacings) axes of ``a``."""
    d = len(spacings)
    shape = a.shape[-d:]
    kr = _kabs_r(tuple(shape), tuple(spacings))
    sym = symbol if symbol is not None else rule(kr)
    axes = tuple(range(a.ndim - d, a.ndim))
    return sfft.irfftn(sym * sfft.rfftn(a, axes=axes), s=shape, axes=axes)


def sobolev_norm(f, alpha: float, p: float = 2.0, homogeneous: bool = True, extension: Extension = None) -> float:
    a, sp, fac = _as_box(f, extension)
    cell = float(np.prod(sp))
    if alpha == 0:
        return lp_norm(a, p, cell, fac)
    b = apply_radial(a, sp, rule=lambda k: sobolev_symbol(k, alpha, homogeneous))
    return lp_norm(b, p, cell, fac)


def _shells(a: np.ndarray, spacings: Sequence[float], part: DyadicPartition):
    d = len(spacings)
    shape = a.shape[-d:]
    kr = _kabs_r(tuple(shape), tuple(spacings))
    axes = tuple(range(a.ndim - d, a.ndim))
    A = sfft.rfftn(a, axes=axes)
    for j in part.shells:
        yield j, sfft.irfftn(part.phi(j, kr) * A, s=shape, axes=axes)


def littlewood_paley_pieces(f: ScalarField, partition: DyadicPartition | None = None, extension: Extension = "zero"):
    a, sp, _ = _as_box(f, extension)
    part = partition or partition_for(a.shape, sp)
    return list(_shells(a, sp, part))


def besov_array(a: np.ndarray, spacings: Sequence[float], alpha: float, p: float, q: float,
                homogeneous: bool = True, partition: DyadicPartition | None = None, factor: float = 1.0) -> float:
    part = partition or partition_for(a.shape[-len(spacings):], spacings)
    cell = float(np.prod(spacings))
    total = 0.0
    for j, piece in _shells(a, spacings, part):
        if not homogeneous and j <= 0:
            continue
        total += (2.0 ** (alpha * j) * lp_norm(piece, p, cell, factor)) ** q
    if not homogeneous:
        low = apply_radial(a, spacings, rule=part.psi)
        total += lp_norm(low, p, cell, factor) ** q
    return float(total ** (1.0 / q))


def besov_norm(f, spec: NormSpec, partition: DyadicPartition | None = None) -> float:
    ext: Extension = "zero" if spec.domain == "halfspace" else None
    a, sp, fac = _as_box(f, ext)
    return besov_array(a, sp, spec.alpha, spec.p, spec.q, spec.homogeneous, partition, fac)


def difference_constant(n: int, alpha: float) -> float:
    """int_{R^n} (1 - cos y_1) |y|^(-n-2 alpha) dy."""
    return math.pi ** (n / 2) * special.gamma(1 - alpha) / (alpha * 4.0**alpha * special.gamma(n / 2 + alpha))


def _directions(n: int, count: int) -> np.ndarray:
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        th = 2 * np.pi * (np.arange(count) + 0.5) / count
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    # Fibonacci sphere, antipodally symmetric
    half = count // 2
    i = np.arange(half) + 0.5
    z = 1 - i / half
    r = np.sqrt(1 - z**2)
    th = np.pi * (1 + 5**0.5) * i
    d = np.stack([r * np.cos(th), r * np.sin(th), z], axis=1)
    return np.concatenate([d, -d])


def besov_norm_differences(f, alpha: float, p: float = 2.0, q: float = 2.0, extension: Extension = "zero",
                           n_radii: int = 40, n_dirs: int = 64) -> float:
    """Difference-quotient Besov seminorm, normalised to match Plancherel at p = q = 2.

    (int ||f(.+y) - f||_p^q |y|^(-n - alpha q) dy)^(1/q) / (2 C(n, alpha))^(1/q), with
    shifts applied spectrally along sampled directions and log-spaced radii.
    Radii below the grid spacing use the gradient limit; the far tail uses
    ||f(.+y) - f||_p^p -> 2 ||f - mean||_p^p, the average over shifts in the periodic box.
    """
    if not 0 < alpha < 1:
        raise OrderOutOfRange(f"alpha = {alpha} not in (0, 1)")
    a, sp, fac = _as_box(f, extension)
    d = a.ndim
    cell = float(np.prod(sp))
    if not np.any(a):
        return 0.0
    ks = [2 * np.pi * np.fft.fftfreq(N, h) for N, h in zip(a.shape, sp)]
    K = np.meshgrid(*ks, indexing="ij", sparse=True)
    A = sfft.fftn(a)
    dirs = _directions(d, n_dirs)
    r_min = 0.25 * min(sp)
    r_max = 0.5 * min(N * h for N, h in zip(a.shape, sp))
    x, w = np.polynomial.legendre.leggauss(n_radii)
    s = 0.5 * (x + 1) * (math.log(r_max) - math.log(r_min)) + math.log(r_min)
    ws = 0.5 * w * (math.log(r_max) - math.log(r_min))
    sphere = 2 * math.pi ** (d / 2) / special.gamma(d / 2)
    total = 0.0
    grad_term = 0.0
    power = np.abs(A) ** 2 * (fac * cell / a.size)
    for e in dirs:
        kd = sum(ki * ei for ki, ei in zip(K, e))
        if p == 2:
            # Parseval: ||f(. + y) - f||_2^2 = sum |exp(i k.y) - 1|^2 |A|^2, no inverse transform needed
            grad_term += float(np.sum(kd**2 * power)) ** (q / 2)
        else:
            grad_term += lp_norm(sfft.ifftn(1j * kd * A).real, p, cell, fac) ** q
        for si, wi in zip(s, ws):
            r = math.exp(si)
            if p == 2:
                dn = float(np.sum(2.0 * (1.0 - np.cos(kd * r)) * power)) ** 0.5
            else:
                dn = lp_norm(sfft.ifftn((np.exp(1j * kd * r) - 1.0) * A).real, p, cell, fac)
            total += wi * dn**q * r ** (-alpha * q)
    avg = sphere / len(dirs)
    total *= avg
    total += avg * grad_term * r_min ** (q * (1 - alpha)) / (q * (1 - alpha))
    tail = (2.0 * lp_norm(a - a.mean(), p, cell, fac) ** p) ** (q / p)
    total += sphere * tail * r_max ** (-alpha * q) / (alpha * q)
    return float((total / (2 * difference_constant(d, alpha))) ** (1.0 / q))


# time-space norms ----------------------------------------------------------------------

def _lp_per_time(data: np.ndarray, grid: GridSpec, p: float, full: bool) -> np.ndarray:
    """||u(., t_k)||_p for a (M, rank, *shape) array, components summed in l^p."""
    cell = grid.cell_volume
    if full:
        s = np.sum(np.abs(data) ** p, axis=tuple(range(1, data.ndim)))
    else:
        w = np.ones(data.shape[-1])
        w[0] = w[-1] = 0.5
        s = np.tensordot(np.sum(np.abs(data) ** p, axis=tuple(range(1, data.ndim - 1))), w, axes=(1, 0))
    return (cell * s) ** (1.0 / p)


def time_lq(values: np.ndarray, q: float, dt: float, start: int = 0) -> float:
    """(int |values|^q dt)^(1/q) by the trapezoid rule over samples start..end."""
    v = np.abs(values[start:]) ** q
    return float(np.trapezoid(v, dx=dt) ** (1.0 / q)) if v.size > 1 else 0.0


def sobolev_series(u: TimeSeriesField, alpha: float, p: float, homogeneous: bool = True,
                   extension: Extension = "even") -> np.ndarray:
    """Per-time ||u(., t_k)||_{H^alpha_p}, vector components combined in l^p."""
    g = u.grid
    out = np.zeros(u.time.N_t + 1)
    for k in range(u.time.N_t + 1):
        acc = 0.0
        for i in range(u.rank):
            f = ScalarField(g, u.data[k, i], u.full)
            acc += sobolev_norm(f, alpha, p, homogeneous, extension) ** p
        out[k] = acc ** (1.0 / p)
    return out


def mixed_aniso_terms(u: TimeSeriesField, alpha: float, p: float = 2.0, q: float = 2.0,
                      homogeneous: bool = True, extension: Extension = "odd", skip: int = 2) -> tuple[float, float]:
    """Return (time term, space term) of the H^{alpha, alpha/2}_{p,q} norm, each to the power 1."""
    if not 0 <= alpha <= 2:
        raise OrderOutOfRange(f"alpha = {alpha} not in [0, 2]")
    dt = u.time.dt
    Dt = u.data if alpha == 0 else fractime.derivative(u.data, alpha / 2, dt, axis=0)
    t_term = time_lq(_lp_per_time(Dt, u.grid, p, u.full), q, dt, skip)
    s_term = time_lq(sobolev_series(u, alpha, p, homogeneous, extension), q, dt, skip)
    return t_term, s_term


def mixed_aniso_norm(u: TimeSeriesField, alpha: float, p: float = 2.0, q: float = 2.0,
                     homogeneous: bool = True, extension: Extension = "odd", skip: int = 2) -> float:
    """(int ||D_t^{alpha/2} u||_p^q dt + int ||u||_{H^alpha_p}^q dt)^(1/q), first ``skip`` samples excluded."""
    t_term, s_term = mixed_aniso_terms(u, alpha, p, q, homogeneous, extension, skip)
    return float((t_term**q + s_term**q) ** (1.0 / q))


def _proxy_filtered(u: TimeSeriesField, alpha: float, comp: int) -> np.ndarray:
    """Filtered component on interior times t_1..t_{N_t-1}, zero-extended in space."""
    g = u.grid
    M = u.time.N_t
    a = u.data[1:M, comp]
    if not u.full:
        a = extend_array(a, "zero")
    expo = (alpha - 2) / 4
    if expo == 0:
        return a
    kr = _kabs_r(g.full_shape, g.spacings)
    axes = tuple(range(1, g.n + 1))
    S = sfft.rfftn(a, axes=axes)
    S = sfft.dst(S, type=1, axis=0, norm="ortho")
    omega = (np.pi / u.time.T) * np.arange(1, M).reshape((M - 1,) + (1,) * g.n)
    base = kr**4 + omega**2
    S *= base**expo
    S = sfft.idst(S, type=1, axis=0, norm="ortho")
    return sfft.irfftn(S, s=g.full_shape, axes=axes)


def negative_norm_proxy(u: TimeSeriesField, alpha: float, p: float = 2.0, q: float = 2.0) -> float:
    """L^q_t L^p_x norm of (|kappa|^4 + omega^2)^((alpha-2)/4) applied to u.

    Space: zero extension to the doubled box.  Time: odd periodisation over
    [0, 2T] (sine series), which pins the t = 0 and t = T samples to zero.
    """
    g = u.grid
    cell = g.cell_volume
    acc = np.zeros(u.time.N_t - 1)
    for i in range(u.rank):
        b = _proxy_filtered(u, alpha, i)
        acc += cell * np.sum(np.abs(b) ** p, axis=tuple(range(1, b.ndim)))
    per_t = acc ** (1.0 / p)
    return float((u.time.dt * np.sum(per_t**q)) ** (1.0 / q))


def negative_norm_spectral(u: TimeSeriesField, alpha: float) -> float:
    """p = q = 2 value of the proxy computed directly from sine/Fourier coefficients."""
    g = u.grid
    M = u.time.N_t
    kr = _kabs_r(g.full_shape, g.spacings)
    axes = tuple(range(1, g.n + 1))
    omega = (np.pi / u.time.T) * np.arange(1, M).reshape((M - 1,) + (1,) * g.n)
    expo = (alpha - 2) / 4
    w = np.ones(kr.shape[-1])
    w[1 : (g.N + 1) // 2] = 2.0  # rfft half-spectrum multiplicity
    total = 0.0
    for i in range(u.rank):
        a = u.data[1:M, i]
        if not u.full:
            a = extend_array(a, "zero")
        S = sfft.dst(sfft.rfftn(a, axes=axes, norm="ortho"), type=1, axis=0, norm="ortho")
        sym = (kr**4 + omega**2) ** expo if expo != 0 else 1.0
        total += float(np.sum(w * np.abs(sym * S) ** 2))
    return float(math.sqrt(u.time.dt * g.cell_volume * total))


# multiplier decay probes -----------------------------------------------------------

def make_probe_set(grid: GridSpec, j: int, count: int = 8, seed: int = 0, p: float = 2.0) -> np.ndarray:
    """Unit-L^p random fields on the doubled box with spectrum inside shell j."""
    sp = grid.spacings
    shape = grid.full_shape
    kabs = kabs_grid(shape, sp)
    if 2.0 ** (j + 1) > kabs.max() or 2.0 ** (j - 1) < kabs[kabs > 0].min():
        raise BandTooNarrow(f"shell {j} is not resolved on this grid")
    rng = np.random.default_rng(seed)
    out = np.empty((count,) + shape)
    shell = phi_hat(kabs * 2.0**-j)
    cell = grid.cell_volume
    for i in range(count):
        noise = rng.standard_normal(shape)
        f = sfft.ifftn(shell * sfft.fftn(noise)).real
        out[i] = f / lp_norm(f, p, cell)
    return out


def decay_symbol(kabs: np.ndarray, j: int, t: float, kind: Literal["heat", "frac_heat"], sigma: float = 0.5) -> np.ndarray:
    part = DyadicPartition(j - 2, j + 2)
    rho = part.Phi(j, kabs) * np.exp(-t * kabs**2)
    if kind == "heat":
        return rho
    if kind == "frac_heat":
        # |k|^2 int_t^inf exp(-s|k|^2) (s - t)^-sigma ds = Gamma(1 - sigma) |k|^(2 sigma) exp(-t|k|^2)
        return special.gamma(1 - sigma) * kabs ** (2 * sigma) * rho
    raise ValueError(f"unknown probe kind {kind!r}")


def multiplier_decay_probe(grid: GridSpec, j: int, t: float, kind: Literal["heat", "frac_heat"],
                           probe_set: np.ndarray, p: float = 2.0, sigma: float = 0.5) -> float:
    if t < 0:
        raise ValueError("t must be nonnegative")
    kabs = kabs_grid(grid.full_shape, grid.spacings)
    sym = decay_symbol(kabs, j, t, kind, sigma)
    cell = grid.cell_volume
    ratios = []
    for f in probe_set:
        g = sfft.ifftn(sym * sfft.fftn(f)).real
        ratios.append(lp_norm(g, p, cell) / lp_norm(f, p, cell))
    return float(max(ratios))


def decay_table(grid: GridSpec, shells: Sequence[int], kind: Literal["heat", "frac_heat"], sigma: float = 0.5,
                s_values: Sequence[float] | None = None, count: int = 8, seed: int = 0, p: float = 2.0) -> dict:
    """Probe ratios over s = t 2^(2j) and the fitted slope of log ratio vs s per shell."""
    s_values = np.asarray(s_values if s_values is not None else np.linspace(1.0, 16.0, 16))
    rows, slopes = [], {}
    for j in shells:
        probes = make_probe_set(grid, j, count, seed + 1000 * j, p)
        scale = 2.0 ** (2 * sigma * j) if kind == "frac_heat" else 1.0
        logs = []
        for s in s_values:
            r = multiplier_decay_probe(grid, j, float(s) * 4.0**-j, kind, probes, p, sigma) / scale
            rows.append({"j": j, "s": float(s), "ratio": r})
            logs.append(math.log(r))
        slopes[j] = float(np.polyfit(s_values, logs, 1)[0])
    return {"kind": kind, "sigma": sigma, "rows": rows, "slopes": slopes}


def trace_probe(g: np.ndarray, grid: GridSpec, alpha: float, p: float = 2.0) -> tuple[float, float]:
    """Return (boundary Besov norm of order alpha - 1/p, Sobolev norm of the harmonic extension)."""
    from .fields import BoundaryField
    from .transforms import poisson_extend

    w = poisson_extend(BoundaryField(grid, g))
    sp = grid.spacings[:-1]
    b = besov_array(g, sp, alpha - 1.0 / p, p, p)
    s = sobolev_norm(w, alpha, p, True, "even")
    return b, s
