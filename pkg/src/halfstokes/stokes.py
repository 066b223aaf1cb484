"""Explicit solution operators for the non-stationary Stokes system in a half-space.

Forced problem (zero initial data).  With f~ the zero extension of f and
Uf = Duhamel(f~), U*f = Duhamel of the x_n-reflection of f~:

    u_i = Uf_i - U*f_i                     (Dirichlet heat potential)
    g   = sum_{j<n} d_j U*f_j,   psi = I g (tangential single layer, symbol -1/(2|k'|))
    w   = layered solution of (d_n + |k'|) w = psi, w(x_n = 0) = 0
    v_i = u_i + 4 d_i w (i < n),   v_n = u_n + 4 d_n w - 4 psi = u_n - 4 |k'| w
    p   = P[2 sum_j d_j gamma Uf_j + 2 sum_j R'_j gamma(-d_n Uf_j)]

with gamma the x_n = 0 trace and P the Poisson extension.  Initial problem
(zero force) follows Ukai's formula with the -i k/|k| Riesz convention.
Every constant above is locked by the momentum-residual test.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Literal, Optional

import numpy as np

from .errors import GridMismatch, NonzeroTrace, NotDivergenceFree
from .fields import (
    GridSpec,
    ScalarField,
    TimeSeriesField,
    TimeSpec,
    VectorField,
    extend_array,
    restrict_array,
)
from .transforms import calI_symbol, exponential_weights, fd4_derivative, hermitian_part, spectral

log = logging.getLogger(__name__)

DIV_TOL = 1e-8
TRACE_TOL = 1e-8


@dataclass(frozen=True)
class SolverConstants:
    """Prefactors of the forced-solution assembly (test hook: corrupt one to break the residual)."""

    w: float = 4.0
    pressure: float = 2.0


DEFAULT_CONSTANTS = SolverConstants()


@dataclass(frozen=True, eq=False)
class ForcingSpec:
    f: TimeSeriesField
    F: Optional[TimeSeriesField] = None

    def __post_init__(self):
        if self.f.rank != self.f.grid.n:
            raise GridMismatch("forcing must be a vector time series")
        if self.f.full:
            raise GridMismatch("forcing lives on the half-space grid")

    @classmethod
    def from_tensor(cls, F: TimeSeriesField, stencil: Literal["fd4", "spectral"] = "fd4") -> "ForcingSpec":
        """f_i = sum_j d_j F_ij on the zero extension of F.

        The default fourth-order centred difference keeps a compactly supported
        F compactly supported and makes the discrete divergence of f vanish
        identically for antisymmetric F.
        """
        g, n = F.grid, F.grid.n
        if F.rank != n * n:
            raise GridMismatch("tensor forcing needs n*n components")
        out = np.zeros((F.time.N_t + 1, n) + g.shape)
        if stencil == "fd4":
            for i in range(n):
                for j in range(n):
                    out[:, i] += fd4_derivative(F.data[:, i * n + j], g, j)
        else:
            sg = spectral(g)
            for k in range(F.time.N_t + 1):
                for i in range(n):
                    acc = sum(sg.deriv_r(j) * sg.rfftn(extend_array(F.data[k, i * n + j], "zero")) for j in range(n))
                    out[k, i] = restrict_array(sg.irfftn(acc))
        return cls(TimeSeriesField(g, F.time, out), F)


@dataclass(frozen=True, eq=False)
class StokesSolution:
    v: TimeSeriesField
    p: TimeSeriesField
    provenance: Literal["forced", "initial", "combined"]
    meta: dict = field(default_factory=dict)

    def __add__(self, other: "StokesSolution") -> "StokesSolution":
        v = TimeSeriesField(self.v.grid, self.v.time, self.v.data + other.v.data)
        p = TimeSeriesField(self.p.grid, self.p.time, self.p.data + other.p.data)
        return StokesSolution(v, p, "combined", {**self.meta, **other.meta})


# helpers -------------------------------------------------------------------------

def spectral_divergence(a: np.ndarray, grid: GridSpec, mode: str = "zero", stencil: str = "spectral") -> np.ndarray:
    """Divergence of an (n, *half) vector array, extended by ``mode``, on the doubled box."""
    sg = spectral(grid)
    acc = 0
    for j in range(grid.n):
        D = sg.fd4_r(j) if stencil == "fd4" else sg.deriv_r(j)
        acc = acc + D * sg.rfftn(extend_array(a[j], mode))
    return sg.irfftn(acc)


def divergence_defect(data: np.ndarray, grid: GridSpec) -> float:
    """max_t ||div f~(t)||_2 / max_t ||f~(t)||_2 for a (M, n, *half) array.

    The smaller of the spectral and fourth-order-difference divergences is used,
    so both trigonometric and stencil-built solenoidal data are accepted.
    """
    best = np.inf
    den = max(float(np.linalg.norm(extend_array(data[k], "zero"))) for k in range(data.shape[0]))
    if den == 0:
        return 0.0
    for stencil in ("fd4", "spectral"):
        num = max(float(np.linalg.norm(spectral_divergence(data[k], grid, stencil=stencil))) for k in range(data.shape[0]))
        best = min(best, num / den)
        if best <= DIV_TOL:
            break
    return best


def check_divergence_free(data: np.ndarray, grid: GridSpec, tol: float = DIV_TOL) -> float:
    d = divergence_defect(data, grid)
    if d > tol:
        raise NotDivergenceFree(f"relative divergence {d:.3e} exceeds {tol:.0e}")
    return d


def _layer_symbol(grid: GridSpec) -> np.ndarray:
    """1/(|k'| + i k_n) in real-to-complex layout, DC set to zero, Hermitian on the Nyquist plane."""
    sg = spectral(grid)
    k = sg.kt_abs_r()
    den = k + 1j * sg.Kr[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        M = np.where(np.abs(den) > 0, 1.0 / np.where(np.abs(den) > 0, den, 1.0), 0.0)
    M[..., -1] = M[..., -1].real
    return M


def _half_line(sg, X: np.ndarray) -> np.ndarray:
    """Restrict irfftn(X) to the half-space and subtract the Poisson extension of its trace.

    For X = M G this is the causal solution of (d_n + |k'|) y = G with y(0) = 0.
    """
    y = restrict_array(sg.irfftn(X))
    return y - sg.poisson(sg.fft_tan(y[..., 0], last_is_normal=False))


# forced problem ------------------------------------------------------------------

def _duhamel_pairs(f: TimeSeriesField):
    """Yield (k, [Uf_j spectra], [U*f_j spectra]) for the zero-extended forcing."""
    g, dt = f.grid, f.time.dt
    sg = spectral(g)
    E, w0, w1 = exponential_weights(sg.k2_r(), dt)
    U = prev = None
    for k in range(f.time.N_t + 1):
        Fh = [sg.rfftn(extend_array(f.data[k, j], "zero")) for j in range(g.n)]
        if U is None:
            U = [np.zeros_like(x) for x in Fh]
        else:
            U = [E * u + w0 * fp + w1 * fh for u, fp, fh in zip(U, prev, Fh)]
        prev = Fh
        yield k, U, [sg.reflect_hat(u) for u in U]


def _forcing_series(f) -> TimeSeriesField:
    return f.f if isinstance(f, ForcingSpec) else f


def velocity_part_u(f) -> TimeSeriesField:
    from .transforms import duhamel_heat

    f = _forcing_series(f)
    comps = [duhamel_heat(f.component(i), "dirichlet").data[:, 0] for i in range(f.rank)]
    return TimeSeriesField(f.grid, f.time, np.stack(comps, axis=1))


def _w_step(sg, grid: GridSpec, Us) -> tuple[np.ndarray, np.ndarray]:
    """Return (w, tangential spectrum of w) from the reflected Duhamel spectra."""
    n = grid.n
    k = sg.kt_abs_r()
    W = np.where(k > 0, -0.5 / np.where(k > 0, k, 1.0), 0.0) * _layer_symbol(grid)
    gh = sum(sg.deriv_r(j) * Us[j] for j in range(n - 1))
    w = _half_line(sg, W * gh)
    return w, sg.fft_tan(w)


def velocity_part_w(f) -> TimeSeriesField:
    """The layered potential w (zero trace) with Lap w = div F, F_j = U*f_j/2, F_n = I g."""
    f = _forcing_series(f)
    g = f.grid
    sg = spectral(g)
    out = np.zeros((f.time.N_t + 1,) + g.shape)
    for k, _, Us in _duhamel_pairs(f):
        if k:
            out[k] = _w_step(sg, g, Us)[0]
    return TimeSeriesField(g, f.time, out)


def w_source(f) -> TimeSeriesField:
    """The vector F whose divergence is Lap w: F_j = U*f_j/2 (j < n), F_n = I sum_j d_j U*f_j."""
    f = _forcing_series(f)
    g = f.grid
    n = g.n
    sg = spectral(g)
    I = hermitian_part(calI_symbol(g).astype(complex), range(n - 1))[..., None]
    out = np.zeros((f.time.N_t + 1, n) + g.shape)
    for k, _, Us in _duhamel_pairs(f):
        for j in range(n - 1):
            out[k, j] = 0.5 * restrict_array(sg.irfftn(Us[j]))
        gh = sum(sg.deriv_r(j) * Us[j] for j in range(n - 1))
        out[k, n - 1] = restrict_array(sg.irfftn(I * gh))
    return TimeSeriesField(g, f.time, out)


def _pressure_traces(sg, grid: GridSpec, U) -> tuple[np.ndarray, np.ndarray]:
    """Tangential spectra of sum_j d_j gamma Uf_j and sum_j R'_j gamma(-d_n Uf_j)."""
    n = grid.n
    Dn = sg.deriv_r(n - 1)
    t1 = sum(sg.deriv_b(j) * sg.trace_hat(U[j]) for j in range(n - 1))
    t2 = sum(sg.riesz_b(j) * sg.trace_hat(-Dn * U[j]) for j in range(n - 1))
    return t1, t2


def _extrapolate_p0(p: np.ndarray) -> None:
    p[0] = 2.0 * p[1] - p[2]


def pressure_forced(f, constants: SolverConstants = DEFAULT_CONSTANTS) -> tuple[TimeSeriesField, TimeSeriesField]:
    f = _forcing_series(f)
    g = f.grid
    sg = spectral(g)
    p1 = np.zeros((f.time.N_t + 1,) + g.shape)
    p2 = np.zeros_like(p1)
    for k, U, _ in _duhamel_pairs(f):
        if k:
            t1, t2 = _pressure_traces(sg, g, U)
            p1[k] = constants.pressure * sg.poisson(t1)
            p2[k] = constants.pressure * sg.poisson(t2)
    _extrapolate_p0(p1)
    _extrapolate_p0(p2)
    return TimeSeriesField(g, f.time, p1), TimeSeriesField(g, f.time, p2)


def pressure_p2_split(f, constants: SolverConstants = DEFAULT_CONSTANTS, check: bool = True) -> tuple[TimeSeriesField, TimeSeriesField]:
    """p2 = Q + d_t P with Q = -c P[|k'| gamma Uf_n] and P = -c P[|k'|^-1 gamma Uf_n]."""
    f = _forcing_series(f)
    g = f.grid
    if check:
        check_divergence_free(f.data, g)
    sg = spectral(g)
    k = sg.kabs_b
    inv = np.where(k > 0, 1.0 / np.where(k > 0, k, 1.0), 0.0)
    Q = np.zeros((f.time.N_t + 1,) + g.shape)
    P = np.zeros_like(Q)
    c = constants.pressure
    for step, U, _ in _duhamel_pairs(f):
        tn = sg.trace_hat(U[g.n - 1])
        Q[step] = -c * sg.poisson(k * tn)
        P[step] = -c * sg.poisson(inv * tn)
    return TimeSeriesField(g, f.time, Q), TimeSeriesField(g, f.time, P)


def solve_forced(forcing, constants: SolverConstants = DEFAULT_CONSTANTS, check: bool = True) -> StokesSolution:
    f = _forcing_series(forcing)
    g, n = f.grid, f.grid.n
    div = check_divergence_free(f.data, g) if check else None
    sg = spectral(g)
    k = sg.kabs_b[..., None]
    v = np.zeros((f.time.N_t + 1, n) + g.shape)
    p = np.zeros((f.time.N_t + 1,) + g.shape)
    for step, U, Us in _duhamel_pairs(f):
        if step == 0:
            continue
        w, wt = _w_step(sg, g, Us)
        for j in range(n - 1):
            v[step, j] = restrict_array(sg.irfftn(U[j] - Us[j])) + constants.w * sg.ifft_tan(sg.deriv_b(j)[..., None] * wt)
        v[step, n - 1] = restrict_array(sg.irfftn(U[n - 1] - Us[n - 1])) - constants.w * sg.ifft_tan(k * wt)
        t1, t2 = _pressure_traces(sg, g, U)
        p[step] = constants.pressure * sg.poisson(t1 + t2)
    _extrapolate_p0(p)
    meta = {"divergence_defect": div, "constants": {"w": constants.w, "pressure": constants.pressure}}
    return StokesSolution(TimeSeriesField(g, f.time, v), TimeSeriesField(g, f.time, p), "forced", meta)


# initial-value problem ------------------------------------------------------------

def _tan_multiply(a: np.ndarray, grid: GridSpec, sym: np.ndarray) -> np.ndarray:
    sg = spectral(grid)
    return sg.ifft_tan(sym[..., None] * sg.fft_tan(a))


def ukai_V(v0: VectorField, which: Literal["V1", "V2"]):
    """V1 v0 = v0_n + S.v0' (scalar); V2 v0 = v0' - S v0_n (n-1 components).

    S_j carries the symbol -i k_j/|k'|; with this sign the pair inverts as
    v0_n = U V1 v0 at t = 0.
    """
    g, n = v0.grid, v0.grid.n
    a = v0.as_array()
    sg = spectral(g)
    if which == "V1":
        out = a[n - 1] + sum(_tan_multiply(a[j], g, sg.riesz_b(j)) for j in range(n - 1))
        return ScalarField(g, out)
    if which == "V2":
        return [ScalarField(g, a[j] - _tan_multiply(a[n - 1], g, sg.riesz_b(j))) for j in range(n - 1)]
    raise ValueError(f"unknown operator {which!r}")


def ukai_U(g: ScalarField, route: Literal["halfline", "periodic"] = "halfline") -> ScalarField:
    """U = r (R'.S)(R'.S - R_n) e with symbol |k'|/(|k'| + i k_n).

    ``halfline`` applies it as the causal half-line operator (the form used by
    the solver, exact for data with zero trace).  ``periodic`` applies the
    composed symbol literally on the doubled box after zero extension.
    """
    grid = g.grid
    sg = spectral(grid)
    M = _layer_symbol(grid)
    k = sg.kt_abs_r()
    if route == "periodic":
        return ScalarField(grid, restrict_array(sg.irfftn(k * M * sg.rfftn(extend_array(g.samples, "zero")))))
    return ScalarField(grid, _half_line(sg, k * M * sg.rfftn(extend_array(g.samples, "odd"))))


def ukai_symbol_composed(grid: GridSpec) -> np.ndarray:
    """(R'.S)(R'.S - R_n) from elementary symbols on the full complex layout."""
    sg = spectral(grid)
    n = grid.n
    K = sg.K
    kk = np.sqrt(sum(x**2 for x in K))
    kt = np.sqrt(sum(x**2 for x in K[:-1]))
    with np.errstate(divide="ignore", invalid="ignore"):
        R = [np.where(kk > 0, -1j * x / np.where(kk > 0, kk, 1), 0) for x in K]
        S = [np.where(kt > 0, -1j * x / np.where(kt > 0, kt, 1), 0) for x in K[:-1]]
    RS = sum(R[j] * S[j] for j in range(n - 1))
    return RS * (RS - R[n - 1])


def ukai_symbol_closed(grid: GridSpec) -> np.ndarray:
    sg = spectral(grid)
    K = sg.K
    kt = np.sqrt(sum(x**2 for x in K[:-1]))
    den = kt + 1j * K[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(np.abs(den) > 0, kt / np.where(np.abs(den) > 0, den, 1), 0)


def _check_initial(v0: VectorField) -> None:
    a = v0.as_array()
    scale = float(np.max(np.abs(a)))
    if scale == 0:
        return
    tr = float(np.max(np.abs(a[..., 0])))
    if tr > TRACE_TOL * scale:
        raise NonzeroTrace(f"initial trace {tr:.3e} exceeds {TRACE_TOL:.0e} of max |v0|")
    check_divergence_free(a[None], v0.grid)


def solve_initial(v0: VectorField, time: TimeSpec, check: bool = True) -> StokesSolution:
    g, n = v0.grid, v0.grid.n
    if check:
        _check_initial(v0)
    sg = spectral(g)
    a = ukai_V(v0, "V1").samples
    b = [x.samples for x in ukai_V(v0, "V2")]
    Ah = sg.rfftn(extend_array(a, "odd"))
    Bh = [sg.rfftn(extend_array(x, "odd")) for x in b]
    lam = sg.k2_r()
    UM = sg.kt_abs_r() * _layer_symbol(g)
    Dn = sg.deriv_r(n - 1)
    v = np.zeros((time.N_t + 1, n) + g.shape)
    p = np.zeros((time.N_t + 1,) + g.shape)
    for step, t in enumerate(time.times()):
        Et = np.exp(-lam * t)
        EA = Et * Ah
        vn = _half_line(sg, UM * EA)
        vnt = sg.fft_tan(vn)
        for j in range(n - 1):
            v[step, j] = restrict_array(sg.irfftn(Et * Bh[j])) + sg.ifft_tan(sg.riesz_b(j)[..., None] * vnt)
        v[step, n - 1] = vn
        p[step] = -sg.poisson(sg.trace_hat(Dn * EA))
    return StokesSolution(TimeSeriesField(g, time, v), TimeSeriesField(g, time, p), "initial", {})


def solve_full(forcing, v0: VectorField | None, constants: SolverConstants = DEFAULT_CONSTANTS) -> StokesSolution:
    f = _forcing_series(forcing)
    sol = solve_forced(f, constants)
    if v0 is None:
        return sol
    return sol + solve_initial(v0, f.time)


# Helmholtz-type split of a tensor ---------------------------------------------------

def _inverse_laplacian(D) -> np.ndarray:
    """1 / sum_j D_j^2 for the discrete derivative symbols (zero where it vanishes).

    Inverting the Laplacian built from the same symbols used for grad and div
    keeps the projections exact on the Nyquist lines, where D_j is zeroed.
    """
    lap = np.real(sum(d * d for d in D))
    return np.where(lap < 0, 1.0 / np.where(lap < 0, lap, -1.0), 0.0)


def helmholtz_split(T: TimeSeriesField) -> tuple[TimeSeriesField, TimeSeriesField]:
    """pi with -Lap pi = d_i d_j T_ij, pi = 0 on x_n = 0; w = grad pi + div T.

    T is even-extended in x_n; pi is solved on the odd extension.
    """
    g, n = T.grid, T.grid.n
    if T.rank != n * n:
        raise GridMismatch("helmholtz_split needs an n*n tensor")
    sg = spectral(g)
    D = [sg.deriv_r(j) for j in range(n)]
    inv = _inverse_laplacian(D)
    pi = np.zeros((T.time.N_t + 1,) + g.shape)
    w = np.zeros((T.time.N_t + 1, n) + g.shape)
    for k in range(T.time.N_t + 1):
        Th = [[sg.rfftn(extend_array(T.data[k, i * n + j], "even")) for j in range(n)] for i in range(n)]
        divT = [sum(D[j] * Th[i][j] for j in range(n)) for i in range(n)]
        rhs = -restrict_array(sg.irfftn(sum(D[i] * divT[i] for i in range(n))))
        pik = restrict_array(sg.irfftn(inv * sg.rfftn(extend_array(rhs, "odd"))))
        pi[k] = pik
        Ph = sg.rfftn(extend_array(pik, "odd"))
        for i in range(n):
            w[k, i] = restrict_array(sg.irfftn(D[i] * Ph + divT[i]))
    return TimeSeriesField(g, T.time, pi), TimeSeriesField(g, T.time, w)


def leray_halfspace(G: TimeSeriesField) -> tuple[TimeSeriesField, TimeSeriesField]:
    """G = w + grad phi with div w = 0 and w_n = 0 on x_n = 0 (Neumann split).

    Tangential components are even-extended and the normal one odd-extended,
    so phi comes out even in x_n and w keeps a vanishing normal trace; the
    zero extension of w is then solenoidal in the sense of distributions.
    """
    g, n = G.grid, G.grid.n
    if G.rank != n:
        raise GridMismatch("leray_halfspace needs a vector series")
    sg = spectral(g)
    D = [sg.deriv_r(j) for j in range(n)]
    inv = _inverse_laplacian(D)
    phi = np.zeros((G.time.N_t + 1, 1) + g.shape)
    w = np.zeros(G.data.shape)
    for k in range(G.time.N_t + 1):
        Gh = [sg.rfftn(extend_array(G.data[k, j], "odd" if j == n - 1 else "even")) for j in range(n)]
        Ph = inv * sum(D[j] * Gh[j] for j in range(n))
        phi[k, 0] = restrict_array(sg.irfftn(Ph))
        for j in range(n):
            w[k, j] = restrict_array(sg.irfftn(Gh[j] - D[j] * Ph))
    return TimeSeriesField(g, G.time, phi), TimeSeriesField(g, G.time, w)
