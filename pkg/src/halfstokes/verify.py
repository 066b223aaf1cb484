"""Estimate-ratio experiments, residual diagnostics and random test data."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from . import norms
from .errors import DegenerateInput, GridMismatch, InadmissibleExponents, InvalidSpec
from .fields import GridSpec, ScalarField, TimeSeriesField, TimeSpec, VectorField, extend_array, restrict_array
from .stokes import (
    DEFAULT_CONSTANTS,
    ForcingSpec,
    SolverConstants,
    StokesSolution,
    leray_halfspace,
    solve_forced,
    solve_initial,
)
from .transforms import fd4_derivative

log = logging.getLogger(__name__)


# random divergence-free data ---------------------------------------------------------

def envelope(r: np.ndarray, s: float, R: float) -> np.ndarray:
    """Gaussian of width s cut off smoothly (and exactly) at |r| = R."""
    rho = np.abs(r) / R
    inside = rho < 1
    b = np.zeros(np.broadcast(r).shape)
    b[inside] = np.exp(1.0 - 1.0 / (1.0 - rho[inside] ** 2))
    return np.exp(-(r**2) / (2 * s**2)) * b


@dataclass(frozen=True)
class ForcingParams:
    """Random forcing family.

    ``bandwidth`` bounds the wavenumber of the random modes and
    ``tangential_width`` is the tangential Gaussian width of the boundary
    envelope.  Left as None they default per family: the boundary layer is
    made wide and smooth tangentially so it is thin compared with its
    tangential scale.
    """

    family: Literal["bandlimited", "boundary"] = "bandlimited"
    bandwidth: Optional[float] = None
    modes: int = 12
    temporal_cycles: float = 1.0
    # boundary family: distance of the layer from x_n = 0 in grid spacings
    layer_cells: float = 4.0
    tangential_width: Optional[float] = None
    amplitude: float = 1.0

    def __post_init__(self):
        if self.family not in ("bandlimited", "boundary"):
            raise InvalidSpec(f"unknown forcing family {self.family!r}")
        if self.bandwidth is None:
            object.__setattr__(self, "bandwidth", 2.0 if self.family == "bandlimited" else 0.5)
        if self.tangential_width is None:
            object.__setattr__(self, "tangential_width", 1.5)
        if not self.bandwidth > 0 or self.modes < 1:
            raise InvalidSpec("bandwidth must be positive and modes >= 1")
        if not self.tangential_width > 0 or not self.layer_cells > 0:
            raise InvalidSpec("tangential_width and layer_cells must be positive")
        if not self.amplitude >= 0:
            raise InvalidSpec("amplitude must be nonnegative")


def _envelope_field(grid: GridSpec, params: ForcingParams) -> np.ndarray:
    x = grid.mesh(full=False)
    n = grid.n
    if params.family == "bandlimited":
        chi = envelope(x[-1] - grid.L_nrm / 2, grid.L_nrm / 8, 0.35 * grid.L_nrm)
        for j in range(n - 1):
            chi = chi * envelope(x[j], 0.2 * grid.L_tan, 0.85 * grid.L_tan)
    else:
        delta = params.layer_cells * grid.h_nrm
        if 1.5 * delta > grid.L_nrm - 2 * grid.h_nrm or 0.5 * delta < 2 * grid.h_nrm - 1e-12:
            raise InvalidSpec(f"boundary layer at {delta:g} does not fit the grid (need 4 h <= delta, 1.5 delta < L_nrm)")
        chi = envelope(x[-1] - delta, delta / 4, delta / 2)
        for j in range(n - 1):
            chi = chi * envelope(x[j], params.tangential_width, 0.85 * grid.L_tan)
    return chi


def random_potential(seed: int, grid: GridSpec, time: TimeSpec, params: ForcingParams = ForcingParams(),
                     components: int | None = None) -> np.ndarray:
    """Enveloped random band-limited potential of shape (N_t+1, c, *half), c = 1 (n=2) or 3 (n=3).

    The random draws depend only on the seed, so the same continuous field is
    sampled at every resolution.
    """
    n = grid.n
    c = components or (1 if n == 2 else 3)
    rng = np.random.default_rng(seed)
    x = grid.mesh(full=False)
    chi = _envelope_field(grid, params)
    t = time.times()
    theta = np.sin(np.pi * t / time.T) ** 2
    # cos(a + w t) = cos(w t) cos a - sin(w t) sin a: time factors times spatial factors
    temporal = np.zeros((time.N_t + 1, 2 * params.modes))
    spatial = np.zeros((c, 2 * params.modes) + grid.shape)
    for m in range(params.modes):
        d = rng.standard_normal(n)
        d *= params.bandwidth * rng.uniform() ** (1.0 / n) / np.linalg.norm(d)
        omega = 2 * np.pi * params.temporal_cycles / time.T * rng.uniform()
        amp = rng.standard_normal(c)
        phase = rng.uniform(0, 2 * np.pi, c)
        arg = sum(d[j] * x[j] for j in range(n))
        temporal[:, 2 * m] = np.cos(omega * t)
        temporal[:, 2 * m + 1] = -np.sin(omega * t)
        for i in range(c):
            spatial[i, 2 * m] = amp[i] * np.cos(arg + phase[i])
            spatial[i, 2 * m + 1] = amp[i] * np.sin(arg + phase[i])
    out = np.einsum("tm,cm...->tc...", temporal, spatial)
    out *= chi
    out *= theta.reshape((-1,) + (1,) * (n + 1))
    return out


def antisymmetric_tensor(psi: np.ndarray, n: int) -> np.ndarray:
    """F_ij = eps_ijk psi_k (n = 3) or F_12 = -F_21 = psi (n = 2); shape (M, n*n, ...)."""
    M = psi.shape[0]
    F = np.zeros((M, n * n) + psi.shape[2:])
    if n == 2:
        F[:, 1] = psi[:, 0]
        F[:, 2] = -psi[:, 0]
        return F
    for i, j, k, s in ((0, 1, 2, 1), (1, 2, 0, 1), (2, 0, 1, 1), (0, 2, 1, -1), (2, 1, 0, -1), (1, 0, 2, -1)):
        F[:, i * 3 + j] = s * psi[:, k]
    return F


def random_divfree_forcing(seed: int, grid: GridSpec, time: TimeSpec, params: ForcingParams = ForcingParams()) -> ForcingSpec:
    """f = div F with F antisymmetric, built from an enveloped random potential.

    The envelope multiplies the potential rather than the field, so f stays
    exactly solenoidal and compactly supported in the interior.
    """
    psi = random_potential(seed, grid, time, params)
    F = TimeSeriesField(grid, time, antisymmetric_tensor(psi, grid.n))
    spec = ForcingSpec.from_tensor(F)
    scale = float(np.max(np.abs(spec.f.data)))
    if scale > 0:
        c = params.amplitude / scale
        F = TimeSeriesField(grid, time, F.data * c)
        spec = ForcingSpec(TimeSeriesField(grid, time, spec.f.data * c), F)
    return spec


def random_divfree_field(seed: int, grid: GridSpec, params: ForcingParams = ForcingParams()) -> VectorField:
    """Divergence-free, compactly supported vector field (a curl of an enveloped potential)."""
    time = TimeSpec(1.0, 4)
    psi = random_potential(seed, grid, time, params)[2:3]
    F = TimeSeriesField(grid, TimeSpec(1.0, 4), np.repeat(antisymmetric_tensor(psi, grid.n), 5, axis=0))
    f = ForcingSpec.from_tensor(F).f.data[0]
    scale = float(np.max(np.abs(f)))
    return VectorField.from_array(grid, f * (params.amplitude / scale) if scale > 0 else f)


# residuals -----------------------------------------------------------------------------

# Centred difference stencils evaluated on normal-interior points.  ``m`` is the
# number of normal layers dropped at each end (1 for second order, 2 for fourth).

def _shift(a: np.ndarray, grid: GridSpec, j: int, o: int, m: int) -> np.ndarray:
    n = grid.n
    ax = a.ndim - n + j
    if j == n - 1:
        stop = a.shape[-1] - m + o
        return a[..., m + o : stop if stop != 0 else None]
    core = a[..., m : a.shape[-1] - m]
    return np.roll(core, -o, ax)


def _d_h(a: np.ndarray, grid: GridSpec, j: int, order: int = 2) -> np.ndarray:
    h = grid.h_nrm if j == grid.n - 1 else grid.h_tan
    m = order // 2
    S = lambda o: _shift(a, grid, j, o, m)
    if order == 2:
        return (S(1) - S(-1)) / (2 * h)
    return (8 * (S(1) - S(-1)) - (S(2) - S(-2))) / (12 * h)


def _d2_h(a: np.ndarray, grid: GridSpec, j: int, order: int = 2) -> np.ndarray:
    h = grid.h_nrm if j == grid.n - 1 else grid.h_tan
    m = order // 2
    S = lambda o: _shift(a, grid, j, o, m)
    if order == 2:
        return (S(1) - 2 * S(0) + S(-1)) / h**2
    return (-S(2) + 16 * S(1) - 30 * S(0) + 16 * S(-1) - S(-2)) / (12 * h**2)


def _lap_h(a: np.ndarray, grid: GridSpec, order: int = 2) -> np.ndarray:
    return sum(_d2_h(a, grid, j, order) for j in range(grid.n))


@dataclass
class ResidualRecord:
    momentum_l2: float
    momentum_max: float
    divergence_l2: float
    divergence_max: float
    trace_max: float
    initial_mismatch: float
    harmonic_l2: float
    h: float
    dt: float

    @property
    def threshold(self) -> float:
        return 10.0 * (self.dt**2 + self.h**2)

    def failures(self, require_harmonic: bool = True) -> list[str]:
        th = self.threshold
        out = []
        if not self.momentum_l2 <= th:
            out.append(f"momentum residual {self.momentum_l2:.3e} > {th:.3e}")
        if not self.divergence_l2 <= 10 * self.h**2:
            out.append(f"divergence residual {self.divergence_l2:.3e} > {10 * self.h**2:.3e}")
        if not self.trace_max <= 1e-8:
            out.append(f"boundary trace {self.trace_max:.3e} > 1e-8")
        if not self.initial_mismatch <= 10 * self.h**2:
            out.append(f"initial mismatch {self.initial_mismatch:.3e} > {10 * self.h**2:.3e}")
        if require_harmonic and not self.harmonic_l2 <= 10 * self.h**2:
            out.append(f"pressure harmonicity {self.harmonic_l2:.3e} > {10 * self.h**2:.3e}")
        return out

    def to_dict(self) -> dict:
        return asdict(self)


def pde_residual(sol: StokesSolution, f: Optional[TimeSeriesField] = None, v0: Optional[VectorField] = None,
                 t_start: Optional[float] = None, order: int = 4) -> ResidualRecord:
    """Finite-difference residuals of v_t - Lap v + grad p = f, div v = 0, v|_{x_n=0} = 0.

    Centred differences: second order in t, ``order`` (2 or 4) in x, over
    t in [t_start, T - dt] (default t_start = 2dt) and normal-interior points.
    Pass a fixed t_start to compare resolutions on one window.  Momentum is
    relative to ||f|| on the same window (or to ||v0|| |window|^(1/2) when f
    is absent or zero); divergence and harmonicity are relative to the sizes
    of their individual terms.
    """
    if order not in (2, 4):
        raise InvalidSpec("residual stencil order must be 2 or 4")
    m = order // 2
    v, p = sol.v, sol.p
    g, time = v.grid, v.time
    n = g.n
    if f is not None and (f.grid != g or f.time.N_t != time.N_t):
        raise GridMismatch("forcing and solution grids differ")
    if v0 is not None and v0.grid != g:
        raise GridMismatch("initial data and solution grids differ")
    dt = time.dt
    cell = g.cell_volume
    mom2 = mom_max = f2 = 0.0
    div2 = dterm2 = div_max = 0.0
    harm2 = hterm2 = 0.0
    k0 = 2 if t_start is None else max(2, int(math.ceil(t_start / dt - 1e-9)))
    if k0 >= time.N_t:
        raise InvalidSpec("residual window is empty")
    inner = (Ellipsis, slice(m, g.shape[-1] - m))
    for k in range(k0, time.N_t):
        vt = (v.data[k + 1] - v.data[k - 1]) / (2 * dt)
        r = vt[inner] - _lap_h(v.data[k], g, order)
        for j in range(n):
            r[j] += _d_h(p.data[k, 0], g, j, order)
        if f is not None:
            fk = f.data[k][inner]
            r -= fk
            f2 += float(np.sum(fk**2))
        mom2 += float(np.sum(r**2))
        mom_max = max(mom_max, float(np.max(np.abs(r))))
        parts = [_d_h(v.data[k, j], g, j, order) for j in range(n)]
        d = sum(parts)
        div2 += float(np.sum(d**2))
        dterm2 += sum(float(np.sum(x**2)) for x in parts)
        div_max = max(div_max, float(np.max(np.abs(d))))
        hp = [_d2_h(p.data[k, 0], g, j, order) for j in range(n)]
        harm2 += float(np.sum(sum(hp) ** 2))
        hterm2 += sum(float(np.sum(x**2)) for x in hp)
    window = dt * (time.N_t - k0)
    vmax = float(np.max(np.abs(v.data)))
    if f is not None and f2 > 0:
        scale = math.sqrt(f2)
        scale_max = float(np.max(np.abs(f.data)))
    elif v0 is not None:
        nv0 = float(np.sqrt(np.sum(v0.as_array() ** 2) * cell))
        scale = nv0 * math.sqrt(window) / math.sqrt(dt * cell)
        scale_max = float(np.max(np.abs(v0.as_array())))
    else:
        scale = scale_max = 0.0

    def rel(num, den):
        return num / den if den > 0 else (0.0 if num == 0 else math.inf)

    if v0 is not None:
        a0 = v0.as_array()
        init = rel(float(np.linalg.norm(v.data[0] - a0)), float(np.linalg.norm(a0)))
    else:
        init = rel(float(np.max(np.abs(v.data[0]))), vmax)
    return ResidualRecord(
        momentum_l2=rel(math.sqrt(mom2), scale),
        momentum_max=rel(mom_max, scale_max),
        divergence_l2=rel(math.sqrt(div2), math.sqrt(dterm2)),
        divergence_max=div_max,
        trace_max=rel(float(np.max(np.abs(v.data[..., 0]))), vmax),
        initial_mismatch=init,
        harmonic_l2=rel(math.sqrt(harm2), math.sqrt(hterm2)),
        h=g.h,
        dt=dt,
    )


# exponent admissibility ------------------------------------------------------------------

THEOREMS = ("T11-v", "T11-p", "T13-v", "T13-p", "T15", "product")
ALPHA_TAGS = ("T11-v", "T11-p")


def order_name(theorem: str) -> str:
    return "alpha" if theorem in ALPHA_TAGS else "beta"


def check_exponents(theorem: str, order: float, p: float, q: float, n: int = 3,
                    allow_boundary: bool = False) -> list[str]:
    """Raise InadmissibleExponents outside a theorem's hypotheses; return flags.

    With ``allow_boundary`` (the alpha sweep), T11-p at alpha <= 1 + 1/p is
    accepted and flagged instead.
    """
    if theorem not in THEOREMS:
        raise InvalidSpec(f"unknown theorem tag {theorem!r}")
    if not (1 < p < math.inf and 1 < q < math.inf):
        raise InadmissibleExponents(f"need 1 < p, q < inf, got p={p}, q={q}")
    flags: list[str] = []
    if theorem == "T11-v" and not 0 <= order <= 2:
        raise InadmissibleExponents(f"T11-v needs 0 <= alpha <= 2, got {order}")
    if theorem == "T11-p":
        if not 0 < order <= 2:
            raise InadmissibleExponents(f"T11-p needs alpha <= 2, got {order}")
        if order <= 1 + 1 / p:
            if not allow_boundary:
                raise InadmissibleExponents(f"T11-p needs 1 + 1/p < alpha, got alpha={order}, p={p}")
            flags.append("below_pressure_threshold")
    if theorem == "T13-v" and not 0 <= order <= 1:
        raise InadmissibleExponents(f"T13-v needs 0 <= beta <= 1, got {order}")
    if theorem == "T13-p" and not 1 / p < order <= 1:
        raise InadmissibleExponents(f"T13-p needs 1/p < beta <= 1, got beta={order}, p={p}")
    if theorem == "T15":
        if n != 3:
            raise InadmissibleExponents("T15 is stated in three dimensions")
        if not (p <= 1.5 and 1 / p < order <= 1 and q < 2):
            raise InadmissibleExponents(f"T15 needs 1 < p <= 3/2, 1/p < beta <= 1, 1 < q < 2; got p={p}, beta={order}, q={q}")
        if abs(3 / p + 2 / q - 3 - order) > 1e-9:
            raise InadmissibleExponents(f"T15 needs 3/p + 2/q = 3 + beta; got {3 / p + 2 / q:.6g} vs {3 + order:.6g}")
    if theorem == "product" and not (0 < order <= 1 and p < 2):
        raise InadmissibleExponents(f"product check needs 0 < beta <= 1 and p < 2 (p2 = 2); got beta={order}, p={p}")
    return flags


# reports -----------------------------------------------------------------------------------

@dataclass
class EstimateReport:
    experiment_id: str
    theorem: str
    order: float
    p: float
    q: float
    norms: dict
    lhs: float
    rhs: float
    ratio: float
    grid: dict
    seed: int
    residual: Optional[dict] = None
    failures: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    @property
    def order_name(self) -> str:
        return order_name(self.theorem)

    def to_dict(self) -> dict:
        d = asdict(self)
        d[self.order_name] = d.pop("order")
        return d

    def csv_row(self) -> list[str]:
        r = self.residual or {}
        vals = [self.experiment_id, str(self.seed), _fmt(self.order), _fmt(self.p), _fmt(self.q),
                _fmt(self.lhs), _fmt(self.rhs), _fmt(self.ratio),
                _fmt(r.get("momentum_l2", math.nan)), _fmt(r.get("divergence_l2", math.nan)),
                str(self.grid["N"]), str(self.grid["N_t"])]
        return vals


CSV_HEADER = ["id", "seed", "alpha", "p", "q", "lhs", "rhs", "ratio", "residual_momentum", "residual_div", "N", "N_t"]


def _fmt(x: float) -> str:
    return format(float(x), ".12e")


def _norm_entry(value: float, label: str) -> dict:
    if not math.isfinite(value):
        raise DegenerateInput(f"norm {label} is not finite")
    return {"value": float(value), "norm": label}


def _report(exp_id, theorem, order, p, q, lhs_terms: dict, rhs_terms: dict, grid, time, seed,
            residual: Optional[ResidualRecord], flags, require_harmonic=True) -> EstimateReport:
    lhs = float(sum(v["value"] for v in lhs_terms.values()))
    rhs = float(sum(v["value"] for v in rhs_terms.values()))
    if not rhs > 0:
        raise DegenerateInput(f"{exp_id}: right-hand side vanishes, no ratio")
    meta = {"n": grid.n, "N": grid.N, "N_t": time.N_t, "L_tan": grid.L_tan, "L_nrm": grid.L_nrm,
            "T": time.T, "h": grid.h, "dt": time.dt}
    norms_all = {**{f"lhs:{k}": v for k, v in lhs_terms.items()}, **{f"rhs:{k}": v for k, v in rhs_terms.items()}}
    return EstimateReport(
        experiment_id=exp_id, theorem=theorem, order=float(order), p=float(p), q=float(q), norms=norms_all,
        lhs=lhs, rhs=rhs, ratio=lhs / rhs, grid=meta, seed=int(seed),
        residual=residual.to_dict() if residual else None,
        failures=residual.failures(require_harmonic) if residual else [], flags=list(flags),
    )


# experiment configuration --------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    theorem: str = "T11-v"
    alpha: Optional[float] = None
    beta: Optional[float] = None
    p: float = 2.0
    q: float = 2.0
    n: int = 3
    N: int = 64
    N_t: int = 64
    L_tan: float = 4.0
    L_nrm: float = 4.0
    T: float = 1.0
    ensemble: int = 20
    seed: int = 1
    forcing: ForcingParams = ForcingParams()
    initial: bool = False
    solver: SolverConstants = DEFAULT_CONSTANTS
    out: str = "out"

    @property
    def order(self) -> float:
        val = self.alpha if order_name(self.theorem) == "alpha" else self.beta
        if val is None:
            raise InvalidSpec(f"{self.theorem} needs {order_name(self.theorem)}")
        return float(val)

    def validate(self, allow_boundary: bool = False) -> list[str]:
        if self.ensemble < 1:
            raise InvalidSpec("ensemble size must be at least 1")
        self.grids()
        return check_exponents(self.theorem, self.order, self.p, self.q, self.n, allow_boundary)

    def grids(self) -> tuple[GridSpec, TimeSpec]:
        from .fields import make_grid

        return make_grid(self.n, self.L_tan, self.L_nrm, self.N, self.T, self.N_t)

    def at_resolution(self, N: int) -> "ExperimentConfig":
        """Same experiment on an N grid with dt refined in proportion."""
        from dataclasses import replace

        N_t = max(4, int(round(self.N_t * N / self.N)))
        return replace(self, N=N, N_t=N_t)


def member_seed(cfg: ExperimentConfig, i: int) -> int:
    return int(cfg.seed) + i


# norm helpers --------------------------------------------------------------------------------

def _series(grid, time, data) -> TimeSeriesField:
    return TimeSeriesField(grid, time, data)


def velocity_norm(v: TimeSeriesField, order: float, p: float, q: float) -> float:
    return norms.mixed_aniso_norm(v, order, p, q, homogeneous=True, extension="odd")


def pressure_norm(pr: TimeSeriesField, order: float, p: float, q: float) -> float:
    """L^q in time (first two samples skipped) of the homogeneous H^order_p norm, even extension."""
    vals = norms.sobolev_series(pr, order, p, True, "even")
    return norms.time_lq(vals, q, pr.time.dt, start=2)


def tensor_norm(F: TimeSeriesField, order: float, p: float, q: float) -> float:
    """L^q in time of the homogeneous H^order_{p,0} norm (zero extension)."""
    return norms.time_lq(norms.sobolev_series(F, order, p, True, "zero"), q, F.time.dt)


def initial_norm(v0: VectorField, order: float, p: float, q: float) -> float:
    spec = norms.NormSpec(order, p, q, homogeneous=True, domain="halfspace")
    acc = sum(norms.besov_norm(c, spec) ** p for c in v0.components)
    return float(acc ** (1.0 / p))


def _initial_data(cfg: ExperimentConfig, grid: GridSpec, seed: int) -> Optional[VectorField]:
    if not cfg.initial:
        return None
    return random_divfree_field(seed + 100003, grid, cfg.forcing)


def _solve_with_initial(forcing: ForcingSpec, v0: Optional[VectorField], cfg: ExperimentConfig,
                        check: bool = True) -> StokesSolution:
    sol = solve_forced(forcing, cfg.solver, check=check)
    if v0 is not None:
        sol = sol + solve_initial(v0, forcing.f.time)
    return sol


# ensemble members -----------------------------------------------------------------------------

def _member_t11(cfg: ExperimentConfig, i: int, tags: Sequence[str], alphas: Sequence[float],
                allow_boundary: bool = False) -> list[EstimateReport]:
    grid, time = cfg.grids()
    seed = member_seed(cfg, i)
    forcing = random_divfree_forcing(seed, grid, time, cfg.forcing)
    v0 = _initial_data(cfg, grid, seed)
    sol = _solve_with_initial(forcing, v0, cfg)
    res = pde_residual(sol, forcing.f, v0)
    out = []
    for alpha in alphas:
        rhs = {"f": _norm_entry(norms.negative_norm_proxy(forcing.f, alpha, cfg.p, cfg.q),
                                f"H^({alpha:g}-2,{alpha / 2:g}-1)_(p,q,0) proxy")}
        if v0 is not None:
            rhs["v0"] = _norm_entry(initial_norm(v0, alpha - 2 / cfg.q, cfg.p, cfg.q),
                                    f"B^({alpha:g}-2/q)_(p,q,0)")
        for tag in tags:
            flags = check_exponents(tag, alpha, cfg.p, cfg.q, grid.n, allow_boundary)
            if tag == "T11-v":
                lhs = {"v": _norm_entry(velocity_norm(sol.v, alpha, cfg.p, cfg.q), f"H^({alpha:g},{alpha / 2:g})_(p,q)")}
            else:
                lhs = {"p": _norm_entry(pressure_norm(sol.p, alpha - 1, cfg.p, cfg.q), f"L^q H^({alpha - 1:g})_p")}
            out.append(_report(f"{tag}-a{alpha:g}-N{grid.N}-{i:03d}", tag, alpha, cfg.p, cfg.q, lhs, rhs,
                               grid, time, seed, res, flags))
    return out


def _member_t13(cfg: ExperimentConfig, i: int, tags: Sequence[str]) -> list[EstimateReport]:
    grid, time = cfg.grids()
    seed = member_seed(cfg, i)
    beta = cfg.order
    forcing = random_divfree_forcing(seed, grid, time, cfg.forcing)
    v0 = _initial_data(cfg, grid, seed)
    sol = _solve_with_initial(forcing, v0, cfg)
    res = pde_residual(sol, forcing.f, v0)
    rhs = {"F": _norm_entry(tensor_norm(forcing.F, beta, cfg.p, cfg.q), f"L^q H^({beta:g})_(p,0)")}
    if v0 is not None:
        rhs["v0"] = _norm_entry(initial_norm(v0, 1 + beta - 2 / cfg.q, cfg.p, cfg.q), f"B^(1+{beta:g}-2/q)_(p,q,0)")
    out = []
    for tag in tags:
        flags = check_exponents(tag, beta, cfg.p, cfg.q, grid.n)
        if tag == "T13-v":
            lhs = {"v": _norm_entry(velocity_norm(sol.v, 1 + beta, cfg.p, cfg.q), f"H^(1+{beta:g},(1+{beta:g})/2)_(p,q)")}
        else:
            lhs = {"p": _norm_entry(pressure_norm(sol.p, beta, cfg.p, cfg.q), f"L^q H^({beta:g})_p")}
        out.append(_report(f"{tag}-b{beta:g}-N{grid.N}-{i:03d}", tag, beta, cfg.p, cfg.q, lhs, rhs, grid, time, seed, res, flags))
    return out


def convective_forcing(V: TimeSeriesField) -> TimeSeriesField:
    """-div(V (x) V) with the fourth-order stencil on the zero extension."""
    g, n = V.grid, V.grid.n
    G = np.zeros(V.data.shape)
    for i in range(n):
        for j in range(n):
            G[:, i] -= fd4_derivative(V.data[:, i] * V.data[:, j], g, j)
    return TimeSeriesField(g, V.time, G)


def _member_t15(cfg: ExperimentConfig, i: int) -> list[EstimateReport]:
    """Stokes response to the frozen convection term of a prescribed field V.

    V(x, t) = sin^2(pi t / T) V0(x) with V0 random, solenoidal and compactly
    supported.  -div(V (x) V) = w + grad phi (half-space Leray split); (v, p_S)
    solves the Stokes system with force w and the total pressure is p_S + phi.
    """
    grid, time = cfg.grids()
    seed = member_seed(cfg, i)
    beta, p, q = cfg.order, cfg.p, cfg.q
    flags = check_exponents("T15", beta, p, q, grid.n)
    V0 = random_divfree_field(seed, grid, cfg.forcing).as_array()
    theta = np.sin(np.pi * time.times() / time.T) ** 2
    V = _series(grid, time, theta.reshape((-1,) + (1,) * (grid.n + 1)) * V0[None])
    phi, w = leray_halfspace(convective_forcing(V))
    forcing = ForcingSpec(w)
    v0 = _initial_data(cfg, grid, seed)
    sol = _solve_with_initial(forcing, v0, cfg, check=False)
    res = pde_residual(sol, w, v0)
    p_total = _series(grid, time, sol.p.data + phi.data)
    vv = _series(grid, time, np.sum(V.data**2, axis=1, keepdims=True))
    lhs = {
        "v": _norm_entry(norms.time_lq(norms.sobolev_series(sol.v, 1 + beta, p, True, "odd"), q, time.dt, 2),
                         f"L^q H^(1+{beta:g})_p"),
        "p": _norm_entry(pressure_norm(p_total, beta, p, q), f"L^q H^({beta:g})_p"),
    }
    rhs = {"|V|^2": _norm_entry(tensor_norm(vv, beta, p, q), f"L^q H^({beta:g})_(p,0)")}
    if v0 is not None:
        rhs["v0"] = _norm_entry(initial_norm(v0, 1 + beta - 2 / q, p, q), f"B^(1+{beta:g}-2/q)_(p,q,0)")
    return [_report(f"T15-b{beta:g}-N{grid.N}-{i:03d}", "T15", beta, p, q, lhs, rhs, grid, time, seed, res, flags)]


def _vec_lp(a: np.ndarray, r: float, cell: float) -> float:
    return norms.lp_norm(np.sqrt(np.sum(a**2, axis=0)), r, cell)


def _vec_h1(a: np.ndarray, r: float, grid: GridSpec) -> float:
    acc = sum(norms.sobolev_norm(ScalarField(grid, c, True), 1.0, r, homogeneous=False) ** r for c in a)
    return float(acc ** (1.0 / r))


def product_terms(v: VectorField, beta: float, p: float, p2: float = 2.0) -> tuple[dict, dict]:
    """Both sides of the fractional product estimate for u = v (|u|^2 for vectors).

    All norms are inhomogeneous and taken on the zero extension.
    """
    if not 0 < beta <= 1:
        raise InadmissibleExponents(f"beta = {beta} not in (0, 1]")
    if not 1 < p2 < math.inf or not 1 / p > 1 / p2:
        raise InadmissibleExponents(f"need 1/p1 = 1/p - 1/p2 > 0, got p={p}, p2={p2}")
    p1 = 1.0 / (1.0 / p - 1.0 / p2)
    g = v.grid
    cell = g.cell_volume
    a = extend_array(v.as_array(), "zero")
    u2 = np.sum(a**2, axis=0)
    lhs = {"u^2": _norm_entry(norms.sobolev_norm(ScalarField(g, u2, True), beta, p, homogeneous=False),
                              f"H^({beta:g})_p")}
    l_p1, l_p2, l_2 = _vec_lp(a, p1, cell), _vec_lp(a, p2, cell), _vec_lp(a, 2.0, cell)
    h_p2 = _vec_h1(a, p2, g)
    h_2 = h_p2 if p2 == 2 else _vec_h1(a, 2.0, g)
    rhs = {
        "u^2 L^p": _norm_entry(norms.lp_norm(u2, p, cell), "L^p"),
        "middle": _norm_entry(l_p1 * l_p2 ** (1 - beta) * h_p2**beta, f"L^{p1:g} L^{p2:g}^(1-b) H^1_{p2:g}^b"),
        "last": _norm_entry(l_2 ** (2 - beta) * h_2**beta, "L^2^(2-b) H^1_2^b"),
    }
    return lhs, rhs


def product_estimate_check(v: VectorField, beta: float, p: float, p2: float = 2.0, seed: int = 0,
                           exp_id: str = "product") -> EstimateReport:
    lhs, rhs = product_terms(v, beta, p, p2)
    g = v.grid
    return _report(exp_id, "product", beta, p, p2, lhs, rhs, g, TimeSpec(1.0, 4), seed, None, [])


def _member_product(cfg: ExperimentConfig, i: int) -> list[EstimateReport]:
    grid, time = cfg.grids()
    seed = member_seed(cfg, i)
    beta = cfg.order
    check_exponents("product", beta, cfg.p, cfg.q, grid.n)
    v = random_divfree_field(seed, grid, cfg.forcing)
    rep = product_estimate_check(v, beta, cfg.p, 2.0, seed, f"product-b{beta:g}-N{grid.N}-{i:03d}")
    rep.q = cfg.q
    rep.grid["N_t"] = time.N_t
    return [rep]


# ensembles ------------------------------------------------------------------------------------

def _group(theorem: str) -> str:
    return {"T11-v": "T11", "T11-p": "T11", "T13-v": "T13", "T13-p": "T13"}.get(theorem, theorem)


def _run_member(cfg: ExperimentConfig, i: int, tags: tuple[str, ...]) -> list[EstimateReport]:
    grp = _group(tags[0])
    if grp == "T11":
        return _member_t11(cfg, i, tags, [cfg.order])
    if grp == "T13":
        return _member_t13(cfg, i, tags)
    if grp == "T15":
        return _member_t15(cfg, i)
    return _member_product(cfg, i)


def summarize(reports: Sequence[EstimateReport]) -> dict:
    ratios = np.array([r.ratio for r in reports])
    res = [r.residual for r in reports if r.residual]
    failures = [f"{r.experiment_id}: {f}" for r in reports for f in r.failures]
    return {
        "members": len(reports),
        "max_ratio": float(ratios.max()),
        "median_ratio": float(np.median(ratios)),
        "min_ratio": float(ratios.min()),
        "residual_momentum_max": max((x["momentum_l2"] for x in res), default=None),
        "residual_div_max": max((x["divergence_l2"] for x in res), default=None),
        "trace_max": max((x["trace_max"] for x in res), default=None),
        "failures": failures,
    }


@dataclass
class EnsembleResult:
    config: ExperimentConfig
    reports: list
    summary: dict
    refinement: Optional[dict] = None

    @property
    def failures(self) -> list[str]:
        out = [f for s in self.summary.values() for f in s["failures"]]
        if self.refinement:
            out += self.refinement["failures"]
        return out

    def by_tag(self, tag: str) -> list[EstimateReport]:
        return [r for r in self.reports if r.theorem == tag]


MIN_DROP = 3.0
DROP_FLOOR = 1e-10


def refinement_check(cfg: ExperimentConfig, i: int = 0, min_drop: float = MIN_DROP) -> dict:
    """Residuals of member i at (N/2, N_t/2) and (N, N_t) on one time window.

    A wrong solver constant leaves a resolution-independent defect, which shows
    up as a stalled drop even when the single-level thresholds are met.
    """
    coarse = cfg.at_resolution(cfg.N // 2)
    t_start = 2 * coarse.T / coarse.N_t
    seed = member_seed(cfg, i)
    levels = {}
    for c in (coarse, cfg):
        grid, time = c.grids()
        forcing = random_divfree_forcing(seed, grid, time, c.forcing)
        v0 = _initial_data(c, grid, seed)
        sol = _solve_with_initial(forcing, v0, c)
        levels[c.N] = pde_residual(sol, forcing.f, v0, t_start=t_start)
    rc, rf = levels[coarse.N], levels[cfg.N]
    drops, failures = {}, []
    for key in ("momentum_l2", "divergence_l2"):
        a, b = getattr(rc, key), getattr(rf, key)
        drops[key] = a / b if b > 0 else math.inf
        if b > DROP_FLOOR and not drops[key] >= min_drop:
            failures.append(f"{key} dropped {drops[key]:.2f}x from N={coarse.N} to N={cfg.N} (< {min_drop:g}x)")
    return {"levels": {str(k): v.to_dict() for k, v in levels.items()}, "drops": drops, "failures": failures}


def estimate_ratio(cfg: ExperimentConfig, tags: Optional[Sequence[str]] = None, workers: int = 1,
                   refine: Optional[bool] = None) -> EnsembleResult:
    """Run the seeded ensemble for cfg.theorem (plus companion ``tags`` sharing its solves).

    T11-v/T11-p and T13-v/T13-p reuse one solve per member.  Members are
    independent; with workers > 1 they run in a process pool and are reduced
    in member order, so the output does not depend on scheduling.  ``refine``
    (default: band-limited T11/T13 runs with N >= 32) adds refinement_check.
    """
    tags = tuple(tags) if tags else (cfg.theorem,)
    if cfg.theorem not in tags:
        tags = (cfg.theorem,) + tags
    if len({_group(t) for t in tags}) != 1:
        raise InvalidSpec(f"tags {tags} do not share one experiment")
    if cfg.ensemble < 1:
        raise InvalidSpec("ensemble size must be at least 1")
    for t in tags:
        check_exponents(t, cfg.order, cfg.p, cfg.q, cfg.n)
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            chunks = list(ex.map(_run_member, [cfg] * cfg.ensemble, range(cfg.ensemble), [tags] * cfg.ensemble))
    else:
        chunks = [_run_member(cfg, i, tags) for i in range(cfg.ensemble)]
    reports = [r for c in chunks for r in c]
    summary = {t: summarize([r for r in reports if r.theorem == t]) for t in tags}
    for t, s in summary.items():
        log.info("%s: max ratio %.4g, median %.4g over %d members", t, s["max_ratio"], s["median_ratio"], s["members"])
    if refine is None:
        refine = cfg.forcing.family == "bandlimited" and cfg.N >= 32 and _group(cfg.theorem) in ("T11", "T13")
    refinement = refinement_check(cfg) if refine else None
    return EnsembleResult(cfg, reports, summary, refinement)


@dataclass
class SweepResult:
    config: ExperimentConfig
    rows: list
    reports: list

    @property
    def failures(self) -> list[str]:
        return [f"{r.experiment_id}: {f}" for r in self.reports for f in r.failures]

    def max_ratio(self, N: int, alpha: float) -> float:
        for row in self.rows:
            if row["N"] == N and abs(row["alpha"] - alpha) < 1e-12:
                return row["max_ratio"]
        raise KeyError((N, alpha))


def alpha_sweep(cfg: ExperimentConfig, alphas: Sequence[float], levels: Optional[Sequence[int]] = None) -> SweepResult:
    """T11-p ratios over alphas and resolutions; alpha <= 1 + 1/p is run and flagged.

    One solve per member and level serves every alpha.  The forcing family is
    taken from cfg (the boundary family puts the layer a fixed number of cells
    from the wall, so it thins under refinement).
    """
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise InvalidSpec("alpha list is empty")
    levels = list(levels) if levels else [cfg.N // 2, cfg.N]
    for a in alphas:
        check_exponents("T11-p", a, cfg.p, cfg.q, cfg.n, allow_boundary=True)
    rows, reports = [], []
    for N in levels:
        c = cfg.at_resolution(N)
        reps = [r for i in range(c.ensemble) for r in _member_t11(c, i, ("T11-p",), alphas, allow_boundary=True)]
        reports += reps
        for a in alphas:
            sel = [r for r in reps if abs(r.order - a) < 1e-12]
            s = summarize(sel)
            rows.append({"N": N, "N_t": c.N_t, "alpha": a, "flagged": a <= 1 + 1 / cfg.p,
                         "max_ratio": s["max_ratio"], "median_ratio": s["median_ratio"]})
            log.info("sweep N=%d alpha=%g: max ratio %.4g", N, a, s["max_ratio"])
    return SweepResult(cfg, rows, reports)
