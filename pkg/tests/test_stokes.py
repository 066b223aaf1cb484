import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from halfstokes.errors import GridMismatch, NonzeroTrace, NotDivergenceFree
from halfstokes.fields import GridSpec, ScalarField, TimeSeriesField, TimeSpec, VectorField, make_grid
from halfstokes.stokes import (
    ForcingSpec,
    SolverConstants,
    helmholtz_split,
    leray_halfspace,
    pressure_forced,
    pressure_p2_split,
    solve_forced,
    solve_full,
    solve_initial,
    ukai_symbol_closed,
    ukai_symbol_composed,
    ukai_U,
    ukai_V,
    velocity_part_u,
    velocity_part_w,
    w_source,
)
from halfstokes.transforms import riesz_tan_array, spectral
from halfstokes.verify import _d_h, _d2_h, pde_residual, random_divfree_field, random_divfree_forcing
from halfstokes.fields import extend_array, restrict_array


def setup(N, n=2, seed=3):
    g, t = make_grid(n, 4.0, 4.0, N, 1.0, N)
    return g, t, random_divfree_forcing(seed, g, t)


@pytest.fixture(scope="module")
def level64():
    g, t, fs = setup(64)
    return g, t, fs, solve_forced(fs)


def zero_forcing(g, t):
    return TimeSeriesField.zeros(g, t, g.n)


# forced problem ---------------------------------------------------------------------------

def test_zero_forcing_gives_zero():
    g, t = make_grid(2, 4.0, 4.0, 16, 1.0, 8)
    f = zero_forcing(g, t)
    sol = solve_forced(f)
    assert not sol.v.data.any() and not sol.p.data.any()
    assert not velocity_part_u(f).data.any()
    assert not velocity_part_w(f).data.any()
    p1, p2 = pressure_forced(f)
    assert not p1.data.any() and not p2.data.any()
    Q, P = pressure_p2_split(f)
    assert not Q.data.any() and not P.data.any()


def test_rejects_divergent_forcing():
    g, t = make_grid(2, 4.0, 4.0, 16, 1.0, 8)
    x = g.mesh(full=False)
    data = np.zeros((9, 2) + g.shape)
    data[:, 0] = np.exp(-(x[0] ** 2) - (x[1] - 2) ** 2)
    with pytest.raises(NotDivergenceFree):
        solve_forced(TimeSeriesField(g, t, data))
    with pytest.raises(GridMismatch):
        ForcingSpec(TimeSeriesField(g, t, data[:, :1]))


def test_forcing_is_solenoidal_and_supported(level64):
    g, t, fs, _ = level64
    from halfstokes.stokes import divergence_defect

    assert divergence_defect(fs.f.data, g) < 1e-8
    assert np.abs(fs.f.data[..., :3]).max() == 0.0


def test_part_u_trace_and_eigenmode(level64):
    g, t, fs, _ = level64
    u = velocity_part_u(fs)
    assert np.abs(u.data[..., 0]).max() < 1e-9 * np.abs(u.data).max()
    # time-constant sine eigenmode, already odd in x_n: exact Duhamel factor
    x = g.mesh(full=False)
    k1, k2 = 2 * np.pi / 8 * 2, np.pi / 4 * 3
    mode = np.cos(k1 * x[0]) * np.sin(k2 * x[1])
    data = np.broadcast_to(mode, (t.N_t + 1, 2) + g.shape).copy()
    out = velocity_part_u(TimeSeriesField(g, t, data))
    lam = k1**2 + k2**2
    s = t.times()
    expected = ((1 - np.exp(-lam * s)) / lam)[:, None, None, None] * data
    assert np.abs(out.data - expected).max() < 1e-10


def test_part_w_trace_and_elliptic_residual():
    rel = []
    for N in (64, 128):
        g, t, fs = setup(N)
        w = velocity_part_w(fs)
        F = w_source(fs)
        assert np.abs(w.data[..., 0]).max() < 1e-12 * np.abs(w.data).max()
        k = t.N_t // 2
        inner = (Ellipsis, slice(2, g.shape[-1] - 2))
        lap = sum(_d2_h(w.data[k], g, j, 4) for j in range(2))
        div = sum(_d_h(F.data[k, j], g, j, 4) for j in range(2))
        rel.append(np.linalg.norm(lap - div) / np.linalg.norm(div))
    assert rel[1] < rel[0] / 3


def test_forced_residual_traces_and_convergence():
    recs = []
    for N in (32, 64, 128):
        g, t, fs = setup(N)
        sol = solve_forced(fs)
        r = pde_residual(sol, fs.f, t_start=2 / 32)
        assert r.trace_max <= 1e-8
        assert not sol.v.data[0].any()
        recs.append(r)
    for a, b in zip(recs, recs[1:]):
        assert a.momentum_l2 / b.momentum_l2 >= 3.0
        assert a.divergence_l2 / b.divergence_l2 >= 3.0
        assert a.harmonic_l2 / b.harmonic_l2 >= 3.0
    assert not recs[-1].failures()


def test_forced_residual_in_three_dimensions():
    g, t, fs = setup(32, n=3)
    r = pde_residual(solve_forced(fs), fs.f)
    assert not r.failures(), r.failures()


def test_corrupted_constant_stalls_refinement():
    drops = {}
    for w in (4.0, 3.0):
        vals = []
        for N in (32, 64):
            g, t, fs = setup(N)
            sol = solve_forced(fs, SolverConstants(w=w))
            vals.append(pde_residual(sol, fs.f, t_start=2 / 32).divergence_l2)
        drops[w] = vals[0] / vals[1]
    assert drops[4.0] >= 3.0
    assert drops[3.0] < 3.0


def test_pressure_normal_only_forcing_is_zero():
    g, t = make_grid(2, 4.0, 4.0, 32, 1.0, 8)
    x = g.mesh(full=False)
    data = np.zeros((9, 2) + g.shape)
    data[:, 1] = np.exp(-(x[0] ** 2) - (x[1] - 2) ** 2)
    p1, p2 = pressure_forced(TimeSeriesField(g, t, data))
    assert not p1.data.any() and not p2.data.any()


def test_p2_split_consistency_converges():
    gaps = []
    for N in (32, 64, 128):
        g, t, fs = setup(N)
        Q, P = pressure_p2_split(fs)
        _, p2 = pressure_forced(fs)
        dP = np.gradient(P.data, t.dt, axis=0)
        gaps.append(np.linalg.norm((Q.data + dP - p2.data)[2:-1]) / np.linalg.norm(p2.data[2:-1]))
    assert gaps[0] / gaps[1] >= 3 and gaps[1] / gaps[2] >= 3
    assert gaps[-1] < 1e-3


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_forced_linearity(a, b):
    g, t = make_grid(2, 4.0, 4.0, 32, 1.0, 8)
    f1 = random_divfree_forcing(1, g, t).f
    f2 = random_divfree_forcing(2, g, t).f
    s = solve_forced(TimeSeriesField(g, t, a * f1.data + b * f2.data), check=False)
    s1, s2 = solve_forced(f1), solve_forced(f2)
    scale = max(1.0, abs(a) + abs(b)) * (np.abs(s1.v.data).max() + np.abs(s2.v.data).max())
    assert np.abs(s.v.data - a * s1.v.data - b * s2.v.data).max() <= 1e-12 * scale
    assert np.abs(s.p.data - a * s1.p.data - b * s2.p.data).max() <= 1e-12 * max(1.0, abs(a) + abs(b)) * (
        np.abs(s1.p.data).max() + np.abs(s2.p.data).max())


# initial-value problem -----------------------------------------------------------------------

def test_ukai_V_specializations():
    g = GridSpec(3, 4.0, 4.0, 16)
    x = g.mesh(full=False)
    bump = np.broadcast_to(np.sin(np.pi * x[2] / 4) ** 2 * np.cos(2 * np.pi * x[0] / 8), g.shape)
    v0 = VectorField.from_array(g, np.stack([0 * bump, 0 * bump, bump]))
    assert np.allclose(ukai_V(v0, "V1").samples, bump, atol=1e-14)
    V2 = ukai_V(v0, "V2")
    for j in range(2):
        assert np.allclose(V2[j].samples, -riesz_tan_array(bump, g, j), atol=1e-14)
    # tangentially divergence-free, zero tangential mean, no normal part
    c = np.broadcast_to(np.sin(np.pi * x[2] / 4) ** 2, g.shape)
    a1 = c * np.cos(2 * np.pi * x[1] / 8)
    a2 = c * np.cos(2 * np.pi * x[0] / 8)
    v0 = VectorField.from_array(g, np.stack([a1, a2, 0 * c]))
    assert np.abs(ukai_V(v0, "V1").samples).max() < 1e-14
    V2 = ukai_V(v0, "V2")
    assert np.allclose(V2[0].samples, a1, atol=1e-14) and np.allclose(V2[1].samples, a2, atol=1e-14)


@given(st.integers(0, 50), st.floats(-2, 2), st.floats(-2, 2))
def test_ukai_V_linear(seed, a, b):
    g = GridSpec(2, 4.0, 4.0, 16)
    rng = np.random.default_rng(seed)
    u, w = rng.standard_normal((2, 2) + g.shape)
    U, W = VectorField.from_array(g, u), VectorField.from_array(g, w)
    S = VectorField.from_array(g, a * u + b * w)
    lhs = ukai_V(S, "V1").samples
    rhs = a * ukai_V(U, "V1").samples + b * ukai_V(W, "V1").samples
    assert np.abs(lhs - rhs).max() < 1e-12 * (1 + abs(a) + abs(b)) * 10


def test_ukai_U_zero_and_symbol_routes():
    g = GridSpec(3, 4.0, 4.0, 16)
    assert not ukai_U(ScalarField(g, np.zeros(g.shape))).samples.any()
    gap = np.abs(ukai_symbol_composed(g) - ukai_symbol_closed(g)).max()
    assert gap < 1e-10


def test_ukai_U_l2_bounded():
    g = GridSpec(2, 4.0, 4.0, 32)
    rng = np.random.default_rng(0)
    ratios = {"periodic": [], "halfline": []}
    for _ in range(12):
        a = rng.standard_normal(g.shape)
        a[:, 0] = 0.0
        for route in ratios:
            out = ukai_U(ScalarField(g, a), route).samples
            ratios[route].append(np.linalg.norm(out) / np.linalg.norm(a))
    # |k'| / | |k'| + i k_n | <= 1 on the doubled box; restriction can only shrink
    assert max(ratios["periodic"]) <= 1 + 1e-12
    assert max(ratios["halfline"]) / min(ratios["halfline"]) < 2.0


def test_initial_checks():
    g, t = make_grid(2, 4.0, 4.0, 32, 1.0, 8)
    x = g.mesh(full=False)
    bump = np.broadcast_to(np.exp(-x[0] ** 2) + 0 * x[1], g.shape)
    bad = VectorField.from_array(g, np.stack([bump, 0 * bump]))
    with pytest.raises(NonzeroTrace):
        solve_initial(bad, t)
    sol = solve_initial(VectorField.from_array(g, np.zeros((2,) + g.shape)), t)
    assert not sol.v.data.any() and not sol.p.data.any()


def test_initial_residual_convergence():
    recs = []
    for N in (32, 64, 128):
        g, t = make_grid(2, 4.0, 4.0, N, 1.0, N)
        v0 = random_divfree_field(5, g)
        sol = solve_initial(v0, t)
        r = pde_residual(sol, None, v0, t_start=2 / 32)
        assert r.trace_max <= 1e-8
        recs.append(r)
    for a, b in zip(recs, recs[1:]):
        assert a.momentum_l2 / b.momentum_l2 >= 3.0
        assert a.divergence_l2 / b.divergence_l2 >= 3.0
        assert a.harmonic_l2 / b.harmonic_l2 >= 3.0
        assert a.initial_mismatch / b.initial_mismatch >= 3.0
    assert not recs[-1].failures(), recs[-1].failures()


def test_solve_full_superposition(level64):
    g, t, fs, forced = level64
    v0 = random_divfree_field(5, g)
    assert solve_full(fs, None).v.data.tobytes() == forced.v.data.tobytes()
    init = solve_initial(v0, t)
    both = solve_full(fs, v0)
    assert np.abs(both.v.data - forced.v.data - init.v.data).max() <= 4 * np.finfo(float).eps * np.abs(both.v.data).max()
    zero = solve_full(zero_forcing(g, t), v0)
    assert np.abs(zero.v.data - init.v.data).max() < 1e-15 * np.abs(init.v.data).max()
    r = pde_residual(both, fs.f, v0)
    assert not r.failures(), r.failures()


# Helmholtz and Leray splits -----------------------------------------------------------------

def test_helmholtz_constant_tensor():
    g, t = make_grid(2, 4.0, 4.0, 16, 1.0, 4)
    T = TimeSeriesField(g, t, np.broadcast_to(np.array([1.0, 2.0, 2.0, -1.0])[None, :, None, None], (5, 4) + g.shape).copy())
    pi, w = helmholtz_split(T)
    assert np.abs(pi.data).max() < 1e-13 and np.abs(w.data).max() < 1e-13


def test_helmholtz_product_divergence_converges():
    rel = []
    for N in (32, 64, 128):
        g, t = make_grid(2, 4.0, 4.0, N, 1.0, 4)
        v = random_divfree_field(7, g).as_array()
        T = np.stack([v[i] * v[j] for i in range(2) for j in range(2)])
        pi, w = helmholtz_split(TimeSeriesField(g, t, np.repeat(T[None], 5, axis=0)))
        assert np.abs(pi.data[..., 0]).max() < 1e-14 * np.abs(pi.data).max()
        parts = [_d_h(w.data[1, j], g, j, 4) for j in range(2)]
        rel.append(np.linalg.norm(sum(parts)) / np.sqrt(sum(np.sum(p**2) for p in parts)))
    assert rel[0] / rel[1] >= 3 and rel[1] / rel[2] >= 3


def test_leray_halfspace_split():
    g, t = make_grid(2, 4.0, 4.0, 64, 1.0, 4)
    x = g.mesh(full=False)
    G = np.stack([np.exp(-x[0] ** 2 - (x[1] - 2) ** 2), x[0] * np.exp(-x[0] ** 2 - (x[1] - 1.5) ** 2)])
    phi, w = leray_halfspace(TimeSeriesField(g, t, np.repeat(G[None], 5, axis=0)))
    sg = spectral(g)
    a = w.data[1]
    div = sg.irfftn(sum(sg.deriv_r(j) * sg.rfftn(extend_array(a[j], "odd" if j else "even")) for j in range(2)))
    assert np.abs(div).max() < 1e-10 * np.abs(a).max()
    assert np.abs(a[1, :, 0]).max() < 1e-12
    grad = [restrict_array(sg.irfftn(sg.deriv_r(j) * sg.rfftn(extend_array(phi.data[1, 0], "even")))) for j in range(2)]
    # odd extension drops G_n on the two planes; the identity holds on the open slab
    assert np.abs((np.stack(grad) + a - G)[..., 1:-1]).max() < 1e-10
