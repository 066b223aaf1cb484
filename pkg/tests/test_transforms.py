import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from halfstokes.errors import NegativeTime, SymbolSingularity
from halfstokes.fields import BoundaryField, GridSpec, ScalarField, TimeSeriesField, TimeSpec, extend_array
from halfstokes.transforms import (
    MultiplierSymbol,
    apply_multiplier,
    calI_tangential,
    duhamel_heat,
    exponential_weights,
    heat_semigroup,
    hilbert_time,
    newtonian_dirichlet,
    poisson_extend,
    riesz_full,
    riesz_tan,
    singular_transform,
)
from conftest import bandlimited

G2 = GridSpec(2, 4.0, 4.0, 32)
G3 = GridSpec(3, 4.0, 4.0, 16)


def heat_gaussian(grid, s, center=None, full=True):
    """Heat kernel at time s: (4 pi s)^(-d/2) exp(-|x - c|^2 / 4s), variance 2s."""
    X = grid.mesh(full)
    center = center or (0.0,) * grid.n
    r2 = sum((x - c) ** 2 for x, c in zip(X, center))
    a = (4 * math.pi * s) ** (-grid.n / 2) * np.exp(-r2 / (4 * s))
    return np.broadcast_to(a, grid.full_shape if full else grid.shape).copy()


def test_identity_symbol():
    a = bandlimited(G2, 0)
    f = ScalarField(G2, a + 0.3, full=True)
    out = apply_multiplier(f, MultiplierSymbol(lambda K: np.ones(1), dc="preserve"))
    np.testing.assert_allclose(out.samples, f.samples, atol=1e-14)


def test_dc_policy():
    f = ScalarField(G2, np.full(G2.full_shape, 2.0), full=True)
    one = lambda K: np.ones(1)
    assert np.allclose(apply_multiplier(f, MultiplierSymbol(one, dc="zero")).samples, 0.0)
    assert np.allclose(apply_multiplier(f, MultiplierSymbol(one, dc="preserve")).samples, 2.0)


def test_singular_set_on_resolved_frequency_raises():
    f = ScalarField(G2, bandlimited(G2, 1), full=True)
    sym = MultiplierSymbol(lambda K: 1.0 / K[0], name="1/k1")
    with pytest.raises(SymbolSingularity):
        apply_multiplier(f, sym)


@pytest.mark.parametrize("grid", [GridSpec(2, 4.0, 4.0, 128), GridSpec(3, 4.0, 4.0, 64)])
def test_heat_full_gaussian_closed_form(grid):
    # resolved on the grid and negligible at the box edges
    s, t = 0.06, 0.06
    f = ScalarField(grid, heat_gaussian(grid, s), full=True)
    out = heat_semigroup(f, t, "full").samples
    np.testing.assert_allclose(out, heat_gaussian(grid, s + t), atol=1e-10 * out.max())


def test_heat_zero_time_identity_and_negative_time():
    f = ScalarField(G2, bandlimited(G2, 2, full=False))
    for mode in ("dirichlet", "reflected"):
        assert np.allclose(heat_semigroup(f, 0.0, mode).samples[:, 1:-1], f.samples[:, 1:-1]) or mode == "reflected"
    ff = ScalarField(G2, bandlimited(G2, 2), full=True)
    np.testing.assert_allclose(heat_semigroup(ff, 0.0, "full").samples, ff.samples, atol=1e-14)
    with pytest.raises(NegativeTime):
        heat_semigroup(ff, -0.1)


@given(st.floats(0.0, 0.5), st.floats(0.0, 0.5), st.sampled_from(["full", "dirichlet"]), st.integers(0, 20))
def test_heat_semigroup_law(s, t, mode, seed):
    full = mode == "full"
    f = ScalarField(G2, bandlimited(G2, seed, full=full), full=full)
    a = heat_semigroup(heat_semigroup(f, s, mode), t, mode).samples
    b = heat_semigroup(f, s + t, mode).samples
    assert np.linalg.norm(a - b) <= 1e-8 * np.linalg.norm(b) + 1e-300


@given(st.floats(0.0, 2.0), st.integers(0, 20))
def test_dirichlet_heat_keeps_zero_trace(t, seed):
    a = bandlimited(G2, seed, full=True)
    odd = 0.5 * (a - np.roll(np.flip(a, -1), 1, -1))
    f = ScalarField(G2, odd[:, : G2.N // 2 + 1])
    out = heat_semigroup(f, t, "dirichlet").samples
    assert np.abs(out[:, 0]).max() < 1e-10 * np.abs(f.samples).max()


def test_reflected_heat_is_mirror_image():
    g = GridSpec(2, 4.0, 4.0, 128)
    a = heat_gaussian(g, 0.02, (0.3, 1.5), full=False)
    out = heat_semigroup(ScalarField(g, a), 0.05, "reflected").samples
    expected = heat_gaussian(g, 0.07, (0.3, -1.5), full=False)
    np.testing.assert_allclose(out, expected, atol=1e-9)


def test_riesz_squares_sum_to_minus_identity():
    for grid in (G2, G3):
        f = ScalarField(grid, bandlimited(grid, 3), full=True)
        acc = sum(riesz_full(riesz_full(f, i), i).samples for i in range(grid.n))
        np.testing.assert_allclose(acc, -f.samples, atol=1e-12)


@given(st.integers(0, 50))
def test_vector_riesz_is_l2_isometry(seed):
    f = ScalarField(G3, bandlimited(G3, seed), full=True)
    total = sum(np.sum(riesz_full(f, i).samples ** 2) for i in range(3))
    assert abs(math.sqrt(total) / np.linalg.norm(f.samples) - 1) < 1e-10


def test_riesz_tan_of_x1_independent_is_zero():
    X = G3.mesh()
    a = np.broadcast_to(np.cos(math.pi * X[1] / 2) * np.exp(-X[2]), G3.shape)
    assert np.abs(riesz_tan(ScalarField(G3, a), 0).samples).max() < 1e-14
    assert np.abs(singular_transform(ScalarField(G3, a), "riesz_tan", 1).samples).max() > 0.1


def test_riesz_tan_symbol_on_cosine():
    X = G2.mesh()
    k = 2 * math.pi / G2.L_tan  # resolved
    a = np.broadcast_to(np.cos(k * X[0]) * (1 + X[1]), G2.shape)
    out = riesz_tan(ScalarField(G2, a), 0).samples
    # -i sign(k) acting on cos gives sin
    np.testing.assert_allclose(out, np.broadcast_to(np.sin(k * X[0]) * (1 + X[1]), G2.shape), atol=1e-12)


def test_hilbert_time_cos_to_sin():
    t = TimeSpec(1.0, 64)
    w = 2 * math.pi * 3
    data = np.cos(w * t.times())[:, None, None, None] * np.ones((1, 1) + G2.shape)
    out = hilbert_time(TimeSeriesField(G2, t, data)).data[:, 0, 0, 0]
    np.testing.assert_allclose(out, np.sin(w * t.times()), atol=1e-12)


def test_poisson_extend_constant_and_cosine():
    one = poisson_extend(BoundaryField(G3, np.ones(G3.boundary_shape))).samples
    np.testing.assert_allclose(one, 1.0, atol=1e-14)
    X = G3.mesh()
    k1, k2 = math.pi / 4, math.pi / 2
    g = np.cos(k1 * X[0] + k2 * X[1])[..., 0]
    out = poisson_extend(BoundaryField(G3, g)).samples
    expected = np.exp(-X[2] * math.hypot(k1, k2)) * np.cos(k1 * X[0] + k2 * X[1])
    np.testing.assert_allclose(out, expected, atol=1e-13)


def _lap_interior(a, grid):
    h = grid.spacings
    out = 0.0
    for j in range(grid.n - 1):
        out = out + (np.roll(a, 1, j) - 2 * a + np.roll(a, -1, j)) / h[j] ** 2
    out = out[..., 1:-1] + (a[..., 2:] - 2 * a[..., 1:-1] + a[..., :-2]) / h[-1] ** 2
    return out


def test_poisson_extension_is_discretely_harmonic_at_second_order():
    # boundary data must be negligible at x' = +-L_tan, else the periodic kink dominates
    errs, hs = [], []
    for N in (32, 64, 128):
        g = GridSpec(2, 8.0, 4.0, N)
        x = g.tangential_coords()
        w = poisson_extend(BoundaryField(g, np.exp(-0.25 * x**2))).samples
        errs.append(np.abs(_lap_interior(w, g)).max())
        hs.append(g.h)
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope >= 1.75


def test_exponential_weights_limits():
    lam = np.array([0.0, 1e-6, 1.0, 1e4])
    dt = 0.1
    E, w0, w1 = exponential_weights(lam, dt)
    np.testing.assert_allclose(w0[:2], dt / 2, rtol=1e-6)
    np.testing.assert_allclose(w1[:2], dt / 2, rtol=1e-6)
    # exact integral of exp(-lam(dt - s)) against 1
    np.testing.assert_allclose(w0[2] + w1[2], (1 - math.exp(-0.1)) / 1.0, rtol=1e-12)
    # stiff limit: quasi-static response 1/lam minus the ramp correction 1/(lam^2 dt)
    assert abs(w1[3] - (1e-4 - 1e-8 / dt)) < 1e-15


def test_duhamel_zero_and_constant_eigenmode():
    t = TimeSpec(1.0, 16)
    z = duhamel_heat(TimeSeriesField.zeros(G2, t, 1))
    assert not z.data.any()
    X = G2.mesh(full=True)
    kx, kn = math.pi / 2, math.pi / 4
    g = np.broadcast_to(np.cos(kx * X[0]) * np.cos(kn * X[1]), G2.full_shape)
    f = TimeSeriesField(G2, t, np.broadcast_to(g, (17, 1) + G2.full_shape), full=True)
    u = duhamel_heat(f, "direct").data[:, 0]
    lam = kx**2 + kn**2
    exact = (1 - np.exp(-lam * t.times()))[:, None, None] / lam * g
    np.testing.assert_allclose(u, exact, atol=1e-12)


def test_duhamel_time_dependent_eigenmode_second_order():
    X = G2.mesh(full=True)
    kx, kn = math.pi / 2, math.pi / 4
    lam = kx**2 + kn**2
    w = 2 * math.pi
    g = np.broadcast_to(np.cos(kx * X[0]) * np.cos(kn * X[1]), G2.full_shape)
    errs = []
    for N_t in (16, 32):
        t = TimeSpec(1.0, N_t)
        s = t.times()
        f = TimeSeriesField(G2, t, np.sin(w * s)[:, None, None, None] * g, full=True)
        u = duhamel_heat(f, "direct").data[:, 0]
        exact = (lam * np.sin(w * s) - w * np.cos(w * s) + w * np.exp(-lam * s)) / (lam**2 + w**2)
        errs.append(np.abs(u - exact[:, None, None] * g).max())
    assert errs[0] / errs[1] > 3.5


def test_duhamel_dirichlet_trace_zero():
    t = TimeSpec(0.5, 8)
    rng = np.random.default_rng(0)
    data = np.stack([bandlimited(G2, k, full=False) for k in range(9)])[:, None]
    u = duhamel_heat(TimeSeriesField(G2, t, data), "dirichlet").data
    assert np.abs(u[:, 0, :, 0]).max() < 1e-12


def test_newtonian_dirichlet_eigenmode_and_trace():
    X = G3.mesh()
    k1, k2, kn = math.pi / 4, math.pi / 2, 3 * math.pi / 4
    w = np.sin(kn * X[2]) * np.cos(k1 * X[0] + k2 * X[1])
    g = -(k1**2 + k2**2 + kn**2) * w
    out = newtonian_dirichlet(ScalarField(G3, np.broadcast_to(g, G3.shape))).samples
    np.testing.assert_allclose(out, np.broadcast_to(w, G3.shape), atol=1e-12)
    rnd = newtonian_dirichlet(ScalarField(G3, bandlimited(G3, 4, full=False))).samples
    assert np.abs(rnd[..., 0]).max() < 1e-14
    assert not newtonian_dirichlet(ScalarField(G3, np.zeros(G3.shape))).samples.any()


def test_calI_eigenmode_and_x_prime_independent():
    X = G3.mesh()
    k1, k2 = math.pi / 4, math.pi / 2
    g = np.broadcast_to(np.cos(k1 * X[0] + k2 * X[1]) * np.exp(-X[2]), G3.shape)
    out = calI_tangential(ScalarField(G3, g)).samples
    np.testing.assert_allclose(out, -g / (2 * math.hypot(k1, k2)), atol=1e-13)
    flat = np.broadcast_to(np.exp(-X[2]), G3.shape)
    assert np.abs(calI_tangential(ScalarField(G3, flat)).samples).max() < 1e-14


@given(st.integers(0, 30), st.sampled_from([0, 1]))
def test_calI_of_derivative_is_half_riesz(seed, j):
    a = bandlimited(G3, seed, full=False)
    A = np.fft.fft(a, axis=j)
    k = 2 * np.pi * np.fft.fftfreq(G3.N, G3.h_tan)
    shape = [1] * 3
    shape[j] = -1
    da = np.fft.ifft(1j * k.reshape(shape) * A, axis=j).real
    lhs = calI_tangential(ScalarField(G3, da)).samples
    rhs = 0.5 * riesz_tan(ScalarField(G3, a), j).samples
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
