"""Riemann-Liouville fractional integrals and derivatives in time.

Signals are sampled at t_k = k*dt, k = 0..M-1, on [0, T] and extended by zero to
t < 0.  Integrals use product-trapezoid quadrature: f is taken piecewise linear
and the (t - s)^(sigma - 1) weight is integrated exactly on every cell.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import special
from scipy.signal import fftconvolve

from .errors import OrderOutOfRange, UnsupportedSignal

log = logging.getLogger(__name__)

Side = Literal["left_integral", "right_integral", "derivative", "adjoint_derivative"]


def frac_constants(sigma: float) -> tuple[float, float, float, float]:
    """Return (a, b, A, B) with a = int_0^inf cos(t) t^-sigma dt, b the sine analogue."""
    if not 0 < sigma < 1:
        raise OrderOutOfRange(f"sigma = {sigma} not in (0, 1)")
    g = special.gamma(1.0 - sigma)
    a = g * math.sin(math.pi * sigma / 2)
    b = g * math.cos(math.pi * sigma / 2)
    s = a * a + b * b
    return a, b, (a * a - b * b) / s, 2 * a * b / s


@dataclass(frozen=True)
class FracOpSpec:
    sigma: float
    side: Side = "left_integral"
    constants: tuple[float, float, float, float] | None = field(default=None, compare=False)

    def __post_init__(self):
        if not 0 < self.sigma <= 1:
            raise OrderOutOfRange(f"sigma = {self.sigma} not in (0, 1]")
        if self.side not in ("left_integral", "right_integral", "derivative", "adjoint_derivative"):
            raise ValueError(f"unknown side {self.side!r}")
        if self.constants is None and self.sigma < 1:
            object.__setattr__(self, "constants", frac_constants(self.sigma))


def _weights(sigma: float, M: int) -> tuple[np.ndarray, np.ndarray]:
    """Convolution weights c_m and first-column weights a_{0,k} (unscaled)."""
    m = np.arange(M, dtype=float)
    s1 = sigma + 1
    c = np.empty(M)
    c[0] = 1.0
    if M > 1:
        mm = m[1:]
        c[1:] = (mm + 1) ** s1 - 2 * mm**s1 + (mm - 1) ** s1
    a0 = np.zeros(M)
    if M > 1:
        k = m[1:]
        a0[1:] = (k - 1) ** s1 - (k - 1 - sigma) * k**sigma
    return c, a0


def left_integral(f: np.ndarray, sigma: float, dt: float, axis: int = 0) -> np.ndarray:
    """I_sigma f on the sample grid along ``axis``; sigma = 0 returns f."""
    if sigma == 0:
        return np.array(f, dtype=float, copy=True)
    if not 0 < sigma <= 1:
        raise OrderOutOfRange(f"sigma = {sigma} not in (0, 1]")
    x = np.moveaxis(np.asarray(f, dtype=float), axis, 0)
    M = x.shape[0]
    c, a0 = _weights(sigma, M)
    shape = (M,) + (1,) * (x.ndim - 1)
    if M <= 256:
        W = np.zeros((M, M))
        for k in range(M):
            W[k, : k + 1] = c[k::-1]
        W[:, 0] = a0
        W[0, 0] = 0.0
        out = np.tensordot(W, x, axes=(1, 0))
    else:
        out = fftconvolve(x, c.reshape(shape), axes=0)[:M]
        out += (a0 - c).reshape(shape) * x[:1]
        out[0] = 0.0
    out *= dt**sigma / special.gamma(sigma + 2)
    return np.moveaxis(out, 0, axis)


def _check_right(f: np.ndarray, axis: int) -> None:
    x = np.moveaxis(np.asarray(f), axis, 0)
    scale = np.max(np.abs(x)) if x.size else 0.0
    if np.max(np.abs(x[-1])) > 1e-12 * max(scale, 1e-300):
        raise UnsupportedSignal("right-sided operators need f(T) = 0")


def right_integral(f: np.ndarray, sigma: float, dt: float, axis: int = 0) -> np.ndarray:
    """J_sigma f = R I_sigma R f, R the time reversal on [0, T]."""
    _check_right(f, axis)
    rev = np.flip(np.asarray(f, dtype=float), axis=axis)
    return np.flip(left_integral(rev, sigma, dt, axis), axis=axis)


def derivative(f: np.ndarray, sigma: float, dt: float, axis: int = 0) -> np.ndarray:
    """D^sigma f = d/dt I_(1-sigma) f, centred differences."""
    return np.gradient(left_integral(f, 1.0 - sigma, dt, axis), dt, axis=axis)


def adjoint_derivative(f: np.ndarray, sigma: float, dt: float, axis: int = 0) -> np.ndarray:
    """D*^sigma f = d/dt J_(1-sigma) f."""
    if sigma == 1:
        _check_right(f, axis)
        return np.gradient(np.asarray(f, dtype=float), dt, axis=axis)
    return np.gradient(right_integral(f, 1.0 - sigma, dt, axis), dt, axis=axis)


def frac_apply(f: np.ndarray, spec: FracOpSpec, dt: float, axis: int = 0) -> np.ndarray:
    ops = {
        "left_integral": left_integral,
        "right_integral": right_integral,
        "derivative": derivative,
        "adjoint_derivative": adjoint_derivative,
    }
    return ops[spec.side](f, spec.sigma, dt, axis)


def frac_duality_check(f: np.ndarray, g: np.ndarray, sigma: float, dt: float) -> tuple[float, float, float]:
    """Compare int I_sigma f * g dt with int f * J_sigma g dt (trapezoid pairing)."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    lhs = float(np.trapezoid(left_integral(f, sigma, dt) * g, dx=dt))
    rhs = float(np.trapezoid(f * right_integral(g, sigma, dt), dx=dt))
    scale = max(abs(lhs), abs(rhs))
    gap = abs(lhs - rhs) / scale if scale > 0 else 0.0
    return lhs, rhs, gap


# whole-line operators on periodic signals ------------------------------------------

def periodic_integral(g: np.ndarray, sigma: float, T: float, side: Literal["left", "right"] = "left",
                      axis: int = 0) -> np.ndarray:
    """I_sigma (left) or J_sigma (right) integrated from -inf / to +inf for a T-periodic signal.

    ``g`` holds one period, M samples at t_k = k*T/M.  With numpy's e^{-i w t}
    transform the symbols are (i w)^-sigma and (-i w)^-sigma; the mean and the
    Nyquist mode are dropped.
    """
    if not 0 < sigma <= 1:
        raise OrderOutOfRange(f"sigma = {sigma} not in (0, 1]")
    x = np.asarray(g, dtype=float)
    M = x.shape[axis]
    w = 2 * np.pi * np.fft.rfftfreq(M, T / M)
    sgn = 1.0 if side == "left" else -1.0
    sym = np.zeros(w.shape, dtype=complex)
    sym[1:] = (sgn * 1j * w[1:]) ** -sigma
    if M % 2 == 0:
        sym[-1] = 0.0
    shape = [1] * x.ndim
    shape[axis] = -1
    return np.fft.irfft(np.fft.rfft(x, axis=axis) * sym.reshape(shape), n=M, axis=axis)


def right_via_hilbert(g: np.ndarray, sigma: float, T: float, axis: int = 0) -> np.ndarray:
    """J_sigma g written through I_sigma and the Hilbert transform H (cos -> sin).

    J_sigma = -I_sigma (A_sigma + B_sigma H) with the constants of frac_constants;
    the overall sign follows from conj(m)/m = exp(i pi sigma sign w) = -(A - i B sign w).
    """
    from .transforms import hilbert_array

    _, _, A, B = frac_constants(sigma)
    x = np.asarray(g, dtype=float)
    return -periodic_integral(A * x + B * hilbert_array(x, axis=axis), sigma, T, "left", axis)
