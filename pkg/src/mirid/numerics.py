"""Numerical substrate: centered FFTs, conjugate gradients, Adam, seeded RNG.

All arrays are double precision (complex128 / float64). The Fourier pair is
centered (DC at index n//2 on each axis) and orthonormal, so Parseval holds
exactly and conjugate-symmetry reflections are index-simple.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


def fft2c(x: np.ndarray) -> np.ndarray:
    """Centered orthonormal 2-D FFT over the last two axes.

    DC of the input is expected at index n//2 on each of the last two axes
    and the output DC lands at the same index. Scaling is 1/sqrt(ny*nx), so
    the transform is unitary.
    """
    x = np.asarray(x)
    if x.shape[-1] < 1 or x.shape[-2] < 1:
        raise ValueError("last two extents must be >= 1")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input to fft2c")
    shifted = np.fft.ifftshift(x, axes=(-2, -1))
    k = np.fft.fft2(shifted, axes=(-2, -1), norm="ortho")
    return np.fft.fftshift(k, axes=(-2, -1)).astype(np.complex128)


def ifft2c(k: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`fft2c` (same centering and scaling)."""
    k = np.asarray(k)
    if k.shape[-1] < 1 or k.shape[-2] < 1:
        raise ValueError("last two extents must be >= 1")
    if not np.all(np.isfinite(k)):
        raise ValueError("non-finite input to ifft2c")
    shifted = np.fft.ifftshift(k, axes=(-2, -1))
    x = np.fft.ifft2(shifted, axes=(-2, -1), norm="ortho")
    return np.fft.fftshift(x, axes=(-2, -1)).astype(np.complex128)


def cg_solve(
    apply: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    max_iters: int,
    tol: float = 1e-10,
) -> tuple[np.ndarray, float]:
    """Conjugate gradients for a self-adjoint positive-definite map.

    Starts from the zero vector and runs until ``max_iters`` steps or until
    the residual 2-norm drops below ``tol * ||rhs||``. Returns the iterate
    and the final residual norm.

    ``apply`` must be linear, self-adjoint and positive definite on the
    space of ``rhs``; nothing here checks that, but a shape mismatch or a
    non-finite intermediate raises.
    """
    rhs = np.asarray(rhs)
    if not np.all(np.isfinite(rhs)):
        raise ValueError("non-finite rhs")
    x = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    rs = float(np.vdot(r, r).real)
    rhs_norm = np.sqrt(rs)
    if rhs_norm == 0.0:
        return x, 0.0
    threshold = tol * rhs_norm
    for _ in range(max_iters):
        if np.sqrt(rs) <= threshold:
            break
        ap = apply(p)
        if ap.shape != p.shape:
            raise ValueError(f"apply returned shape {ap.shape}, expected {p.shape}")
        denom = float(np.vdot(p, ap).real)
        if not np.isfinite(denom) or denom <= 0.0:
            raise FloatingPointError("CG breakdown: non-positive or non-finite curvature")
        alpha = rs / denom
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(np.vdot(r, r).real)
        if not np.isfinite(rs_new):
            raise FloatingPointError("non-finite residual in CG")
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, float(np.sqrt(rs))


@dataclass
class AdamState:
    """Moment estimates and step counter for one parameter tensor."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), 0)


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Returns new params and new state."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ValueError("params, grads and moments must share a shape")
    if not np.all(np.isfinite(grads)):
        raise ValueError("non-finite gradients")
    t = state.step_count + 1
    m = beta1 * state.first_moment + (1.0 - beta1) * grads
    v = beta2 * state.second_moment + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(m, v, t)


class RngStream:
    """Counter-keyed random stream; the draw sequence depends only on the seed.

    ``child(*path)`` derives an independent sub-stream identified by an
    integer path, so per-direction / per-shot streams are reproducible no
    matter in which order they are consumed.
    """

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._key = tuple(int(k) for k in _key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self._key)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def child(self, *path: int) -> "RngStream":
        return RngStream(self.seed, self._key + tuple(path))

    def normal(self, shape=None) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float, high: float, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape=None):
        return self._gen.integers(low, high, size=shape)

    def shuffle(self, items: list) -> None:
        self._gen.shuffle(items)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)


def draw_complex_gaussian(rng: RngStream, shape, sigma: float) -> np.ndarray:
    """Circularly-symmetric complex Gaussian, total variance sigma^2 per entry."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    scale = sigma / np.sqrt(2.0)
    return scale * (rng.normal(shape) + 1j * rng.normal(shape))
