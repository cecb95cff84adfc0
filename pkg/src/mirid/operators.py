"""Linear encoding operators for multi-shot parallel-imaging reconstruction.

Array conventions (complex128 / bool everywhere):

- shot image stack  x : [nshots, ny, nx]
- k-space data      b : [nshots, ncoils, ny, nx], zero outside the mask
- coil maps         C : [ncoils, ny, nx], sum-of-squares normalized
- line mask         M : bool [nshots, ny], one row of sampled ky lines per
                        shot, broadcast over coils and kx

The forward model per shot m and coil c is  b[m,c] = M_m * fft2c(C_c * x_m).
Shot-to-shot phase lives in x, not in C.

The virtual-coil pair doubles the shot axis with the complex conjugate and
1/sqrt(2) scaling, so vc_reduce(vc_expand(x)) == x. Conjugation is
antilinear, so the expand/reduce pair is adjoint under the real inner
product Re<a, b>; that is the inner product all gradient plumbing in this
package uses.
"""

from __future__ import annotations

import numpy as np

from .numerics import fft2c, ifft2c


def apply_line_mask(k: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero all k-space lines a shot did not sample.

    ``k`` is [nshots, ..., ny, nx]; ``mask`` is bool [nshots, ny] and is
    broadcast over any middle axes and over kx.
    """
    k = np.asarray(k)
    mask = np.asarray(mask, dtype=bool)
    if k.shape[0] != mask.shape[0] or k.shape[-2] != mask.shape[1]:
        raise ValueError(f"mask {mask.shape} incompatible with k-space {k.shape}")
    shape = (mask.shape[0],) + (1,) * (k.ndim - 3) + (mask.shape[1], 1)
    return k * mask.reshape(shape)


def _check_shapes(x: np.ndarray, coils: np.ndarray, mask: np.ndarray) -> None:
    if x.ndim != 3:
        raise ValueError(f"shot stack must be [nshots, ny, nx], got {x.shape}")
    if coils.ndim != 3 or coils.shape[1:] != x.shape[1:]:
        raise ValueError(f"coil maps {coils.shape} do not match image {x.shape}")
    if mask.shape != (x.shape[0], x.shape[1]):
        raise ValueError(f"mask {mask.shape} does not match [nshots, ny] of {x.shape}")


def sense_forward(x: np.ndarray, coils: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Coil-weighted masked Fourier encoding, blockwise over shots.

    Returns [nshots, ncoils, ny, nx] with out[m, c] = M_m * fft2c(C_c * x_m).
    """
    x = np.asarray(x, dtype=np.complex128)
    coils = np.asarray(coils, dtype=np.complex128)
    _check_shapes(x, coils, np.asarray(mask))
    coil_images = coils[None, :, :, :] * x[:, None, :, :]
    return apply_line_mask(fft2c(coil_images), mask)


def sense_adjoint(b: np.ndarray, coils: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`sense_forward`: mask, inverse FFT, coil-combine.

    Returns [nshots, ny, nx] with out[m] = sum_c conj(C_c) * ifft2c(M_m * b[m,c]).
    """
    b = np.asarray(b, dtype=np.complex128)
    coils = np.asarray(coils, dtype=np.complex128)
    if b.ndim != 4:
        raise ValueError(f"k-space must be [nshots, ncoils, ny, nx], got {b.shape}")
    if coils.shape != b.shape[1:]:
        raise ValueError(f"coil maps {coils.shape} do not match k-space {b.shape}")
    images = ifft2c(apply_line_mask(b, mask))
    return np.sum(np.conj(coils)[None, :, :, :] * images, axis=1)


def normal_apply(
    x: np.ndarray, coils: np.ndarray, mask: np.ndarray, lambda_total: float = 0.0
) -> np.ndarray:
    """A^H A x + lambda_total * x; self-adjoint and PSD by construction."""
    if lambda_total < 0:
        raise ValueError("lambda_total must be >= 0")
    out = sense_adjoint(sense_forward(x, coils, mask), coils, mask)
    if lambda_total > 0:
        out = out + lambda_total * np.asarray(x)
    return out


def vc_expand(x: np.ndarray) -> np.ndarray:
    """Append the conjugate of every shot channel, scaled by 1/sqrt(2)."""
    x = np.asarray(x, dtype=np.complex128)
    return np.concatenate([x, np.conj(x)], axis=0) / np.sqrt(2.0)


def vc_reduce(u: np.ndarray) -> np.ndarray:
    """Collapse a virtual-coil-doubled stack back to shot channels.

    Exact inverse and real-inner-product adjoint of :func:`vc_expand`.
    """
    u = np.asarray(u, dtype=np.complex128)
    if u.shape[0] % 2 != 0:
        raise ValueError("leading extent must be even")
    half = u.shape[0] // 2
    return (u[:half] + np.conj(u[half:])) / np.sqrt(2.0)
