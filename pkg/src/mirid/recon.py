"""Reconstruction engines: per-shot CG-SENSE and the unrolled joint scheme.

The unrolled reconstruction alternates a data-consistency solve with
denoising in image and k-space::

    x_0 = A^H b,  aux_i = aux_k = x_0
    repeat unroll_count times:
        x <- argmin ||A x - b||^2 + l1 ||x - aux_i||^2 + l2 ||x - aux_k||^2
             (CG solve of (A^H A + (l1+l2) I) x = A^H b + l1 aux_i + l2 aux_k)
        aux_i <- Vc^H (u - image_net(u)),            u = Vc x
        aux_k <- Vc^H F^H (w - kspace_net(w)),       w = F Vc x

The conv stacks predict the artifact component, so the auxiliaries hold the
denoised estimate; with freshly initialized (zero-output) nets the
auxiliaries equal x itself and the whole scheme is a fixed-point proximal
iteration of the regularized least-squares problem. The backward pass is
exact reverse mode through all unrolls; the adjoint of the data-consistency
solve reuses the same CG budget on the same self-adjoint system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .denoiser import DenoiserNet, NetGradients, NetTape, net_backward, net_forward
from .numerics import cg_solve, fft2c, ifft2c
from .operators import sense_adjoint, vc_expand, vc_reduce

MODES = ("mirid", "sirid", "sense")


@dataclass
class ReconConfig:
    """Regularization weights and iteration budgets of the unrolled recon."""

    lambda1: float = 0.05  # image-domain denoiser weight
    lambda2: float = 0.05  # k-space-domain denoiser weight
    unroll_count: int = 10
    cg_steps: int = 10
    cg_tol: float = 1e-10
    mode: str = "mirid"

    def __post_init__(self):
        if self.lambda1 <= 0 or self.lambda2 <= 0:
            raise ValueError("lambda1 and lambda2 must be > 0")
        if self.unroll_count < 0:
            raise ValueError("unroll_count must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass
class MiridTape:
    """Everything the reverse pass needs from one mirid_forward call."""

    image_tapes: list[NetTape] = field(default_factory=list)
    kspace_tapes: list[NetTape] = field(default_factory=list)
    image_net: DenoiserNet | None = None
    kspace_net: DenoiserNet | None = None
    unroll_count: int = 0


def _normal_solver(coils, mask, lam, cg_steps, cg_tol):
    """CG solver for (A^H A + lam I) x = rhs, specialized to ky-line masks.

    Line masks are constant along kx, so the x-axis Fourier factor cancels
    inside A^H A and only 1-D transforms along y remain. The solve runs in
    an ifftshifted-y domain to keep the CG loop free of index shifts; this
    is an exact reformulation of the normal equations, not an approximation.
    """
    coils_s = np.fft.ifftshift(np.asarray(coils, dtype=np.complex128), axes=-2)
    coils_conj = np.conj(coils_s)
    mask_u = np.fft.ifftshift(np.asarray(mask, dtype=bool), axes=-1)[:, None, :, None]

    def apply(xs):
        spec = np.fft.fft(coils_s[None] * xs[:, None], axis=-2, norm="ortho")
        spec *= mask_u
        imgs = np.fft.ifft(spec, axis=-2, norm="ortho")
        out = np.sum(coils_conj[None] * imgs, axis=1)
        if lam > 0:
            out += lam * xs
        return out

    def solve(rhs):
        rhs_s = np.fft.ifftshift(np.asarray(rhs, dtype=np.complex128), axes=-2)
        x_s, _ = cg_solve(apply, rhs_s, max_iters=cg_steps, tol=cg_tol)
        return np.fft.fftshift(x_s, axes=-2)

    return solve


def sense_recon(
    b: np.ndarray,
    coils: np.ndarray,
    mask: np.ndarray,
    tikhonov: float = 0.0,
    cg_steps: int = 10,
    cg_tol: float = 1e-10,
) -> np.ndarray:
    """Per-shot CG-SENSE: solve (A_m^H A_m + tik I) x_m = A_m^H b_m per shot.

    Shots are never coupled. Returns [nshots, ny, nx].
    """
    if tikhonov < 0:
        raise ValueError("tikhonov must be >= 0")
    b = np.asarray(b, dtype=np.complex128)
    out = np.zeros((b.shape[0],) + b.shape[2:], dtype=np.complex128)
    for m in range(b.shape[0]):
        shot_mask = mask[m : m + 1]
        rhs = sense_adjoint(b[m : m + 1], coils, shot_mask)
        solve = _normal_solver(coils, shot_mask, tikhonov, cg_steps, cg_tol)
        out[m] = solve(rhs)[0]
    return out


def dc_solve(
    rhs: np.ndarray,
    coils: np.ndarray,
    mask: np.ndarray,
    lambda_total: float,
    cg_steps: int = 10,
    cg_tol: float = 1e-10,
) -> np.ndarray:
    """Data-consistency solve: (A^H A + lambda_total I) x = rhs, via CG."""
    if lambda_total <= 0:
        raise ValueError("lambda_total must be > 0")
    solve = _normal_solver(coils, mask, lambda_total, cg_steps, cg_tol)
    return solve(np.asarray(rhs, dtype=np.complex128))


def _denoised_image(u: np.ndarray, net: DenoiserNet) -> tuple[np.ndarray, NetTape]:
    artifact, tape = net_forward(u, net)
    return u - artifact, tape


def mirid_forward(
    b: np.ndarray,
    coils: np.ndarray,
    mask: np.ndarray,
    image_net: DenoiserNet,
    kspace_net: DenoiserNet,
    cfg: ReconConfig,
) -> tuple[np.ndarray, MiridTape]:
    """Unrolled joint reconstruction of all shots from masked k-space.

    ``b`` must be zero outside ``mask``. Returns the final shot stack and
    the tape for :func:`mirid_backward`.
    """
    b = np.asarray(b, dtype=np.complex128)
    nshots = b.shape[0]
    expected = 2 * (2 * nshots)
    got = image_net.layers[0].weights.shape[1]
    if got != expected:
        raise ValueError(
            f"image net expects {got} real channels, data needs {expected}"
        )
    adjoint_image = sense_adjoint(b, coils, mask)
    tape = MiridTape(image_net=image_net, kspace_net=kspace_net,
                     unroll_count=cfg.unroll_count)
    x = adjoint_image
    if cfg.unroll_count == 0:
        return x, tape
    aux_image = x
    aux_kspace = x
    lam = cfg.lambda1 + cfg.lambda2
    solve = _normal_solver(coils, mask, lam, cfg.cg_steps, cfg.cg_tol)
    for n in range(cfg.unroll_count):
        rhs = adjoint_image + cfg.lambda1 * aux_image + cfg.lambda2 * aux_kspace
        x = solve(rhs)
        if n == cfg.unroll_count - 1:
            break  # final auxiliaries would never be consumed
        u = vc_expand(x)
        denoised_i, tape_i = _denoised_image(u, image_net)
        aux_image = vc_reduce(denoised_i)
        w = fft2c(u)
        denoised_k, tape_k = _denoised_image(w, kspace_net)
        aux_kspace = vc_reduce(ifft2c(denoised_k))
        tape.image_tapes.append(tape_i)
        tape.kspace_tapes.append(tape_k)
    return x, tape


def mirid_backward(
    loss_grad: np.ndarray,
    tape: MiridTape,
    coils: np.ndarray,
    mask: np.ndarray,
    cfg: ReconConfig,
) -> tuple[NetGradients, NetGradients]:
    """Exact reverse mode through all unrolls.

    ``loss_grad`` is the gradient of a real loss at the reconstructed
    stack (complex convention of :mod:`mirid.denoiser`). Regularization
    weights are fixed hyperparameters and receive no gradient. Returns
    (image net gradients, k-space net gradients).
    """
    if tape.unroll_count != cfg.unroll_count:
        raise ValueError("tape does not match config unroll_count")
    if cfg.unroll_count > 0 and len(tape.image_tapes) != cfg.unroll_count - 1:
        raise ValueError("tape does not match forward structure")
    image_grads = NetGradients.zeros_for(tape.image_net)
    kspace_grads = NetGradients.zeros_for(tape.kspace_net)
    if cfg.unroll_count == 0:
        return image_grads, kspace_grads
    lam = cfg.lambda1 + cfg.lambda2
    solve = _normal_solver(coils, mask, lam, cfg.cg_steps, cfg.cg_tol)
    g_x = np.asarray(loss_grad, dtype=np.complex128)
    for n in range(cfg.unroll_count - 1, -1, -1):
        g_rhs = solve(g_x)
        if n == 0:
            break  # initial auxiliaries are constants (adjoint image)
        g_aux_image = cfg.lambda1 * g_rhs
        g_aux_kspace = cfg.lambda2 * g_rhs
        # image path: aux = Vc^H (u - net(u))
        t = vc_expand(g_aux_image)
        gin_i, gpar_i = net_backward(t, tape.image_tapes[n - 1], tape.image_net)
        u_grad = t - gin_i
        image_grads.add_scaled(gpar_i, -1.0)
        # k-space path: aux = Vc^H F^H (w - net(w)), w = F u
        s = fft2c(vc_expand(g_aux_kspace))
        gin_k, gpar_k = net_backward(s, tape.kspace_tapes[n - 1], tape.kspace_net)
        kspace_grads.add_scaled(gpar_k, -1.0)
        u_grad = u_grad + ifft2c(s - gin_k)
        g_x = vc_reduce(u_grad)
    return image_grads, kspace_grads


def combine_shots(x: np.ndarray) -> np.ndarray:
    """Final magnitude image: voxelwise mean of per-shot magnitudes."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[0] < 1:
        raise ValueError("expected [nshots, ny, nx]")
    return np.mean(np.abs(x), axis=0)
