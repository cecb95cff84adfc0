"""Quantitative evaluation: normalized errors, mean DWI, tensor fit, FA maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simulate import DiffusionProtocol, tensor_field_as_matrices


@dataclass
class MetricsReport:
    """Per-method summary of reconstruction quality."""

    method: str
    nrmse_per_direction: np.ndarray  # percent, over non-b0 entries
    nmae_per_direction: np.ndarray
    mean_dwi_nrmse: float
    fa_nrmse: float

    @property
    def mean_nrmse(self) -> float:
        return float(np.mean(self.nrmse_per_direction))

    @property
    def mean_nmae(self) -> float:
        return float(np.mean(self.nmae_per_direction))


def nrmse(x: np.ndarray, ref: np.ndarray) -> float:
    """100 * ||x - ref||_2 / ||ref||_2."""
    x = np.asarray(x)
    ref = np.asarray(ref)
    denom = np.linalg.norm(ref)
    if denom == 0:
        raise ValueError("reference has zero norm")
    return float(100.0 * np.linalg.norm(x - ref) / denom)


def nmae(x: np.ndarray, ref: np.ndarray) -> float:
    """100 * ||x - ref||_1 / ||ref||_1 (complex modulus for complex input)."""
    x = np.asarray(x)
    ref = np.asarray(ref)
    denom = np.sum(np.abs(ref))
    if denom == 0:
        raise ValueError("reference has zero l1 norm")
    return float(100.0 * np.sum(np.abs(x - ref)) / denom)


def mean_dwi(images: np.ndarray) -> np.ndarray:
    """Voxelwise mean over diffusion-weighted images [ndirs, ny, nx]."""
    images = np.asarray(images)
    if images.ndim != 3 or images.shape[0] < 1:
        raise ValueError("expected [ndirs, ny, nx]")
    return np.mean(images, axis=0)


def fit_tensor_loglinear(
    dwi: np.ndarray,
    b0: np.ndarray,
    protocol: DiffusionProtocol,
    s0_threshold: float = 0.05,
) -> np.ndarray:
    """Voxelwise least-squares fit of log(S_d / S0) = -b g^T D g.

    ``dwi`` holds the non-b0 images [ndirs, ny, nx] matching
    ``protocol.directions[1:]``. Voxels where ``b0`` is at or below
    ``s0_threshold`` times its maximum are left zero. Returns a
    [ny, nx, 6] field with components (Dxx, Dyy, Dzz, Dxy, Dxz, Dyz).
    """
    dwi = np.asarray(dwi, dtype=np.float64)
    b0 = np.asarray(b0, dtype=np.float64)
    g = protocol.directions[1:]
    b = protocol.b_values[1:]
    if g.shape[0] < 6:
        raise ValueError("need at least 6 diffusion-weighted directions")
    if dwi.shape[0] != g.shape[0]:
        raise ValueError("dwi count does not match protocol directions")
    design = -b[:, None] * np.stack(
        [
            g[:, 0] ** 2,
            g[:, 1] ** 2,
            g[:, 2] ** 2,
            2 * g[:, 0] * g[:, 1],
            2 * g[:, 0] * g[:, 2],
            2 * g[:, 1] * g[:, 2],
        ],
        axis=1,
    )  # [ndirs, 6]
    if np.linalg.matrix_rank(design) < 6:
        raise ValueError("direction set is rank deficient for a tensor fit")
    pinv = np.linalg.pinv(design)  # [6, ndirs]

    mask = b0 > s0_threshold * np.max(b0)
    field = np.zeros(b0.shape + (6,))
    if not np.any(mask):
        return field
    signal = dwi[:, mask]
    floor = 1e-12 * max(float(np.max(b0)), 1e-300)
    ratios = np.clip(signal, floor, None) / b0[mask][None, :]
    log_ratio = np.log(np.clip(ratios, 1e-12, None))
    field[mask] = (pinv @ log_ratio).T
    return field


def fa_from_tensor(tensor_field: np.ndarray) -> np.ndarray:
    """Fractional anisotropy per voxel; zero tensors map to FA 0.

    FA = sqrt(3/2) * ||lambda - mean(lambda)|| / ||lambda||, eigenvalues
    taken as-is (noisy fits may produce negative ones).
    """
    matrices = tensor_field_as_matrices(np.asarray(tensor_field))
    eigs = np.linalg.eigvalsh(matrices)
    mean = np.mean(eigs, axis=-1, keepdims=True)
    num = np.linalg.norm(eigs - mean, axis=-1)
    den = np.linalg.norm(eigs, axis=-1)
    fa = np.zeros(den.shape)
    nonzero = den > 0
    fa[nonzero] = np.sqrt(1.5) * num[nonzero] / den[nonzero]
    return fa


def evaluate_methods(
    reconstructions: dict[str, np.ndarray],
    truth_images: np.ndarray,
    truth_tensor_field: np.ndarray,
    truth_s0: np.ndarray,
    protocol: DiffusionProtocol,
) -> list[MetricsReport]:
    """Score reconstructed magnitude images against simulation ground truth.

    ``reconstructions`` maps method name to [n_entries, ny, nx] combined
    magnitudes (entry 0 = b0), aligned with ``truth_images``. FA for the
    reconstructed side is obtained by refitting tensors from the
    reconstructed images; the reference FA comes from the true tensor
    field, masked where true S0 is significant.
    """
    if truth_images.shape[0] != protocol.n_entries:
        raise ValueError("truth images do not match protocol entries")
    fa_mask = truth_s0 > 0.05 * np.max(truth_s0)
    fa_truth = fa_from_tensor(truth_tensor_field) * fa_mask
    dwi_truth = mean_dwi(truth_images[1:])
    reports = []
    for method in sorted(reconstructions):
        images = np.asarray(reconstructions[method])
        if images.shape != truth_images.shape:
            raise ValueError(f"method {method}: shape mismatch with ground truth")
        per_dir_nrmse = np.array(
            [nrmse(images[d], truth_images[d]) for d in range(1, images.shape[0])]
        )
        per_dir_nmae = np.array(
            [nmae(images[d], truth_images[d]) for d in range(1, images.shape[0])]
        )
        fitted = fit_tensor_loglinear(images[1:], images[0], protocol)
        fa_rec = fa_from_tensor(fitted) * fa_mask
        reports.append(
            MetricsReport(
                method=method,
                nrmse_per_direction=per_dir_nrmse,
                nmae_per_direction=per_dir_nmae,
                mean_dwi_nrmse=nrmse(mean_dwi(images[1:]), dwi_truth),
                fa_nrmse=nrmse(fa_rec, fa_truth),
            )
        )
    return reports
