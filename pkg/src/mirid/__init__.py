"""mirid: multi-shot diffusion MRI reconstruction on synthetic phantoms.

Library layout:

- :mod:`mirid.numerics`   — FFTs, CG, Adam, seeded RNG
- :mod:`mirid.simulate`   — phantom, coils, masks, noisy acquisition
- :mod:`mirid.operators`  — SENSE encoding and virtual-coil operators
- :mod:`mirid.denoiser`   — small conv nets with exact hand-written gradients
- :mod:`mirid.recon`      — CG-SENSE and the unrolled joint reconstruction
- :mod:`mirid.ssltrain`   — mask splitting and self-supervised training
- :mod:`mirid.metrics`    — NRMSE/NMAE, tensor fit, FA maps
- :mod:`mirid.cli`        — `mirid simulate|train|recon|evaluate`
"""

from .numerics import RngStream, cg_solve, fft2c, ifft2c
from .operators import sense_adjoint, sense_forward, vc_expand, vc_reduce
from .recon import ReconConfig, combine_shots, mirid_forward, sense_recon
from .simulate import AcquisitionSpec, DiffusionProtocol, simulate_dataset
from .ssltrain import TrainConfig, infer, split_mask, train

__version__ = "0.1.0"

__all__ = [
    "AcquisitionSpec",
    "DiffusionProtocol",
    "ReconConfig",
    "RngStream",
    "TrainConfig",
    "cg_solve",
    "combine_shots",
    "fft2c",
    "ifft2c",
    "infer",
    "mirid_forward",
    "sense_adjoint",
    "sense_forward",
    "sense_recon",
    "simulate_dataset",
    "split_mask",
    "train",
    "vc_expand",
    "vc_reduce",
]
