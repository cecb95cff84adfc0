"""Synthetic multi-direction diffusion acquisition with known ground truth.

Everything here is deterministic given an :class:`AcquisitionSpec` seed, so
simulated datasets are byte-reproducible. Geometry uses normalized image
coordinates in [-1, 1]^2; diffusion tensors are 3x3 symmetric PSD in mm^2/s.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import RngStream, draw_complex_gaussian, fft2c

TENSOR_COMPONENTS = ("dxx", "dyy", "dzz", "dxy", "dxz", "dyz")


@dataclass
class Ellipse:
    """One phantom ellipse: geometry plus proton density and diffusion tensor."""

    center: tuple[float, float]  # (u, v) in [-1, 1]^2
    semi_axes: tuple[float, float]
    angle: float  # radians, in-plane rotation
    s0: float
    tensor: np.ndarray  # 3x3 symmetric PSD, mm^2/s

    def __post_init__(self):
        self.tensor = np.asarray(self.tensor, dtype=np.float64)
        if self.tensor.shape != (3, 3):
            raise ValueError("tensor must be 3x3")
        if not np.allclose(self.tensor, self.tensor.T, atol=1e-15):
            raise ValueError("tensor must be symmetric")
        if np.min(np.linalg.eigvalsh(self.tensor)) < -1e-12:
            raise ValueError("tensor must be positive semidefinite")
        if self.s0 < 0:
            raise ValueError("s0 must be >= 0")


@dataclass
class PhantomScene:
    """Ordered ellipse list; later ellipses overwrite earlier ones."""

    ellipses: list[Ellipse] = field(default_factory=list)


@dataclass
class DiffusionProtocol:
    """Diffusion weighting b and unit gradient directions; entry 0 is the b=0 scan."""

    b_value: float
    directions: np.ndarray  # [ndirs, 3], unit norm, row 0 = b0 reference axis

    def __post_init__(self):
        self.directions = np.asarray(self.directions, dtype=np.float64)
        norms = np.linalg.norm(self.directions, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValueError("all directions must be unit norm")
        if self.b_value < 0:
            raise ValueError("b_value must be >= 0")

    @property
    def n_entries(self) -> int:
        return self.directions.shape[0]

    @property
    def b_values(self) -> np.ndarray:
        b = np.full(self.n_entries, self.b_value)
        b[0] = 0.0
        return b

    def as_array(self) -> np.ndarray:
        """Rows of (gx, gy, gz, b) for serialization."""
        return np.concatenate([self.directions, self.b_values[:, None]], axis=1)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "DiffusionProtocol":
        arr = np.asarray(arr, dtype=np.float64)
        b = float(np.max(arr[:, 3]))
        return cls(b_value=b, directions=arr[:, :3])


@dataclass
class AcquisitionSpec:
    """Geometry and sampling of one multi-shot EPI acquisition."""

    ny: int = 64
    nx: int = 64
    ncoils: int = 8
    nshots: int = 2
    accel: int = 3  # per-shot acceleration factor
    pf: float = 0.75  # partial-Fourier fraction in (0.5, 1]
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.nshots < 1 or self.accel < 1 or self.ncoils < 1:
            raise ValueError("nshots, accel and ncoils must be >= 1")
        if not (0.5 < self.pf <= 1.0):
            raise ValueError("partial-Fourier fraction must be in (0.5, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def _pixel_grid(ny: int, nx: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalized pixel-center coordinates (u along x, v along y) in [-1, 1)."""
    v = (np.arange(ny) - ny / 2.0) / (ny / 2.0)
    u = (np.arange(nx) - nx / 2.0) / (nx / 2.0)
    return np.meshgrid(u, v)  # shapes [ny, nx]


def make_phantom(scene: PhantomScene, ny: int, nx: int) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize a scene into an S0 map and a 6-component tensor field.

    Returns (s0 [ny, nx], tensor_field [ny, nx, 6]) with component order
    (Dxx, Dyy, Dzz, Dxy, Dxz, Dyz). Background is zero.
    """
    if ny < 8 or nx < 8:
        raise ValueError("extents must be >= 8")
    if not scene.ellipses:
        raise ValueError("scene has no ellipses")
    uu, vv = _pixel_grid(ny, nx)
    s0 = np.zeros((ny, nx))
    tensors = np.zeros((ny, nx, 6))
    for ell in scene.ellipses:
        du = uu - ell.center[0]
        dv = vv - ell.center[1]
        c, s = np.cos(ell.angle), np.sin(ell.angle)
        major = (du * c + dv * s) / ell.semi_axes[0]
        minor = (-du * s + dv * c) / ell.semi_axes[1]
        inside = major**2 + minor**2 <= 1.0
        s0[inside] = ell.s0
        t = ell.tensor
        comps = np.array([t[0, 0], t[1, 1], t[2, 2], t[0, 1], t[0, 2], t[1, 2]])
        tensors[inside] = comps
    return s0, tensors


def tensor_field_as_matrices(tensor_field: np.ndarray) -> np.ndarray:
    """Expand a [..., 6] component field into [..., 3, 3] symmetric matrices."""
    f = np.asarray(tensor_field)
    out = np.zeros(f.shape[:-1] + (3, 3))
    out[..., 0, 0] = f[..., 0]
    out[..., 1, 1] = f[..., 1]
    out[..., 2, 2] = f[..., 2]
    out[..., 0, 1] = out[..., 1, 0] = f[..., 3]
    out[..., 0, 2] = out[..., 2, 0] = f[..., 4]
    out[..., 1, 2] = out[..., 2, 1] = f[..., 5]
    return out


def simulate_dwi(
    s0: np.ndarray, tensor_field: np.ndarray, protocol: DiffusionProtocol
) -> np.ndarray:
    """Monoexponential tensor signal S_d = S0 * exp(-b * g^T D g) per entry.

    Returns [n_entries, ny, nx] real magnitudes; entry 0 equals S0.
    """
    s0 = np.asarray(s0, dtype=np.float64)
    field = np.asarray(tensor_field, dtype=np.float64)
    eigs = np.linalg.eigvalsh(tensor_field_as_matrices(field))
    if np.min(eigs) < -1e-12:
        raise ValueError("tensor field contains non-PSD voxels")
    g = protocol.directions
    design = np.stack(
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
    quad = np.einsum("dc,yxc->dyx", design, field)
    attenuation = np.exp(-protocol.b_values[:, None, None] * quad)
    return s0[None, :, :] * attenuation


def make_coil_maps(ncoils: int, ny: int, nx: int) -> np.ndarray:
    """Smooth complex coil profiles, sum-of-squares normalized to 1.

    Gaussian magnitude lobes are placed on a ring just outside the FOV with
    a small per-coil linear phase; deterministic in (ncoils, ny, nx).
    """
    if ncoils < 1:
        raise ValueError("ncoils must be >= 1")
    uu, vv = _pixel_grid(ny, nx)
    width = 1.1
    radius = 1.25
    maps = np.zeros((ncoils, ny, nx), dtype=np.complex128)
    for c in range(ncoils):
        theta = 2.0 * np.pi * c / ncoils
        cu, cv = radius * np.cos(theta), radius * np.sin(theta)
        mag = np.exp(-((uu - cu) ** 2 + (vv - cv) ** 2) / (2.0 * width**2))
        ramp = 0.4 * np.pi * (np.cos(theta + 0.7) * uu + np.sin(theta + 0.7) * vv)
        maps[c] = mag * np.exp(1j * ramp)
    sos = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return maps / sos[None, :, :]


def make_shot_phase(
    shot_index: int, nshots: int, ny: int, nx: int, rng: RngStream
) -> np.ndarray:
    """Unit-magnitude smooth shot phase: random linear ramp plus constant.

    Shot 0 is the phase reference and returns an all-ones map. Ramp
    coefficients are at most 2 cycles across the FOV.
    """
    if shot_index >= nshots:
        raise ValueError("shot_index must be < nshots")
    if shot_index == 0:
        return np.ones((ny, nx), dtype=np.complex128)
    a = rng.uniform(-2.0, 2.0, None)
    b = rng.uniform(-2.0, 2.0, None)
    const = rng.uniform(-np.pi, np.pi, None)
    uu, vv = _pixel_grid(ny, nx)
    # _pixel_grid spans [-1, 1); halve so a and b count cycles per FOV
    return np.exp(1j * (2.0 * np.pi * (a * uu / 2.0 + b * vv / 2.0) + const))


def make_shot_masks(spec: AcquisitionSpec) -> np.ndarray:
    """Per-shot sampled ky lines: interleaved comb intersected with a
    partial-Fourier window.

    Shot m samples lines {ky : ky ≡ offset_m (mod accel)} with
    offset_m = floor(m * accel / nshots), restricted to ky < ceil(pf * ny)
    (the window keeps the low-ky side including the center line). Returns
    bool [nshots, ny].
    """
    if spec.pf * spec.ny < spec.accel:
        raise ValueError("partial-Fourier window smaller than one acceleration period")
    offsets = [(m * spec.accel) // spec.nshots for m in range(spec.nshots)]
    # at accel=1 every shot samples every line, so equal offsets are benign
    if spec.accel > 1 and len(set(offsets)) != len(offsets):
        raise ValueError(
            f"shot offsets collide for nshots={spec.nshots}, accel={spec.accel}"
        )
    window = int(np.ceil(spec.pf * spec.ny))
    ky = np.arange(spec.ny)
    masks = np.zeros((spec.nshots, spec.ny), dtype=bool)
    for m, off in enumerate(offsets):
        masks[m] = (ky % spec.accel == off) & (ky < window)
    return masks


def acquire(
    dwi_image: np.ndarray,
    coils: np.ndarray,
    phases: np.ndarray,
    masks: np.ndarray,
    noise_sigma: float,
    rng: RngStream,
) -> np.ndarray:
    """Noisy undersampled multi-shot multi-coil k-space for one direction.

    b[m, c] = M_m * (fft2c(C_c * phi_m * x) + eps); exactly zero outside M_m.
    """
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    dwi_image = np.asarray(dwi_image, dtype=np.float64)
    shot_images = np.asarray(phases, dtype=np.complex128) * dwi_image[None, :, :]
    k = fft2c(coils[None, :, :, :] * shot_images[:, None, :, :])
    noise = draw_complex_gaussian(rng, k.shape, noise_sigma)
    masked = (k + noise) * np.asarray(masks, dtype=bool)[:, None, :, None]
    return masked


def _isotropic(d: float) -> np.ndarray:
    return d * np.eye(3)


def _fiber(parallel: float, perpendicular: float, angle: float) -> np.ndarray:
    """Axially symmetric tensor with principal axis in-plane at ``angle``."""
    e = np.array([np.cos(angle), np.sin(angle), 0.0])
    return perpendicular * np.eye(3) + (parallel - perpendicular) * np.outer(e, e)


def default_scene() -> PhantomScene:
    """Crossing-fiber phantom: brain-like disc, three bundles, CSF blob."""
    return PhantomScene(
        [
            Ellipse((0.0, 0.0), (0.85, 0.72), 0.0, 1.0, _isotropic(0.8e-3)),
            Ellipse((-0.22, -0.18), (0.38, 0.16), 0.5, 0.9, _fiber(1.7e-3, 0.25e-3, 0.5)),
            Ellipse((0.22, -0.18), (0.38, 0.16), -0.5, 0.9, _fiber(1.7e-3, 0.25e-3, -0.5)),
            Ellipse((0.0, 0.32), (0.42, 0.14), 0.0, 0.95, _fiber(1.6e-3, 0.3e-3, 0.0)),
            Ellipse((0.0, -0.45), (0.13, 0.13), 0.0, 1.2, _isotropic(2.5e-3)),
            Ellipse((0.48, 0.32), (0.1, 0.1), 0.0, 0.45, _isotropic(0.5e-3)),
        ]
    )


def make_directions(n: int) -> np.ndarray:
    """n well-spread unit vectors on the upper hemisphere (golden spiral)."""
    golden = (1.0 + np.sqrt(5.0)) / 2.0
    i = np.arange(n)
    z = (i + 0.5) / n  # upper hemisphere only
    r = np.sqrt(1.0 - z**2)
    phi = 2.0 * np.pi * i / golden
    dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def default_protocol(n_directions: int = 12, b_value: float = 1000.0) -> DiffusionProtocol:
    """b0 entry plus ``n_directions`` diffusion-weighted directions."""
    b0_axis = np.array([[0.0, 0.0, 1.0]])
    return DiffusionProtocol(
        b_value=b_value,
        directions=np.concatenate([b0_axis, make_directions(n_directions)], axis=0),
    )


def simulate_dataset(
    spec: AcquisitionSpec,
    protocol: DiffusionProtocol,
    scene: PhantomScene | None = None,
) -> dict[str, np.ndarray]:
    """Full synthetic dataset: ground truth, coils, masks, per-direction k-space.

    Array names match the on-disk dataset container layout: five shared
    arrays (s0_map, tensor_field, coil_maps, shot_masks, protocol) plus
    kspace_ddd / truth_ddd / phases_ddd per protocol entry. Per-direction
    noise and shot phases come from independent sub-streams of the spec
    seed, so generation is order-independent and reproducible.
    """
    scene = scene if scene is not None else default_scene()
    s0, tensors = make_phantom(scene, spec.ny, spec.nx)
    dwi = simulate_dwi(s0, tensors, protocol)
    coils = make_coil_maps(spec.ncoils, spec.ny, spec.nx)
    masks = make_shot_masks(spec)
    root = RngStream(spec.seed)
    data: dict[str, np.ndarray] = {
        "s0_map": s0,
        "tensor_field": tensors,
        "coil_maps": coils,
        "shot_masks": masks,
        "protocol": protocol.as_array(),
    }
    for d in range(protocol.n_entries):
        phases = np.stack(
            [
                make_shot_phase(m, spec.nshots, spec.ny, spec.nx, root.child(d, m))
                for m in range(spec.nshots)
            ]
        )
        kspace = acquire(dwi[d], coils, phases, masks, spec.noise_sigma, root.child(d, spec.nshots))
        data[f"kspace_{d:03d}"] = kspace
        data[f"truth_{d:03d}"] = dwi[d]
        data[f"phases_{d:03d}"] = phases
    return data
