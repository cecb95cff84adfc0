"""Zero-shot self-supervised training via nested sampling-mask splitting.

The acquisition mask g3 of each direction is split into g1 ⊂ g2 ⊂ g3 at
whole phase-encode-line granularity, independently per shot. Training
reconstructs from g1-masked data and scores the re-encoded prediction on
the g2 lines; validation reconstructs from g2 and scores on g3; inference
uses all of g3. One network pair is trained jointly across all directions
with Adam, keeping the weights of the best validation epoch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .denoiser import (
    DenoiserNet,
    NetArch,
    NetGradients,
    gradients_vector,
    init_weights,
    net_param_vector,
    set_net_params,
)
from .numerics import AdamState, RngStream, adam_step
from .operators import apply_line_mask, sense_adjoint, sense_forward
from .recon import ReconConfig, mirid_forward, mirid_backward


@dataclass
class MaskTriple:
    """Nested masks for one direction: g3 acquisition, one g2, many g1 draws."""

    g3: np.ndarray
    g2: np.ndarray
    g1_list: list[np.ndarray]

    def __post_init__(self):
        for g1 in self.g1_list:
            if np.any(g1 & ~self.g2) or np.any(self.g2 & ~self.g3):
                raise ValueError("mask nesting violated: need g1 <= g2 <= g3")


@dataclass
class TrainConfig:
    """Optimization schedule and mask-split ratios."""

    lr: float = 1e-3
    max_epochs: int = 100
    patience: int = 10
    n_g1: int = 50
    ratio_g2: float = 0.80
    ratio_g1: float = 0.48
    seed: int = 0
    w_nrmse: float = 1.0
    w_nmae: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.ratio_g1 < self.ratio_g2 <= 1.0):
            raise ValueError("need 0 < ratio_g1 < ratio_g2 <= 1")
        if self.max_epochs < 1 or self.n_g1 < 1:
            raise ValueError("max_epochs and n_g1 must be >= 1")


@dataclass
class TrainHistory:
    """Per-epoch losses and timing; best_epoch indexes the minimum val loss."""

    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    best_epoch: int = -1
    optimizer_steps: int = 0


@dataclass
class TrainResult:
    image_net: DenoiserNet
    kspace_net: DenoiserNet
    history: TrainHistory
    triples: list[MaskTriple]


def _keep_line(mask_row: np.ndarray) -> int:
    """Index of the sampled line closest to the k-space center (tie: lower)."""
    sampled = np.where(mask_row)[0]
    if sampled.size == 0:
        raise ValueError("shot has no sampled lines")
    center = mask_row.shape[0] // 2
    return int(sampled[np.argmin(np.abs(sampled - center))])


def _subset_rows(g3: np.ndarray, counts: np.ndarray, rng: RngStream) -> np.ndarray:
    """Uniform per-shot subsets of the sampled lines, always keeping the
    line nearest the k-space center."""
    out = np.zeros_like(g3)
    for m in range(g3.shape[0]):
        sampled = np.where(g3[m])[0]
        keep = _keep_line(g3[m])
        n = int(counts[m])
        if n < 1:
            raise ValueError("split fraction yields fewer than one line")
        pool = sampled[sampled != keep]
        chosen = rng.choice(pool.size, size=n - 1, replace=False)
        out[m, pool[chosen]] = True
        out[m, keep] = True
    return out


def split_mask(
    g3: np.ndarray,
    ratio_g2: float,
    ratio_g1: float,
    n_g1: int,
    rng: RngStream,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Split an acquisition mask into one g2 and ``n_g1`` nested g1 draws.

    Per shot, g2 keeps ``round(ratio_g2 * |g3|)`` of g3's sampled lines and
    each g1 keeps ``round(ratio_g1 * |g3|)`` of g2's lines, all drawn
    uniformly and all retaining the line nearest the k-space center.
    """
    g3 = np.asarray(g3, dtype=bool)
    line_counts = g3.sum(axis=1)
    if np.any(line_counts < 3):
        raise ValueError("every shot needs at least 3 sampled lines to split")
    counts_g2 = np.round(ratio_g2 * line_counts).astype(int)
    counts_g1 = np.round(ratio_g1 * line_counts).astype(int)
    if np.any(counts_g1 < 1) or np.any(counts_g2 < 1):
        raise ValueError("split fraction yields fewer than one line")
    if np.any(counts_g1 > counts_g2):
        raise ValueError("ratio_g1 must not exceed ratio_g2")
    g2 = _subset_rows(g3, counts_g2, rng)
    g1_list = [_subset_rows(g2, counts_g1, rng) for _ in range(n_g1)]
    return g2, g1_list


def make_triple(g3: np.ndarray, cfg: TrainConfig, rng: RngStream) -> MaskTriple:
    g2, g1_list = split_mask(g3, cfg.ratio_g2, cfg.ratio_g1, cfg.n_g1, rng)
    return MaskTriple(g3=np.asarray(g3, dtype=bool), g2=g2, g1_list=g1_list)


def masked_pair_loss(
    pred: np.ndarray,
    target: np.ndarray,
    mask: np.ndarray,
    w_nrmse: float = 1.0,
    w_nmae: float = 1.0,
) -> tuple[float, np.ndarray]:
    """Normalized l2 + l1 error (percent) on masked k-space entries.

    Returns the loss and its gradient with respect to ``pred``. Entries
    outside the mask contribute nothing to either.
    """
    pred = apply_line_mask(pred, mask)
    target = apply_line_mask(target, mask)
    diff = pred - target
    l2_ref = float(np.linalg.norm(target))
    l1_ref = float(np.sum(np.abs(target)))
    if l2_ref == 0 or l1_ref == 0:
        raise ValueError("loss reference is zero on the comparison mask")
    l2_err = float(np.linalg.norm(diff))
    loss = w_nrmse * 100.0 * l2_err / l2_ref + w_nmae * 100.0 * float(
        np.sum(np.abs(diff))
    ) / l1_ref
    grad = np.zeros_like(diff)
    if l2_err > 0:
        grad += (w_nrmse * 100.0 / (l2_ref * l2_err)) * diff
    mag = np.abs(diff)
    phase = np.divide(diff, mag, out=np.zeros_like(diff), where=mag > 0)
    grad += (w_nmae * 100.0 / l1_ref) * phase
    return loss, apply_line_mask(grad, mask)


def training_loss(
    b: np.ndarray,
    triple: MaskTriple,
    g1_index: int,
    image_net: DenoiserNet,
    kspace_net: DenoiserNet,
    coils: np.ndarray,
    recon_cfg: ReconConfig,
    w_nrmse: float = 1.0,
    w_nmae: float = 1.0,
) -> tuple[float, NetGradients, NetGradients]:
    """Reconstruct from one g1 draw and score the re-encoding on g2 lines."""
    g1 = triple.g1_list[g1_index]
    x, tape = mirid_forward(
        apply_line_mask(b, g1), coils, g1, image_net, kspace_net, recon_cfg
    )
    pred = sense_forward(x, coils, triple.g2)
    loss, grad_k = masked_pair_loss(pred, b, triple.g2, w_nrmse, w_nmae)
    grad_x = sense_adjoint(grad_k, coils, triple.g2)
    image_grads, kspace_grads = mirid_backward(grad_x, tape, coils, g1, recon_cfg)
    return loss, image_grads, kspace_grads


def validation_loss(
    b: np.ndarray,
    triple: MaskTriple,
    image_net: DenoiserNet,
    kspace_net: DenoiserNet,
    coils: np.ndarray,
    recon_cfg: ReconConfig,
    w_nrmse: float = 1.0,
    w_nmae: float = 1.0,
) -> float:
    """Reconstruct from g2 and score the re-encoding on all acquired lines."""
    x, _ = mirid_forward(
        apply_line_mask(b, triple.g2), coils, triple.g2, image_net, kspace_net, recon_cfg
    )
    pred = sense_forward(x, coils, triple.g3)
    loss, _ = masked_pair_loss(pred, b, triple.g3, w_nrmse, w_nmae)
    return loss


def infer(
    b: np.ndarray,
    g3: np.ndarray,
    image_net: DenoiserNet,
    kspace_net: DenoiserNet,
    coils: np.ndarray,
    recon_cfg: ReconConfig,
) -> np.ndarray:
    """Final reconstruction from the full acquisition mask."""
    x, _ = mirid_forward(
        apply_line_mask(b, g3), coils, np.asarray(g3, dtype=bool),
        image_net, kspace_net, recon_cfg,
    )
    return x


def train(
    kspaces: list[np.ndarray],
    coils: np.ndarray,
    acquisition_mask: np.ndarray,
    recon_cfg: ReconConfig,
    train_cfg: TrainConfig,
    hidden: int = 16,
    n_layers: int = 4,
    alpha: float = 0.01,
    triples: list[MaskTriple] | None = None,
    verbose: bool = False,
) -> TrainResult:
    """Train one net pair jointly over all directions.

    An epoch is one seeded-shuffled pass over every (direction, g1 draw)
    pair with one Adam step each; validation averages over directions after
    each epoch. The returned nets carry the weights of the best validation
    epoch. Raises on a non-finite loss.
    """
    if not kspaces:
        raise ValueError("need at least one direction")
    nshots = kspaces[0].shape[0]
    rng = RngStream(train_cfg.seed)
    if triples is None:
        triples = [
            make_triple(acquisition_mask, train_cfg, rng.child(0, d))
            for d in range(len(kspaces))
        ]
    if len(triples) != len(kspaces):
        raise ValueError("one mask triple per direction required")

    arch = NetArch(complex_channels=2 * nshots, hidden=hidden, n_layers=n_layers,
                   alpha=alpha)
    image_net = init_weights(arch, rng.child(1, 0))
    kspace_net = init_weights(arch, rng.child(1, 1))
    n_image = image_net.num_params()
    params = np.concatenate([net_param_vector(image_net), net_param_vector(kspace_net)])
    adam = AdamState.zeros(params.shape)

    history = TrainHistory()
    best_params = params.copy()
    best_val = np.inf
    pairs = [(d, j) for d in range(len(kspaces)) for j in range(train_cfg.n_g1)]
    start = time.perf_counter()
    for epoch in range(train_cfg.max_epochs):
        order = list(pairs)
        rng.child(2, epoch).shuffle(order)
        epoch_losses = []
        for d, j in order:
            loss, gi, gk = training_loss(
                kspaces[d], triples[d], j, image_net, kspace_net, coils,
                recon_cfg, train_cfg.w_nrmse, train_cfg.w_nmae,
            )
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite training loss at epoch {epoch}, direction {d}, draw {j}"
                )
            grad_vec = np.concatenate([gradients_vector(gi), gradients_vector(gk)])
            params, adam = adam_step(params, grad_vec, adam, lr=train_cfg.lr)
            set_net_params(image_net, params[:n_image])
            set_net_params(kspace_net, params[n_image:])
            history.optimizer_steps += 1
            epoch_losses.append(loss)
        val_losses = [
            validation_loss(kspaces[d], triples[d], image_net, kspace_net, coils,
                            recon_cfg, train_cfg.w_nrmse, train_cfg.w_nmae)
            for d in range(len(kspaces))
        ]
        val = float(np.mean(val_losses))
        history.train_loss.append(float(np.mean(epoch_losses)))
        history.val_loss.append(val)
        history.seconds.append(time.perf_counter() - start)
        if verbose:
            print(
                f"epoch {epoch} train {history.train_loss[-1]:.6f} "
                f"val {val:.6f} elapsed {history.seconds[-1]:.1f}s",
                flush=True,
            )
        if val < best_val:
            best_val = val
            best_params = params.copy()
            history.best_epoch = epoch
        elif epoch - history.best_epoch >= train_cfg.patience:
            break
    set_net_params(image_net, best_params[:n_image])
    set_net_params(kspace_net, best_params[n_image:])
    return TrainResult(image_net, kspace_net, history, triples)


def train_per_shot(
    kspaces: list[np.ndarray],
    coils: np.ndarray,
    acquisition_mask: np.ndarray,
    recon_cfg: ReconConfig,
    train_cfg: TrainConfig,
    **net_kwargs,
) -> list[TrainResult]:
    """Single-shot variant: an independent net pair per shot, each trained
    on that shot's slice of every direction."""
    nshots = kspaces[0].shape[0]
    results = []
    for m in range(nshots):
        shot_cfg = TrainConfig(**{**train_cfg.__dict__, "seed": train_cfg.seed + 7919 * m})
        results.append(
            train(
                [b[m : m + 1] for b in kspaces],
                coils,
                acquisition_mask[m : m + 1],
                recon_cfg,
                shot_cfg,
                **net_kwargs,
            )
        )
    return results


def infer_per_shot(
    b: np.ndarray,
    g3: np.ndarray,
    shot_nets: list[tuple[DenoiserNet, DenoiserNet]],
    coils: np.ndarray,
    recon_cfg: ReconConfig,
) -> np.ndarray:
    """Assemble a shot stack from independently reconstructed single shots.

    ``shot_nets`` holds one (image_net, kspace_net) pair per shot.
    """
    shots = [
        infer(b[m : m + 1], g3[m : m + 1], image_net, kspace_net, coils, recon_cfg)[0]
        for m, (image_net, kspace_net) in enumerate(shot_nets)
    ]
    return np.stack(shots)
