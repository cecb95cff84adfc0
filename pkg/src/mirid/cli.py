"""Command-line pipeline: `mirid simulate|train|recon|evaluate`.

Every command echoes its resolved configuration into the output directory
and exits nonzero with a one-line diagnostic on failure. With --threads 1
(the default) all outputs are byte-reproducible for a fixed seed.
"""

from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config, render_config
from .container import read_container, write_container, write_pgm
from .denoiser import DenoiserNet, ConvLayer, init_weights
from .metrics import evaluate_methods
from .numerics import RngStream
from .recon import combine_shots, sense_recon
from .simulate import DiffusionProtocol, simulate_dataset
from .ssltrain import infer, infer_per_shot, train, train_per_shot


def _parallel_map(fn, items, threads: int) -> list:
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _echo_config(cfg: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.txt").write_text(render_config(cfg))


def _resolve(args) -> tuple[RunConfig, Path]:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.values["seed"] = args.seed
    if args.threads is not None:
        cfg.values["threads"] = args.threads
    out_dir = Path(args.out) if args.out else Path(cfg.out_dir)
    return cfg, out_dir


def _direction_count(arrays: dict[str, np.ndarray]) -> int:
    return sum(1 for name in arrays if name.startswith("kspace_"))


def _fmt(value) -> str:
    """Full-precision, round-trippable float formatting for CSV cells."""
    return repr(float(value))


def _write_history_csv(path: Path, history) -> None:
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss", "seconds"])
        for e, (tr, va, sec) in enumerate(
            zip(history.train_loss, history.val_loss, history.seconds)
        ):
            writer.writerow([e, _fmt(tr), _fmt(va), _fmt(sec)])


def _net_arrays(prefix: str, net: DenoiserNet) -> dict[str, np.ndarray]:
    out = {}
    for i, layer in enumerate(net.layers):
        out[f"{prefix}/layer{i:02d}/weights"] = layer.weights
        out[f"{prefix}/layer{i:02d}/bias"] = layer.bias
    return out


def _net_from_arrays(prefix: str, arrays: dict[str, np.ndarray], alpha: float) -> DenoiserNet:
    layers = []
    i = 0
    while f"{prefix}/layer{i:02d}/weights" in arrays:
        layers.append(
            ConvLayer(arrays[f"{prefix}/layer{i:02d}/weights"],
                      arrays[f"{prefix}/layer{i:02d}/bias"])
        )
        i += 1
    if not layers:
        raise ValueError(f"checkpoint has no layers under '{prefix}'")
    return DenoiserNet(layers, alpha=alpha)


def save_checkpoint(path: Path, results: list[TrainResult], alpha: float) -> None:
    """One net pair ('mirid', single result) or one pair per shot ('sirid')."""
    arrays: dict[str, np.ndarray] = {"alpha": np.array([alpha])}
    if len(results) == 1:
        arrays.update(_net_arrays("image_net", results[0].image_net))
        arrays.update(_net_arrays("kspace_net", results[0].kspace_net))
    else:
        for m, res in enumerate(results):
            arrays.update(_net_arrays(f"shot{m:02d}/image_net", res.image_net))
            arrays.update(_net_arrays(f"shot{m:02d}/kspace_net", res.kspace_net))
    write_container(path, arrays)


def load_checkpoint(path: Path) -> list[tuple[DenoiserNet, DenoiserNet]]:
    """Returns [(image_net, kspace_net)] for joint or one tuple per shot."""
    arrays = read_container(path)
    alpha = float(arrays["alpha"][0])
    if any(name.startswith("shot00/") for name in arrays):
        pairs = []
        m = 0
        while any(name.startswith(f"shot{m:02d}/") for name in arrays):
            pairs.append(
                (_net_from_arrays(f"shot{m:02d}/image_net", arrays, alpha),
                 _net_from_arrays(f"shot{m:02d}/kspace_net", arrays, alpha))
            )
            m += 1
        return pairs
    return [(_net_from_arrays("image_net", arrays, alpha),
             _net_from_arrays("kspace_net", arrays, alpha))]


def cmd_simulate(args) -> int:
    cfg, out_dir = _resolve(args)
    _echo_config(cfg, out_dir)
    spec = cfg.acquisition_spec()
    protocol = cfg.protocol()
    data = simulate_dataset(spec, protocol, cfg.scene())
    write_container(out_dir / "dataset.mirid", data)

    masks = data["shot_masks"]
    coverage = masks.sum(axis=1) / spec.ny
    print(f"dataset: {out_dir / 'dataset.mirid'}")
    print(f"directions: {protocol.n_entries} (entry 0 is b=0), b={cfg.b_value} s/mm^2")
    for m, c in enumerate(coverage):
        print(f"shot {m}: {int(masks[m].sum())} lines, coverage {100.0 * c:.1f}%")
    if spec.noise_sigma > 0:
        sampled = data["kspace_001"][data["kspace_001"] != 0]
        signal_power = max(float(np.mean(np.abs(sampled) ** 2)) - spec.noise_sigma**2, 1e-300)
        print(f"approx per-sample SNR: {10.0 * np.log10(signal_power / spec.noise_sigma**2):.1f} dB")
    else:
        print("noiseless acquisition (noise_sigma = 0)")
    return 0


def _load_dataset(path: str):
    arrays = read_container(path)
    ndirs = _direction_count(arrays)
    kspaces = [arrays[f"kspace_{d:03d}"] for d in range(ndirs)]
    protocol = DiffusionProtocol.from_array(arrays["protocol"])
    return arrays, kspaces, protocol


def cmd_train(args) -> int:
    cfg, out_dir = _resolve(args)
    _echo_config(cfg, out_dir)
    arrays, kspaces, _ = _load_dataset(args.dataset)
    coils = arrays["coil_maps"]
    masks = arrays["shot_masks"]
    recon_cfg = cfg.recon_config(args.method)
    train_cfg = cfg.train_config()
    net_kwargs = dict(hidden=cfg.net_hidden, n_layers=cfg.net_layers,
                      alpha=cfg.leaky_slope)
    if args.method == "mirid":
        result = train(kspaces, coils, masks, recon_cfg, train_cfg,
                       verbose=True, **net_kwargs)
        results = [result]
        _write_history_csv(out_dir / "history_mirid.csv", result.history)
    else:
        results = train_per_shot(kspaces, coils, masks, recon_cfg, train_cfg,
                                 **net_kwargs)
        for m, res in enumerate(results):
            _write_history_csv(out_dir / f"history_sirid_shot{m:02d}.csv", res.history)
    ckpt = out_dir / f"checkpoint_{args.method}.mirid"
    save_checkpoint(ckpt, results, cfg.leaky_slope)
    for res in results:
        h = res.history
        print(f"best epoch {h.best_epoch}: val {h.val_loss[h.best_epoch]!r} "
              f"({h.optimizer_steps} optimizer steps)")
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_recon(args) -> int:
    cfg, out_dir = _resolve(args)
    _echo_config(cfg, out_dir)
    arrays, kspaces, _ = _load_dataset(args.dataset)
    coils = arrays["coil_maps"]
    masks = arrays["shot_masks"]
    nshots = int(masks.shape[0])
    recon_cfg = cfg.recon_config(args.method)

    if args.method == "sense":
        def recon_one(b):
            return combine_shots(sense_recon(b, coils, masks, 0.0, cfg.cg_steps))
    else:
        if args.untrained:
            rng = RngStream(cfg.seed)
            if args.method == "mirid":
                pairs = [(init_weights(cfg.net_arch(nshots), rng.child(1, 0)),
                          init_weights(cfg.net_arch(nshots), rng.child(1, 1)))]
            else:
                pairs = [(init_weights(cfg.net_arch(1), rng.child(1, 2 * m)),
                          init_weights(cfg.net_arch(1), rng.child(1, 2 * m + 1)))
                         for m in range(nshots)]
        else:
            if not args.checkpoint:
                raise ValueError(f"--method {args.method} requires --checkpoint "
                                 "(or --untrained)")
            pairs = load_checkpoint(Path(args.checkpoint))
        if args.method == "mirid":
            if len(pairs) != 1:
                raise ValueError("checkpoint holds per-shot nets; use --method sirid")
            image_net, kspace_net = pairs[0]

            def recon_one(b):
                return combine_shots(
                    infer(b, masks, image_net, kspace_net, coils, recon_cfg))
        else:
            if len(pairs) != nshots:
                raise ValueError("checkpoint shot count does not match dataset")

            def recon_one(b):
                return combine_shots(
                    infer_per_shot(b, masks, pairs, coils, recon_cfg))

    images = _parallel_map(recon_one, kspaces, cfg.threads)
    out_arrays = {f"recon_{d:03d}": img for d, img in enumerate(images)}
    recon_path = out_dir / f"recon_{args.method}.mirid"
    write_container(recon_path, out_arrays)
    for d, img in enumerate(images):
        write_pgm(out_dir / f"recon_{args.method}_{d:03d}.pgm", img)
    print(f"reconstructed {len(images)} directions with {args.method}: {recon_path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg, out_dir = _resolve(args)
    _echo_config(cfg, out_dir)
    arrays, _, protocol = _load_dataset(args.dataset)
    ndirs = protocol.n_entries
    truth = np.stack([arrays[f"truth_{d:03d}"] for d in range(ndirs)])

    reconstructions = {}
    for path in args.recons:
        stem = Path(path).stem
        method = stem[len("recon_"):] if stem.startswith("recon_") else stem
        rec = read_container(path)
        count = sum(1 for n in rec if n.startswith("recon_"))
        if count != ndirs:
            raise ValueError(f"{path}: holds {count} directions, dataset has {ndirs}")
        reconstructions[method] = np.stack(
            [rec[f"recon_{d:03d}"] for d in range(ndirs)]
        )

    reports = evaluate_methods(
        reconstructions, truth, arrays["tensor_field"], arrays["s0_map"], protocol
    )
    out_path = out_dir / "metrics.csv"
    with open(out_path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "item", "nrmse_percent", "nmae_percent"])
        for rep in reports:
            for i, (a, b) in enumerate(
                zip(rep.nrmse_per_direction, rep.nmae_per_direction), start=1
            ):
                writer.writerow([rep.method, f"dir_{i:03d}", _fmt(a), _fmt(b)])
            writer.writerow([rep.method, "mean", _fmt(rep.mean_nrmse), _fmt(rep.mean_nmae)])
            writer.writerow([rep.method, "mean_dwi", _fmt(rep.mean_dwi_nrmse), ""])
            writer.writerow([rep.method, "fa_map", _fmt(rep.fa_nrmse), ""])
    for rep in reports:
        print(f"{rep.method}: mean NRMSE {rep.mean_nrmse:.2f}%  "
              f"mean NMAE {rep.mean_nmae:.2f}%  mean-DWI {rep.mean_dwi_nrmse:.2f}%  "
              f"FA {rep.fa_nrmse:.2f}%")
    print(f"metrics: {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mirid",
        description="multi-shot diffusion MRI reconstruction on synthetic phantoms",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="path to a key = value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, help="worker threads (1 = reproducible)")
        p.add_argument("--out", help="output directory (overrides out_dir)")

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="self-supervised training on one dataset")
    p.add_argument("dataset", help="dataset container from `mirid simulate`")
    p.add_argument("--method", choices=["mirid", "sirid"], default="mirid")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("recon", help="reconstruct all directions")
    p.add_argument("dataset")
    p.add_argument("--method", choices=["sense", "mirid", "sirid"], required=True)
    p.add_argument("--checkpoint", help="trained checkpoint (mirid/sirid)")
    p.add_argument("--untrained", action="store_true",
                   help="use freshly initialized nets instead of a checkpoint")
    common(p)
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("evaluate", help="score reconstructions against ground truth")
    p.add_argument("dataset")
    p.add_argument("recons", nargs="+", help="recon containers from `mirid recon`")
    common(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
