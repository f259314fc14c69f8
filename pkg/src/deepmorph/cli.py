"""Command-line front end: reproducible data generation, training, evaluation,
and model inspection.

Commands print machine-parsable ``key=value`` summary lines on stdout and
human progress on stderr.  Exit codes: 0 success, 1 usage/config error,
2 runtime failure.  Every command is deterministic given its arguments:
all randomness flows from one seed through the named sub-streams
(data, init, shuffle), so re-runs produce byte-identical output files.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import datasets, netpbm
from .architectures import ARCHITECTURES, build_network, morph_layers
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .datasets import SYNTHETIC_KINDS
from .morph import recover_se, se_ascii
from .nn import TrainConfig, TrainingDiverged, derive_rng, evaluate, gradcheck, train

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class ConfigError(ValueError):
    """Bad command usage or configuration; maps to exit code 1."""


# key -> (parser, default); None default means required
_CONFIG_KEYS = {
    "architecture": (str, None),
    "dataset": (str, None),
    "output_dir": (str, None),
    "classes": (int, 0),  # 0 = derive from the dataset
    "channels": (int, 0),
    "learning_rate": (float, 0.01),
    "weight_decay": (float, 0.0005),
    "momentum": (float, 0.9),
    "epochs": (int, 10),
    "batch_size": (int, 16),
    "seed": (int, 0),
    "reconstruction_dilate_se": (lambda s: s.lower() in ("1", "true", "yes"), True),
}


def parse_config(path):
    """Parse a flat key=value config file; reports errors with line numbers."""
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _CONFIG_KEYS[key][0](value)
        except ValueError as e:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {e}") from e
    for key, (_, default) in _CONFIG_KEYS.items():
        if key not in values:
            if default is None:
                raise ConfigError(f"{path}: missing required key {key!r}")
            values[key] = default
    if values["architecture"] not in ARCHITECTURES:
        raise ConfigError(
            f"{path}: unknown architecture {values['architecture']!r}; "
            f"expected one of {ARCHITECTURES}"
        )
    return values


def synthetic_dataset(kind, seed):
    """Generate a synthetic dataset and its 60/20/20 split from one seed.

    Both the image placement and the split shuffling draw from the 'data'
    sub-stream, so the same seed always reproduces the same experiment.
    """
    rng = derive_rng(seed, "data")
    samples = datasets.generate(kind, rng)
    split = datasets.split_60_20_20(samples, rng)
    return samples, split


def resolve_dataset(dataset, seed):
    """Samples + split for a synthetic kind or an on-disk dataset path."""
    if dataset in SYNTHETIC_KINDS:
        return synthetic_dataset(dataset, seed)
    root = Path(dataset)
    if (root / "manifest.csv").is_file():
        return datasets.load_dataset(root)
    samples = datasets.load_image_folder(root)
    split = datasets.split_60_20_20(samples, derive_rng(seed, "data"))
    return samples, split


def _dataset_shape(samples):
    channels = {s.image.shape[0] for s in samples}
    if len(channels) != 1:
        raise ConfigError(f"dataset mixes channel counts {sorted(channels)}")
    return channels.pop(), max(s.label for s in samples) + 1


def _splits(samples, split):
    return (
        datasets.take(samples, split.train),
        datasets.take(samples, split.validation),
        datasets.take(samples, split.test),
    )


def cmd_gen_data(args):
    rng = derive_rng(args.seed, "data")
    samples = datasets.generate(args.kind, rng)
    split = datasets.split_60_20_20(samples, rng)
    manifest = datasets.save_dataset(samples, split, args.out)
    print(f"written={len(samples)}")
    print(f"manifest={manifest}")
    return 0


def cmd_train(args):
    cfg = parse_config(args.config)
    samples, split = resolve_dataset(cfg["dataset"], cfg["seed"])
    channels, classes = _dataset_shape(samples)
    if cfg["classes"] and cfg["classes"] != classes:
        raise ConfigError(f"config says {cfg['classes']} classes but dataset has {classes}")
    if cfg["channels"] and cfg["channels"] != channels:
        raise ConfigError(f"config says {cfg['channels']} channels but dataset has {channels}")
    network = build_network(
        cfg["architecture"], classes, channels, cfg["seed"],
        reconstruction_dilate_se=cfg["reconstruction_dilate_se"],
    )
    train_cfg = TrainConfig(
        learning_rate=cfg["learning_rate"],
        weight_decay=cfg["weight_decay"],
        momentum=cfg["momentum"],
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        seed=cfg["seed"],
    )
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    def progress(epoch, em):
        print(
            f"epoch={epoch} train_loss={em.train_loss:.6f} "
            f"train_acc={em.train_acc:.2f} val_acc={em.val_acc:.2f}",
            file=sys.stderr,
        )

    started = time.monotonic()
    try:
        metrics = train(network, *_splits(samples, split), train_cfg, progress=progress)
    except TrainingDiverged as e:
        dump = out_dir / "diagnostics.json"
        dump.write_text(json.dumps(e.state, indent=2, sort_keys=True))
        print(f"diverged: {e} (state dump in {dump})", file=sys.stderr)
        raise
    meta = dict(network.meta)
    meta["config"] = cfg
    values = {name: p.value for name, p in network.param_dict().items()}
    save_checkpoint(out_dir / "checkpoint.dmn", meta, values)
    csv_path = out_dir / "metrics.csv"
    csv_path.write_text("\n".join(metrics.csv_lines()) + "\n")
    print(f"wall_time_s={time.monotonic() - started:.1f}", file=sys.stderr)
    print(f"checkpoint={out_dir / 'checkpoint.dmn'}")
    print(f"metrics={csv_path}")
    print(f"test_accuracy={metrics.test_accuracy:.2f}")
    return 0


def _load_network(path):
    meta, values = load_checkpoint(path)
    network = build_network(
        meta["architecture"], meta["classes"], meta["in_channels"], meta["seed"],
        reconstruction_dilate_se=meta.get("reconstruction_dilate_se", True),
    )
    network.load_values(values)
    return network, meta


def cmd_eval(args):
    network, meta = _load_network(args.checkpoint)
    samples, split = resolve_dataset(args.dataset, meta["seed"])
    channels, classes = _dataset_shape(samples)
    if classes != meta["classes"] or channels != meta["in_channels"]:
        raise ConfigError(
            f"checkpoint expects {meta['classes']} classes / {meta['in_channels']} channels, "
            f"dataset has {classes} / {channels}"
        )
    chosen = samples if args.split == "all" else datasets.take(samples, split.of(args.split))
    acc = evaluate(network, chosen, batch_size=meta.get("config", {}).get("batch_size", 16))
    print(f"accuracy={acc:.2f}")
    return 0


def cmd_inspect_se(args):
    network, _ = _load_network(args.checkpoint)
    layers = morph_layers(network)
    if not layers:
        raise ConfigError("checkpoint architecture has no morphological layers")
    if not 0 <= args.layer < len(layers):
        raise ConfigError(f"layer index {args.layer} out of range (0..{len(layers) - 1})")
    layer = layers[args.layer]
    if not 0 <= args.neuron < len(layer.neurons):
        raise ConfigError(
            f"neuron index {args.neuron} out of range (0..{len(layer.neurons) - 1})"
        )
    neuron = layer.neurons[args.neuron]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dumps = {
        "stage1": recover_se(neuron.bank1),
        "stage2": recover_se(neuron._stage2_weights().value),
    }
    if neuron.kind in ("rec_by_erosion", "rec_by_dilation"):
        dumps["stage2_derived"] = neuron.derived_stage2_se()
    written = []
    for tag, se in dumps.items():
        base = out / f"se_layer{args.layer}_neuron{args.neuron}_{tag}"
        Path(f"{base}.txt").write_text(se_ascii(se))
        netpbm.write_pgm(f"{base}.pgm", se.mask.astype(np.uint8) * 255)
        written.extend([f"{base}.txt", f"{base}.pgm"])
    print(f"files={len(written)}")
    for f in written:
        print(f"file={f}")
    return 0


def _nearest_upsample(plane, out_h, out_w):
    h, w = plane.shape
    rows = (np.arange(out_h) * h) // out_h
    cols = (np.arange(out_w) * w) // out_w
    return plane[rows][:, cols]


def cmd_export_features(args):
    network, meta = _load_network(args.checkpoint)
    if not 0 <= args.layer < len(network.layers):
        raise ConfigError(f"layer index {args.layer} out of range (0..{len(network.layers) - 1})")
    img = netpbm.read_netpbm(args.image)
    size = meta["input_hw"][0]
    img = datasets.bilinear_resize(img, size, size)
    if img.shape[0] != meta["in_channels"]:
        raise ConfigError(
            f"image has {img.shape[0]} channels, checkpoint expects {meta['in_channels']}"
        )
    x = np.asarray(img, dtype=np.float64)[None]
    for layer in network.layers[: args.layer + 1]:
        x = layer.forward(x)
    if x.ndim != 4:
        raise ConfigError(f"layer {args.layer} output is not spatial (shape {x.shape})")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = 0
    for ch in range(x.shape[1]):
        plane = x[0, ch]
        lo, hi = plane.min(), plane.max()
        norm = (plane - lo) / (hi - lo) if hi > lo else np.zeros_like(plane)
        up = _nearest_upsample(norm, size, size)
        netpbm.write_pgm(out / f"features_layer{args.layer}_ch{ch:03d}.pgm", up)
        written += 1
    print(f"files={written}")
    return 0


def cmd_gradcheck(args):
    network = build_network(args.architecture, args.classes, args.channels, args.seed)
    rng = derive_rng(args.seed, "data")
    x = rng.random((args.channels, 224, 224))
    target = int(rng.integers(0, args.classes))
    # banks are trained straight-through, so only the genuinely
    # differentiable parameter groups are probed
    probed = [p for p in network.parameters() if ".bank" not in p.name]
    entry_rng = derive_rng(args.seed, "shuffle")
    worst_overall = 0.0
    for p in probed:
        err = gradcheck(
            network, x, target, params=[p], eps=1e-5,
            max_entries=args.entries, rng=entry_rng,
        )
        n = min(p.value.size, args.entries)
        print(f"group={p.name} checked={n} max_rel_err={err:.3e}")
        worst_overall = max(worst_overall, err)
    ok = worst_overall < 1e-4
    print(f"gradcheck={'pass' if ok else 'fail'} max_rel_err={worst_overall:.3e}")
    return 0 if ok else RUNTIME_ERROR


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(USAGE_ERROR)


def build_parser():
    parser = _Parser(prog="deepmorph", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[], help="generate a synthetic dataset on disk")
    p.add_argument("kind", choices=SYNTHETIC_KINDS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a network from a key=value config file")
    p.add_argument("config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test", choices=("train", "validation", "test", "all"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect-se", help="dump a neuron's structuring elements")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--neuron", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect_se)

    p = sub.add_parser("export-features", help="dump per-channel feature maps as PGM")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_features)

    p = sub.add_parser("gradcheck", help="finite-difference audit of differentiable params")
    p.add_argument("--architecture", required=True, choices=ARCHITECTURES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--entries", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except (CheckpointError, TrainingDiverged, netpbm.NetpbmError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
