"""Command-line entry point.

Subcommands: train, eval, gradcheck, equiv, export, dataset-build.
Exit codes: 0 success, 1 internal or numeric failure, 2 usage/config error.
Flag precedence: command line over a flat key=value --config file over
built-in defaults; the effective configuration is printed and written next
to the artifacts. All randomness flows from one --seed through named
streams. TIGRANET_DATA supplies the default dataset root.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import __version__
from .artifacts import ensure_dir, write_config, write_csv
from .datasets import (
    load_dataset_cache,
    load_mnist,
    make_mnist012,
    make_mnist_rot,
    make_mnist_trans,
    make_synthetic_digits,
    save_dataset_cache,
)
from .equivariance import mean_gap_experiment, texture_corpus
from .grid import Connectivity
from .imageio import load_image_dir, write_pgm
from .network import Network
from .seeding import seed_stream
from .spectral import filter_response_curve
from .training import (
    AdamState,
    TrainingDivergedError,
    gradient_check,
    init_network,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .transforms import TransformSpec, apply_general_isometry

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

DEFAULT_ARCH = "SC[3, 3]-DP[300]-SC[6, 3]-DP[100]-S[10]-FC[50]-FC[30]-FC[10]"

_thread_limiter = None


class UsageError(Exception):
    """Bad flags, paths or configuration; maps to exit code 2."""


def _limit_threads(count: int) -> None:
    global _thread_limiter
    try:
        import threadpoolctl

        _thread_limiter = threadpoolctl.threadpool_limits(limits=count)
    except ImportError:
        os.environ.setdefault("OMP_NUM_THREADS", str(count))


def _load_config_file(path) -> dict:
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    values = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{line_no}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


_INT_KEYS = {
    "seed", "epochs", "batch_size", "threads", "num_draws", "max_shift",
    "grid", "count", "size", "train_size", "val_size", "index",
    "lambda_samples", "num_filters", "degree",
}
_FLOAT_KEYS = {"learning_rate"}


def _coerce(key: str, text: str, default):
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes")
    if key in _INT_KEYS or isinstance(default, int):
        return int(text)
    if key in _FLOAT_KEYS or isinstance(default, float):
        return float(text)
    return text


def _effective_config(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < explicit command-line flags."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        file_values = _load_config_file(args.config)
        unknown = set(file_values) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        for key, text in file_values.items():
            merged[key] = _coerce(key, text, defaults[key])
    for key in defaults:
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            merged[key] = cli_value
    return merged


def _require(config: dict, key: str, reason: str):
    if config.get(key) is None:
        raise UsageError(f"--{key.replace('_', '-')} is required {reason}")
    return config[key]


def _connectivity(text: str) -> Connectivity:
    try:
        return {"four": Connectivity.FOUR, "eight": Connectivity.EIGHT}[text.lower()]
    except KeyError:
        raise UsageError(f"connectivity must be 'four' or 'eight', got {text!r}")


def _load_dataset(config: dict):
    """Resolve --dataset into (train, validation, test) signal sets."""
    name = config["dataset"]
    seed = config["seed"]
    if name.endswith(".tgds"):
        if not os.path.exists(name):
            raise UsageError(f"dataset cache not found: {name}")
        splits, _ = load_dataset_cache(name)
        return splits
    if name == "synthetic012":
        return make_synthetic_digits(seed)
    if name in ("mnist012", "mnist-rot", "mnist-trans"):
        try:
            mnist = load_mnist(config.get("data_root"))
        except FileNotFoundError as exc:
            raise UsageError(str(exc))
        if name == "mnist012":
            return make_mnist012(mnist[0], mnist[1], seed)
        builder = make_mnist_rot if name == "mnist-rot" else make_mnist_trans
        return builder(*mnist, seed)
    raise UsageError(f"unknown dataset {name!r}")


def _write_effective_config(out_dir: str, config: dict) -> None:
    write_config(os.path.join(out_dir, "effective_config.txt"), config)
    printable = " ".join(f"{k}={config[k]}" for k in sorted(config) if config[k] is not None)
    print(f"config: {printable}")


# --- train ---------------------------------------------------------------------

TRAIN_DEFAULTS = {
    "arch": DEFAULT_ARCH,
    "dataset": "mnist012",
    "data_root": None,
    "seed": None,
    "epochs": 100,
    "batch_size": 32,
    "learning_rate": 1e-3,
    "out": "runs/train",
    "threads": None,
    "variance_mode": "exact",
}


def cmd_train(args) -> int:
    config = _effective_config(args, TRAIN_DEFAULTS)
    _require(config, "seed", "to make training reproducible")
    if config["threads"]:
        _limit_threads(config["threads"])
    out_dir = ensure_dir(config["out"])
    _write_effective_config(out_dir, config)

    train_set, val_set, _ = _load_dataset(config)
    net = Network(config["arch"], train_set.grid)
    init_network(net, config["seed"])
    adam = AdamState(learning_rate=config["learning_rate"])

    log_rows = []
    if config["epochs"] > 0:
        log = train(
            net,
            train_set.signals,
            train_set.labels,
            val_set.signals,
            val_set.labels,
            epochs=config["epochs"],
            seed=config["seed"],
            batch_size=config["batch_size"],
            adam_state=adam,
            progress=lambda row: print(
                f"epoch {row['epoch']:3d}  train {row['train_loss']:.4f}/{row['train_acc']:.3f}"
                f"  val {row['val_loss']:.4f}/{row['val_acc']:.3f}"
            ),
        )
        net.set_parameters(log.best_params)
        log_rows = log.csv_rows()
        print(
            f"best epoch {log.best_epoch}: val accuracy {log.best_val_acc:.3f}"
        )
        final_epoch = log.best_epoch
    else:
        final_epoch = 0

    write_csv(
        os.path.join(out_dir, "training_log.csv"),
        ("epoch", "train_loss", "train_acc", "val_loss", "val_acc"),
        log_rows,
    )
    save_checkpoint(
        os.path.join(out_dir, "checkpoint.json"),
        net,
        adam_state=adam,
        seed=config["seed"],
        epoch=final_epoch,
    )
    if config["epochs"] > 0:
        from .training import evaluate

        train_loss, train_acc = evaluate(net, train_set.signals, train_set.labels)
        val_loss, val_acc = evaluate(net, val_set.signals, val_set.labels)
        print(f"final: train accuracy {train_acc:.3f}, val accuracy {val_acc:.3f}")
    return EXIT_OK


# --- eval ----------------------------------------------------------------------

EVAL_DEFAULTS = {
    "checkpoint": None,
    "dataset": "mnist012",
    "data_root": None,
    "split": "test",
    "transform": "none",
    "num_draws": 10,
    "max_shift": 6,
    "seed": None,
    "out": "runs/eval",
    "threads": None,
}


def _transform_signals(signals: np.ndarray, grid, family: str, rng, max_shift: int):
    if family == "none":
        return signals
    h, w = grid.height, grid.width
    out = np.empty_like(signals)
    for i, signal in enumerate(signals):
        image = signal.reshape(h, w)
        if family == "rotation":
            spec = TransformSpec(rotation=rng.uniform(0.0, 2.0 * math.pi))
        elif family == "translation":
            dx, dy = rng.integers(-max_shift, max_shift + 1, size=2)
            spec = TransformSpec(translation=(float(dx), float(dy)))
        else:
            raise UsageError(f"unknown transform family {family!r}")
        out[i] = np.clip(apply_general_isometry(image, spec), 0.0, 1.0).ravel()
    return out


def cmd_eval(args) -> int:
    config = _effective_config(args, EVAL_DEFAULTS)
    _require(config, "checkpoint", "to know which model to evaluate")
    _require(config, "seed", "to make transform draws reproducible")
    if config["threads"]:
        _limit_threads(config["threads"])
    if not os.path.exists(config["checkpoint"]):
        raise UsageError(f"checkpoint not found: {config['checkpoint']}")
    out_dir = ensure_dir(config["out"])
    _write_effective_config(out_dir, config)

    net, _, _ = load_checkpoint(config["checkpoint"])
    splits = {s.split: s for s in _load_dataset(config)}
    if config["split"] not in splits:
        raise UsageError(f"split {config['split']!r} not in {sorted(splits)}")
    subset = splits[config["split"]]
    if subset.grid.num_nodes != net.graph.num_nodes:
        raise UsageError(
            f"checkpoint grid has {net.graph.num_nodes} nodes, "
            f"dataset grid has {subset.grid.num_nodes}"
        )

    draws = 1 if config["transform"] == "none" else config["num_draws"]
    accuracies = []
    rows = []
    for draw in range(draws):
        rng = seed_stream(config["seed"], f"eval-transform-{draw}")
        signals = _transform_signals(
            subset.signals, subset.grid, config["transform"], rng, config["max_shift"]
        )
        correct = sum(
            net.predict(signal) == int(label)
            for signal, label in zip(signals, subset.labels)
        )
        accuracy = correct / max(len(subset), 1)
        accuracies.append(accuracy)
        rows.append((draw, config["transform"], accuracy))
        print(f"draw {draw}: accuracy {accuracy:.4f}")

    mean = float(np.mean(accuracies))
    std = float(np.std(accuracies))
    rows.append(("mean", config["transform"], mean))
    rows.append(("std", config["transform"], std))
    write_csv(
        os.path.join(out_dir, "accuracy_report.csv"),
        ("draw", "transform", "accuracy"),
        rows,
    )
    print(f"accuracy over {draws} draw(s): {mean:.4f} +/- {std:.4f}")
    return EXIT_OK


# --- gradcheck -------------------------------------------------------------------

GRADCHECK_DEFAULTS = {
    "arch": "SC[2, 2]-DP[20]-S[4]-FC[8]-FC[3]",
    "grid": 10,
    "seed": 0,
    "out": "runs/gradcheck",
    "corrupt": None,
    "threads": None,
}


def cmd_gradcheck(args) -> int:
    config = _effective_config(args, GRADCHECK_DEFAULTS)
    if config["threads"]:
        _limit_threads(config["threads"])
    out_dir = ensure_dir(config["out"])
    _write_effective_config(out_dir, config)

    report = gradient_check(
        arch=config["arch"],
        grid_size=config["grid"],
        seed=config["seed"],
        corrupt_group=config["corrupt"],
    )
    rows = [
        (group, entry["worst_rel_err"], entry["checked"], entry["masked"])
        for group, entry in sorted(report["per_group"].items())
    ]
    write_csv(
        os.path.join(out_dir, "gradcheck_report.csv"),
        ("group", "worst_rel_err", "checked", "masked"),
        rows,
    )
    for group, worst, checked, masked in rows:
        print(f"{group}: worst relative error {worst:.3e} ({checked} checked, {masked} masked)")
    if not report["passed"]:
        failing = [g for g, e in report["per_group"].items() if e["worst_rel_err"] > 1e-5]
        print(f"FAILED groups: {failing}", file=sys.stderr)
        return EXIT_FAILURE
    print("gradient check passed")
    return EXIT_OK


# --- equiv -----------------------------------------------------------------------

EQUIV_DEFAULTS = {
    "images": None,
    "out": "runs/equiv",
    "seed": None,
    "factors": "2,3,4,5,6",
    "num_filters": 20,
    "degree": 4,
    "family": "both",
    "connectivity": "four",
    "threads": None,
}


def cmd_equiv(args) -> int:
    config = _effective_config(args, EQUIV_DEFAULTS)
    _require(config, "images", "to point at the grayscale corpus directory")
    _require(config, "seed", "to make the filter draws reproducible")
    if config["threads"]:
        _limit_threads(config["threads"])
    if not os.path.isdir(config["images"]):
        raise UsageError(f"image directory not found: {config['images']}")
    out_dir = ensure_dir(config["out"])
    _write_effective_config(out_dir, config)

    try:
        images = [img for _, img in load_image_dir(config["images"])]
    except ValueError as exc:
        raise UsageError(str(exc))
    factors = tuple(int(f) for f in str(config["factors"]).split(","))
    families = ("rotation", "translation") if config["family"] == "both" else (config["family"],)

    report = mean_gap_experiment(
        images,
        factors=factors,
        num_filters=config["num_filters"],
        degree=config["degree"],
        seed=config["seed"],
        connectivity=_connectivity(config["connectivity"]),
        families=families,
    )
    write_csv(os.path.join(out_dir, "equiv_gaps.csv"), report.CSV_HEADER, report.csv_rows())

    curve_rows = []
    for family in families:
        for t, value in report.family_curve(family).items():
            curve_rows.append((t, family, value))
    write_csv(
        os.path.join(out_dir, "mean_gap_curves.csv"),
        ("t", "transform_family", "mean_gap"),
        curve_rows,
    )
    if "rotation" in families:
        print(f"rotation curve monotone non-decreasing: {report.rotation_curve_is_monotone()}")
    if len(families) == 2:
        print(f"translation below rotation at every t: {report.translation_below_rotation()}")
    return EXIT_OK


# --- export ----------------------------------------------------------------------

EXPORT_DEFAULTS = {
    "checkpoint": None,
    "out": "runs/export",
    "image": None,
    "dataset": None,
    "data_root": None,
    "index": 0,
    "layer": None,
    "lambda_samples": 256,
    "seed": 0,
    "threads": None,
}


def cmd_export(args) -> int:
    config = _effective_config(args, EXPORT_DEFAULTS)
    _require(config, "checkpoint", "to know which model to export")
    if config["threads"]:
        _limit_threads(config["threads"])
    if not os.path.exists(config["checkpoint"]):
        raise UsageError(f"checkpoint not found: {config['checkpoint']}")
    out_dir = ensure_dir(config["out"])
    _write_effective_config(out_dir, config)

    net, _, _ = load_checkpoint(config["checkpoint"])
    if config["layer"] is None:
        layer_indices = range(len(net.conv_layers))
    else:
        if not (0 <= config["layer"] < len(net.conv_layers)):
            raise UsageError(
                f"--layer {config['layer']} out of range: model has "
                f"{len(net.conv_layers)} spectral layers"
            )
        layer_indices = [config["layer"]]
    for layer_idx in layer_indices:
        rows = []
        for filter_idx, alpha in enumerate(net.conv_layers[layer_idx].alpha):
            lambdas, responses = filter_response_curve(alpha, config["lambda_samples"])
            rows.extend(
                (filter_idx, lam, resp) for lam, resp in zip(lambdas, responses)
            )
        write_csv(
            os.path.join(out_dir, f"filter_spectra_layer{layer_idx}.csv"),
            ("filter", "lambda", "response"),
            rows,
        )

    signal = None
    if config["image"]:
        from .imageio import read_grayscale

        if not os.path.exists(config["image"]):
            raise UsageError(f"image not found: {config['image']}")
        pixels = read_grayscale(config["image"]).astype(np.float64) / 255.0
        if pixels.shape != (net.graph.height, net.graph.width):
            raise UsageError(
                f"image shape {pixels.shape} does not match model grid "
                f"{net.graph.height}x{net.graph.width}"
            )
        signal = pixels.ravel()
    elif config["dataset"]:
        splits = {s.split: s for s in _load_dataset(config)}
        subset = splits["test"]
        if not (0 <= config["index"] < len(subset)):
            raise UsageError(f"--index {config['index']} out of range for {len(subset)} samples")
        signal = subset.signals[config["index"]]

    if signal is not None:
        conv_maps, pooled_maps = net.feature_maps(signal)
        h, w = net.graph.height, net.graph.width
        for layer_idx, (conv, pooled) in enumerate(zip(conv_maps, pooled_maps)):
            if layer_idx not in layer_indices:
                continue
            for filter_idx in range(conv.shape[0]):
                for tag, maps in (("conv", conv), ("pooled", pooled)):
                    image = maps[filter_idx].reshape(h, w)
                    span = image.max() - image.min()
                    scaled = (image - image.min()) / span if span > 0 else np.zeros_like(image)
                    write_pgm(
                        os.path.join(
                            out_dir,
                            f"featuremap_layer{layer_idx}_filter{filter_idx}_{tag}.pgm",
                        ),
                        scaled,
                    )
        exported = sum(
            conv_maps[i].shape[0] for i in layer_indices if i < len(conv_maps)
        )
        print(f"exported feature maps for {exported} filters")
    print(f"exported filter spectra for {len(list(layer_indices))} layer(s)")
    return EXIT_OK


# --- dataset-build -----------------------------------------------------------------

DATASET_DEFAULTS = {
    "dataset": None,
    "data_root": None,
    "seed": None,
    "out": None,
    "count": 100,
    "size": 240,
    "train_size": 50000,
    "val_size": 3000,
    "threads": None,
}


def cmd_dataset_build(args) -> int:
    config = _effective_config(args, DATASET_DEFAULTS)
    _require(config, "dataset", "to choose what to build")
    _require(config, "seed", "to make dataset sampling reproducible")
    _require(config, "out", "to choose the output location")

    name = config["dataset"]
    if name == "textures":
        out_dir = ensure_dir(config["out"])
        _write_effective_config(out_dir, config)
        for i, image in enumerate(texture_corpus(config["count"], config["size"], config["seed"])):
            write_pgm(os.path.join(out_dir, f"texture_{i:04d}.pgm"), image)
        print(f"wrote {config['count']} textures to {out_dir}")
        return EXIT_OK

    if name == "synthetic012":
        splits = make_synthetic_digits(config["seed"])
    elif name in ("mnist012", "mnist-rot", "mnist-trans"):
        try:
            mnist = load_mnist(config.get("data_root"))
        except FileNotFoundError as exc:
            raise UsageError(str(exc))
        if name == "mnist012":
            splits = make_mnist012(mnist[0], mnist[1], config["seed"])
        else:
            builder = make_mnist_rot if name == "mnist-rot" else make_mnist_trans
            splits = builder(
                *mnist,
                config["seed"],
                train_size=config["train_size"],
                val_size=config["val_size"],
            )
    else:
        raise UsageError(f"unknown dataset {name!r}")

    ensure_dir(os.path.dirname(config["out"]) or ".")
    save_dataset_cache(
        config["out"],
        splits,
        meta={"dataset": name, "seed": config["seed"]},
    )
    sizes = ", ".join(str(len(s)) for s in splits)
    print(f"wrote dataset cache {config['out']} with splits of {sizes}")
    return EXIT_OK


# --- parser ------------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--out", help="output directory for artifacts")
    parser.add_argument("--seed", type=int, help="seed for all random streams")
    parser.add_argument("--threads", type=int, help="cap worker threads (1 = bit-exact)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tigranet",
        description="Transformation-invariant grid-graph classifier and equivariance lab",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network and write a checkpoint")
    _add_common(p)
    p.add_argument("--arch", help="architecture string, e.g. SC[3, 3]-DP[300]-...")
    p.add_argument("--dataset", help="mnist012 | synthetic012 | path.tgds")
    p.add_argument("--data-root", dest="data_root", help="MNIST IDX directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, optionally under transforms")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--dataset")
    p.add_argument("--data-root", dest="data_root")
    p.add_argument("--split", choices=("train", "validation", "test"))
    p.add_argument("--transform", choices=("none", "rotation", "translation"))
    p.add_argument("--num-draws", dest="num_draws", type=int)
    p.add_argument("--max-shift", dest="max_shift", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    _add_common(p)
    p.add_argument("--arch")
    p.add_argument("--grid", type=int, help="grid side length")
    p.add_argument("--corrupt", help="test hook: corrupt one gradient group")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("equiv", help="equivariance-gap experiment over an image corpus")
    _add_common(p)
    p.add_argument("--images", help="directory of 8-bit grayscale PGM/PNG images")
    p.add_argument("--factors", help="comma-separated downsampling factors")
    p.add_argument("--num-filters", dest="num_filters", type=int)
    p.add_argument("--degree", type=int)
    p.add_argument("--family", choices=("both", "rotation", "translation"))
    p.add_argument("--connectivity", choices=("four", "eight"))
    p.set_defaults(func=cmd_equiv)

    p = sub.add_parser("export", help="export filter spectra and feature maps")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--image", help="PGM/PNG image matching the model grid")
    p.add_argument("--dataset", help="dataset whose test split supplies the input")
    p.add_argument("--data-root", dest="data_root")
    p.add_argument("--index", type=int, help="sample index within the test split")
    p.add_argument("--layer", type=int, help="export only this spectral layer")
    p.add_argument("--lambda-samples", dest="lambda_samples", type=int)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("dataset-build", help="build a dataset cache or texture corpus")
    _add_common(p)
    p.add_argument("--dataset", help="mnist012 | mnist-rot | mnist-trans | synthetic012 | textures")
    p.add_argument("--data-root", dest="data_root")
    p.add_argument("--count", type=int, help="texture corpus size")
    p.add_argument("--size", type=int, help="texture side length in pixels")
    p.add_argument("--train-size", dest="train_size", type=int)
    p.add_argument("--val-size", dest="val_size", type=int)
    p.set_defaults(func=cmd_dataset_build)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help/--version
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK

    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as exc:  # internal failures map to exit 1
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
