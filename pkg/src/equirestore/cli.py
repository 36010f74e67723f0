"""Umbrella command-line tool.

Subcommands: verify-equivariance, build-constructive, train, estimate,
restore, eval, polar, decompose-bits, prep.  Exit codes: 0 success,
1 validation failure, 2 usage error.  All randomness sits behind --seed
(EQR_SEED environment variable as fallback, default 0), so identical
argv plus seed reproduce identical stdout and output files.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from .circular import Shape, as_shape
from .constructive import build_restorer, check_aperiodic
from .errors import EquirestoreError
from .formats import read_network, read_tensor, write_network, write_tensor
from .manifest import LabeledDataset, load_manifest
from .network import forward, max_equivariance_deviation
from .pgm import load_pgm, save_pgm
from .polar import PolarGridSpec, to_polar
from .restore import eval_grid, nn_classify, restore, restore_rotation
from .training import TrainConfig, evaluate_estimator, train


def _seed_default() -> int:
    return int(os.environ.get("EQR_SEED", "0"))


def _parse_shape(text: str) -> Shape:
    try:
        return as_shape(tuple(int(t) for t in text.split("x")))
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed shape {text!r}, expected e.g. 8x8")


def _load_image(path: str) -> np.ndarray:
    """Load a PGM or raw tensor element as a (C, *dims) stack."""
    data = Path(path).read_bytes()
    if data[:4] == b"EQT1":
        stack, _ = read_tensor(path)
        return stack
    return load_pgm(path)[np.newaxis, ...]


def _save_like(values: np.ndarray, path: str) -> None:
    if path.endswith(".pgm"):
        if values.shape[0] != 1 or values.ndim != 3:
            raise EquirestoreError("PGM output needs single-channel 2-D data")
        save_pgm(values[0], path)
    else:
        write_tensor(path, values, dtype="f64")


def _read_polar_spec(path: str) -> PolarGridSpec:
    keys = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise EquirestoreError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        keys[key.strip()] = value.strip()
    center = None
    if "center_x" in keys or "center_y" in keys:
        center = (float(keys.pop("center_x")), float(keys.pop("center_y")))
    mapping = {"angular_bins": int, "radial_bins": int, "R": float, "a": float,
               "radial_grid": str}
    kwargs = {}
    for key, value in keys.items():
        if key not in mapping:
            raise EquirestoreError(f"{path}: unknown polar spec key {key!r}")
        name = {"R": "radius", "a": "decay"}.get(key, key)
        kwargs[name] = mapping[key](value)
    return PolarGridSpec(center=center, **kwargs)


def _read_train_config(path: str, seed: int | None) -> TrainConfig:
    values = {}
    casts = {f.name: f.type for f in dataclass_fields(TrainConfig)}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise EquirestoreError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if key not in casts:
            raise EquirestoreError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in ("learning_rate",):
            values[key] = float(value)
        elif key in ("loss",):
            values[key] = value
        elif key in ("bias_free",):
            values[key] = value.lower() in ("1", "true", "yes")
        else:
            values[key] = int(value)
    if seed is not None:
        values["seed"] = seed
    return TrainConfig(**values)


def cmd_verify_equivariance(args) -> int:
    net = read_network(args.net, _parse_shape(args.shape))
    rng = np.random.default_rng(args.seed)
    channels = net.in_channels or 1
    probe = rng.standard_normal((channels,) + net.shape.dims)
    if args.exhaustive:
        offsets = None
    else:
        picks = rng.integers(0, np.array(net.shape.dims), size=(args.samples, net.shape.ndim))
        offsets = [tuple(int(v) for v in row) for row in picks]
    deviation, worst = max_equivariance_deviation(net, probe, offsets)
    print(f"max deviation: {deviation:.6e} (worst shift {worst})")
    if deviation <= args.tol:
        print(f"equivariant within {args.tol:g}")
        return 0
    print(f"NOT equivariant within {args.tol:g}")
    return 1


def cmd_build_constructive(args) -> int:
    dataset = load_manifest(args.dataset)
    bits = args.bits
    if bits is None:
        bits = dataset.bit_depth
        if bits is None:
            raise EquirestoreError(
                "dataset range tag is f64; pass --bits for integer bit depth"
            )
    estimator = build_restorer(dataset.elements, bits)
    write_network(args.out, estimator.network)
    print(f"certificate: {estimator.certificate.describe()}")
    print(f"alpha: {estimator.alpha:g}")
    print(f"depth: {estimator.depth}")
    print(f"width: {estimator.network.width} neurons "
          f"({estimator.network.max_channels} channels x {estimator.network.shape.size})")
    print("element  label       margin")
    for i in range(dataset.size):
        out = forward(estimator.network, dataset.elements[i]).reshape(-1)
        margin = out[0] - np.max(out[1:])
        print(f"{i:7d}  {dataset.labels[i]:<10s}  {margin:.6e}")
    print(f"wrote {args.out}")
    return 0


def cmd_train(args) -> int:
    dataset = load_manifest(args.dataset)
    config = _read_train_config(args.config, args.seed) if args.config else TrainConfig(
        seed=args.seed if args.seed is not None else _seed_default()
    )
    net, log = train(dataset.elements, config)
    write_network(args.out, net)
    with open(args.log, "w") as fh:
        fh.write("epoch,loss,argmax0_accuracy,min_margin\n")
        for rec in log:
            fh.write(f"{rec.epoch},{rec.loss:.9g},{rec.argmax0_accuracy:.6f},"
                     f"{rec.min_margin:.9g}\n")
    report = evaluate_estimator(net, dataset.elements)
    print(f"epochs: {len(log)}")
    if log:
        print(f"final loss: {log[-1].loss:.6g}")
    print(f"argmax0 accuracy: {report.accuracy:.4f}")
    print(f"min margin: {report.min_margin:.6g}")
    print(f"wrote {args.out} and {args.log}")
    return 0


def cmd_estimate(args) -> int:
    stack = _load_image(args.input)
    net = read_network(args.net, Shape(stack.shape[1:]))
    result = restore(net, stack)
    print(f"estimated shift: {' '.join(str(m) for m in result.translation)}")
    print(f"margin: {result.margin:.6e}")
    if result.degenerate:
        print("warning: degenerate estimate (margin below 1e-6)")
    return 0


def cmd_restore(args) -> int:
    stack = _load_image(args.input)
    if args.mode == "rotate":
        if not args.polar_spec:
            raise EquirestoreError("--mode rotate requires --polar-spec")
        spec = _read_polar_spec(args.polar_spec)
        net = read_network(args.net, Shape(spec.angular_bins))
        if stack.shape[0] != 1:
            raise EquirestoreError("rotation restoration expects a single-channel image")
        result = restore_rotation(net, stack[0], spec)
        print(f"estimated rotation: bin {result.rotation_bin} "
              f"({result.angle_degrees:.2f} degrees)")
        restored = result.restored[np.newaxis, ...]
    else:
        net = read_network(args.net, Shape(stack.shape[1:]))
        result = restore(net, stack)
        print(f"estimated shift: {' '.join(str(m) for m in result.translation)}")
        restored = result.restored
    print(f"margin: {result.margin:.6e}")
    if result.degenerate:
        print("warning: degenerate estimate (margin below 1e-6)")
    _save_like(restored, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    dataset = load_manifest(args.dataset)
    net = read_network(args.net, dataset.shape)
    table = eval_grid(net, dataset.elements, dataset.labels, args.max_shift,
                      seed=args.seed)
    csv = table.to_csv()
    with open(args.out, "w") as fh:
        fh.write(csv)
    print(csv, end="")
    print(f"wrote {args.out}")
    return 0


def cmd_polar(args) -> int:
    stack = _load_image(args.input)
    if stack.shape[0] != 1:
        raise EquirestoreError("polar transform expects a single-channel image")
    spec = _read_polar_spec(args.polar_spec)
    polar = to_polar(stack[0], spec)
    write_tensor(args.out, polar, dtype="f64")
    print(f"wrote {args.out} ({polar.shape[0]} rings x {polar.shape[1]} angles)")
    return 0


def cmd_decompose_bits(args) -> int:
    from .constructive import binary_decomposition

    value = np.full((1, 1), float(args.value))
    bits = binary_decomposition(value, args.bits).reshape(-1)
    print(" ".join(str(int(b)) for b in bits))
    return 0


def cmd_prep(args) -> int:
    stack = _load_image(args.input)
    if stack.shape[0] != 1 or stack.ndim != 3:
        raise EquirestoreError("prep expects a single-channel 2-D image")
    img = stack[0]
    if args.resize:
        target = _parse_shape(args.resize)
        h, w = target.dims
        rows = (np.arange(h) * img.shape[0] // h).astype(np.intp)
        cols = (np.arange(w) * img.shape[1] // w).astype(np.intp)
        img = img[rows][:, cols]
    if args.pad:
        img = np.pad(img, args.pad, mode="constant", constant_values=args.pad_value)
    _save_like(img[np.newaxis, ...], args.out)
    print(f"wrote {args.out} ({img.shape[0]}x{img.shape[1]})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="equirestore",
        description="Strictly shift-equivariant networks and pre-classifier restorers.",
    )
    sub = parser.add_subparsers(dest="command")

    def add_seed(p):
        p.add_argument("--seed", type=int, default=_seed_default(),
                       help="RNG seed (EQR_SEED env var as fallback, default 0)")

    p = sub.add_parser("verify-equivariance", help="measure a network's equivariance gap")
    p.add_argument("--net", required=True)
    p.add_argument("--shape", required=True, help="grid shape, e.g. 6x6")
    p.add_argument("--exhaustive", action="store_true", help="try every shift")
    p.add_argument("--samples", type=int, default=16, help="random shifts when not exhaustive")
    p.add_argument("--tol", type=float, default=1e-9)
    add_seed(p)
    p.set_defaults(func=cmd_verify_equivariance)

    p = sub.add_parser("build-constructive", help="build the training-free restorer")
    p.add_argument("--dataset", required=True, help="manifest path")
    p.add_argument("--bits", type=int, default=None,
                   help="bit depth Q (defaults to the manifest's range tag)")
    p.add_argument("--out", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_build_constructive)

    p = sub.add_parser("train", help="train an estimator with gradient descent")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", default=None, help="key=value file mirroring TrainConfig")
    p.add_argument("--out", required=True)
    p.add_argument("--log", required=True, help="per-epoch CSV path")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed (EQR_SEED/0 otherwise)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("estimate", help="print the estimated shift of an input")
    p.add_argument("--net", required=True)
    p.add_argument("--in", dest="input", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("restore", help="estimate the transform and invert it")
    p.add_argument("--net", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("translate", "rotate"), default="translate")
    p.add_argument("--polar-spec", default=None)
    add_seed(p)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("eval", help="accuracy grid with/without restoration")
    p.add_argument("--net", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--classifier", choices=("nn",), default="nn")
    p.add_argument("--max-shift", type=int, default=8)
    p.add_argument("--out", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("polar", help="resample an image onto the polar grid")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--polar-spec", required=True)
    p.add_argument("--out", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_polar)

    p = sub.add_parser("decompose-bits", help="print a value's bits, LSB first")
    p.add_argument("--value", type=int, required=True)
    p.add_argument("--bits", type=int, required=True, help="bit depth Q")
    p.set_defaults(func=cmd_decompose_bits)

    p = sub.add_parser("prep", help="nearest-neighbor resize and constant pad")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resize", default=None, help="target size, e.g. 32x32")
    p.add_argument("--pad", type=int, default=0)
    p.add_argument("--pad-value", type=float, default=0.0)
    p.set_defaults(func=cmd_prep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_help(sys.stderr)
        return 2
    try:
        return args.func(args)
    except EquirestoreError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
