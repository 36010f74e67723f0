"""Dataset manifests: line-oriented, tab-separated, hand-editable.

Format::

    #shape=8x8
    #channels=1
    #range=u8
    img1.pgm<TAB>labelA
    img2.pgm<TAB>labelB

``#range=u<k>`` declares integer values in ``[0, 2**k)`` (so ``u8`` means
8-bit data); ``#range=f64`` places no constraint.  An optional
``#certificate=aperiodic`` line caches a previously computed verdict.
Element files are binary PGM or raw tensor files, sniffed by magic.
File paths are relative to the manifest's directory.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .circular import Shape, as_shape
from .errors import DecodeError, ManifestError
from .formats import TENSOR_MAGIC, parse_tensor, tensor_bytes
from .pgm import parse_pgm, pgm_bytes

_RANGE_RE = re.compile(r"^u([1-9]\d*)$")


@dataclass(frozen=True)
class LabeledDataset:
    """Loaded multi-channel tensors with labels and range metadata.

    ``value_bits`` is k for a ``u<k>`` range tag (so the constructive
    builder uses ``bits = value_bits - 1``), or None for ``f64``.
    """

    elements: np.ndarray
    labels: tuple[str, ...]
    shape: Shape
    channels: int
    range_tag: str
    certified_aperiodic: bool | None = None

    def __post_init__(self):
        arr = np.ascontiguousarray(self.elements, dtype=np.float64)
        arr.flags.writeable = False
        object.__setattr__(self, "elements", arr)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "shape", as_shape(self.shape))

    @property
    def size(self) -> int:
        return self.elements.shape[0]

    @property
    def value_bits(self) -> int | None:
        m = _RANGE_RE.match(self.range_tag)
        return int(m.group(1)) if m else None

    @property
    def bit_depth(self) -> int | None:
        """Q such that values lie in [0, 2**(Q+1)); None for f64 data."""
        bits = self.value_bits
        return bits - 1 if bits is not None else None


def _validate_range(tag: str) -> int | None:
    if tag == "f64":
        return None
    m = _RANGE_RE.match(tag)
    if not m:
        raise ManifestError(f"unknown range tag {tag!r} (expected f64 or u<k>)")
    return int(m.group(1))


def _decode_element(path: Path) -> np.ndarray:
    """Sniff the magic and decode to a (C, *dims) stack."""
    data = path.read_bytes()
    if data[:4] == TENSOR_MAGIC:
        stack, _ = parse_tensor(data, label=str(path))
        return stack
    if data[:2] in (b"P5", b"P2"):
        return parse_pgm(data, label=str(path))[np.newaxis, ...]
    raise DecodeError(f"unrecognized element format in {path}", offset=0)


def load_manifest(path) -> LabeledDataset:
    """Load and validate a dataset manifest; errors are itemized per file."""
    path = Path(path)
    declared: dict[str, str] = {}
    entries: list[tuple[str, str]] = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            if "=" not in line:
                raise ManifestError(f"{path}:{lineno}: malformed header line {line!r}")
            key, value = line[1:].split("=", 1)
            declared[key.strip()] = value.strip()
            continue
        if "\t" not in line:
            raise ManifestError(f"{path}:{lineno}: expected 'path<TAB>label', got {line!r}")
        rel, label = line.split("\t", 1)
        entries.append((rel.strip(), label.strip()))

    for required in ("shape", "channels", "range"):
        if required not in declared:
            raise ManifestError(f"{path}: missing #{required}= header")
    try:
        shape = as_shape(tuple(int(t) for t in declared["shape"].split("x")))
    except ValueError:
        raise ManifestError(f"{path}: malformed #shape= value {declared['shape']!r}")
    channels = int(declared["channels"])
    range_bits = _validate_range(declared["range"])
    if not entries:
        raise ManifestError(f"{path}: manifest lists no elements")

    problems: list[str] = []
    stacks: list[np.ndarray] = []
    labels: list[str] = []
    for rel, label in entries:
        element_path = path.parent / rel
        if not element_path.exists():
            problems.append(f"{rel}: file not found")
            continue
        try:
            stack = _decode_element(element_path)
        except DecodeError as err:
            problems.append(f"{rel}: {err}")
            continue
        if stack.shape[1:] != shape.dims:
            problems.append(f"{rel}: grid {stack.shape[1:]} != declared {shape.dims}")
            continue
        if stack.shape[0] != channels:
            problems.append(f"{rel}: {stack.shape[0]} channels != declared {channels}")
            continue
        if range_bits is not None:
            ints = np.rint(stack)
            if not np.array_equal(ints, stack):
                problems.append(f"{rel}: non-integer values under range tag u{range_bits}")
                continue
            if stack.min() < 0 or stack.max() >= 2**range_bits:
                problems.append(
                    f"{rel}: values [{stack.min():g}, {stack.max():g}] outside "
                    f"[0, {2 ** range_bits}) for range tag u{range_bits}"
                )
                continue
        stacks.append(stack)
        labels.append(label)
    if problems:
        raise ManifestError(f"{path}: {len(problems)} invalid element(s)", problems)

    certified = None
    if "certificate" in declared:
        certified = declared["certificate"] == "aperiodic"
    return LabeledDataset(
        elements=np.stack(stacks),
        labels=tuple(labels),
        shape=shape,
        channels=channels,
        range_tag=declared["range"],
        certified_aperiodic=certified,
    )


def manifest_text(dataset: LabeledDataset, filenames: list[str]) -> str:
    lines = [
        f"#shape={'x'.join(str(n) for n in dataset.shape.dims)}",
        f"#channels={dataset.channels}",
        f"#range={dataset.range_tag}",
    ]
    if dataset.certified_aperiodic is not None:
        verdict = "aperiodic" if dataset.certified_aperiodic else "periodic"
        lines.append(f"#certificate={verdict}")
    for name, label in zip(filenames, dataset.labels):
        lines.append(f"{name}\t{label}")
    return "\n".join(lines) + "\n"


def write_manifest(path, dataset: LabeledDataset, element_format: str = "eqt") -> None:
    """Write the manifest plus one element file per entry next to it.

    ``element_format`` is 'eqt' (raw tensors) or 'pgm' (single-channel u8
    images only).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    filenames = []
    for i in range(dataset.size):
        if element_format == "pgm":
            if dataset.channels != 1 or dataset.shape.ndim != 2:
                raise ManifestError("pgm elements need single-channel 2-D data")
            name = f"{path.stem}_{i:04d}.pgm"
            (path.parent / name).write_bytes(pgm_bytes(dataset.elements[i, 0]))
        else:
            name = f"{path.stem}_{i:04d}.eqt"
            dtype = "u8" if dataset.value_bits is not None and dataset.value_bits <= 8 else "f64"
            (path.parent / name).write_bytes(tensor_bytes(dataset.elements[i], dtype))
        filenames.append(name)
    path.write_text(manifest_text(dataset, filenames))
