"""File formats: netpbm images, fixation lists, dataset manifests, checkpoints.

Images are binary netpbm: PPM (P6) for RGB stimuli, PGM (P5) for saliency
maps, 8-bit samples. Fixation files hold one ``row,col`` pair per line,
origin at the top-left pixel.

A manifest is UTF-8 text with one tab-separated entry per line::

    image<TAB>gt_map<TAB>fixations<TAB>stimulus_height<TAB>stimulus_width[<TAB>split]

Relative paths resolve against the manifest's directory; ``split`` is
``train``, ``val`` or ``test`` (default ``train``). Blank lines and lines
starting with ``#`` are ignored.

Checkpoint layout (all integers unsigned 32-bit, everything little-endian)::

    b"JNET"  version
    n_means  n_means x float64           preprocessing record (channel means)
    len      UTF-8 JSON                   training configuration snapshot
    n_blocks
    per block: name_len name  shape[4]  prod(shape) x float64
"""

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointFormatError,
    FixationValidationError,
    IncompatibleCheckpointError,
    InvalidArgumentError,
    ParseError,
    SalnetError,
    TruncatedFileError,
)
from .layers import CONV_SHAPES, FC_SHAPES, INPUT_SHAPE, Network
from .metrics import FixationSet
from .postproc import resize_bilinear
from .tensor import DTYPE

CHECKPOINT_MAGIC = b"JNET"
CHECKPOINT_VERSION = 1
SPLITS = ("train", "val", "test")


# --- netpbm ----------------------------------------------------------------


def _read_header(data, path, magic):
    """Parse a netpbm header; returns (width, height, maxval, payload offset)."""
    if data[:2] != magic:
        raise ParseError(f"{path}: bad magic bytes {data[:2]!r} at offset 0, expected {magic!r}")
    if not data[2:3].isspace():
        raise ParseError(f"{path}: expected whitespace after magic bytes at offset 2")
    values = []
    pos = 2
    while len(values) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ParseError(f"{path}: expected an integer header field at offset {start}")
        values.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ParseError(f"{path}: missing whitespace after header at offset {pos}")
    width, height, maxval = values
    if width < 1 or height < 1:
        raise ParseError(f"{path}: non-positive image size {width}x{height}")
    if not 0 < maxval < 256:
        raise ParseError(f"{path}: only 8-bit netpbm is supported (maxval {maxval})")
    return width, height, maxval, pos + 1


def _read_netpbm(path, magic, channels):
    data = Path(path).read_bytes()
    width, height, maxval, offset = _read_header(data, path, magic)
    need = width * height * channels
    payload = data[offset:offset + need]
    if len(payload) < need:
        raise TruncatedFileError(f"{path}: payload truncated, expected {need} bytes, got {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(DTYPE) / maxval
    return pixels.reshape(height, width, channels)


def read_ppm(path):
    """RGB image as an H x W x 3 array in [0, 1]."""
    return _read_netpbm(path, b"P6", 3)


def read_pgm(path):
    """Grey image as an H x W array in [0, 1]."""
    return _read_netpbm(path, b"P5", 1)[..., 0]


def _to_bytes(values):
    # round half up
    return np.floor(np.clip(values, 0.0, 1.0) * 255 + 0.5).astype(np.uint8)


def _write_atomic(path, blob):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_pgm(path, m):
    m = np.asarray(m, dtype=DTYPE)
    h, w = m.shape
    _write_atomic(path, b"P5\n%d %d\n255\n" % (w, h) + _to_bytes(m).tobytes())


def write_ppm(path, image):
    """Write an H x W x 3 image with values in [0, 1]."""
    image = np.asarray(image, dtype=DTYPE)
    h, w, _ = image.shape
    _write_atomic(path, b"P6\n%d %d\n255\n" % (w, h) + _to_bytes(image).tobytes())


# --- dataset loaders -------------------------------------------------------


def resize_image(image_hwc, size=INPUT_SHAPE[1:]):
    """Bilinear (align-corners) resize of an H x W x C image, channel by channel."""
    return np.stack([resize_bilinear(image_hwc[..., c], *size) for c in range(image_hwc.shape[2])], -1)


def load_image(path, channel_means=(0.0, 0.0, 0.0)):
    """Read a PPM stimulus as a 1 x 3 x 96 x 96 network input.

    Pixels are scaled to [0, 1], resized to 96 x 96 and the per-channel
    means subtracted.
    """
    rgb = resize_image(read_ppm(path))
    means = np.asarray(channel_means, dtype=DTYPE).reshape(3, 1, 1)
    return (rgb.transpose(2, 0, 1) - means)[None]


def load_gt_map(path, target_h, target_w):
    return resize_bilinear(read_pgm(path), target_h, target_w)


def load_fixations(path, frame):
    points = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                if len(parts) != 2:
                    raise ValueError
                points.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: expected 'row,col' integers, got {line!r}") from None
    try:
        return FixationSet(np.array(points, dtype=np.int64).reshape(-1, 2), frame)
    except FixationValidationError as exc:
        raise FixationValidationError(f"{path}: {exc}") from None


def write_fixations(path, fix):
    with open(path, "w", encoding="utf-8") as fh:
        for r, c in fix.points:
            fh.write(f"{r},{c}\n")


@dataclass(frozen=True)
class ManifestEntry:
    image: Path
    gt_map: Path
    fixations: Path
    height: int
    width: int
    split: str = "train"

    @property
    def frame(self):
        return (self.height, self.width)


@dataclass
class DatasetManifest:
    root: Path
    entries: list = field(default_factory=list)

    def select(self, split):
        return [e for e in self.entries if e.split == split]

    def write(self, path):
        lines = []
        for e in self.entries:
            rel = [os.path.relpath(p, self.root) for p in (e.image, e.gt_map, e.fixations)]
            lines.append("\t".join(rel + [str(e.height), str(e.width), e.split]))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path, check_files=True):
    path = Path(path)
    root = path.parent
    entries = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cols = raw.split("\t")
        if len(cols) not in (5, 6):
            raise ParseError(f"{path}:{lineno}: expected 5 or 6 tab-separated fields, got {len(cols)}")
        try:
            h, w = int(cols[3]), int(cols[4])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: stimulus size must be integers") from None
        if h < 1 or w < 1:
            raise ParseError(f"{path}:{lineno}: stimulus size must be positive")
        split = cols[5].strip() if len(cols) == 6 else "train"
        if split not in SPLITS:
            raise ParseError(f"{path}:{lineno}: unknown split {split!r}")
        files = [root / c.strip() for c in cols[:3]]
        if check_files:
            for f in files:
                if not f.is_file():
                    raise InvalidArgumentError(f"{path}:{lineno}: missing file {f}")
        entries.append(ManifestEntry(*files, h, w, split))
    return DatasetManifest(root, entries)


# --- checkpoints -----------------------------------------------------------


@dataclass
class Checkpoint:
    network: Network
    channel_means: np.ndarray
    config: dict
    version: int = CHECKPOINT_VERSION


def _expected_shape(name):
    layer, kind = name.split(".")
    shape = CONV_SHAPES.get(layer) or FC_SHAPES.get(layer)
    if shape is None or kind not in ("weights", "bias"):
        return None
    return shape if kind == "weights" else (shape[0],)


def _pad4(shape):
    return (1,) * (4 - len(shape)) + tuple(shape)


def save_checkpoint(net, path, config=None, channel_means=(0.0, 0.0, 0.0)):
    means = np.asarray(channel_means, dtype="<f8")
    cfg_blob = json.dumps(config or {}, sort_keys=True).encode("utf-8")
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", CHECKPOINT_VERSION),
        struct.pack("<I", means.size),
        means.tobytes(),
        struct.pack("<I", len(cfg_blob)),
        cfg_blob,
    ]
    blocks = net.blocks()
    parts.append(struct.pack("<I", len(blocks)))
    for name, arr in blocks.items():
        raw = name.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<4I", *_pad4(arr.shape))]
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    _write_atomic(path, b"".join(parts))


class _Reader:
    def __init__(self, data, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(f"{self.path}: truncated at offset {self.pos} (wanted {n} bytes)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count=1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals if count > 1 else vals[0]


def load_checkpoint(path):
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic)")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
    n_means = r.u32()
    means = np.frombuffer(r.take(8 * n_means), dtype="<f8").astype(DTYPE)
    try:
        config = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: corrupt configuration record") from exc
    blocks = {}
    for _ in range(r.u32()):
        try:
            name = r.take(r.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError(f"{path}: corrupt block name") from exc
        shape4 = r.u32(4)
        expected = _expected_shape(name)
        if expected is None:
            raise IncompatibleCheckpointError(f"{path}: unknown parameter block {name!r}")
        if shape4 != _pad4(expected):
            raise IncompatibleCheckpointError(
                f"{path}: block {name} has shape {shape4}, expected {_pad4(expected)}"
            )
        count = int(np.prod(expected))
        blocks[name] = np.frombuffer(r.take(8 * count), dtype="<f8").astype(DTYPE).reshape(expected)
    if r.pos != len(r.data):
        raise CheckpointFormatError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    try:
        net = Network.from_blocks(blocks)
    except (SalnetError, TypeError) as exc:
        raise IncompatibleCheckpointError(f"{path}: {exc}") from exc
    return Checkpoint(net, means, config, version)
