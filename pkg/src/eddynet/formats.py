"""Binary and text exchange formats.

All binary formats are little-endian.

Weight file (``EDYN``)::

    b"EDYN"  u32 version  u8 variant
    config: u32 stages, filters, in_channels, classes, height, width, up_kernel
            f64 dropout_rate  f64 bn_momentum  u8 act_order
    u32 layer_count, then per layer:
        u32 name_len  name (UTF-8)  u8 kind  u8 array_count
        per array: u8 ndim  u32 dims...  f32 data (C order)
    u32 CRC-32 of every preceding byte

Grid file (``SSHG``)::

    b"SSHG"  u32 version  u32 rows  u32 cols
    f64 lat0  f64 lon0  f64 resolution  f64 fill_value
    f32 values[rows * cols]  u32 CRC-32 of every preceding byte

Mask file (``MASK``)::

    b"MASK"  u32 rows  u32 cols  u8 labels[rows * cols]

Contour file: one eddy per line, ``class_id;lon1,lat1;lon2,lat2;...``.
Ghost file: one centre per line, ``class_id;row,col``.
"""

import io
import struct
import zlib
from pathlib import Path

import numpy as np

from .data import EddyContour, SshGrid
from .model import ACT_ORDERS, VARIANTS, EddyNetConfig, LayerParams, NetworkWeights, layer_plan

WEIGHTS_MAGIC = b"EDYN"
WEIGHTS_VERSION = 1
GRID_MAGIC = b"SSHG"
GRID_VERSION = 1
MASK_MAGIC = b"MASK"

LAYER_KINDS = ("conv3x3", "conv1x1", "transposed_conv", "batchnorm")

# class colours for pixmap export: non-eddy blue, anticyclonic green, cyclonic brown
PALETTE = np.array([[0, 0, 255], [0, 160, 0], [150, 75, 0]], dtype=np.uint8)


class FormatError(ValueError):
    """Malformed file. ``code`` tells the failure kinds apart."""
    code = "format"


class BadMagicError(FormatError):
    code = "bad_magic"


class VersionError(FormatError):
    code = "bad_version"


class TruncatedError(FormatError):
    code = "truncated"


class ChecksumError(FormatError):
    code = "bad_checksum"


class PayloadError(FormatError):
    code = "bad_payload"


class ArchitectureMismatchError(FormatError):
    code = "architecture_mismatch"


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"file ends after {len(self.buf)} bytes, needed {self.pos + n}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _split_crc(buf, what):
    if len(buf) < 8:
        raise TruncatedError(f"{what} file too short ({len(buf)} bytes)")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    return body, crc


# ---------------------------------------------------------------------------
# weights


def weights_to_bytes(weights):
    cfg = weights.config
    out = io.BytesIO()
    out.write(WEIGHTS_MAGIC)
    out.write(struct.pack("<IB", WEIGHTS_VERSION, VARIANTS.index(cfg.variant)))
    out.write(struct.pack("<7I", cfg.stages, cfg.filters, cfg.in_channels, cfg.classes,
                          *cfg.input_size, cfg.up_kernel))
    out.write(struct.pack("<ddB", cfg.dropout_rate, cfg.bn_momentum, ACT_ORDERS.index(cfg.act_order)))
    out.write(struct.pack("<I", len(weights.layers)))
    for name, layer in weights.layers.items():
        raw = name.encode("utf-8")
        arrays = layer.arrays()
        out.write(struct.pack("<I", len(raw)) + raw)
        out.write(struct.pack("<BB", LAYER_KINDS.index(layer.kind), len(arrays)))
        for _, arr, _ in arrays:
            out.write(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
            out.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = out.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def save_weights(weights, path):
    Path(path).write_bytes(weights_to_bytes(weights))


def weights_from_bytes(buf, config=None):
    """Parse a weight file. With ``config`` the stored architecture must
    match it layer for layer."""
    if buf[:4] != WEIGHTS_MAGIC:
        raise BadMagicError(f"not a weight file: magic {bytes(buf[:4])!r}")
    body, crc = _split_crc(buf, "weight")
    r = _Reader(body)
    r.take(4)
    version, variant = r.unpack("IB")
    if version != WEIGHTS_VERSION:
        raise VersionError(f"unsupported weight file version {version}")
    stages, filters, in_ch, classes, hh, ww, up_k = r.unpack("7I")
    dropout, momentum, order = r.unpack("ddB")
    try:
        stored = EddyNetConfig(VARIANTS[variant], stages, filters, dropout, (hh, ww), classes, in_ch,
                               up_k, ACT_ORDERS[order], momentum)
    except (IndexError, ValueError) as exc:
        raise PayloadError(f"invalid config block: {exc}") from exc
    (count,) = r.unpack("I")
    layers = {}
    for _ in range(count):
        (nlen,) = r.unpack("I")
        name = r.take(nlen).decode("utf-8")
        kind, n_arrays = r.unpack("BB")
        arrays = []
        for _ in range(n_arrays):
            (ndim,) = r.unpack("B")
            shape = r.unpack(f"{ndim}I")
            size = int(np.prod(shape))
            arrays.append(np.frombuffer(r.take(4 * size), dtype="<f4").astype(np.float32).reshape(shape))
        if kind >= len(LAYER_KINDS) or n_arrays != (4 if LAYER_KINDS[kind] == "batchnorm" else 2):
            raise PayloadError(f"layer {name!r}: bad kind tag {kind} or array count {n_arrays}")
        kind = LAYER_KINDS[kind]
        if kind == "batchnorm":
            layers[name] = LayerParams(kind, gamma=arrays[0], beta=arrays[1],
                                       moving_mean=arrays[2], moving_var=arrays[3])
        else:
            layers[name] = LayerParams(kind, weight=arrays[0], bias=arrays[1])
    if r.pos != len(body):
        raise PayloadError(f"{len(body) - r.pos} unexpected trailing bytes")
    if zlib.crc32(body) != crc:
        raise ChecksumError("weight file checksum mismatch")
    _check_architecture(stored, layers, stored)
    if config is not None:
        _check_architecture(config, layers, stored)
    return NetworkWeights(stored, layers)


def _check_architecture(config, layers, stored):
    plan = layer_plan(config)
    names = [p[0] for p in plan]
    if names != list(layers):
        missing = [n for n in names if n not in layers]
        extra = [n for n in layers if n not in names]
        raise ArchitectureMismatchError(
            f"layer names differ from a {config.variant} network "
            f"(stored variant {stored.variant}); missing {missing[:4]}, unexpected {extra[:4]}")
    for name, kind, shapes in plan:
        layer = layers[name]
        for pname, arr, _ in layer.arrays():
            if tuple(arr.shape) != tuple(shapes[pname]):
                raise ArchitectureMismatchError(
                    f"{name}.{pname}: stored shape {arr.shape}, expected {shapes[pname]}")


def load_weights(path, config=None):
    return weights_from_bytes(Path(path).read_bytes(), config)


# ---------------------------------------------------------------------------
# grids


def grid_to_bytes(grid):
    rows, cols = grid.shape
    head = GRID_MAGIC + struct.pack("<3I4d", GRID_VERSION, rows, cols, grid.lat0, grid.lon0,
                                    grid.resolution, grid.fill_value)
    body = head + np.ascontiguousarray(grid.values, dtype="<f4").tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def save_grid(grid, path):
    Path(path).write_bytes(grid_to_bytes(grid))


def grid_from_bytes(buf):
    if buf[:4] != GRID_MAGIC:
        raise BadMagicError(f"not a grid file: magic {bytes(buf[:4])!r}")
    body, crc = _split_crc(buf, "grid")
    r = _Reader(body)
    r.take(4)
    version, rows, cols, lat0, lon0, res, fill = r.unpack("3I4d")
    if version != GRID_VERSION:
        raise VersionError(f"unsupported grid file version {version}")
    payload = len(body) - r.pos
    if payload != 4 * rows * cols:
        raise TruncatedError(f"grid header says {rows}x{cols} cells but payload has {payload} bytes")
    if zlib.crc32(body) != crc:
        raise ChecksumError("grid file checksum mismatch")
    values = np.frombuffer(r.take(payload), dtype="<f4").astype(np.float32).reshape(rows, cols)
    try:
        grid = SshGrid(values, lat0, lon0, res, fill)
    except ValueError as exc:
        raise PayloadError(str(exc)) from exc
    if not np.all(np.isfinite(values) | grid.fill_mask()):
        raise PayloadError("grid has non-finite values that are not the fill value")
    return grid


def load_grid(path):
    return grid_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# masks, pixmaps


def mask_to_bytes(mask):
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    return MASK_MAGIC + struct.pack("<2I", *mask.shape) + mask.astype(np.uint8).tobytes()


def save_mask(mask, path):
    Path(path).write_bytes(mask_to_bytes(mask))


def mask_from_bytes(buf):
    if buf[:4] != MASK_MAGIC:
        raise BadMagicError(f"not a mask file: magic {bytes(buf[:4])!r}")
    r = _Reader(buf)
    r.take(4)
    rows, cols = r.unpack("2I")
    if len(buf) - r.pos != rows * cols:
        raise TruncatedError(f"mask header says {rows}x{cols} but payload has {len(buf) - r.pos} bytes")
    mask = np.frombuffer(r.take(rows * cols), dtype=np.uint8).reshape(rows, cols).copy()
    if mask.size and mask.max() > 2:
        raise PayloadError(f"mask label {mask.max()} outside {{0, 1, 2}}")
    return mask


def load_mask(path):
    return mask_from_bytes(Path(path).read_bytes())


def mask_to_ppm(mask):
    """Binary PPM (P6) with one palette colour per class."""
    mask = np.asarray(mask)
    rgb = PALETTE[mask]
    return f"P6\n{mask.shape[1]} {mask.shape[0]}\n255\n".encode("ascii") + rgb.tobytes()


def save_ppm(mask, path):
    Path(path).write_bytes(mask_to_ppm(mask))


# ---------------------------------------------------------------------------
# text records


def format_contours(contours):
    lines = []
    for c in contours:
        pts = ";".join(f"{lon!r},{lat!r}" for lon, lat in c.polygon.tolist())
        lines.append(f"{c.label};{pts}")
    return "".join(line + "\n" for line in lines)


def parse_contours(text):
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            label, *pts = line.split(";")
            poly = [tuple(float(v) for v in p.split(",")) for p in pts]
            out.append(EddyContour(int(label), poly))
        except ValueError as exc:
            raise FormatError(f"contour line {lineno}: {exc}") from exc
    return out


def save_contours(contours, path):
    Path(path).write_text(format_contours(contours), encoding="utf-8")


def load_contours(path):
    return parse_contours(Path(path).read_text(encoding="utf-8"))


def parse_ghosts(text):
    """``[(row, col, class_id), ...]`` from ghost-centre records."""
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            label, pos = line.split(";")
            row, col = (int(v) for v in pos.split(","))
            label = int(label)
        except ValueError as exc:
            raise FormatError(f"ghost line {lineno}: {exc}") from exc
        if label not in (1, 2):
            raise FormatError(f"ghost line {lineno}: class must be 1 or 2, got {label}")
        out.append((row, col, label))
    return out


def load_ghosts(path):
    return parse_ghosts(Path(path).read_text(encoding="utf-8"))
