"""SSH grids, eddy contours and training patch preparation."""

import warnings
from dataclasses import dataclass, replace
from typing import List, Sequence, Tuple

import numpy as np

PATCH_SIZE = 128


@dataclass
class SshGrid:
    """2-D sea-surface-height field on a regular lat/lon lattice.

    Row ``i`` sits at latitude ``lat0 + i * resolution`` and column ``j`` at
    longitude ``lon0 + j * resolution``.
    """
    values: np.ndarray
    lat0: float = 0.0
    lon0: float = 0.0
    resolution: float = 0.25
    fill_value: float = -2147483647.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError(f"grid values must be 2-D, got shape {self.values.shape}")
        if not self.resolution > 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")

    @property
    def shape(self):
        return self.values.shape

    @property
    def geometry(self):
        return GridGeometry(*self.values.shape, self.lat0, self.lon0, self.resolution)

    def fill_mask(self):
        v = self.values
        if np.isnan(self.fill_value):
            return np.isnan(v)
        return v == np.float32(self.fill_value)


@dataclass(frozen=True)
class GridGeometry:
    rows: int
    cols: int
    lat0: float = 0.0
    lon0: float = 0.0
    resolution: float = 0.25

    def to_index(self, lon, lat):
        """Nearest lattice node ``(row, col)``; halves round up."""
        col = np.floor((np.asarray(lon, dtype=np.float64) - self.lon0) / self.resolution + 0.5)
        row = np.floor((np.asarray(lat, dtype=np.float64) - self.lat0) / self.resolution + 0.5)
        return row.astype(np.int64), col.astype(np.int64)

    def to_coord(self, row, col):
        return (self.lon0 + np.asarray(col) * self.resolution,
                self.lat0 + np.asarray(row) * self.resolution)


@dataclass
class EddyContour:
    label: int  # 1 anticyclonic, 2 cyclonic
    polygon: np.ndarray  # (k, 2) array of (lon, lat)

    def __post_init__(self):
        self.polygon = np.asarray(self.polygon, dtype=np.float64).reshape(-1, 2)
        if self.label not in (1, 2):
            raise ValueError(f"contour class must be 1 or 2, got {self.label}")
        if len(self.polygon) < 3:
            raise ValueError(f"polygon needs at least 3 vertices, got {len(self.polygon)}")


EddyContourSet = List[EddyContour]


@dataclass
class PatchPair:
    ssh: np.ndarray
    mask: np.ndarray
    source: str = ""
    offset: Tuple[int, int] = (0, 0)


def sanitize(grid):
    """Copy of ``grid`` with every fill-value cell set to 0."""
    values = grid.values.copy()
    values[grid.fill_mask()] = 0.0
    return replace(grid, values=values)


# ---------------------------------------------------------------------------
# rasterization


def _edge_lattice_points(r0, c0, r1, c1):
    """Integer points on the segment between two integer vertices."""
    dr, dc = r1 - r0, c1 - c0
    g = np.gcd(abs(dr), abs(dc))
    if g == 0:
        return np.array([r0]), np.array([c0])
    t = np.arange(g + 1)
    return r0 + t * (dr // g), c0 + t * (dc // g)


def fill_polygon(rows, cols, shape):
    """Boolean mask of lattice points inside or on an integer polygon.

    Interior uses the even-odd rule, evaluated row by row with the half-open
    crossing convention; points lying exactly on an edge are added
    separately. Vertices outside ``shape`` are allowed; the result is
    clipped.
    """
    height, width = shape
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    mask = np.zeros(shape, dtype=bool)
    r_next, c_next = np.roll(rows, -1), np.roll(cols, -1)

    lo = max(int(rows.min()), 0)
    hi = min(int(rows.max()), height - 1)
    for y in range(lo, hi + 1):
        crosses = (rows <= y) != (r_next <= y)
        if not crosses.any():
            continue
        r0, c0 = rows[crosses], cols[crosses]
        r1, c1 = r_next[crosses], c_next[crosses]
        xs = np.sort(c0 + (y - r0) * (c1 - c0) / (r1 - r0))
        for xa, xb in zip(xs[::2], xs[1::2]):
            a = max(int(np.ceil(xa)), 0)
            b = min(int(np.floor(xb)), width - 1)
            if a <= b:
                mask[y, a:b + 1] = True

    for i in range(len(rows)):
        er, ec = _edge_lattice_points(rows[i], cols[i], r_next[i], c_next[i])
        ok = (er >= 0) & (er < height) & (ec >= 0) & (ec < width)
        mask[er[ok], ec[ok]] = True
    return mask


def rasterize_contours(contours, geometry):
    """Label mask from eddy polygons.

    Vertices snap to the nearest lattice node, pixels inside or on the
    polygon take its class, and later polygons overwrite earlier ones.
    """
    shape = (geometry.rows, geometry.cols)
    mask = np.zeros(shape, dtype=np.uint8)
    painted = np.zeros(shape, dtype=bool)
    overlaps = 0
    clipped = 0
    for contour in contours:
        rows, cols = geometry.to_index(contour.polygon[:, 0], contour.polygon[:, 1])
        if rows.min() < 0 or cols.min() < 0 or rows.max() >= shape[0] or cols.max() >= shape[1]:
            clipped += 1
        inside = fill_polygon(rows, cols, shape)
        overlaps += int(np.any(inside & painted))
        mask[inside] = contour.label
        painted |= inside
    if clipped:
        warnings.warn(f"{clipped} polygon(s) extend outside the grid and were clipped")
    if overlaps:
        warnings.warn(f"{overlaps} polygon(s) overlap earlier ones; later polygons win")
    return mask


# ---------------------------------------------------------------------------
# patches and targets


def sample_patch(grid, mask, rng, size=PATCH_SIZE, source=""):
    """Crop a ``size x size`` window at a uniformly drawn offset."""
    values = grid.values if isinstance(grid, SshGrid) else np.asarray(grid, dtype=np.float32)
    mask = np.asarray(mask)
    if values.shape != mask.shape:
        raise ValueError(f"grid shape {values.shape} != mask shape {mask.shape}")
    h, w = values.shape
    if h < size or w < size:
        raise ValueError(f"grid of shape {values.shape} is smaller than the {size}x{size} patch")
    r = int(rng.integers(0, h - size + 1))
    c = int(rng.integers(0, w - size + 1))
    return PatchPair(values[r:r + size, c:c + size].copy(), mask[r:r + size, c:c + size].copy(),
                     source, (r, c))


def one_hot(mask, classes=3, dtype=np.float32):
    """Labels of shape ``(h, w)`` or ``(n, h, w)`` to ``(n, classes, h, w)``."""
    labels = np.asarray(mask)
    if labels.ndim == 2:
        labels = labels[None]
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes - 1}]")
    out = labels[:, None, :, :] == np.arange(classes)[None, :, None, None]
    return out.astype(dtype)


def split_train_val(items, ratio=0.8, seed=0):
    """Seeded shuffle, then the first ``round(ratio * n)`` items train."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must lie in (0, 1], got {ratio}")
    order = np.random.default_rng(seed).permutation(len(items))
    n_train = int(round(ratio * len(items)))
    return [items[i] for i in order[:n_train]], [items[i] for i in order[n_train:]]


def stack_patches(patches: Sequence[PatchPair]):
    """``(n, 1, h, w)`` SSH batch and ``(n, h, w)`` label batch."""
    x = np.stack([p.ssh for p in patches])[:, None].astype(np.float32)
    y = np.stack([p.mask for p in patches]).astype(np.uint8)
    return x, y


# ---------------------------------------------------------------------------
# synthetic scenes

HALF_PEAK_RADIUS = np.sqrt(2.0 * np.log(2.0))


@dataclass
class SynthConfig:
    grid_size: int = 64
    n_eddies: Tuple[int, int] = (3, 6)
    radius_range: Tuple[float, float] = (2.5, 5.0)
    amplitude_range: Tuple[float, float] = (0.3, 1.0)
    noise_sigma: float = 0.05
    max_attempts: int = 1000


def synth_scene(config, rng, lat0=0.0, lon0=0.0, resolution=0.25):
    """Random Gaussian-bump SSH field and its label mask.

    Each bump ``A exp(-d^2 / 2 s^2)`` gets a random sign: positive bumps are
    anticyclonic (1), negative ones cyclonic (2). A bump's label region is
    where its own magnitude exceeds half its peak. Bumps are placed so that
    centres are at least ``2 (s_i + s_j)`` apart. Returns
    ``(grid, mask, eddies)`` with ``eddies`` a list of
    ``(row, col, sigma, amplitude)``.
    """
    n = config.grid_size
    k = config.n_eddies
    k = int(rng.integers(k[0], k[1] + 1)) if isinstance(k, (tuple, list)) else int(k)
    eddies = []
    attempts = 0
    while len(eddies) < k:
        attempts += 1
        if attempts > config.max_attempts:
            raise RuntimeError(f"could not place {k} non-overlapping eddies on a {n}x{n} grid "
                               f"in {config.max_attempts} attempts")
        s = rng.uniform(*config.radius_range)
        r, c = rng.uniform(0, n - 1, size=2)
        if all(np.hypot(r - e[0], c - e[1]) >= 2 * (s + e[2]) for e in eddies):
            amp = rng.uniform(*config.amplitude_range) * rng.choice((-1.0, 1.0))
            eddies.append((r, c, s, amp))

    rr, cc = np.mgrid[0:n, 0:n].astype(np.float64)
    ssh = np.zeros((n, n))
    mask = np.zeros((n, n), dtype=np.uint8)
    for r, c, s, amp in eddies:
        d2 = (rr - r) ** 2 + (cc - c) ** 2
        ssh += amp * np.exp(-d2 / (2 * s * s))
        mask[d2 < (HALF_PEAK_RADIUS * s) ** 2] = 1 if amp > 0 else 2
    ssh += rng.normal(0.0, config.noise_sigma, size=(n, n))
    grid = SshGrid(ssh.astype(np.float32), lat0, lon0, resolution)
    return grid, mask, eddies


def eddy_contours(eddies, geometry, n_vertices=24):
    """Half-peak circles of synthetic eddies as lon/lat polygons."""
    out = []
    t = np.linspace(0, 2 * np.pi, n_vertices, endpoint=False)
    for r, c, s, amp in eddies:
        rad = HALF_PEAK_RADIUS * s
        lon, lat = geometry.to_coord(r + rad * np.sin(t), c + rad * np.cos(t))
        out.append(EddyContour(1 if amp > 0 else 2, np.column_stack([lon, lat])))
    return out
