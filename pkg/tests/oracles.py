"""Independent reference implementations shared by the tests."""

import numpy as np


def brute_force_inside(rows, cols, shape):
    """Exact integer point-in-polygon for every lattice point: on an edge,
    or an odd number of crossings of the ray towards +col."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.int64)
    odd = np.zeros(shape, dtype=bool)
    on_edge = np.zeros(shape, dtype=bool)
    n = len(rows)
    for i in range(n):
        r0, c0 = int(rows[i]), int(cols[i])
        r1, c1 = int(rows[(i + 1) % n]), int(cols[(i + 1) % n])
        cross = (r1 - r0) * (xx - c0) - (c1 - c0) * (yy - r0)
        in_box = ((yy >= min(r0, r1)) & (yy <= max(r0, r1)) & (xx >= min(c0, c1)) & (xx <= max(c0, c1)))
        on_edge |= (cross == 0) & in_box
        if r0 == r1:
            continue
        spans = (r0 > yy) != (r1 > yy)
        # xx < c0 + (yy - r0) (c1 - c0) / (r1 - r0), cleared of the division
        dr = r1 - r0
        lhs = (xx - c0) * dr
        rhs = (yy - r0) * (c1 - c0)
        left = lhs < rhs if dr > 0 else lhs > rhs
        odd ^= spans & left
    return odd | on_edge


def random_polygon(rng, size):
    k = int(rng.integers(3, 11))
    if rng.random() < 0.5:
        # star-shaped, simple
        ang = np.sort(rng.uniform(0, 2 * np.pi, k))
        rad = rng.uniform(2, size / 2, k)
        cr, cc = rng.uniform(0, size, 2)
        rows = np.floor(cr + rad * np.sin(ang) + 0.5).astype(int)
        cols = np.floor(cc + rad * np.cos(ang) + 0.5).astype(int)
    else:
        # arbitrary, often self-intersecting, sometimes off-grid
        rows = rng.integers(-4, size + 4, k)
        cols = rng.integers(-4, size + 4, k)
    return rows, cols
