"""Numba-compiled inner loops.

1. trace_misses - integer line traversal for map updates
2. match_unrolled - coarse sweep unrolled over eight blocks, fine stage over
   row pairs with a (w, 2) accumulator array
"""
import numpy as np
from numba import njit

UNROLL = 8


# ─────────────────────────────────────────────────────────────
#  Ray traversal
# ─────────────────────────────────────────────────────────────

@njit(cache=True)
def trace_misses(i0, j0, end_i, end_j, mask):
    """Mark cells from (i0, j0) up to, not including, each endpoint."""
    height, width = mask.shape
    for k in range(end_i.shape[0]):
        x = i0
        y = j0
        x1 = end_i[k]
        y1 = end_j[k]
        dx = abs(x1 - x)
        dy = -abs(y1 - y)
        sx = 1 if x < x1 else -1
        sy = 1 if y < y1 else -1
        err = dx + dy
        while x != x1 or y != y1:
            if 0 <= x < width and 0 <= y < height:
                mask[y, x] = 1
            e2 = 2 * err
            if e2 >= dy:
                err += dy
                x += sx
            if e2 <= dx:
                err += dx
                y += sy


# ─────────────────────────────────────────────────────────────
#  Correlative matching
# ─────────────────────────────────────────────────────────────

@njit(cache=True)
def match_unrolled(
    fine,
    coarse,
    blocks_per_row,
    coarse_width,
    offset,
    idx_i,
    idx_j,
    theta_steps,
    x_lo,
    x_hi,
    y_lo,
    y_hi,
    nbx,
    nby,
    w,
):
    """Return (score, nx, ny, ntheta, coarse_evals, fine_evals).

    ``coarse`` is stored in the rearranged layout, so the eight lane reads of
    one scan point hit eight adjacent columns. Blocks whose bound does not
    exceed the running best are skipped; ties keep the earliest candidate.
    """
    height, width = fine.shape
    coarse_height = coarse.shape[0]
    n_theta = idx_i.shape[0]
    n_points = idx_i.shape[1]

    lanes = np.zeros(UNROLL, dtype=np.int32)
    acc = np.zeros((w, 2), dtype=np.int32)

    best = -1
    best_nx = 0
    best_ny = 0
    best_nt = 0
    coarse_evals = 0
    fine_evals = 0

    for t in range(n_theta):
        for by in range(nby):
            ny0 = y_lo + by * w
            for bx0 in range(0, nbx, UNROLL):
                n_lanes = min(UNROLL, nbx - bx0)
                lanes[:] = 0
                for k in range(n_points):
                    row = idx_j[t, k] + ny0 + offset
                    if row < 0 or row >= coarse_height:
                        continue
                    base = idx_i[t, k] + offset + x_lo + bx0 * w
                    col0 = (base % w) * blocks_per_row + base // w
                    for lane in range(n_lanes):
                        c = base + lane * w
                        if c < 0 or c >= coarse_width:
                            continue
                        lanes[lane] += coarse[row, col0 + lane]
                coarse_evals += n_lanes

                for lane in range(n_lanes):
                    if lanes[lane] <= best:
                        continue
                    nx0 = x_lo + (bx0 + lane) * w
                    for pair in range(w // 2):
                        acc[:, :] = 0
                        for k in range(n_points):
                            ib = idx_i[t, k] + nx0
                            for jj in range(2):
                                r = idx_j[t, k] + ny0 + 2 * pair + jj
                                if r < 0 or r >= height:
                                    continue
                                for ii in range(w):
                                    c = ib + ii
                                    if c < 0 or c >= width:
                                        continue
                                    acc[ii, jj] += fine[r, c]
                        for jj in range(2):
                            ny = ny0 + 2 * pair + jj
                            if ny >= y_hi:
                                continue
                            for ii in range(w):
                                nx = nx0 + ii
                                if nx >= x_hi:
                                    continue
                                fine_evals += 1
                                if acc[ii, jj] > best:
                                    best = acc[ii, jj]
                                    best_nx = nx
                                    best_ny = ny
                                    best_nt = theta_steps[t]

    return best, best_nx, best_ny, best_nt, coarse_evals, fine_evals
