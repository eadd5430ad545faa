"""Compiled inner loops for the deformable sampling op.

Single-threaded numba kernels; loop order is fixed so results are
bit-deterministic. The weight contractions around these kernels stay in
BLAS. Geometry (corner indices, fractions, interior masks) is computed
once in the forward pass and reused by the backward scatter so both
passes agree exactly at bilinear kinks.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def bilinear_gather(xb, off, k):
    """Sample xb (B,H,W,C) at per-tap offset positions.

    Returns (sampled (kk,B,H,W,C), y0, x0, fy, fx, in_y, in_x), with the
    index/fraction arrays shaped (kk,B,H,W).
    """
    B, H, W, C = xb.shape
    kk = k * k
    half = k // 2
    sampled = np.empty((kk, B, H, W, C), dtype=xb.dtype)
    y0a = np.empty((kk, B, H, W), dtype=np.int64)
    x0a = np.empty((kk, B, H, W), dtype=np.int64)
    fya = np.empty((kk, B, H, W), dtype=xb.dtype)
    fxa = np.empty((kk, B, H, W), dtype=xb.dtype)
    inya = np.empty((kk, B, H, W), dtype=np.bool_)
    inxa = np.empty((kk, B, H, W), dtype=np.bool_)
    for t in range(kk):
        di = t // k - half
        dj = t % k - half
        for b in range(B):
            for r in range(H):
                for q in range(W):
                    py = r + di + off[b, 2 * t, r, q]
                    px = q + dj + off[b, 2 * t + 1, r, q]
                    inya[t, b, r, q] = 0.0 < py < H - 1.0
                    inxa[t, b, r, q] = 0.0 < px < W - 1.0
                    if py < 0.0:
                        py = 0.0
                    elif py > H - 1.0:
                        py = H - 1.0
                    if px < 0.0:
                        px = 0.0
                    elif px > W - 1.0:
                        px = W - 1.0
                    y0 = int(np.floor(py))
                    if y0 > H - 2:
                        y0 = H - 2
                    if y0 < 0:
                        y0 = 0
                    x0 = int(np.floor(px))
                    if x0 > W - 2:
                        x0 = W - 2
                    if x0 < 0:
                        x0 = 0
                    fy = py - y0
                    fx = px - x0
                    y1 = y0 + 1 if y0 + 1 <= H - 1 else H - 1
                    x1 = x0 + 1 if x0 + 1 <= W - 1 else W - 1
                    w00 = (1.0 - fy) * (1.0 - fx)
                    w01 = (1.0 - fy) * fx
                    w10 = fy * (1.0 - fx)
                    w11 = fy * fx
                    for ch in range(C):
                        sampled[t, b, r, q, ch] = (
                            w00 * xb[b, y0, x0, ch]
                            + w01 * xb[b, y0, x1, ch]
                            + w10 * xb[b, y1, x0, ch]
                            + w11 * xb[b, y1, x1, ch]
                        )
                    y0a[t, b, r, q] = y0
                    x0a[t, b, r, q] = x0
                    fya[t, b, r, q] = fy
                    fxa[t, b, r, q] = fx
    return sampled, y0a, x0a, fya, fxa, inya, inxa


@njit(cache=True)
def bilinear_scatter(gs, xb, y0a, x0a, fya, fxa, inya, inxa, k):
    """Backward of bilinear_gather.

    gs (kk,B,H,W,C) is the upstream gradient already contracted with the
    kernel weights. Returns (dxb (B,H,W,C), doff (B,2kk,H,W)).
    """
    kk, B, H, W, C = gs.shape
    dxb = np.zeros_like(xb)
    doff = np.zeros((B, 2 * kk, H, W), dtype=xb.dtype)
    for t in range(kk):
        for b in range(B):
            for r in range(H):
                for q in range(W):
                    y0 = y0a[t, b, r, q]
                    x0 = x0a[t, b, r, q]
                    y1 = y0 + 1 if y0 + 1 <= H - 1 else H - 1
                    x1 = x0 + 1 if x0 + 1 <= W - 1 else W - 1
                    fy = fya[t, b, r, q]
                    fx = fxa[t, b, r, q]
                    w00 = (1.0 - fy) * (1.0 - fx)
                    w01 = (1.0 - fy) * fx
                    w10 = fy * (1.0 - fx)
                    w11 = fy * fx
                    dpy = 0.0
                    dpx = 0.0
                    for ch in range(C):
                        gc = gs[t, b, r, q, ch]
                        dxb[b, y0, x0, ch] += w00 * gc
                        dxb[b, y0, x1, ch] += w01 * gc
                        dxb[b, y1, x0, ch] += w10 * gc
                        dxb[b, y1, x1, ch] += w11 * gc
                        v00 = xb[b, y0, x0, ch]
                        v01 = xb[b, y0, x1, ch]
                        v10 = xb[b, y1, x0, ch]
                        v11 = xb[b, y1, x1, ch]
                        dpy += gc * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01))
                        dpx += gc * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10))
                    doff[b, 2 * t, r, q] = dpy if inya[t, b, r, q] else 0.0
                    doff[b, 2 * t + 1, r, q] = dpx if inxa[t, b, r, q] else 0.0
    return dxb, doff
