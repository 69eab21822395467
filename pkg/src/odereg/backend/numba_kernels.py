"""Numba kernel lane. Signatures mirror numpy_kernels."""

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def im2col3(x, stride):
    c, h, w, d = x.shape
    ho = (h + stride - 1) // stride
    wo = (w + stride - 1) // stride
    do = (d + stride - 1) // stride
    out = np.zeros((c * 27, ho * wo * do), dtype=x.dtype)
    for ci in range(c):
        for ki in range(3):
            for kj in range(3):
                for kk in range(3):
                    row = ((ci * 3 + ki) * 3 + kj) * 3 + kk
                    for xo in range(ho):
                        xi = xo * stride + ki - 1
                        if xi < 0 or xi >= h:
                            continue
                        for yo in range(wo):
                            yi = yo * stride + kj - 1
                            if yi < 0 or yi >= w:
                                continue
                            col = (xo * wo + yo) * do
                            for zo in range(do):
                                zi = zo * stride + kk - 1
                                if 0 <= zi < d:
                                    out[row, col + zo] = x[ci, xi, yi, zi]
    return out


@njit(cache=True)
def col2im3(cols, shape, stride):
    c, h, w, d = shape
    ho = (h + stride - 1) // stride
    wo = (w + stride - 1) // stride
    do = (d + stride - 1) // stride
    out = np.zeros((c, h, w, d), dtype=cols.dtype)
    for ci in range(c):
        for ki in range(3):
            for kj in range(3):
                for kk in range(3):
                    row = ((ci * 3 + ki) * 3 + kj) * 3 + kk
                    for xo in range(ho):
                        xi = xo * stride + ki - 1
                        if xi < 0 or xi >= h:
                            continue
                        for yo in range(wo):
                            yi = yo * stride + kj - 1
                            if yi < 0 or yi >= w:
                                continue
                            col = (xo * wo + yo) * do
                            for zo in range(do):
                                zi = zo * stride + kk - 1
                                if 0 <= zi < d:
                                    out[ci, xi, yi, zi] += cols[row, col + zo]
    return out


@njit(cache=True, inline="always")
def _cell(x, lo, hi):
    # clamp, split into base index and fraction, flag for border clamp
    inside = lo <= x <= hi
    if x < lo:
        x = lo
    elif x > hi:
        x = hi
    x0 = int(x)
    if x0 > hi - 1:
        x0 = int(hi) - 1
    return x0, x - x0, inside


@njit(cache=True)
def warp_trilinear(feat, field):
    c, h, w, d = feat.shape
    out = np.empty_like(feat)
    for ix in range(h):
        for iy in range(w):
            for iz in range(d):
                x0, fx, _ = _cell(field[0, ix, iy, iz] + ix, 0.0, h - 1.0)
                y0, fy, _ = _cell(field[1, ix, iy, iz] + iy, 0.0, w - 1.0)
                z0, fz, _ = _cell(field[2, ix, iy, iz] + iz, 0.0, d - 1.0)
                w000 = (1 - fx) * (1 - fy) * (1 - fz)
                w001 = (1 - fx) * (1 - fy) * fz
                w010 = (1 - fx) * fy * (1 - fz)
                w011 = (1 - fx) * fy * fz
                w100 = fx * (1 - fy) * (1 - fz)
                w101 = fx * (1 - fy) * fz
                w110 = fx * fy * (1 - fz)
                w111 = fx * fy * fz
                for ci in range(c):
                    out[ci, ix, iy, iz] = (
                        w000 * feat[ci, x0, y0, z0]
                        + w001 * feat[ci, x0, y0, z0 + 1]
                        + w010 * feat[ci, x0, y0 + 1, z0]
                        + w011 * feat[ci, x0, y0 + 1, z0 + 1]
                        + w100 * feat[ci, x0 + 1, y0, z0]
                        + w101 * feat[ci, x0 + 1, y0, z0 + 1]
                        + w110 * feat[ci, x0 + 1, y0 + 1, z0]
                        + w111 * feat[ci, x0 + 1, y0 + 1, z0 + 1])
    return out


@njit(cache=True)
def warp_bwd_feature(field, grad_out, feat_shape):
    c, h, w, d = feat_shape
    gf = np.zeros((c, h, w, d), dtype=grad_out.dtype)
    for ix in range(h):
        for iy in range(w):
            for iz in range(d):
                x0, fx, _ = _cell(field[0, ix, iy, iz] + ix, 0.0, h - 1.0)
                y0, fy, _ = _cell(field[1, ix, iy, iz] + iy, 0.0, w - 1.0)
                z0, fz, _ = _cell(field[2, ix, iy, iz] + iz, 0.0, d - 1.0)
                w000 = (1 - fx) * (1 - fy) * (1 - fz)
                w001 = (1 - fx) * (1 - fy) * fz
                w010 = (1 - fx) * fy * (1 - fz)
                w011 = (1 - fx) * fy * fz
                w100 = fx * (1 - fy) * (1 - fz)
                w101 = fx * (1 - fy) * fz
                w110 = fx * fy * (1 - fz)
                w111 = fx * fy * fz
                for ci in range(c):
                    g = grad_out[ci, ix, iy, iz]
                    gf[ci, x0, y0, z0] += w000 * g
                    gf[ci, x0, y0, z0 + 1] += w001 * g
                    gf[ci, x0, y0 + 1, z0] += w010 * g
                    gf[ci, x0, y0 + 1, z0 + 1] += w011 * g
                    gf[ci, x0 + 1, y0, z0] += w100 * g
                    gf[ci, x0 + 1, y0, z0 + 1] += w101 * g
                    gf[ci, x0 + 1, y0 + 1, z0] += w110 * g
                    gf[ci, x0 + 1, y0 + 1, z0 + 1] += w111 * g
    return gf


@njit(cache=True)
def warp_bwd_field(feat, field, grad_out):
    c, h, w, d = feat.shape
    gfield = np.zeros_like(field)
    for ix in range(h):
        for iy in range(w):
            for iz in range(d):
                x0, fx, inx = _cell(field[0, ix, iy, iz] + ix, 0.0, h - 1.0)
                y0, fy, iny = _cell(field[1, ix, iy, iz] + iy, 0.0, w - 1.0)
                z0, fz, inz = _cell(field[2, ix, iy, iz] + iz, 0.0, d - 1.0)
                v000 = v001 = v010 = v011 = 0.0
                v100 = v101 = v110 = v111 = 0.0
                for ci in range(c):
                    g = grad_out[ci, ix, iy, iz]
                    v000 += g * feat[ci, x0, y0, z0]
                    v001 += g * feat[ci, x0, y0, z0 + 1]
                    v010 += g * feat[ci, x0, y0 + 1, z0]
                    v011 += g * feat[ci, x0, y0 + 1, z0 + 1]
                    v100 += g * feat[ci, x0 + 1, y0, z0]
                    v101 += g * feat[ci, x0 + 1, y0, z0 + 1]
                    v110 += g * feat[ci, x0 + 1, y0 + 1, z0]
                    v111 += g * feat[ci, x0 + 1, y0 + 1, z0 + 1]
                if inx:
                    gfield[0, ix, iy, iz] = (
                        (v100 - v000) * (1 - fy) * (1 - fz)
                        + (v110 - v010) * fy * (1 - fz)
                        + (v101 - v001) * (1 - fy) * fz
                        + (v111 - v011) * fy * fz)
                if iny:
                    gfield[1, ix, iy, iz] = (
                        (v010 - v000) * (1 - fx) * (1 - fz)
                        + (v110 - v100) * fx * (1 - fz)
                        + (v011 - v001) * (1 - fx) * fz
                        + (v111 - v101) * fx * fz)
                if inz:
                    gfield[2, ix, iy, iz] = (
                        (v001 - v000) * (1 - fx) * (1 - fy)
                        + (v101 - v100) * fx * (1 - fy)
                        + (v011 - v010) * (1 - fx) * fy
                        + (v111 - v110) * fx * fy)
    return gfield


@njit(cache=True)
def cost_volume_forward(a, b, r):
    c, h, w, d = a.shape
    m = 2 * r + 1
    out = np.zeros((m * m * m, h, w, d), dtype=a.dtype)
    for k in range(m * m * m):
        dx = k // (m * m) - r
        dy = (k // m) % m - r
        dz = k % m - r
        for ix in range(max(0, -dx), min(h, h - dx)):
            for iy in range(max(0, -dy), min(w, w - dy)):
                for iz in range(max(0, -dz), min(d, d - dz)):
                    acc = 0.0
                    for ci in range(c):
                        acc += a[ci, ix, iy, iz] * b[ci, ix + dx, iy + dy, iz + dz]
                    out[k, ix, iy, iz] = acc
    return out


@njit(cache=True)
def cost_volume_backward(a, b, r, grad_out):
    c, h, w, d = a.shape
    m = 2 * r + 1
    ga = np.zeros_like(a)
    gb = np.zeros_like(b)
    for k in range(m * m * m):
        dx = k // (m * m) - r
        dy = (k // m) % m - r
        dz = k % m - r
        for ix in range(max(0, -dx), min(h, h - dx)):
            for iy in range(max(0, -dy), min(w, w - dy)):
                for iz in range(max(0, -dz), min(d, d - dz)):
                    g = grad_out[k, ix, iy, iz]
                    for ci in range(c):
                        ga[ci, ix, iy, iz] += g * b[ci, ix + dx, iy + dy, iz + dz]
                        gb[ci, ix + dx, iy + dy, iz + dz] += g * a[ci, ix, iy, iz]
    return ga, gb


@njit(cache=True)
def _box1_last(x, r):
    # clamped running window along the last axis, f8 accumulation
    c, h, w, d = x.shape
    out = np.empty_like(x)
    pre = np.empty(d + 1, dtype=np.float64)
    for ci in range(c):
        for ix in range(h):
            for iy in range(w):
                pre[0] = 0.0
                for iz in range(d):
                    pre[iz + 1] = pre[iz] + x[ci, ix, iy, iz]
                for iz in range(d):
                    lo = iz - r
                    hi = iz + r + 1
                    if lo < 0:
                        lo = 0
                    if hi > d:
                        hi = d
                    out[ci, ix, iy, iz] = pre[hi] - pre[lo]
    return out


def box_sum3(x, n):
    r = n // 2
    y = _box1_last(x, r)                                               # (C,H,W,D)
    y = _box1_last(np.ascontiguousarray(y.transpose(0, 1, 3, 2)), r)   # (C,H,D,W)
    y = _box1_last(np.ascontiguousarray(y.transpose(0, 2, 3, 1)), r)   # (C,D,W,H)
    return np.ascontiguousarray(y.transpose(0, 3, 2, 1))
