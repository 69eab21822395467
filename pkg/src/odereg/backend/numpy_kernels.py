"""Pure-numpy kernel lane.

Same signatures as numba_kernels. Spatial arrays are (C, H, W, D) with
axis order x, y, z; displacement fields are (3, H, W, D) in voxel units
of their own grid. Sampling clamps to the border.
"""

import numpy as np

NAME = "numpy"


def _out_extent(e, stride):
    return -(-e // stride)


def im2col3(x, stride):
    # (C,H,W,D) -> (C*27, Ho*Wo*Do) for a 3x3x3 window, zero padding 1
    c, h, w, d = x.shape
    xp = np.zeros((c, h + 2, w + 2, d + 2), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, 1:-1] = x
    ho, wo, do = (_out_extent(e, stride) for e in (h, w, d))
    s = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp,
        shape=(c, 3, 3, 3, ho, wo, do),
        strides=(s[0], s[1], s[2], s[3],
                 s[1] * stride, s[2] * stride, s[3] * stride),
        writeable=False,
    )
    return win.reshape(c * 27, ho * wo * do)


def col2im3(cols, shape, stride):
    # adjoint of im2col3: scatter columns back onto the (padded) input grid
    c, h, w, d = shape
    ho, wo, do = (_out_extent(e, stride) for e in (h, w, d))
    g = cols.reshape(c, 3, 3, 3, ho, wo, do)
    xp = np.zeros((c, h + 2, w + 2, d + 2), dtype=cols.dtype)
    for i in range(3):
        for j in range(3):
            for k in range(3):
                xp[:, i:i + (ho - 1) * stride + 1:stride,
                      j:j + (wo - 1) * stride + 1:stride,
                      k:k + (do - 1) * stride + 1:stride] += g[:, i, j, k]
    return np.ascontiguousarray(xp[:, 1:-1, 1:-1, 1:-1])


def _corner_setup(field, extents):
    h, w, d = extents
    dt = field.dtype
    x = field[0] + np.arange(h, dtype=dt)[:, None, None]
    y = field[1] + np.arange(w, dtype=dt)[None, :, None]
    z = field[2] + np.arange(d, dtype=dt)[None, None, :]
    inside = ((x >= 0) & (x <= h - 1),
              (y >= 0) & (y <= w - 1),
              (z >= 0) & (z <= d - 1))
    np.clip(x, 0, h - 1, out=x)
    np.clip(y, 0, w - 1, out=y)
    np.clip(z, 0, d - 1, out=z)
    x0 = np.minimum(x.astype(np.int64), h - 2)
    y0 = np.minimum(y.astype(np.int64), w - 2)
    z0 = np.minimum(z.astype(np.int64), d - 2)
    fx, fy, fz = x - x0, y - y0, z - z0
    return (x0, y0, z0), (fx, fy, fz), inside


def warp_trilinear(feat, field):
    c, h, w, d = feat.shape
    (x0, y0, z0), (fx, fy, fz), _ = _corner_setup(field, (h, w, d))
    base = ((x0 * w + y0) * d + z0).ravel()
    f = feat.reshape(c, -1)
    out = np.zeros((c, h * w * d), dtype=feat.dtype)
    fx, fy, fz = fx.ravel(), fy.ravel(), fz.ravel()
    for i in (0, 1):
        wx = fx if i else 1.0 - fx
        for j in (0, 1):
            wy = fy if j else 1.0 - fy
            for k in (0, 1):
                wz = fz if k else 1.0 - fz
                idx = base + (i * w + j) * d + k
                out += (wx * wy * wz) * f[:, idx]
    return out.reshape(feat.shape)


def warp_bwd_feature(field, grad_out, feat_shape):
    c, h, w, d = feat_shape
    (x0, y0, z0), (fx, fy, fz), _ = _corner_setup(field, (h, w, d))
    base = ((x0 * w + y0) * d + z0).ravel()
    g = grad_out.reshape(c, -1)
    gf = np.zeros((c, h * w * d), dtype=grad_out.dtype)
    fx, fy, fz = fx.ravel(), fy.ravel(), fz.ravel()
    for i in (0, 1):
        wx = fx if i else 1.0 - fx
        for j in (0, 1):
            wy = fy if j else 1.0 - fy
            for k in (0, 1):
                wz = fz if k else 1.0 - fz
                idx = base + (i * w + j) * d + k
                np.add.at(gf, (slice(None), idx), (wx * wy * wz) * g)
    return gf.reshape(feat_shape)


def warp_bwd_field(feat, field, grad_out):
    c, h, w, d = feat.shape
    (x0, y0, z0), (fx, fy, fz), inside = _corner_setup(field, (h, w, d))
    base = ((x0 * w + y0) * d + z0).ravel()
    f = feat.reshape(c, -1)
    g = grad_out.reshape(c, -1)
    fx, fy, fz = fx.ravel(), fy.ravel(), fz.ravel()
    n = base.size
    v = np.empty((2, 2, 2, n), dtype=feat.dtype)
    for i in (0, 1):
        for j in (0, 1):
            for k in (0, 1):
                idx = base + (i * w + j) * d + k
                v[i, j, k] = np.einsum("cn,cn->n", g, f[:, idx])
    gx = ((v[1, 0, 0] - v[0, 0, 0]) * (1 - fy) * (1 - fz)
          + (v[1, 1, 0] - v[0, 1, 0]) * fy * (1 - fz)
          + (v[1, 0, 1] - v[0, 0, 1]) * (1 - fy) * fz
          + (v[1, 1, 1] - v[0, 1, 1]) * fy * fz)
    gy = ((v[0, 1, 0] - v[0, 0, 0]) * (1 - fx) * (1 - fz)
          + (v[1, 1, 0] - v[1, 0, 0]) * fx * (1 - fz)
          + (v[0, 1, 1] - v[0, 0, 1]) * (1 - fx) * fz
          + (v[1, 1, 1] - v[1, 0, 1]) * fx * fz)
    gz = ((v[0, 0, 1] - v[0, 0, 0]) * (1 - fx) * (1 - fy)
          + (v[1, 0, 1] - v[1, 0, 0]) * fx * (1 - fy)
          + (v[0, 1, 1] - v[0, 1, 0]) * (1 - fx) * fy
          + (v[1, 1, 1] - v[1, 1, 0]) * fx * fy)
    grad_field = np.stack([gx, gy, gz]).reshape(field.shape)
    for a in range(3):
        grad_field[a][~inside[a]] = 0.0
    return grad_field


def cost_volume_forward(a, b, r):
    # out[k, p] = sum_c a[c, p] * b[c, p + offset(k)], zero outside
    c, h, w, d = a.shape
    m = 2 * r + 1
    out = np.zeros((m * m * m, h, w, d), dtype=a.dtype)
    k = 0
    for dx in range(-r, r + 1):
        sx = slice(max(0, -dx), min(h, h - dx))
        tx = slice(max(0, dx), min(h, h + dx))
        for dy in range(-r, r + 1):
            sy = slice(max(0, -dy), min(w, w - dy))
            ty = slice(max(0, dy), min(w, w + dy))
            for dz in range(-r, r + 1):
                sz = slice(max(0, -dz), min(d, d - dz))
                tz = slice(max(0, dz), min(d, d + dz))
                out[k, sx, sy, sz] = np.einsum(
                    "cxyz,cxyz->xyz", a[:, sx, sy, sz], b[:, tx, ty, tz])
                k += 1
    return out


def cost_volume_backward(a, b, r, grad_out):
    c, h, w, d = a.shape
    ga = np.zeros_like(a)
    gb = np.zeros_like(b)
    k = 0
    for dx in range(-r, r + 1):
        sx = slice(max(0, -dx), min(h, h - dx))
        tx = slice(max(0, dx), min(h, h + dx))
        for dy in range(-r, r + 1):
            sy = slice(max(0, -dy), min(w, w - dy))
            ty = slice(max(0, dy), min(w, w + dy))
            for dz in range(-r, r + 1):
                sz = slice(max(0, -dz), min(d, d - dz))
                tz = slice(max(0, dz), min(d, d + dz))
                g = grad_out[k, sx, sy, sz][None]
                ga[:, sx, sy, sz] += g * b[:, tx, ty, tz]
                gb[:, tx, ty, tz] += g * a[:, sx, sy, sz]
                k += 1
    return ga, gb


def _box1(x, axis, r):
    # clamped-window running sum along one axis, f8 accumulation
    x = np.moveaxis(x, axis, -1)
    e = x.shape[-1]
    cs = np.cumsum(x, axis=-1, dtype=np.float64)
    idx = np.arange(e)
    hi = cs[..., np.minimum(idx + r, e - 1)]
    lo = np.where(idx - r - 1 >= 0, cs[..., np.maximum(idx - r - 1, 0)], 0.0)
    return np.moveaxis(hi - lo, -1, axis)


def box_sum3(x, n):
    # sum over the n^3 window centered at each voxel of the last 3 axes,
    # windows truncated at the border (zero contribution outside)
    r = n // 2
    out = x.astype(np.float64, copy=False)
    for axis in (-3, -2, -1):
        out = _box1(out, axis, r)
    return out.astype(x.dtype, copy=False)
