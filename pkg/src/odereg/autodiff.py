"""Reverse-mode autodiff over dense nd arrays.

Covers exactly the operator set the registration network needs: elementwise
arithmetic, a few nonlinearities, channel concat / slicing / reshape,
reductions, 3x3x3 convolution, trilinear warping and resampling, box window
sums, and a local shift correlation. Data lives in numpy arrays (float32
for training, float64 for oracle and gradient tests); the graph is a plain
parent-pointer DAG walked once per backward call.

Gradients land on graph leaves that carry requires_grad; interior results
release their buffers unless retain_grad() was called on them. Repeated
backward calls accumulate into .grad until zero_grad() clears it.
"""

import contextlib

import numpy as np

from . import backend
from .errors import GradientError, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense array plus optional gradient buffer and graph bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "name",
                 "_parents", "_backward", "_retain")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None
        self._retain = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    def retain_grad(self):
        self._retain = True
        return self

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Backpropagate from a scalar; accumulates into leaf .grad buffers."""
        if self.data.size != 1:
            raise GradientError(
                f"backward requires a scalar loss, got shape {self.data.shape}")
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(_toposort(self)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and (node._backward is None or node._retain):
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, key):
        return tslice(self, key)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def item(self):
        return float(self.data)


def _toposort(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p._backward is not None or p.requires_grad:
                stack.append((p, False))
    return order


def _lift(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# elementwise

def add(a, b):
    a = _lift(a, getattr(b, "dtype", None) or a.dtype)
    b = _lift(b, a.dtype)
    data = a.data + b.data
    return _node(data, (a, b), lambda g: (_unbroadcast(g, a.data.shape),
                                          _unbroadcast(g, b.data.shape)))


def sub(a, b):
    a = _lift(a, getattr(b, "dtype", None) or a.dtype)
    b = _lift(b, a.dtype)
    data = a.data - b.data
    return _node(data, (a, b), lambda g: (_unbroadcast(g, a.data.shape),
                                          _unbroadcast(-g, b.data.shape)))


def mul(a, b):
    a = _lift(a, getattr(b, "dtype", None) or a.dtype)
    b = _lift(b, a.dtype)
    data = a.data * b.data
    return _node(data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.data.shape),
                            _unbroadcast(g * a.data, b.data.shape)))


def div(a, b):
    a = _lift(a, getattr(b, "dtype", None) or a.dtype)
    b = _lift(b, a.dtype)
    data = a.data / b.data
    return _node(data, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.data.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data),
                                         b.data.shape)))


def square(x):
    return _node(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def sqrt(x):
    root = np.sqrt(x.data)
    return _node(root, (x,), lambda g: (g / (2.0 * root),))


def leaky_relu(x, slope=0.1):
    mask = x.data >= 0
    data = np.where(mask, x.data, slope * x.data)
    return _node(data, (x,),
                 lambda g: (np.where(mask, g, np.asarray(slope, g.dtype) * g),))


def sigmoid(x):
    out = 1.0 / (1.0 + np.exp(-x.data))
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x):
    out = np.tanh(x.data)
    return _node(out, (x,), lambda g: (g * (1.0 - out * out),))


# shape plumbing

def reshape(x, *shape):
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = x.data.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def tslice(x, key):
    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[key] = g
        return (gx,)
    return _node(x.data[key].copy(), (x,), bwd)


def concat(tensors, axis=0):
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p)
                     for p in np.split(g, splits, axis=axis))
    return _node(data, tensors, bwd)


def tsum(x):
    return _node(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                 lambda g: (np.broadcast_to(g, x.data.shape).copy(),))


def tmean(x):
    n = x.data.size
    return _node(np.asarray(x.data.mean(), dtype=x.dtype), (x,),
                 lambda g: (np.broadcast_to(g / n, x.data.shape).copy(),))


# spatial operators

def conv3d(x, weight, bias, stride=1):
    """3x3x3 convolution, zero padding 1, stride 1 or 2.

    x: (C_in, H, W, D); weight: (C_out, C_in, 3, 3, 3); bias: (C_out,).
    Output spatial extents are ceil(extent / stride).
    """
    if stride not in (1, 2):
        raise ShapeError(f"stride must be 1 or 2, got {stride}")
    cin, h, w, d = x.data.shape
    cout, cin_w = weight.data.shape[0], weight.data.shape[1]
    if weight.data.shape[2:] != (3, 3, 3):
        raise ShapeError(f"kernel must be 3x3x3, got {weight.data.shape[2:]}")
    if cin_w != cin:
        raise ShapeError(
            f"input has {cin} channels but weights expect {cin_w}")
    if bias.data.shape != (cout,):
        raise ShapeError(
            f"bias shape {bias.data.shape} does not match {cout} outputs")
    ho, wo, do = (-(-e // stride) for e in (h, w, d))
    xarr = np.ascontiguousarray(x.data)
    cols = backend.im2col3(xarr, stride)
    wmat = weight.data.reshape(cout, cin * 27)
    out = (wmat @ cols + bias.data[:, None]).reshape(cout, ho, wo, do)

    def bwd(g):
        gm = np.ascontiguousarray(g.reshape(cout, -1))
        gb = gm.sum(axis=1) if bias.requires_grad else None
        gw = None
        if weight.requires_grad:
            cols_again = backend.im2col3(xarr, stride)
            gw = (gm @ cols_again.T).reshape(weight.data.shape)
        gx = (backend.col2im3(wmat.T @ gm, (cin, h, w, d), stride)
              if x.requires_grad else None)
        return gx, gw, gb
    return _node(out, (x, weight, bias), bwd)


def grid_warp(feat, field):
    """Trilinear warp: out(p) = feat sampled at p + field(p), border clamped.

    feat: (C, H, W, D); field: (3, H, W, D) in voxel units of the same grid.
    Differentiable in both arguments; coordinate gradients vanish where the
    sample position clamps outside the volume.
    """
    if feat.data.shape[1:] != field.data.shape[1:] or field.data.shape[0] != 3:
        raise ShapeError(
            f"field {field.data.shape} does not match feature "
            f"{feat.data.shape}")
    farr = np.ascontiguousarray(feat.data)
    varr = np.ascontiguousarray(field.data)
    out = backend.warp_trilinear(farr, varr)

    def bwd(g):
        g = np.ascontiguousarray(g)
        gf = (backend.warp_bwd_feature(varr, g, farr.shape)
              if feat.requires_grad else None)
        gv = (backend.warp_bwd_field(farr, varr, g)
              if field.requires_grad else None)
        return gf, gv
    return _node(out, (feat, field), bwd)


def _axis_lut(src, dst, dtype):
    # half-pixel-center mapping from target index to source coordinate
    coord = (np.arange(dst, dtype=dtype) + 0.5) * (src / dst) - 0.5
    np.clip(coord, 0, src - 1, out=coord)
    i0 = np.minimum(coord.astype(np.int64), max(src - 2, 0))
    frac = coord - i0
    return i0, np.minimum(i0 + 1, src - 1), frac


def resample(x, target_extents, vector_mode=False):
    """Trilinear resize of (C, H, W, D) onto new spatial extents.

    With vector_mode the C==3 components are rescaled by the per-axis
    extent ratio so displacements stay correct in the new grid's voxel
    units.
    """
    c = x.data.shape[0]
    src = x.data.shape[1:]
    dst = tuple(int(e) for e in target_extents)
    if any(e <= 0 for e in dst):
        raise ShapeError(f"target extents must be positive, got {dst}")
    if vector_mode and c != 3:
        raise ShapeError(f"vector resample expects 3 components, got {c}")
    dt = x.dtype
    luts = [_axis_lut(s, t, dt) for s, t in zip(src, dst)]
    scale = None
    if vector_mode:
        scale = np.array([t / s for s, t in zip(src, dst)],
                         dtype=dt).reshape(3, 1, 1, 1)

    def fwd(arr):
        out = arr
        for axis, (i0, i1, f) in enumerate(luts, start=1):
            a = np.take(out, i0, axis=axis)
            b = np.take(out, i1, axis=axis)
            fshape = [1] * out.ndim
            fshape[axis] = f.size
            out = a + (b - a) * f.reshape(fshape)
        return out if scale is None else out * scale

    def bwd(g):
        if scale is not None:
            g = g * scale
        for axis in range(3, 0, -1):
            i0, i1, f = luts[axis - 1]
            gm = np.moveaxis(g, axis, 0)
            acc = np.zeros((src[axis - 1],) + gm.shape[1:], dtype=g.dtype)
            fcol = f.reshape((-1,) + (1,) * (gm.ndim - 1))
            np.add.at(acc, i0, gm * (1.0 - fcol))
            np.add.at(acc, i1, gm * fcol)
            g = np.moveaxis(acc, 0, axis)
        return (g,)
    return _node(fwd(x.data), (x,), bwd)


def box_sum(x, n):
    """Sum over the n^3 window centered at each voxel (n odd).

    Windows are truncated at the border: out-of-range voxels contribute
    zero. Self-adjoint, so the backward pass is the same filter.
    """
    if n % 2 == 0 or n < 3:
        raise ShapeError(f"window must be odd and >= 3, got {n}")
    arr = x.data
    squeeze = arr.ndim == 3
    if squeeze:
        arr = arr[None]
    out = backend.box_sum3(np.ascontiguousarray(arr), n)
    if squeeze:
        out = out[0]

    def bwd(g):
        gg = g[None] if squeeze else g
        gx = backend.box_sum3(np.ascontiguousarray(gg), n)
        return (gx[0] if squeeze else gx,)
    return _node(out, (x,), bwd)


def correlate(a, b, radius):
    """Raw local shift correlation over cubic offsets.

    out[k, p] = sum_c a(c, p) * b(c, p + offset_k) for offset_k in
    [-r, r]^3 (x-major channel order); out-of-range samples contribute
    zero. Inputs are expected pre-normalized by the caller.
    """
    if a.data.shape != b.data.shape:
        raise ShapeError(
            f"correlate needs congruent maps, got {a.data.shape} "
            f"vs {b.data.shape}")
    if radius < 1:
        raise ShapeError(f"radius must be >= 1, got {radius}")
    aarr = np.ascontiguousarray(a.data)
    barr = np.ascontiguousarray(b.data)
    out = backend.cost_volume_forward(aarr, barr, radius)

    def bwd(g):
        ga, gb = backend.cost_volume_backward(
            aarr, barr, radius, np.ascontiguousarray(g))
        return ga, gb
    return _node(out, (a, b), bwd)


def zero_grads(params):
    """Explicit gradient reset between optimizer steps."""
    for p in params.values() if isinstance(params, dict) else params:
        p.zero_grad()
