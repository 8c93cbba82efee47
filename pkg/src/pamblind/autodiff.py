"""Reverse-mode differentiation over a small, closed operator set.

A :class:`Tape` records every operation applied to its tensors. Calling
:meth:`Tape.backward` on a scalar result walks the records in reverse
creation order (a valid reverse topological order, since inputs always
precede outputs) and returns the gradient with respect to every bound
:class:`ParameterSet` as a flat vector.

Operators: strided valid ``conv1d``, ``dense``, ``gru_cell``, element-wise
``tanh``/``sigmoid``/``relu``, ``mse``, ``zero_stuff`` and its adjoint
``subsample``, plus the plumbing needed to wire networks together
(``take``, ``concat``, ``reshape``, ``transpose``, ``crop``, ``add``,
``scale`` and the straight-through ``quantize_st``).
"""
from collections import OrderedDict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ParameterSet:
    """Flat parameter vector with named, disjoint, contiguous slices."""

    def __init__(self, shapes, values=None):
        self._slices = OrderedDict()
        offset = 0
        for name, shape in shapes:
            shape = tuple(int(s) for s in shape)
            size = int(np.prod(shape)) if shape else 1
            self._slices[name] = (offset, size, shape)
            offset += size
        self.size = offset
        if values is None:
            self.theta = np.zeros(offset)
        else:
            values = np.asarray(values, dtype=np.float64)
            if values.shape != (offset,):
                raise ValueError(f"expected {offset} values, got {values.shape}")
            self.theta = values.copy()

    @property
    def names(self):
        return list(self._slices)

    def shapes(self):
        return [(name, shape) for name, (_, _, shape) in self._slices.items()]

    def slice_of(self, name):
        offset, size, _ = self._slices[name]
        return slice(offset, offset + size)

    def __getitem__(self, name):
        offset, size, shape = self._slices[name]
        return self.theta[offset:offset + size].reshape(shape)

    def __setitem__(self, name, value):
        self[name][...] = value

    def __contains__(self, name):
        return name in self._slices

    def __len__(self):
        return self.size

    def copy(self):
        return ParameterSet(self.shapes(), self.theta)


class Tensor:
    __slots__ = ("value", "tape", "parents", "backward_fn", "grad")

    def __init__(self, value, tape, parents=(), backward_fn=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"


class Tape:
    def __init__(self):
        self.nodes = []
        self._bound = []

    def _record(self, value, parents, backward_fn):
        node = Tensor(value, self, parents, backward_fn)
        self.nodes.append(node)
        return node

    def constant(self, value):
        return self._record(np.asarray(value, dtype=np.float64), (), None)

    def bind(self, params):
        """Leaf tensors for every slice of ``params``, keyed by name."""
        leaves = OrderedDict()
        for name in params.names:
            leaves[name] = self._record(params[name], (), None)
        self._bound.append((params, leaves))
        return leaves

    def backward(self, loss):
        """Gradient of scalar ``loss`` w.r.t. all bound parameter sets, concatenated."""
        if loss.tape is not self:
            raise ValueError("loss was recorded on a different tape")
        if loss.value.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is None or node.backward_fn is None:
                continue
            grads = node.backward_fn(node.grad)
            for parent, g in zip(node.parents, grads):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g
        parts = []
        for params, leaves in self._bound:
            flat = np.zeros(params.size)
            for name, leaf in leaves.items():
                if leaf.grad is not None:
                    flat[params.slice_of(name)] = np.reshape(leaf.grad, -1)
            parts.append(flat)
        return np.concatenate(parts) if parts else np.zeros(0)


def _tape_of(*tensors):
    for t in tensors:
        if isinstance(t, Tensor):
            return t.tape
    raise TypeError("at least one argument must be a Tensor")


def _as_tensor(tape, x):
    return x if isinstance(x, Tensor) else tape.constant(x)


# ---------------------------------------------------------------- linear maps

def conv1d(x, w, b=None, stride=1):
    """Valid cross-correlation of ``x`` (C_in, L) with ``w`` (C_out, C_in, K).

    Output length is ``(L - K) // stride + 1``.
    """
    tape = _tape_of(x, w)
    xv, wv = x.value, w.value
    c_out, c_in, k = wv.shape
    if xv.ndim != 2 or xv.shape[0] != c_in:
        raise ValueError(f"input shape {xv.shape} does not match kernel {wv.shape}")
    if k > xv.shape[1]:
        raise ValueError(f"kernel length {k} exceeds input length {xv.shape[1]}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n_out = (xv.shape[1] - k) // stride + 1
    frames = sliding_window_view(xv, k, axis=1)[:, ::stride][:, :n_out]  # (C_in, n_out, K)
    out = np.tensordot(wv, frames, axes=([1, 2], [0, 2]))
    if b is not None:
        out = out + b.value[:, None]

    def backward(g):
        gw = np.tensordot(g, frames, axes=([1], [1]))
        gx = np.zeros_like(xv)
        span = stride * (n_out - 1) + 1
        for kk in range(k):
            gx[:, kk:kk + span:stride] += wv[:, :, kk].T @ g
        gb = g.sum(axis=1) if b is not None else None
        return gx, gw, gb

    parents = (x, w, b) if b is not None else (x, w)
    return tape._record(out, parents, backward)


def dense(x, w, b=None):
    """``x @ w.T + b`` for ``x`` of shape (n_in,) or (batch, n_in)."""
    tape = _tape_of(x, w)
    xv, wv = x.value, w.value
    if xv.shape[-1] != wv.shape[1]:
        raise ValueError(f"dense input {xv.shape} does not match weights {wv.shape}")
    out = xv @ wv.T
    if b is not None:
        out = out + b.value

    def backward(g):
        gx = g @ wv
        gw = np.outer(g, xv) if xv.ndim == 1 else g.T @ xv
        gb = (g if g.ndim == 1 else g.sum(axis=0)) if b is not None else None
        return gx, gw, gb

    parents = (x, w, b) if b is not None else (x, w)
    return tape._record(out, parents, backward)


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def gru_cell(x, h, wx, uh, b):
    """One GRU update for a batch.

    ``x`` (B, n_in), ``h`` (B, H); ``wx`` (3H, n_in), ``uh`` (3H, H) and ``b``
    (3H,) stack the update, reset and candidate blocks in that order::

        z  = sigmoid(Wz x + Uz h + bz)
        r  = sigmoid(Wr x + Ur h + br)
        n  = tanh(Wn x + Un (r * h) + bn)
        h' = (1 - z) * h + z * n
    """
    tape = _tape_of(x, h, wx)
    xv, hv, wv, uv, bv = x.value, h.value, wx.value, uh.value, b.value
    hid = hv.shape[-1]
    if wv.shape != (3 * hid, xv.shape[-1]) or uv.shape != (3 * hid, hid) or bv.shape != (3 * hid,):
        raise ValueError("GRU weight shapes do not match input/hidden sizes")
    if xv.shape[:-1] != hv.shape[:-1]:
        raise ValueError("GRU input and state batch sizes differ")
    uz, ur, un = uv[:hid], uv[hid:2 * hid], uv[2 * hid:]
    a = xv @ wv.T + bv
    z = _sigmoid(a[..., :hid] + hv @ uz.T)
    r = _sigmoid(a[..., hid:2 * hid] + hv @ ur.T)
    rh = r * hv
    n = np.tanh(a[..., 2 * hid:] + rh @ un.T)
    out = hv + z * (n - hv)

    def backward(g):
        dn = g * z * (1 - n * n)
        dz = g * (n - hv) * z * (1 - z)
        drh = dn @ un
        dr = drh * hv * r * (1 - r)
        dh = g * (1 - z) + drh * r + dz @ uz + dr @ ur
        da = np.concatenate([dz, dr, dn], axis=-1)
        if xv.ndim == 1:
            dwx = np.outer(da, xv)
            duh = np.concatenate([np.outer(dz, hv), np.outer(dr, hv), np.outer(dn, rh)])
            db = da
        else:
            dwx = da.T @ xv
            duh = np.concatenate([dz.T @ hv, dr.T @ hv, dn.T @ rh])
            db = da.sum(axis=0)
        dx = da @ wv
        return dx, dh, dwx, duh, db

    return tape._record(out, (x, _as_tensor(tape, h), wx, uh, b), backward)


# ------------------------------------------------------------ element-wise

def relu(x):
    mask = x.value > 0
    return x.tape._record(x.value * mask, (x,), lambda g: (g * mask,))


def tanh(x):
    y = np.tanh(x.value)
    return x.tape._record(y, (x,), lambda g: (g * (1 - y * y),))


def sigmoid(x):
    y = _sigmoid(x.value)
    return x.tape._record(y, (x,), lambda g: (g * y * (1 - y),))


ACTIVATIONS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid, "none": lambda x: x}


def add(a, b):
    tape = _tape_of(a, b)
    a, b = _as_tensor(tape, a), _as_tensor(tape, b)
    if a.value.shape != b.value.shape:
        raise ValueError("add requires equal shapes")
    return tape._record(a.value + b.value, (a, b), lambda g: (g, g))


def scale(x, c):
    c = float(c)
    return x.tape._record(x.value * c, (x,), lambda g: (g * c,))


def mse(a, b):
    """Mean of squared differences; ``b`` may be a constant array."""
    tape = _tape_of(a, b)
    a, b = _as_tensor(tape, a), _as_tensor(tape, b)
    if a.value.shape != b.value.shape:
        raise ValueError(f"mse shapes differ: {a.value.shape} vs {b.value.shape}")
    d = a.value - b.value
    n = d.size
    out = np.array(np.dot(d.ravel(), d.ravel()) / n)

    def backward(g):
        ga = (2.0 / n) * g * d
        return ga, -ga

    return tape._record(out, (a, b), backward)


# ---------------------------------------------------------------- plumbing

def zero_stuff(x, factor):
    """Insert ``factor - 1`` zeros after every sample along the last axis."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    xv = x.value
    out = np.zeros(xv.shape[:-1] + (xv.shape[-1] * factor,))
    out[..., ::factor] = xv
    return x.tape._record(out, (x,), lambda g: (g[..., ::factor].copy(),))


def subsample(x, factor, offset=0):
    """Keep every ``factor``-th sample along the last axis, starting at ``offset``."""
    xv = x.value
    out = xv[..., offset::factor].copy()

    def backward(g):
        gx = np.zeros_like(xv)
        gx[..., offset::factor] = g
        return (gx,)

    return x.tape._record(out, (x,), backward)


def take(x, index):
    """Gather ``x.value.ravel()[index]`` (any index shape); duplicates accumulate."""
    xv = x.value
    index = np.asarray(index)
    out = xv.reshape(-1)[index]

    def backward(g):
        gx = np.zeros(xv.size)
        np.add.at(gx, index.reshape(-1), g.reshape(-1))
        return (gx.reshape(xv.shape),)

    return x.tape._record(out, (x,), backward)


def crop(x, start, stop):
    """Slice ``[start:stop]`` along the last axis."""
    xv = x.value
    out = xv[..., start:stop].copy()

    def backward(g):
        gx = np.zeros_like(xv)
        gx[..., start:stop] = g
        return (gx,)

    return x.tape._record(out, (x,), backward)


def reshape(x, shape):
    old = x.value.shape
    return x.tape._record(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x):
    return x.tape._record(x.value.T.copy(), (x,), lambda g: (g.T,))


def concat(tensors, axis=-1):
    tape = _tape_of(*tensors)
    values = [t.value for t in tensors]
    out = np.concatenate(values, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return tape._record(out, tuple(tensors), backward)


def quantize_st(x, decided):
    """Forward value ``decided``, backward identity (straight-through estimator)."""
    decided = np.asarray(decided, dtype=np.float64)
    if decided.shape != x.value.shape:
        raise ValueError("decisions must match the soft values in shape")
    return x.tape._record(decided.copy(), (x,), lambda g: (g,))
