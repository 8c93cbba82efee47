"""Real-valued multiplication (rvm) accounting.

Convention: multiplications per received input sample in steady-state
streaming operation. Every layer is evaluated once per position of its own
stride grid and its results are reused by all later windows that overlap
them. An FIR is a stride-1 layer (evaluated at every sample, decimated
afterwards). A GRU step costs ``3H(n_in + H)`` matrix products, ``2H`` gate
products (``r*h`` and ``z*(n - h)``) and ``H * outputs`` readout products.
Additions, biases and activation functions are free.
"""
from dataclasses import dataclass
import math

import numpy as np

from .networks import EQUALIZERS, ESTIMATORS, Network, init_parameters


@dataclass(frozen=True)
class ComplexityReport:
    name: str
    rvms_exact: float
    multiplies_per_window: int
    window_samples: int
    symbols_per_window: float

    @property
    def rvms(self):
        """Headline budget, rounded to the nearest integer."""
        return int(math.floor(self.rvms_exact + 0.5))


def _gru_step_cost(spec):
    h = spec.hidden
    return 3 * h * (spec.taps + h) + 2 * h + h * spec.outputs


def count_rvms(spec):
    if isinstance(spec, Network):
        spec = spec.spec
    if spec.kind == "gru":
        window = spec.advance
        mults = _gru_step_cost(spec)
    else:
        window = spec.total_stride
        mults, c_in, jump = 0, 1, 1
        for l in spec.layers:
            jump *= l.stride
            mults += l.kernel * c_in * l.channels * (window // jump)
            c_in = l.channels
    return ComplexityReport(
        name=spec.name,
        rvms_exact=mults / window,
        multiplies_per_window=mults,
        window_samples=window,
        symbols_per_window=window / spec.sps,
    )


class _Counter:
    def __init__(self):
        self.n = 0

    def dot(self, a, b):
        a, b = np.ravel(a), np.ravel(b)
        self.n += a.size
        return float(a @ b)

    def mul(self, a, b):
        a = np.asarray(a)
        self.n += a.size
        return a * b


_ACT = {"relu": lambda v: max(v, 0.0), "tanh": math.tanh, "none": lambda v: v,
        "sigmoid": lambda v: 1 / (1 + math.exp(-v))}


def instrumented_forward(net, x):
    """Streaming scalar-level forward pass; returns (pre-decimation outputs, multiplies).

    Written independently of the tape operators: explicit loops over output
    positions, each dot product tallied element by element.
    """
    spec, p = net.spec, net.params
    c = _Counter()
    x = np.asarray(x, dtype=np.float64)
    if spec.kind == "gru":
        return _gru_stream(spec, p, x, c), c.n
    h = x[None, :]
    for i, l in enumerate(spec.layers):
        w = p[f"w{i}"]
        b = p[f"b{i}"] if l.bias else np.zeros(l.channels)
        n_out = (h.shape[1] - l.kernel) // l.stride + 1
        out = np.empty((l.channels, n_out))
        for t in range(n_out):
            seg = h[:, t * l.stride:t * l.stride + l.kernel]
            for o in range(l.channels):
                out[o, t] = _ACT[l.activation](c.dot(w[o], seg) + b[o])
        h = out
    return h.T.reshape(-1), c.n


def _gru_stream(spec, p, x, c):
    hid = spec.hidden
    wx, uh, b, wo, bo = p["wx"], p["uh"], p["b"], p["wo"], p["bo"]
    steps = (len(x) - spec.taps) // spec.advance + 1
    if not spec.stateful:
        steps -= steps % spec.window_steps
    state = np.zeros(hid)
    outs = []
    sig = _ACT["sigmoid"]
    for s in range(steps):
        if not spec.stateful and s % spec.window_steps == 0:
            state = np.zeros(hid)
        frame = x[s * spec.advance:s * spec.advance + spec.taps]
        a = np.array([c.dot(wx[j], frame) + b[j] for j in range(3 * hid)])
        z = np.array([sig(a[j] + c.dot(uh[j], state)) for j in range(hid)])
        r = np.array([sig(a[hid + j] + c.dot(uh[hid + j], state)) for j in range(hid)])
        rh = c.mul(r, state)
        n = np.array([math.tanh(a[2 * hid + j] + c.dot(uh[2 * hid + j], rh)) for j in range(hid)])
        state = state + c.mul(z, n - state)
        outs.extend(c.dot(wo[j], state) + bo[j] for j in range(spec.outputs))
    return np.array(outs)


def _length_for(spec, units):
    """Input length giving ``units`` complete windows/applications."""
    if spec.kind == "gru":
        span = spec.advance * (1 if spec.stateful else spec.window_steps)
        return spec.taps - spec.advance + units * span
    return spec.receptive_field + (units - 1) * spec.total_stride


def measured_rvms(spec, n_symbols=10_000, seed=0):
    """Marginal multiplies per input sample from the instrumented pass (warm-up excluded)."""
    net = Network(spec, init_parameters(spec, seed))
    rng = np.random.default_rng(seed)
    unit = spec.advance * (1 if spec.stateful else spec.window_steps) if spec.kind == "gru" else spec.total_stride
    units = max(2, -(-n_symbols * spec.sps // unit))
    n1, n2 = _length_for(spec, 1), _length_for(spec, units)
    x = rng.normal(size=n2)
    _, c1 = instrumented_forward(net, x[:n1])
    _, c2 = instrumented_forward(net, x)
    return (c2 - c1) / (n2 - n1)


def catalog_reports():
    specs = list(EQUALIZERS.values()) + list(ESTIMATORS.values())
    return [(s, count_rvms(s), Network(s).n_params) for s in specs]
