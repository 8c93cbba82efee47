"""Equalizer and channel-estimator topologies.

Equalizers map a 2-sps received waveform to symbol-rate soft estimates;
estimators map zero-stuffed hard decisions back to a 2-sps reconstruction.
All convolutions are valid (unpadded), so every network drops edge samples
and reports where its outputs sit relative to its input.

Alignment conventions, for an input whose first sample is sample 0 of a
symbol-aligned 2-sps grid (symbol ``k`` occupies samples ``2k`` and
``2k + 1``, the latter being the symbol center):

* an equalizer's output ``m`` estimates symbol ``symbol_offset + m``;
* an estimator fed with ``zero_stuff(x_hat)`` places ``x_hat[m]`` at the
  center sample of its symbol, and its output ``i`` reconstructs received
  sample ``i + sample_offset`` relative to the first decided symbol's
  start sample.
"""
from dataclasses import asdict, dataclass, replace
import hashlib
import json
import math

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tape
from .rng import make_rng

KINDS = ("fir", "cnn", "gru")
ROLES = ("equalizer", "estimator")


@dataclass(frozen=True)
class Layer:
    kernel: int
    channels: int
    stride: int = 1
    activation: str = "none"
    bias: bool = True

    def __post_init__(self):
        if self.kernel < 1 or self.channels < 1 or self.stride < 1:
            raise ValueError(f"invalid layer {self}")
        if self.activation not in ad.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class NetworkSpec:
    """Declarative topology.

    ``fir``/``cnn`` use ``layers``. ``gru`` uses ``taps`` input samples per
    recurrent step, ``advance`` samples between steps, ``hidden`` cells and
    ``outputs`` sample-rate outputs per step; the hidden state is reset every
    ``window_steps`` steps unless ``stateful``.
    """

    name: str
    kind: str
    role: str = "equalizer"
    layers: tuple = ()
    taps: int = 0
    advance: int = 1
    hidden: int = 0
    outputs: int = 1
    window_steps: int = 16
    stateful: bool = False
    sps: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown network kind {self.kind!r}")
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        object.__setattr__(self, "layers", tuple(
            l if isinstance(l, Layer) else Layer(**l) for l in self.layers))
        if self.kind in ("fir", "cnn"):
            if not self.layers:
                raise ValueError("convolutional network needs at least one layer")
            if self.kind == "fir" and (len(self.layers) != 1 or self.layers[0].channels != 1
                                       or self.layers[0].stride != 1):
                raise ValueError("fir is a single stride-1 single-channel layer")
            if self.role == "equalizer" and self.kind == "cnn":
                if self.total_stride != self.sps * self.layers[-1].channels:
                    raise ValueError("cnn equalizer must emit one symbol per output channel")
            if self.role == "estimator" and (self.layers[-1].channels != 1 or self.total_stride != 1):
                raise ValueError("estimator must emit one channel at the input rate")
        else:
            if min(self.taps, self.hidden, self.advance, self.outputs, self.window_steps) < 1:
                raise ValueError("gru needs positive taps, hidden, advance, outputs, window_steps")
            if self.outputs != self.advance:
                raise ValueError("gru must emit one output per advanced sample")
            if self.role == "equalizer" and (self.window_steps * self.advance) % self.sps:
                raise ValueError("gru window must span whole symbols")

    # -------------------------------------------------------------- geometry
    @property
    def total_stride(self):
        return math.prod(l.stride for l in self.layers)

    @property
    def receptive_field(self):
        """Input samples feeding one output application."""
        if self.kind == "gru":
            return self.taps
        rf, jump = 1, 1
        for l in self.layers:
            rf += (l.kernel - 1) * jump
            jump *= l.stride
        return rf

    @property
    def symbols_per_application(self):
        if self.kind == "cnn":
            return self.layers[-1].channels
        return 1

    def to_dict(self):
        d = asdict(self)
        d["layers"] = [asdict(l) for l in self.layers]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["layers"] = tuple(Layer(**l) for l in d.get("layers", ()))
        return cls(**d)

    def topology_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()


def _cnn(name, kernels, channels, strides, acts, role="equalizer"):
    layers = tuple(Layer(k, c, s, a) for k, c, s, a in zip(kernels, channels, strides, acts))
    return NetworkSpec(name=name, kind="cnn", role=role, layers=layers)


def _fir(name, taps, role="equalizer"):
    return NetworkSpec(name=name, kind="fir", role=role, layers=(Layer(taps, 1, 1, "none", bias=False),))


EQUALIZERS = {
    "fir51": _fir("fir51", 51),
    "fir181": _fir("fir181", 181),
    "cnn-small": _cnn("cnn-small", (7, 5, 7), (4, 4, 8), (2, 2, 4), ("relu", "relu", "none")),
    "cnn-large": _cnn("cnn-large", (11, 9, 9), (7, 7, 8), (2, 2, 4), ("relu", "relu", "none")),
    "cnn-small-tanh": _cnn("cnn-small-tanh", (7, 5, 7), (4, 4, 8), (2, 2, 4), ("tanh", "tanh", "none")),
    "gru-large": NetworkSpec("gru-large", "gru", taps=3, advance=1, hidden=6, outputs=1),
    "gru-small": NetworkSpec("gru-small", "gru", taps=8, advance=6, hidden=6, outputs=6),
}

ESTIMATORS = {
    "netest": _cnn("netest", (11, 15), (5, 1), (1, 1), ("relu", "none"), role="estimator"),
    "fir51-est": _fir("fir51-est", 51, role="estimator"),
    "cnn-small-est": _cnn("cnn-small-est", (7, 5, 7), (4, 4, 1), (1, 1, 1),
                          ("relu", "relu", "none"), role="estimator"),
    "cnn-large-est": _cnn("cnn-large-est", (11, 9, 9), (7, 7, 1), (1, 1, 1),
                          ("relu", "relu", "none"), role="estimator"),
    "gru-est": NetworkSpec("gru-est", "gru", role="estimator", taps=3, advance=1, hidden=6, outputs=1),
}


def parameter_shapes(spec):
    shapes = []
    if spec.kind == "gru":
        h = spec.hidden
        shapes += [("wx", (3 * h, spec.taps)), ("uh", (3 * h, h)), ("b", (3 * h,)),
                   ("wo", (spec.outputs, h)), ("bo", (spec.outputs,))]
        return shapes
    c_in = 1
    for i, l in enumerate(spec.layers):
        shapes.append((f"w{i}", (l.channels, c_in, l.kernel)))
        if l.bias:
            shapes.append((f"b{i}", (l.channels,)))
        c_in = l.channels
    return shapes


def init_parameters(spec, seed):
    """Centered delta for FIRs; uniform(+-1/sqrt(fan_in)) weights and zero biases otherwise."""
    params = ParameterSet(parameter_shapes(spec))
    if spec.kind == "fir":
        params["w0"][0, 0, spec.layers[0].kernel // 2] = 1.0
        return params
    rng = make_rng(seed)
    for name, shape in params.shapes():
        if name.startswith("b"):
            continue
        fan_in = shape[-1] if spec.kind == "gru" else shape[1] * shape[2]
        bound = 1.0 / math.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


class Network:
    """A topology together with its parameters."""

    def __init__(self, spec, params=None, seed=0):
        self.spec = spec
        self.params = init_parameters(spec, seed) if params is None else params
        expected = sum(int(np.prod(s)) for _, s in parameter_shapes(spec))
        if self.params.size != expected:
            raise ValueError(f"{spec.name}: expected {expected} parameters, got {self.params.size}")

    @property
    def name(self):
        return self.spec.name

    @property
    def n_params(self):
        return self.params.size

    def copy(self):
        return Network(self.spec, self.params.copy())

    # ------------------------------------------------------------ equalizer
    @property
    def symbol_offset(self):
        """Symbol estimated by output 0 when the input starts at sample 0."""
        s = self.spec
        if s.kind == "fir":
            half = s.layers[0].kernel // 2
            return (self._fir_phase + half - 1) // 2
        if s.kind == "cnn":
            mid = (s.receptive_field - 1) / 2
            return int(math.floor((mid - s.sps * s.symbols_per_application / 2) / s.sps + 0.5))
        off = self._gru_center
        return (self._gru_phase + off - 1) // 2

    @property
    def _fir_phase(self):
        return (1 - self.spec.layers[0].kernel // 2) % 2

    @property
    def _gru_center(self):
        return (self.spec.taps - self.spec.advance) // 2

    @property
    def _gru_phase(self):
        return (1 - self._gru_center) % 2

    def output_length(self, n_in):
        """Number of outputs produced for an input of ``n_in`` samples (0 if too short)."""
        s = self.spec
        if s.kind == "gru":
            n = self._gru_steps(n_in) * s.advance
            return n if s.role == "estimator" else len(range(self._gru_phase, n, s.sps))
        if n_in < s.receptive_field:
            return 0
        if s.kind == "fir":
            n = n_in - s.layers[0].kernel + 1
            if s.role == "estimator":
                return n
            return len(range(self._fir_phase, n, s.sps))
        apps = (n_in - s.receptive_field) // s.total_stride + 1
        return apps * s.symbols_per_application

    def _gru_steps(self, n_in):
        s = self.spec
        if n_in < s.taps:
            return 0
        steps = (n_in - s.taps) // s.advance + 1
        if s.stateful:
            return steps
        return (steps // s.window_steps) * s.window_steps

    def forward(self, tape, leaves, x):
        """Record the network on ``tape``; ``x`` is a 1-D input Tensor."""
        s = self.spec
        n_in = x.value.shape[-1]
        if self.output_length(n_in) < 1:
            raise ValueError(f"{s.name}: input of {n_in} samples is shorter than one window")
        if s.kind == "gru":
            out = self._gru_forward(tape, leaves, x)
        else:
            out = self._conv_forward(leaves, x)
        if s.role == "estimator":
            return out
        if s.kind == "fir":
            return ad.subsample(out, s.sps, self._fir_phase)
        if s.kind == "gru":
            return ad.subsample(out, s.sps, self._gru_phase)
        return out

    def _conv_forward(self, leaves, x):
        h = ad.reshape(x, (1, x.value.shape[-1]))
        for i, l in enumerate(self.spec.layers):
            h = ad.conv1d(h, leaves[f"w{i}"], leaves.get(f"b{i}"), l.stride)
            h = ad.ACTIVATIONS[l.activation](h)
        c, n = h.value.shape
        if c == 1:
            return ad.reshape(h, (n,))
        # (channels, applications) -> time order: application-major, channel-minor
        return ad.reshape(ad.transpose(h), (c * n,))

    def _gru_forward(self, tape, leaves, x):
        s = self.spec
        steps = self._gru_steps(x.value.shape[-1])
        if s.stateful:
            n_win, t_win = 1, steps
        else:
            n_win, t_win = steps // s.window_steps, s.window_steps
        starts = (np.arange(n_win)[:, None] * t_win + np.arange(t_win)[None, :]) * s.advance
        taps = np.arange(s.taps)
        h = tape.constant(np.zeros((n_win, s.hidden)))
        outs = []
        for t in range(t_win):
            frame = ad.take(x, starts[:, t:t + 1] + taps[None, :])
            h = ad.gru_cell(frame, h, leaves["wx"], leaves["uh"], leaves["b"])
            outs.append(ad.dense(h, leaves["wo"], leaves["bo"]))
        seq = ad.concat(outs, axis=1)  # (windows, steps * outputs)
        return ad.reshape(seq, (n_win * t_win * s.outputs,))

    # ------------------------------------------------------------- estimator
    @property
    def sample_offset(self):
        """Received-sample index (relative to the first decided symbol's start) of output 0."""
        s = self.spec
        center = self._gru_center if s.kind == "gru" else (s.receptive_field - 1) // 2
        return center + 1

    # -------------------------------------------------------------- numpy API
    def apply(self, values):
        """Forward pass on a plain array, returning a plain array."""
        tape = Tape()
        leaves = tape.bind(self.params)
        return self.forward(tape, leaves, tape.constant(np.asarray(values, dtype=np.float64))).value

    def equalize(self, y):
        """Soft symbol estimates and the index of the symbol the first one estimates.

        ``y`` is a 2-sps :class:`SampledWaveform` or array whose first sample
        starts a symbol.
        """
        if self.spec.role != "equalizer":
            raise ValueError(f"{self.name} is not an equalizer")
        values = getattr(y, "values", y)
        sps = getattr(y, "sps", self.spec.sps)
        if abs(sps - self.spec.sps) > 1e-9:
            raise ValueError(f"equalizer expects {self.spec.sps} sps input, got {sps}")
        return self.apply(values), self.symbol_offset

    def reconstruct(self, x_hat):
        """Estimator output for symbol-rate decisions (plain arrays)."""
        if self.spec.role != "estimator":
            raise ValueError(f"{self.name} is not a channel estimator")
        tape = Tape()
        leaves = tape.bind(self.params)
        z = ad.zero_stuff(tape.constant(np.asarray(x_hat, dtype=np.float64)), self.spec.sps)
        return self.forward(tape, leaves, z).value


def _lookup(table, name, what):
    if isinstance(name, NetworkSpec):
        return name
    try:
        return table[name]
    except KeyError:
        raise ValueError(f"unknown {what} {name!r}; choose from {sorted(table)}") from None


def make_equalizer(name, seed=0, stateful=None):
    spec = _lookup(EQUALIZERS, name, "equalizer")
    if spec.role != "equalizer":
        raise ValueError(f"{spec.name} is not an equalizer spec")
    if stateful is not None and spec.kind == "gru":
        spec = replace(spec, stateful=bool(stateful))
    return Network(spec, seed=seed)


def make_estimator(name, seed=0):
    spec = _lookup(ESTIMATORS, name, "channel estimator")
    if spec.role != "estimator":
        raise ValueError(f"{spec.name} is not an estimator spec")
    return Network(spec, seed=seed)
