"""Blind (reconstruction-regularized decision-directed) and supervised training."""
from dataclasses import asdict, dataclass, field, fields
import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .channel import NumericInstabilityError
from .signal_core import LEVELS

GRAD_MODES = ("straight-through", "stop-gradient")
MODES = ("blind", "supervised")
_THRESHOLDS = (LEVELS[:-1] + LEVELS[1:]) / 2


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters. The defaults are tuned for the synthetic link, not published values."""

    beta0: float = 0.2
    a_beta: float = 1.5
    n_beta: int = 500
    lr0: float = 2e-3
    a_lr: float = 0.7
    n_lr: int = 1000
    iterations: int = 7600
    samples_per_iteration: int = 720
    sps: int = 2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_mode: str = "straight-through"
    eval_period: int = 100

    def __post_init__(self):
        if not 0 < self.beta0 <= 1:
            raise ValueError("beta0 must lie in (0, 1]")
        if self.a_beta < 1:
            raise ValueError("a_beta must be >= 1")
        if self.a_lr <= 0 or self.lr0 <= 0:
            raise ValueError("learning rate and its factor must be positive")
        if min(self.n_beta, self.n_lr, self.iterations, self.eval_period) < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.samples_per_iteration < 2 or self.samples_per_iteration % self.sps:
            raise ValueError("samples_per_iteration must be a positive multiple of sps")
        if self.sps != 2:
            raise ValueError("only 2 samples per symbol are supported")
        if self.grad_mode not in GRAD_MODES:
            raise ValueError(f"grad_mode must be one of {GRAD_MODES}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


@dataclass
class TrainingTelemetry:
    loss: list = field(default_factory=list)
    commitment: list = field(default_factory=list)
    reconstruction: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    eval_iterations: list = field(default_factory=list)
    ber: list = field(default_factory=list)

    def __len__(self):
        return len(self.loss)

    def log_lines(self):
        yield "iteration\tloss\tcommitment\treconstruction\tbeta\tlr"
        for i, row in enumerate(zip(self.loss, self.commitment, self.reconstruction, self.beta, self.lr)):
            yield f"{i + 1}\t" + "\t".join(repr(float(v)) for v in row)


def hard_decide(x):
    """Nearest PAM4 level; values exactly on a decision threshold go to the lower level."""
    x = np.asarray(x, dtype=np.float64)
    return LEVELS[np.searchsorted(_THRESHOLDS, x, side="left")]


def schedule_step(cfg, iteration):
    """(beta, lr) used at ``iteration`` (0-based)."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    beta = min(1.0, cfg.beta0 * cfg.a_beta ** (iteration // cfg.n_beta))
    lr = cfg.lr0 * cfg.a_lr ** (iteration // cfg.n_lr)
    return beta, lr


def adam_step(theta, grad, state, lr, cfg=None):
    """Bias-corrected Adam update of ``theta`` in place; returns ``theta``."""
    cfg = cfg or TrainingConfig()
    if grad.shape != theta.shape or state.m.shape != theta.shape:
        raise ValueError("parameter, gradient and moment vectors must align")
    if not np.all(np.isfinite(grad)):
        raise NumericInstabilityError(f"non-finite gradient at optimizer step {state.step + 1}")
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    state.step += 1
    state.m = b1 * state.m + (1 - b1) * grad
    state.v = b2 * state.v + (1 - b2) * grad * grad
    m_hat = state.m / (1 - b1 ** state.step)
    v_hat = state.v / (1 - b2 ** state.step)
    theta -= lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return theta


def reconstruction_overlap(n_out, y_len, start):
    """Crop bounds ``(lo, hi)`` of estimator outputs that land inside the received window."""
    lo = max(0, -start)
    hi = min(n_out, y_len - start)
    if hi - lo < 1:
        raise ValueError("estimator output does not overlap the received window")
    return lo, hi


def vqvae_loss(tape, x_soft, y_window, estimator, est_leaves, beta,
               symbol_start, grad_mode="straight-through"):
    """Commitment plus reconstruction loss.

    ``symbol_start`` is the index in ``y_window`` of the first sample of the
    symbol estimated by ``x_soft[0]``. Returns the loss Tensor and the values
    of both terms.
    """
    if grad_mode not in GRAD_MODES:
        raise ValueError(f"grad_mode must be one of {GRAD_MODES}")
    x_hat = hard_decide(x_soft.value)
    commitment = ad.mse(x_soft, x_hat)
    decided = ad.quantize_st(x_soft, x_hat) if grad_mode == "straight-through" else tape.constant(x_hat)
    stuffed = ad.zero_stuff(decided, estimator.spec.sps)
    recon = estimator.forward(tape, est_leaves, stuffed)
    start = symbol_start + estimator.sample_offset
    lo, hi = reconstruction_overlap(recon.value.size, len(y_window), start)
    target = np.asarray(y_window[start + lo:start + hi], dtype=np.float64)
    reconstruction = ad.mse(ad.crop(recon, lo, hi), target)
    loss = ad.add(ad.scale(commitment, beta), ad.scale(reconstruction, 1.0 - beta))
    return loss, float(commitment.value), float(reconstruction.value)


def supervised_mse_loss(x_soft, x_true):
    x_true = np.asarray(x_true, dtype=np.float64)
    if x_true.shape != x_soft.value.shape:
        raise ValueError(f"misaligned targets: {x_true.shape} vs {x_soft.value.shape}")
    return ad.mse(x_soft, x_true)


def evaluation_iterations(cfg):
    """Iterations (1-based) after which the monitor is called."""
    return list(range(cfg.eval_period, cfg.iterations + 1, cfg.eval_period))


def _block_indices(i, cfg, usable):
    start = (i * cfg.samples_per_iteration) % usable
    return start, (start + np.arange(cfg.samples_per_iteration)) % usable


def train(y, mode, equalizer, estimator=None, cfg=None, x_true=None, delay=0, monitor=None):
    """Train ``equalizer`` (and ``estimator`` in blind mode) in place.

    ``y`` is the normalized 2-sps received sequence; sample ``2k`` starts
    symbol ``k``. The sequence is treated as cyclic. In supervised mode
    ``x_true[k + delay]`` is the target for symbol ``k``. ``monitor(iteration,
    equalizer)`` is called every ``cfg.eval_period`` iterations and its
    return value recorded as a BER estimate.
    """
    cfg = cfg or TrainingConfig()
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "blind":
        if x_true is not None:
            raise ValueError("blind training takes no reference symbols")
        if estimator is None:
            raise ValueError("blind training needs a channel estimator")
    elif x_true is None:
        raise ValueError("supervised training needs reference symbols")
    values = np.asarray(getattr(y, "values", y), dtype=np.float64)
    usable = values.size - values.size % cfg.sps
    spi = cfg.samples_per_iteration
    if usable < spi or equalizer.output_length(spi) < 1:
        raise ValueError(f"received sequence too short: need at least one {spi}-sample block "
                         f"covering the {equalizer.spec.receptive_field}-sample receptive field")
    if mode == "supervised":
        x_true = np.asarray(x_true, dtype=np.float64)
        n_sym = usable // cfg.sps
        if x_true.size < n_sym:
            raise ValueError("reference symbols shorter than the received sequence")

    nets = [equalizer] + ([estimator] if mode == "blind" else [])
    theta = np.concatenate([n.params.theta for n in nets])
    bounds = np.cumsum([0] + [n.params.size for n in nets])
    state = AdamState.zeros(theta.size)
    tel = TrainingTelemetry()
    k0 = equalizer.symbol_offset
    due = set(evaluation_iterations(cfg)) if monitor is not None else set()

    for i in range(cfg.iterations):
        beta, lr = schedule_step(cfg, i)
        start, idx = _block_indices(i, cfg, usable)
        tape = Tape()
        eq_leaves = tape.bind(equalizer.params)
        x_soft = equalizer.forward(tape, eq_leaves, tape.constant(values[idx]))
        if mode == "blind":
            est_leaves = tape.bind(estimator.params)
            loss, commit, recon = vqvae_loss(tape, x_soft, values[idx], estimator, est_leaves,
                                             beta, cfg.sps * k0, cfg.grad_mode)
        else:
            sym = (start // cfg.sps + k0 + delay + np.arange(x_soft.value.size)) % n_sym
            loss = supervised_mse_loss(x_soft, x_true[sym])
            commit = float(np.mean((x_soft.value - hard_decide(x_soft.value)) ** 2))
            recon = math.nan
        grad = tape.backward(loss)
        adam_step(theta, grad, state, lr, cfg)
        for net, a, b in zip(nets, bounds[:-1], bounds[1:]):
            net.params.theta[:] = theta[a:b]
        tel.loss.append(float(loss.value))
        tel.commitment.append(commit)
        tel.reconstruction.append(recon)
        tel.beta.append(beta)
        tel.lr.append(lr)
        if i + 1 in due:
            tel.eval_iterations.append(i + 1)
            tel.ber.append(float(monitor(i + 1, equalizer)))
    return equalizer, estimator, tel
