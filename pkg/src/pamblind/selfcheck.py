"""Fast oracle checks run by ``pamblind verify``."""
from dataclasses import dataclass
import math

import numpy as np
from scipy.special import erfc

from . import autodiff as ad
from .autodiff import Tape
from .channel import FiberParams, apply_cd
from .complexity import count_rvms, measured_rvms
from .evaluation import AlignmentResult, ber_seq_mean, measure_ber
from .networks import EQUALIZERS, ESTIMATORS, Network, init_parameters, make_equalizer, make_estimator
from .signal_core import LEVELS, SampledWaveform, generate_bits, map_pam4
from .training import hard_decide, vqvae_loss


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def __post_init__(self):
        object.__setattr__(self, "passed", bool(self.passed))


def _gray_ber(esn0_db):
    sigma = math.sqrt(10 ** (-esn0_db / 10))
    d = (LEVELS[1] - LEVELS[0]) / 2
    q = 0.5 * erfc(d / sigma / math.sqrt(2))
    # inner levels have two neighbours, outer levels one; one bit per adjacent error
    q2 = 0.5 * erfc(3 * d / sigma / math.sqrt(2))
    q3 = 0.5 * erfc(5 * d / sigma / math.sqrt(2))
    return (1.5 * q + q2 - 0.5 * q3) / 2


def check_awgn(esn0_db=14.0, n=1_000_000, seed=1):
    x = map_pam4(generate_bits(n, seed=seed))
    y = x + np.random.default_rng(seed).normal(0, math.sqrt(10 ** (-esn0_db / 10)), n)
    ber = measure_ber(y, x, AlignmentResult(0, 1, 1.0))
    ref = _gray_ber(esn0_db)
    return CheckResult("awgn-ber", abs(ber / ref - 1) < 0.1, f"simulated {ber:.3e} analytic {ref:.3e}")


def check_cd(seed=2):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=4096) + 1j * rng.normal(size=4096)
    wf = SampledWaveform(v, 4.48e11, 8)
    f1, f2 = FiberParams(length_L=1.2), FiberParams(length_L=1.0)
    out = apply_cd(wf, FiberParams(length_L=2.2)).values
    energy = abs(np.sum(np.abs(out) ** 2) / np.sum(np.abs(v) ** 2) - 1)
    comp = np.max(np.abs(apply_cd(apply_cd(wf, f1), f2).values - out))
    return CheckResult("cd-unitary", energy < 1e-12 and comp < 1e-10, f"energy {energy:.1e} composition {comp:.1e}")


def _fd_error(net, x, probes, rng, h=1e-6):
    """Worst relative error between tape and central-difference gradients of an MSE loss."""
    target = rng.normal(size=net.apply(x).shape)

    def loss_of(theta):
        saved = net.params.theta.copy()
        net.params.theta[:] = theta
        out = net.apply(x)
        net.params.theta[:] = saved
        return float(np.mean((out - target) ** 2))

    tape = Tape()
    out = net.forward(tape, tape.bind(net.params), tape.constant(x))
    grad = tape.backward(ad.mse(out, target))
    worst = 0.0
    theta = net.params.theta.copy()
    for j in rng.choice(theta.size, size=min(probes, theta.size), replace=False):
        e = np.zeros_like(theta)
        e[j] = h
        fd = (loss_of(theta + e) - loss_of(theta - e)) / (2 * h)
        worst = max(worst, abs(fd - grad[j]) / max(1e-6, abs(fd) + abs(grad[j])))
    return worst


def check_gradients(probes=8, seed=3):
    rng = np.random.default_rng(seed)
    worst, name = 0.0, ""
    for spec in list(EQUALIZERS.values()) + list(ESTIMATORS.values()):
        net = Network(spec, init_parameters(spec, seed))
        net.params.theta[:] += 0.05 * rng.normal(size=net.params.size)
        n = spec.receptive_field + 6 * (spec.advance * spec.window_steps if spec.kind == "gru" else spec.total_stride)
        err = _fd_error(net, rng.normal(size=n), probes, rng)
        if err > worst:
            worst, name = err, spec.name
    return CheckResult("finite-difference", worst < 1e-4, f"max relative error {worst:.1e} ({name})")


def check_loss_identity(instances=20, seed=4):
    rng = np.random.default_rng(seed)
    for k in range(instances):
        eq, est = make_equalizer("cnn-small", seed=seed + k), make_estimator("netest", seed=k)
        y = rng.normal(size=200)
        t1 = Tape()
        l1 = t1.bind(eq.params)
        xs = eq.forward(t1, l1, t1.constant(y))
        el = t1.bind(est.params)
        loss, _, _ = vqvae_loss(t1, xs, y, est, el, 1.0, 2 * eq.symbol_offset)
        g1 = t1.backward(loss)[:eq.params.size]
        t2 = Tape()
        xs2 = eq.forward(t2, t2.bind(eq.params), t2.constant(y))
        dd = ad.mse(xs2, hard_decide(xs2.value))
        if loss.value != dd.value or not np.array_equal(g1, t2.backward(dd)):
            return CheckResult("loss-identity", False, f"instance {k} differs")
    return CheckResult("loss-identity", True, f"{instances} instances bit-exact")


def check_rvms():
    bad = []
    for spec in EQUALIZERS.values():
        if abs(measured_rvms(spec, n_symbols=400) - count_rvms(spec).rvms_exact) > 1e-9:
            bad.append(spec.name)
    return CheckResult("rvm-oracle", not bad, "formula equals instrumented count" if not bad else f"mismatch {bad}")


def check_protocol():
    trace = list(np.arange(1, 77) / 1000)
    ok = len(range(100, 7601, 100)) == 76 and ber_seq_mean(trace) == math.fsum(trace[-10:]) / 10
    return CheckResult("protocol", ok, "76 estimates, mean of the last 10")


CHECKS = (check_protocol, check_cd, check_awgn, check_loss_identity, check_gradients, check_rvms)


def run_all():
    return [c() for c in CHECKS]
