"""Independent reference computations shared by the test suites."""
import math

import numpy as np
from scipy.special import erfc

S5 = math.sqrt(5)
# Gray labels written out by hand, ascending level order -3, -1, +1, +3.
GRAY_BITS = [(0, 0), (0, 1), (1, 1), (1, 0)]


def qfunc(x):
    return 0.5 * erfc(x / math.sqrt(2))


def pam4_gray_ber(esn0_db):
    """Exact bit error probability of unit-energy Gray PAM4 in real AWGN.

    Es/N0 is taken as the per-sample signal-to-noise ratio, ``sigma**2 = Es / (Es/N0)``.
    """
    sigma = math.sqrt(1 / 10 ** (esn0_db / 10))
    levels = np.array([-3, -1, 1, 3]) / S5
    edges = np.array([-np.inf, -2 / S5, 0.0, 2 / S5, np.inf])
    ber = 0.0
    for i, lv in enumerate(levels):
        for j in range(4):
            p = qfunc((edges[j] - lv) / sigma) - qfunc((edges[j + 1] - lv) / sigma)
            flips = sum(a != b for a, b in zip(GRAY_BITS[i], GRAY_BITS[j]))
            ber += 0.25 * p * flips / 2
    return ber


def isi_sequence(n_symbols, snr_db, seed, taps=(1.0, 0.5)):
    """PAM4 symbols, NRZ at 2 sps, through a T/2-spaced FIR channel plus AWGN."""
    rng = np.random.default_rng(seed)
    x = rng.choice(np.array([-3.0, -1.0, 1.0, 3.0]) / S5, size=n_symbols)
    s = np.repeat(x, 2)
    clean = np.convolve(s, taps)[:s.size]
    sigma = math.sqrt(np.mean(clean**2) / 10 ** (snr_db / 10))
    return x, clean + rng.normal(0.0, sigma, size=clean.size)


def _rows(y, n_taps):
    h = n_taps // 2
    k = np.arange(h, (y.size - h - 2) // 2)
    return k, (2 * k + 1)[:, None] + np.arange(-h, h + 1)[None, :]


def wiener_fir(y, x, n_taps):
    """MMSE taps estimating x[k] from the n_taps samples centered on sample 2k+1."""
    k, rows = _rows(y, n_taps)
    u = y[rows]
    return np.linalg.solve(u.T @ u / k.size, u.T @ x[k] / k.size)


def decide(v):
    levels = np.array([-3.0, -1.0, 1.0, 3.0]) / S5
    return levels[np.argmin(np.abs(np.asarray(v)[:, None] - levels[None, :]), axis=1)]


def bit_errors(a, b):
    levels = np.array([-3.0, -1.0, 1.0, 3.0]) / S5
    ia = np.argmin(np.abs(a[:, None] - levels), axis=1)
    ib = np.argmin(np.abs(b[:, None] - levels), axis=1)
    bits = np.array(GRAY_BITS)
    return int(np.sum(bits[ia] != bits[ib]))


def wiener_ber(n_taps, snr_db, seed_train, seed_test, n_symbols=1_000_000):
    """Monte-Carlo BER of the Wiener FIR designed on one realization, tested on another."""
    x, y = isi_sequence(n_symbols, snr_db, seed_train)
    w = wiener_fir(y, x, n_taps)
    x2, y2 = isi_sequence(n_symbols, snr_db, seed_test)
    k, rows = _rows(y2, n_taps)
    return bit_errors(y2[rows] @ w, x2[k]) / (2 * k.size), w
