"""PAM4 symbols, NRZ waveforms, resampling and power normalization."""
from dataclasses import dataclass
from fractions import Fraction
import math

import numpy as np

from .rng import make_rng

BAUD = 56e9
SCALE = 1 / math.sqrt(5)
#: Alphabet in ascending order.
LEVELS = np.array([-3.0, -1.0, 1.0, 3.0]) * SCALE
# Gray labels: 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3 (index = 2*b0 + b1).
_LEVEL_OF_LABEL = np.array([-3.0, -1.0, 3.0, 1.0]) * SCALE
_LABEL_OF_LEVEL = np.array([0, 1, 3, 2])
_GRID_TOL = 1e-9


@dataclass(frozen=True)
class SampledWaveform:
    """Immutable sample sequence with its sampling rate.

    ``sps`` is samples per symbol with respect to the symbol rate the
    waveform was built for; it is informational once the rate is known.
    """

    values: np.ndarray
    sample_rate: float
    sps: float

    def __post_init__(self):
        values = np.array(self.values, copy=True)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("waveform must be a non-empty 1-D array")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if np.iscomplexobj(values):
            values = values.astype(np.complex128)
        else:
            values = values.astype(np.float64)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))
        object.__setattr__(self, "sps", float(self.sps))

    def __len__(self):
        return self.values.size

    @property
    def is_complex(self):
        return np.iscomplexobj(self.values)

    @property
    def baud(self):
        return self.sample_rate / self.sps

    def power(self):
        return float(np.mean(np.abs(self.values) ** 2))

    def replace(self, values, sample_rate=None, sps=None):
        return SampledWaveform(
            values,
            self.sample_rate if sample_rate is None else sample_rate,
            self.sps if sps is None else sps,
        )


def generate_bits(n_symbols, seed):
    """Uniform random bits, two per PAM4 symbol."""
    if n_symbols < 1:
        raise ValueError(f"n_symbols must be >= 1, got {n_symbols}")
    rng = make_rng(seed)
    return rng.integers(0, 2, size=2 * int(n_symbols), dtype=np.uint8)


def map_pam4(bits):
    bits = np.asarray(bits)
    if bits.ndim != 1 or bits.size % 2:
        raise ValueError("bit sequence must be 1-D with even length")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bits must be 0 or 1")
    labels = 2 * bits[0::2].astype(np.int64) + bits[1::2]
    return _LEVEL_OF_LABEL[labels]


def level_index(symbols):
    """Index into ``LEVELS`` of on-grid symbols; raises on off-grid values."""
    symbols = np.asarray(symbols, dtype=np.float64)
    idx = np.clip(np.rint((symbols / SCALE + 3) / 2).astype(np.int64), 0, 3)
    if np.any(np.abs(LEVELS[idx] - symbols) > _GRID_TOL):
        raise ValueError("symbols are not on the PAM4 grid; hard-decide first")
    return idx


def demap_pam4(symbols):
    labels = _LABEL_OF_LEVEL[level_index(symbols)]
    bits = np.empty(2 * labels.size, dtype=np.uint8)
    bits[0::2] = labels >> 1
    bits[1::2] = labels & 1
    return bits


def upsample_nrz(symbols, sps, baud=BAUD):
    """Sample-and-hold each symbol ``sps`` times."""
    if sps < 1 or int(sps) != sps:
        raise ValueError(f"sps must be a positive integer, got {sps}")
    values = np.repeat(np.asarray(symbols, dtype=np.float64), int(sps))
    return SampledWaveform(values, sample_rate=sps * baud, sps=sps)


def normalize_power(w, target):
    p = w.power()
    if p == 0:
        raise ValueError("cannot normalize an all-zero waveform")
    return w.replace(w.values * math.sqrt(target / p))


def _rate_ratio(source, target):
    ratio = Fraction(target) / Fraction(source)
    if ratio.denominator > 100000:
        ratio = ratio.limit_denominator(100000)
    return ratio


def resize_spectrum(block, n_out):
    """Band-limited resize of one periodic block by spectral zero-pad/truncate."""
    n_in = block.shape[-1]
    real = not np.iscomplexobj(block)
    X = np.fft.rfft(block, axis=-1) if real else np.fft.fft(block, axis=-1)
    Y = _resize_bins(X, n_in, n_out, real)
    return _inverse(Y, n_in, n_out, real)


def _resize_bins(X, n_in, n_out, real):
    shape = X.shape[:-1] + ((n_out // 2 + 1) if real else n_out,)
    Y = np.zeros(shape, dtype=np.complex128)
    n = min(n_in, n_out)
    nyq = n // 2 + 1
    Y[..., :nyq] = X[..., :nyq]
    if not real and n > 2:
        Y[..., nyq - n:] = X[..., nyq - n:]
    if n % 2 == 0 and n_in != n_out:
        if n_out < n_in:
            if real:
                Y[..., n // 2] *= 2.0
            else:
                Y[..., -n // 2] += X[..., -n // 2]
        else:
            Y[..., n // 2] *= 0.5
            if not real:
                Y[..., n_out - n // 2] = Y[..., n // 2]
    return Y


def _inverse(Y, n_in, n_out, real):
    if real:
        return np.fft.irfft(Y, n_out, axis=-1) * (n_out / n_in)
    return np.fft.ifft(Y, n_out, axis=-1) * (n_out / n_in)


def resample(w, target_rate, delay=0.0, n_out=None, block=8192):
    """Rational band-limited resampling by overlap-save spectral resizing.

    Blocks of ``n_in`` input samples (a multiple of four times the ratio
    denominator, close to ``block``) are resized in the frequency domain
    with 50 % overlap; the central half of every output block is kept. The
    waveform is treated as periodic at its ends.

    ``delay`` shifts the output by a fractional amount of seconds,
    ``y(t) = x(t - delay)``. The default output length is
    ``ceil(len(w) * target_rate / sample_rate)``.
    """
    if not target_rate > 0:
        raise ValueError("target_rate must be positive")
    ratio = _rate_ratio(w.sample_rate, target_rate)
    up, down = ratio.numerator, ratio.denominator
    x = w.values
    if n_out is None:
        n_out = -(-len(x) * up // down)
    new_sps = w.sps * float(ratio)
    if up == down and delay == 0.0:
        out = np.take(x, np.arange(n_out), mode="wrap")
        return SampledWaveform(out, target_rate, new_sps)

    m = max(1, round(block / (4 * down)))
    n_in = 4 * down * m
    n_blk_out = n_in * up // down
    hop_in, hop_out = n_in // 2, n_blk_out // 2
    n_blocks = -(-n_out // hop_out)
    idx = np.arange(-(n_in // 4), (n_blocks - 1) * hop_in + 3 * n_in // 4)
    padded = np.take(x, idx, mode="wrap")
    frames = np.lib.stride_tricks.sliding_window_view(padded, n_in)[::hop_in]

    real = not np.iscomplexobj(x)
    X = np.fft.rfft(frames, axis=-1) if real else np.fft.fft(frames, axis=-1)
    Y = _resize_bins(X, n_in, n_blk_out, real)
    if delay:
        fs_in = w.sample_rate
        k = np.arange(Y.shape[-1])
        if not real:
            k = np.fft.fftfreq(n_blk_out, 1 / n_blk_out)
        Y = Y * np.exp(-2j * np.pi * k * (fs_in / n_in) * delay)
    out = _inverse(Y, n_in, n_blk_out, real)
    start = n_blk_out // 4
    out = out[:, start:start + hop_out].reshape(-1)[:n_out]
    return SampledWaveform(out, target_rate, new_sps)
