"""Upstream IM/DD link: EAM, fiber dispersion, VOA, SOA, optical filter, photodiode.

Optical stages operate on the complex baseband field sampled at
``sim_sps`` samples per symbol. Linear filters are applied with one FFT
over the whole record, i.e. the simulated sequence is treated as periodic.
"""
from dataclasses import asdict, dataclass, field, replace
import math

import numba
import numpy as np
from scipy.optimize import brentq

from .rng import make_rng
from .signal_core import BAUD, SCALE, SampledWaveform, resample, upsample_nrz

C_LIGHT = 299792458.0


class NumericInstabilityError(RuntimeError):
    pass


def dbm_to_watts(dbm):
    return 10 ** ((dbm - 30) / 10)


def watts_to_dbm(p):
    return 10 * math.log10(p) + 30


@dataclass(frozen=True)
class FiberParams:
    dispersion_D: float = 15.5   # ps/(nm km)
    length_L: float = 2.2        # km
    wavelength: float = 1540.0   # nm

    def __post_init__(self):
        if not self.wavelength > 0:
            raise ValueError("wavelength must be positive")
        if self.length_L < 0:
            raise ValueError("fiber length must be non-negative")

    @property
    def beta2(self):
        """Group-velocity dispersion in s^2/m; D > 0 maps to beta2 < 0."""
        lam = self.wavelength * 1e-9
        return -(self.dispersion_D * 1e-6) * lam**2 / (2 * math.pi * C_LIGHT)


@dataclass(frozen=True)
class EamParams:
    """Shifted-tanh power transfer with an extinction floor.

    ``model="linear"`` replaces the transfer by ``P_max * (v - bias) / v_scale``
    (clipped at zero, no floor) for impairment-free reference runs.
    """

    v_scale: float = 0.7            # V
    extinction_ratio: float = 10.0  # dB
    bias: float = 0.0               # V
    max_output_power: float = 6.0   # dBm
    chirp: float = 0.0              # static alpha parameter
    model: str = "tanh"

    def __post_init__(self):
        if not self.extinction_ratio > 0:
            raise ValueError("extinction_ratio must be positive")
        if not self.v_scale > 0:
            raise ValueError("v_scale must be positive")
        if self.model not in ("tanh", "linear"):
            raise ValueError(f"unknown EAM model {self.model!r}")

    def transfer(self, v):
        p_max = dbm_to_watts(self.max_output_power)
        v = np.asarray(v, dtype=np.float64)
        if self.model == "linear":
            return p_max * np.maximum((v - self.bias) / self.v_scale, 0.0)
        p = p_max * 0.5 * (1 + np.tanh((v - self.bias) / self.v_scale))
        return np.maximum(p, p_max * 10 ** (-self.extinction_ratio / 10))


@dataclass(frozen=True)
class SoaParams:
    small_signal_gain_dB: float = 17.0
    saturation_energy: float = 6.94e-12  # J
    carrier_lifetime: float = 200e-12    # s

    def __post_init__(self):
        if self.small_signal_gain_dB < 0:
            raise ValueError("small_signal_gain_dB must be >= 0")
        if not (self.saturation_energy > 0 and self.carrier_lifetime > 0):
            raise ValueError("saturation_energy and carrier_lifetime must be positive")

    @classmethod
    def from_compression(cls, small_signal_gain_dB=17.0, carrier_lifetime=200e-12, p3db_dbm=0.0):
        """Choose ``saturation_energy`` so the CW gain is 3 dB compressed at ``p3db_dbm`` input.

        From the steady state ``h0 - h = (e^h - 1) P tau / E_sat`` with
        ``h = h0 - ln 2``.
        """
        g0 = 10 ** (small_signal_gain_dB / 10)
        p = dbm_to_watts(p3db_dbm)
        p_sat = (g0 / 2 - 1) * p / math.log(2)
        return cls(small_signal_gain_dB, p_sat * carrier_lifetime, carrier_lifetime)

    @property
    def h0(self):
        return self.small_signal_gain_dB / 10 * math.log(10)

    def steady_state_h(self, p_in):
        """CW integrated gain ``h`` for constant input power ``p_in`` (W)."""
        h0 = self.h0
        k = p_in * self.carrier_lifetime / self.saturation_energy
        if h0 == 0 or k == 0:
            return h0
        return brentq(lambda h: h0 - h - (math.exp(h) - 1) * k, 0.0, h0, xtol=1e-15, rtol=1e-15)


@dataclass(frozen=True)
class ReceiverParams:
    responsivity: float = 0.7             # A/W
    electrical_bandwidth: float = 33e9    # Hz
    noise_spectral_density: float = 3e-9  # A/sqrt(Hz)
    adc_rate: float = 80e9                # Sa/s

    def __post_init__(self):
        if not (self.responsivity > 0 and self.electrical_bandwidth > 0 and self.adc_rate > 0):
            raise ValueError("receiver parameters must be positive")
        if self.noise_spectral_density < 0:
            raise ValueError("noise_spectral_density must be non-negative")
        if self.electrical_bandwidth > self.adc_rate / 2:
            raise ValueError("electrical bandwidth exceeds ADC Nyquist")


@dataclass(frozen=True)
class LinkConfig:
    """Full channel configuration.

    ``optical_bandwidth`` of ``None`` disables the optical band-pass;
    ``timing_offset`` is a static sampling offset in fractions of a symbol.
    """

    eam: EamParams = field(default_factory=EamParams)
    fiber: FiberParams = field(default_factory=FiberParams)
    soa: SoaParams = field(default_factory=SoaParams.from_compression)
    receiver: ReceiverParams = field(default_factory=ReceiverParams)
    baud: float = BAUD
    sim_sps: int = 8
    vpp: float = 2.0
    transmit_power_dbm: float = 3.9
    optical_bandwidth: float | None = 378.9e9  # 3 nm at 1540 nm
    timing_offset: float = 0.0

    def __post_init__(self):
        if self.sim_sps < 4:
            raise ValueError("optics need at least 4 samples per symbol")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        parts = {
            "eam": EamParams, "fiber": FiberParams,
            "soa": SoaParams, "receiver": ReceiverParams,
        }
        for key, kind in parts.items():
            if key in d and isinstance(d[key], dict):
                d[key] = kind(**d[key])
        return cls(**d)

    def with_(self, **changes):
        return replace(self, **changes)


def make_drive(symbols, cfg):
    """NRZ DAC waveform at ``cfg.sim_sps`` with the configured peak-to-peak swing."""
    v = np.asarray(symbols) * (cfg.vpp / 2) / (3 * SCALE)
    return upsample_nrz(v, cfg.sim_sps, cfg.baud)


def eam_modulate(drive, p, transmit_power_dbm=None):
    """Optical field ``sqrt(P(v))`` of the modulator.

    With ``transmit_power_dbm`` the field is rescaled so its mean power
    matches that value (transmitter calibration).
    """
    if drive.is_complex:
        raise ValueError("EAM drive must be real-valued")
    power = p.transfer(drive.values)
    if transmit_power_dbm is not None:
        power = power * (dbm_to_watts(transmit_power_dbm) / power.mean())
    e = np.sqrt(power).astype(np.complex128)
    if p.chirp:
        with np.errstate(divide="ignore"):
            phase = 0.5 * p.chirp * np.log(np.maximum(power, 1e-300) / power.max())
        e = e * np.exp(1j * phase)
    return drive.replace(e)


def _omega(n, sample_rate):
    return 2 * np.pi * np.fft.fftfreq(n, 1 / sample_rate)


def apply_cd(field, f):
    """All-pass dispersion ``H(w) = exp(+j beta2/2 w^2 L)``."""
    w = _omega(len(field), field.sample_rate)
    h = np.exp(0.5j * f.beta2 * w**2 * (f.length_L * 1e3))
    return field.replace(np.fft.ifft(np.fft.fft(field.values) * h))


def voa_set_rop(field, rop_dbm):
    target = dbm_to_watts(rop_dbm)
    p = field.power()
    if target > p * (1 + 1e-12):
        raise ValueError(
            f"VOA cannot amplify: ROP {rop_dbm:.2f} dBm exceeds input power {watts_to_dbm(p):.2f} dBm"
        )
    return field.replace(field.values * math.sqrt(target / p))


@numba.njit(cache=True)
def _soa_rk4(p_in, dt, h0, tau, esat, h_init):
    n = p_in.size
    h = np.empty(n)
    h[0] = h_init
    max_step = 0.0

    for k in range(n - 1):
        p0 = p_in[k]
        p1 = p_in[k + 1]
        pm = 0.5 * (p0 + p1)
        hk = h[k]
        k1 = (h0 - hk) / tau - (np.exp(hk) - 1.0) * p0 / esat
        y = hk + 0.5 * dt * k1
        k2 = (h0 - y) / tau - (np.exp(y) - 1.0) * pm / esat
        y = hk + 0.5 * dt * k2
        k3 = (h0 - y) / tau - (np.exp(y) - 1.0) * pm / esat
        y = hk + dt * k3
        k4 = (h0 - y) / tau - (np.exp(y) - 1.0) * p1 / esat
        step = dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        h[k + 1] = hk + step
        if abs(step) > max_step:
            max_step = abs(step)
    return h, max_step


def soa_gain_trace(field, p):
    """Integrated gain ``h(t)`` of the reservoir model for the input ``field``."""
    p_in = np.abs(field.values) ** 2
    h_init = p.steady_state_h(float(p_in.mean()))
    h, max_step = _soa_rk4(p_in, 1 / field.sample_rate, p.h0, p.carrier_lifetime,
                           p.saturation_energy, h_init)
    if max_step > 0.1:
        raise NumericInstabilityError(
            f"SOA gain changed by {max_step:.3g} in one step; use a finer sampling rate"
        )
    return h


def soa_amplify(field, p):
    h = soa_gain_trace(field, p)
    return field.replace(field.values * np.exp(h / 2))


def brickwall_lowpass(w, cutoff):
    """Zero all spectral content above ``cutoff`` Hz (two-sided band +-cutoff)."""
    freqs = np.fft.fftfreq(len(w), 1 / w.sample_rate)
    if cutoff >= np.max(np.abs(freqs)):
        return w
    if w.is_complex:
        spec = np.fft.fft(w.values)
        spec[np.abs(freqs) > cutoff] = 0
        return w.replace(np.fft.ifft(spec))
    spec = np.fft.rfft(w.values)
    spec[np.fft.rfftfreq(len(w), 1 / w.sample_rate) > cutoff] = 0
    return w.replace(np.fft.irfft(spec, len(w)))


def optical_bandpass(field, bandwidth):
    """Ideal band-pass of total width ``bandwidth`` centred on the carrier."""
    if bandwidth is None or bandwidth >= field.sample_rate:
        return field
    return brickwall_lowpass(field, bandwidth / 2)


def photodetect(field, r, seed):
    """Square-law detection, additive thermal noise, electrical low-pass, ADC.

    The noise is white with single-sided density ``noise_spectral_density``,
    so its variance after the low-pass is ``density**2 * bandwidth``.
    """
    current = r.responsivity * np.abs(field.values) ** 2
    if r.noise_spectral_density > 0:
        rng = make_rng(seed)
        sigma = r.noise_spectral_density * math.sqrt(field.sample_rate / 2)
        current = current + rng.normal(0.0, sigma, size=current.size)
    w = SampledWaveform(current, field.sample_rate, field.sps)
    w = brickwall_lowpass(w, r.electrical_bandwidth)
    return resample(w, r.adc_rate)


def optical_front(tx_drive, cfg, rop):
    """Field at the SOA input: EAM, fiber, VOA (``rop=None`` keeps 0 dB)."""
    field = eam_modulate(tx_drive, cfg.eam, cfg.transmit_power_dbm)
    if cfg.fiber.length_L:
        field = apply_cd(field, cfg.fiber)
    if rop is not None:
        field = voa_set_rop(field, rop)
    return field


def run_link(tx_drive, cfg, rop, seed):
    """Received photocurrent resampled to exactly 2 samples per symbol."""
    n_sym = len(tx_drive) // cfg.sim_sps
    field = optical_front(tx_drive, cfg, rop)
    field = soa_amplify(field, cfg.soa)
    field = optical_bandpass(field, cfg.optical_bandwidth)
    rx = photodetect(field, cfg.receiver, seed)
    return resample(rx, 2 * cfg.baud, delay=cfg.timing_offset / cfg.baud, n_out=2 * n_sym)


def receiver_normalize(y):
    """AC coupling and automatic gain control: zero mean, unit mean power."""
    v = y.values - y.values.mean()
    p = np.mean(v**2)
    if p == 0:
        raise ValueError("received waveform has no AC content")
    return y.replace(v / math.sqrt(p))
