"""Experiment configuration and per-sequence simulation."""
from dataclasses import asdict, dataclass, field, fields, replace
import hashlib

import numpy as np

from .channel import (
    EamParams,
    FiberParams,
    LinkConfig,
    ReceiverParams,
    SoaParams,
    make_drive,
    receiver_normalize,
    run_link,
)
from .networks import EQUALIZERS, ESTIMATORS, NetworkSpec, make_estimator, Network
from .rng import child_seed
from .signal_core import BAUD, generate_bits, map_pam4
from .training import MODES, TrainingConfig


class ConfigError(ValueError):
    """Invalid experiment configuration; ``path`` names the offending key."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", path)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys {unknown}", path)
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path) from None


@dataclass(frozen=True)
class SignalSection:
    n_symbols: int = 2**19
    sps: int = 2
    baud: float = BAUD

    def __post_init__(self):
        if self.n_symbols < 1:
            raise ValueError("n_symbols must be >= 1")
        if self.sps != 2:
            raise ValueError("receiver processing runs at 2 samples per symbol")


@dataclass(frozen=True)
class EqualizerSection:
    topologies: tuple = ("cnn-small",)
    stateful: bool = False
    custom: tuple = ()

    def __post_init__(self):
        topologies = (self.topologies,) if isinstance(self.topologies, str) else tuple(self.topologies)
        custom = tuple(c if isinstance(c, NetworkSpec) else NetworkSpec.from_dict(c) for c in self.custom)
        names = {c.name for c in custom}
        for name in topologies:
            if name not in EQUALIZERS and name not in names:
                raise ValueError(f"unknown equalizer {name!r}")
        if not topologies:
            raise ValueError("at least one topology is required")
        object.__setattr__(self, "topologies", topologies)
        object.__setattr__(self, "custom", custom)

    def spec(self, name):
        for c in self.custom:
            if c.name == name:
                spec = c
                break
        else:
            spec = EQUALIZERS[name]
        if spec.kind == "gru" and self.stateful:
            spec = replace(spec, stateful=True)
        return spec


@dataclass(frozen=True)
class EstimatorSection:
    name: str = "netest"

    def __post_init__(self):
        if self.name not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.name!r}")


@dataclass(frozen=True)
class EvaluationSection:
    n_sequences: int = 15
    test_symbols: int = 50_000
    eval_period: int = 100
    last_estimates: int = 10
    max_delay: int = 64

    def __post_init__(self):
        if min(self.n_sequences, self.test_symbols, self.eval_period, self.last_estimates) < 1:
            raise ValueError("evaluation counts must be >= 1")
        if self.max_delay < 0:
            raise ValueError("max_delay must be >= 0")


@dataclass(frozen=True)
class OutputSection:
    directory: str = "out"
    formats: tuple = ("csv", "svg", "json")

    def __post_init__(self):
        formats = tuple(self.formats)
        bad = set(formats) - {"csv", "svg", "json"}
        if bad:
            raise ValueError(f"unsupported output formats {sorted(bad)}")
        object.__setattr__(self, "formats", formats)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 20240917
    signal: SignalSection = field(default_factory=SignalSection)
    link: LinkConfig = field(default_factory=LinkConfig)
    rops: tuple = (-8.0, -6.0, -4.0, -2.0, 0.0, 2.0)
    equalizer: EqualizerSection = field(default_factory=EqualizerSection)
    estimator: EstimatorSection = field(default_factory=EstimatorSection)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    modes: tuple = ("blind", "supervised")
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    output: OutputSection = field(default_factory=OutputSection)

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "rops", tuple(float(r) for r in self.rops))
        modes = (self.modes,) if isinstance(self.modes, str) else tuple(self.modes)
        if not modes or set(modes) - set(MODES):
            raise ValueError(f"modes must be a non-empty subset of {MODES}")
        object.__setattr__(self, "modes", modes)
        if self.training.eval_period != self.evaluation.eval_period:
            object.__setattr__(self, "training", replace(self.training, eval_period=self.evaluation.eval_period))

    # ------------------------------------------------------------ dict form
    def to_dict(self):
        link = self.link.to_dict()
        link.pop("baud")
        return {
            "seed": self.seed,
            "signal": asdict(self.signal),
            "channel": {**link, "rop_dbm": list(self.rops)},
            "equalizer": {
                "topologies": list(self.equalizer.topologies),
                "stateful": self.equalizer.stateful,
                "custom": [c.to_dict() for c in self.equalizer.custom],
            },
            "estimator": asdict(self.estimator),
            "training": {**self.training.to_dict(), "mode": list(self.modes)},
            "evaluation": asdict(self.evaluation),
            "output": {"directory": self.output.directory, "formats": list(self.output.formats)},
        }

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a mapping")
        top = {"seed", "signal", "channel", "equalizer", "estimator", "training", "evaluation", "output"}
        unknown = sorted(set(d) - top)
        if unknown:
            raise ConfigError(f"unknown keys {unknown}")
        kw = {}
        if "seed" in d:
            kw["seed"] = d["seed"]
        signal = _build(SignalSection, d.get("signal", {}), "signal")
        kw["signal"] = signal
        channel = dict(d.get("channel", {}))
        if "rop_dbm" in channel:
            kw["rops"] = channel.pop("rop_dbm")
        parts = {"eam": EamParams, "fiber": FiberParams, "soa": SoaParams, "receiver": ReceiverParams}
        for key, kind in parts.items():
            if key in channel:
                channel[key] = _build(kind, channel[key], f"channel.{key}")
        link_fields = {f.name for f in fields(LinkConfig)} - {"baud"}
        unknown = sorted(set(channel) - link_fields)
        if unknown:
            raise ConfigError(f"unknown keys {unknown}", "channel")
        try:
            kw["link"] = LinkConfig(baud=signal.baud, **channel)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), "channel") from None
        kw["equalizer"] = _build(EqualizerSection, d.get("equalizer", {}), "equalizer")
        kw["estimator"] = _build(EstimatorSection, d.get("estimator", {}), "estimator")
        training = dict(d.get("training", {}))
        if "mode" in training:
            kw["modes"] = training.pop("mode")
        kw["training"] = _build(TrainingConfig, training, "training")
        kw["evaluation"] = _build(EvaluationSection, d.get("evaluation", {}), "evaluation")
        kw["output"] = _build(OutputSection, d.get("output", {}), "output")
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class SequenceData:
    bits: np.ndarray
    symbols: np.ndarray
    drive: object      # SampledWaveform at the simulation rate
    received: object   # SampledWaveform at 2 sps, before normalization
    y: np.ndarray      # normalized 2-sps samples

    def checksum(self):
        return hashlib.sha256(np.ascontiguousarray(self.y).tobytes()).hexdigest()


def sequence_seeds(master, rop, index):
    """Child seeds for one recorded sequence: bit pattern and receiver noise."""
    return {
        "bits": child_seed(master, "bits", index),
        "noise": child_seed(master, f"noise@{float(rop)!r}", index),
    }


def simulate_sequence(cfg, rop, index):
    seeds = sequence_seeds(cfg.seed, rop, index)
    bits = generate_bits(cfg.signal.n_symbols, seeds["bits"])
    symbols = map_pam4(bits)
    drive = make_drive(symbols, cfg.link)
    received = run_link(drive, cfg.link, rop, seeds["noise"])
    y = receiver_normalize(received).values
    return SequenceData(bits, symbols, drive, received, y)


def init_networks(cfg, topology, index):
    """Freshly initialized equalizer and estimator for one training run."""
    eq = Network(cfg.equalizer.spec(topology), seed=child_seed(cfg.seed, f"init:{topology}", index))
    est = make_estimator(cfg.estimator.name, seed=child_seed(cfg.seed, "init-est", index))
    return eq, est
