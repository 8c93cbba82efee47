"""Bit-exact binary artifacts: waveforms, weights, training traces and the manifest."""
import hashlib
import json
import os
import struct

import numpy as np

from .autodiff import ParameterSet
from .networks import parameter_shapes
from .signal_core import SampledWaveform
from .training import TrainingTelemetry

VERSION = 1

# magic, version, flags (bit 0: complex), sample_rate, sps, length
_WAVE = struct.Struct("<4sHHddQ")
WAVE_MAGIC = b"PBWV"
# magic, version, reserved, sha256 of the topology, parameter count
_WEIGHTS = struct.Struct("<4sHH32sQ")
WEIGHTS_MAGIC = b"PBWT"
# magic, version, columns per iteration, iterations, periodic evaluations
_TRACE = struct.Struct("<4sHHQQ")
TRACE_MAGIC = b"PBTR"
TRACE_COLUMNS = ("loss", "commitment", "reconstruction", "beta", "lr")


class FormatError(ValueError):
    pass


def _check_header(path, magic, got_magic, version):
    if got_magic != magic:
        raise FormatError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")


def _read(path, header):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < header.size:
        raise FormatError(f"{path}: truncated header")
    return header.unpack_from(blob), blob[header.size:]


def _floats(path, body, count):
    if len(body) != 8 * count:
        raise FormatError(f"{path}: body holds {len(body)} bytes, expected {8 * count}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64)


# ------------------------------------------------------------------ waveforms

def write_waveform(path, wf):
    values = wf.values
    is_complex = np.iscomplexobj(values)
    body = values.view(np.float64) if is_complex else values
    with open(path, "wb") as fh:
        fh.write(_WAVE.pack(WAVE_MAGIC, VERSION, int(is_complex), wf.sample_rate, wf.sps, values.size))
        fh.write(np.ascontiguousarray(body, dtype="<f8").tobytes())


def read_waveform(path):
    (magic, version, flags, rate, sps, n), body = _read(path, _WAVE)
    _check_header(path, WAVE_MAGIC, magic, version)
    is_complex = bool(flags & 1)
    data = _floats(path, body, 2 * n if is_complex else n)
    values = data.view(np.complex128) if is_complex else data
    return SampledWaveform(values, rate, sps)


# ------------------------------------------------------------------ weights

def write_weights(path, network):
    theta = network.params.theta
    digest = network.spec.topology_hash()
    with open(path, "wb") as fh:
        fh.write(_WEIGHTS.pack(WEIGHTS_MAGIC, VERSION, 0, digest, theta.size))
        fh.write(np.ascontiguousarray(theta, dtype="<f8").tobytes())


def read_weights(path, spec):
    """ParameterSet for ``spec``; refuses files written for another topology."""
    (magic, version, _, digest, count), body = _read(path, _WEIGHTS)
    _check_header(path, WEIGHTS_MAGIC, magic, version)
    if digest != spec.topology_hash():
        raise FormatError(f"{path}: weights belong to a different topology than {spec.name!r}")
    shapes = parameter_shapes(spec)
    params = ParameterSet(shapes)
    if count != params.size:
        raise FormatError(f"{path}: {count} parameters, topology needs {params.size}")
    params.theta[:] = _floats(path, body, count)
    return params


# ------------------------------------------------------------------ telemetry

def write_trace(path, tel):
    rows = np.column_stack([np.asarray(getattr(tel, c), dtype=np.float64) for c in TRACE_COLUMNS]) \
        if len(tel) else np.zeros((0, len(TRACE_COLUMNS)))
    evals = np.asarray(tel.eval_iterations, dtype="<i8")
    with open(path, "wb") as fh:
        fh.write(_TRACE.pack(TRACE_MAGIC, VERSION, len(TRACE_COLUMNS), len(tel), evals.size))
        fh.write(np.ascontiguousarray(rows, dtype="<f8").tobytes())
        fh.write(evals.tobytes())
        fh.write(np.asarray(tel.ber, dtype="<f8").tobytes())


def read_trace(path):
    (magic, version, ncol, n, n_eval), body = _read(path, _TRACE)
    _check_header(path, TRACE_MAGIC, magic, version)
    if ncol != len(TRACE_COLUMNS):
        raise FormatError(f"{path}: {ncol} columns, expected {len(TRACE_COLUMNS)}")
    split = 8 * ncol * n
    if len(body) != split + 16 * n_eval:
        raise FormatError(f"{path}: body length does not match header")
    rows = np.frombuffer(body[:split], dtype="<f8").reshape(n, ncol)
    evals = np.frombuffer(body[split:split + 8 * n_eval], dtype="<i8")
    ber = np.frombuffer(body[split + 8 * n_eval:], dtype="<f8")
    tel = TrainingTelemetry()
    for j, c in enumerate(TRACE_COLUMNS):
        setattr(tel, c, rows[:, j].tolist())
    tel.eval_iterations = [int(v) for v in evals]
    tel.ber = ber.tolist()
    return tel


def write_log(path, tel):
    with open(path, "w", encoding="utf-8") as fh:
        for line in tel.log_lines():
            fh.write(line + "\n")


# ------------------------------------------------------------------ manifest

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(directory, paths, name="manifest.json"):
    entries = []
    for p in sorted(set(os.path.relpath(p, directory) for p in paths)):
        full = os.path.join(directory, p)
        entries.append({"path": p.replace(os.sep, "/"), "sha256": sha256_file(full),
                        "bytes": os.path.getsize(full)})
    target = os.path.join(directory, name)
    with open(target, "w", encoding="utf-8") as fh:
        json.dump({"version": VERSION, "artifacts": entries}, fh, indent=1)
        fh.write("\n")
    return target


def verify_manifest(path):
    """Paths whose content no longer matches the recorded hash (missing files included)."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    root = os.path.dirname(os.path.abspath(path))
    bad = []
    for e in doc["artifacts"]:
        full = os.path.join(root, e["path"])
        if not os.path.exists(full) or sha256_file(full) != e["sha256"]:
            bad.append(e["path"])
    return bad
