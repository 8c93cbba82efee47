import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pamblind.formats import (
    FormatError,
    read_trace,
    read_waveform,
    read_weights,
    sha256_file,
    verify_manifest,
    write_manifest,
    write_trace,
    write_waveform,
    write_weights,
)
from pamblind.networks import EQUALIZERS, make_equalizer
from pamblind.signal_core import SampledWaveform
from pamblind.training import TrainingTelemetry

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.integers(1, 200), elements=finite), st.floats(1e3, 1e12), st.sampled_from([1.0, 2.0, 8.0]))
def test_real_waveform_round_trip(tmp_path_factory, values, rate, sps):
    path = tmp_path_factory.mktemp("w") / "x.pbw"
    write_waveform(path, SampledWaveform(values, rate, sps))
    back = read_waveform(path)
    assert back.values.tobytes() == values.tobytes()
    assert (back.sample_rate, back.sps, back.is_complex) == (rate, sps, False)


def test_complex_waveform_round_trip(tmp_path):
    v = np.arange(6) + 1j * np.arange(6)[::-1]
    write_waveform(tmp_path / "c.pbw", SampledWaveform(v, 4.48e11, 8))
    back = read_waveform(tmp_path / "c.pbw")
    assert back.is_complex and np.array_equal(back.values, v)


def test_waveform_header_layout(tmp_path):
    write_waveform(tmp_path / "h.pbw", SampledWaveform([1.0, -2.0], 112e9, 2))
    blob = (tmp_path / "h.pbw").read_bytes()
    magic, version, flags, rate, sps, n = struct.unpack_from("<4sHHddQ", blob)
    assert (magic, version, flags, rate, sps, n) == (b"PBWV", 1, 0, 112e9, 2.0, 2)
    assert blob[32:] == struct.pack("<2d", 1.0, -2.0)


def test_waveform_rejects_corruption(tmp_path):
    p = tmp_path / "bad.pbw"
    write_waveform(p, SampledWaveform(np.ones(4), 1.0, 1))
    blob = p.read_bytes()
    p.write_bytes(blob[:-8])
    with pytest.raises(FormatError):
        read_waveform(p)
    p.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(FormatError):
        read_waveform(p)


@pytest.mark.parametrize("name", sorted(EQUALIZERS))
def test_weights_round_trip(tmp_path, name):
    net = make_equalizer(name, seed=3)
    net.params.theta[:] += np.linspace(-1, 1, net.params.size)
    write_weights(tmp_path / "w.pbwt", net)
    params = read_weights(tmp_path / "w.pbwt", net.spec)
    assert params.theta.tobytes() == net.params.theta.tobytes()
    size = os.path.getsize(tmp_path / "w.pbwt")
    assert size == 48 + 8 * net.n_params


def test_weights_refuse_other_topology(tmp_path):
    write_weights(tmp_path / "w.pbwt", make_equalizer("cnn-small"))
    with pytest.raises(FormatError):
        read_weights(tmp_path / "w.pbwt", EQUALIZERS["cnn-small-tanh"])


def test_trace_round_trip(tmp_path):
    tel = TrainingTelemetry()
    for i in range(25):
        tel.loss.append(1.0 / (i + 1))
        tel.commitment.append(0.5 / (i + 1))
        tel.reconstruction.append(float("nan") if i % 2 else 0.1)
        tel.beta.append(0.2)
        tel.lr.append(2e-3)
    tel.eval_iterations = [10, 20]
    tel.ber = [0.1, 0.01]
    write_trace(tmp_path / "t.pbtr", tel)
    back = read_trace(tmp_path / "t.pbtr")
    assert back.loss == tel.loss and back.ber == tel.ber and back.eval_iterations == tel.eval_iterations
    assert np.array_equal(np.array(back.reconstruction), np.array(tel.reconstruction), equal_nan=True)


def test_manifest_hashes(tmp_path):
    import hashlib
    files = []
    for i in range(3):
        p = tmp_path / f"f{i}.bin"
        p.write_bytes(bytes([i]) * (i + 1))
        files.append(str(p))
    m = write_manifest(str(tmp_path), files)
    assert verify_manifest(m) == []
    assert sha256_file(files[1]) == hashlib.sha256(b"\x01\x01").hexdigest()
    (tmp_path / "f1.bin").write_bytes(b"changed")
    assert verify_manifest(m) == ["f1.bin"]
