import dataclasses
import json
import struct

import numpy as np
import pytest

from fsgcc_tde import dataset
from fsgcc_tde.config import ConfigError, ExperimentConfig, RunConfig, load_config
from fsgcc_tde.config import TestSweepConfig as SweepConfig
from fsgcc_tde.dataset import (DatasetManifest, build_dataset, check_clean_targets, near_midpoint,
                               speaker_of)
from fsgcc_tde.gcc import correlation_time
from fsgcc_tde.room import RoomSetup
from fsgcc_tde.sources import synth_speech_like
from fsgcc_tde.wavio import WavFormatError, load_wav, read_wav, write_wav


def small_config(seed=0, pairs=2, sources=2, **test_kw):
    test = dict(rooms=((6.0, 7.0, 3.0), (9.0, 8.0, 4.0)), t60_grid=(0.3,), n_mic_pairs=1,
                n_sources=1, frames_per_source=3, seed=seed + 1)
    test.update(test_kw)
    return RunConfig(experiment=ExperimentConfig(n_mic_pairs=pairs, n_sources=sources, seed=seed,
                                                 source_duration_s=0.5),
                     test=SweepConfig(**test))


# ------------------------------------------------------------------ WAV

def test_wav_round_trip_16_bit(tmp_path):
    x = np.random.default_rng(0).uniform(-1, 1, 1000)
    write_wav(tmp_path / "a.wav", x, 16000)
    y, rate = read_wav(tmp_path / "a.wav")
    assert rate == 16000 and y.shape == (1000, 1)
    assert np.max(np.abs(y[:, 0] - x)) <= 1 / 32768


def test_wav_round_trip_float(tmp_path):
    x = np.random.default_rng(1).uniform(-1, 1, 999)
    write_wav(tmp_path / "f.wav", x, 44100, bits=32)
    y, _ = read_wav(tmp_path / "f.wav")
    assert np.allclose(y[:, 0], x, atol=1e-7)


def test_sine_keeps_its_amplitude_and_square_normalises(tmp_path):
    t = np.arange(44100) / 44100
    write_wav(tmp_path / "sine.wav", 0.5 * np.sin(2 * np.pi * 1000 * t), 44100, bits=32)
    assert np.max(np.abs(read_wav(tmp_path / "sine.wav")[0])) == pytest.approx(0.5, abs=1e-4)  # sampled crest
    square = np.where(np.sin(2 * np.pi * 100 * t) >= 0, 1.0, -1.0)
    write_wav(tmp_path / "sq.wav", square, 44100)
    assert np.max(np.abs(load_wav(tmp_path / "sq.wav").samples)) == 1.0


def test_load_wav_takes_first_channel_and_resamples(tmp_path):
    frames = np.zeros((800, 2), dtype="<i2")
    frames[:, 0] = (8000 * np.sin(2 * np.pi * 440 * np.arange(800) / 16000)).astype("<i2")
    frames[:, 1] = 30000
    payload = frames.tobytes()
    fmt = struct.pack("<HHIIHH", 1, 2, 16000, 64000, 4, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    (tmp_path / "st.wav").write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    buf = load_wav(tmp_path / "st.wav", 44100)
    assert buf.sample_rate_hz == 44100 and len(buf) == 2205
    assert np.max(np.abs(buf.samples)) == pytest.approx(1.0)
    # the 440 Hz tone survives resampling
    spec = np.abs(np.fft.rfft(buf.samples))
    assert np.argmax(spec) * 44100 / len(buf) == pytest.approx(440, abs=25)


@pytest.mark.parametrize("blob,offset", [
    (b"RIFX" + b"\0" * 40, 0),
    (b"RIFF\0\0\0\0WAVX" + b"\0" * 30, 8),
    (b"RIFF", 4),
])
def test_malformed_headers_report_offsets(tmp_path, blob, offset):
    (tmp_path / "bad.wav").write_bytes(blob)
    with pytest.raises(WavFormatError) as err:
        read_wav(tmp_path / "bad.wav")
    assert err.value.offset == offset
    assert f"byte offset {offset}" in str(err.value)


def test_fmt_chunk_overrun_is_reported(tmp_path):
    body = b"WAVE" + b"fmt " + struct.pack("<I", 100) + b"\0" * 16
    (tmp_path / "bad.wav").write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(WavFormatError, match="offset 12"):
        read_wav(tmp_path / "bad.wav")


def test_speaker_labels():
    from pathlib import Path
    assert speaker_of(Path("84-121123-0001.wav")) == "84"
    assert speaker_of(Path("alice_03.wav")) == "alice"


# ------------------------------------------------------------ synthetic

def test_synthetic_source_correlation_time():
    for seed in range(20):
        x = synth_speech_like(1.0, seed)
        assert 12 <= correlation_time(x) <= 30


def test_synthetic_source_is_deterministic_and_never_silent():
    a, b = synth_speech_like(2.0, 4), synth_speech_like(2.0, 4)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, synth_speech_like(2.0, 5).samples)
    win = 4410
    x = a.samples[: len(a) // win * win].reshape(-1, win)
    assert np.all(np.sqrt(np.mean(x ** 2, axis=1)) > 1e-3)
    assert np.max(np.abs(a.samples)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        synth_speech_like(0.0, 1)


# --------------------------------------------------------------- config

def test_config_validation_and_loading(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig(snr_range_db=(20, -10))
    with pytest.raises(ConfigError):
        ExperimentConfig(n_mic_pairs=0)
    with pytest.raises(ConfigError):
        ExperimentConfig(mic_spacing_range=(0.1, 0.2))
    (tmp_path / "c.json").write_text(json.dumps({"experiment": {"n_mic_pairs": 3}}))
    assert load_config(tmp_path / "c.json").experiment.n_mic_pairs == 3
    (tmp_path / "u.json").write_text(json.dumps({"experiment": {"mics": 3}}))
    with pytest.raises(ConfigError, match="mics"):
        load_config(tmp_path / "u.json")
    (tmp_path / "j.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "j.json")


def test_config_round_trips_through_json():
    cfg = small_config(seed=3)
    from fsgcc_tde.config import from_dict
    assert from_dict(RunConfig, json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_default_source_length_gives_177_frames():
    from fsgcc_tde.dsp import frame_count
    exp = ExperimentConfig()
    n = int(round(exp.source_duration_s * exp.fs))
    assert frame_count(n, exp.frame_length, 512) == 177
    assert 5 * 5 * frame_count(n, exp.frame_length, 512) == 4425


# -------------------------------------------------------------- geometry

def test_placement_respects_clearances():
    rng = np.random.default_rng(0)
    dims = (6.0, 7.0, 3.0)
    pairs = [dataset.place_mic_pair(rng, dims, (0.3, 0.45), (1.0, 1.6), 0.5) for _ in range(20)]
    for m1, m2 in pairs:
        assert 0.3 - 1e-12 <= np.linalg.norm(m1 - m2) <= 0.45 + 1e-12
        for m in (m1, m2):
            assert np.all(m >= 0.5) and np.all(m <= np.array(dims) - 0.5)
    for _ in range(20):
        s = dataset.place_source(rng, dims, 1.25, 0.5, pairs)
        assert s[2] == 1.25
        for m1, m2 in pairs:
            assert min(np.linalg.norm(s - m1), np.linalg.norm(s - m2)) >= 0.5
            assert not near_midpoint(s, (m1, m2), 44100.0)
            setup = RoomSetup(dims, tuple(m1), tuple(m2), tuple(s))
            exact = (setup.distance(1) - setup.distance(2)) * 44100 / 343
            assert abs(abs(exact) % 1 - 0.5) >= 0.01


def test_test_cells_add_the_anechoic_case():
    cells = dataset.test_cells(SweepConfig(t60_grid=(0.2, 0.5)))
    assert cells == [(0.2, 20.0), (0.5, 20.0), (0.0, None)]


# --------------------------------------------------------------- corpora

def test_build_manifest_and_tensors(tmp_path):
    cfg = small_config()
    m = build_dataset(cfg, tmp_path)
    assert len(m.train) == 4 and not m.skipped
    assert len(m.test) == 2 * 2  # 2 rooms x (1 reverberant + anechoic) cells
    paths = list(m.tensor_paths())
    assert len(paths) == len({p for p, _ in paths}) == 2 * 4 + 4
    for rec in m.train:
        assert rec["shape"] == [32, 128]
        assert -rec["true_tdoa"] <= 64
    for rec in m.test:
        assert rec["shape"][1:] == [2, 2048]
        assert len(rec["frame_indices"]) == rec["shape"][0] == 3
    loaded = DatasetManifest.load(tmp_path)
    assert loaded.to_json() == m.to_json()
    noisy, clean = loaded.train_arrays()
    assert noisy.shape == clean.shape == (4, 32, 128)
    assert loaded.run_config() == cfg
    assert check_clean_targets(loaded) == []


def test_mismatched_room_keeps_relative_geometry(tmp_path):
    m = build_dataset(small_config(), tmp_path, with_train=False)
    by_room = {}
    for rec in m.test:
        by_room.setdefault(rec["room"], []).append(rec)
    a, b = by_room["6x7x3"][0], by_room["9x8x4"][0]
    shift = np.array([1.5, 0.5, 0.0])
    assert np.allclose(np.array(b["source_pos"]) - a["source_pos"], shift)
    assert np.allclose(np.array(b["mic_1"]) - a["mic_1"], shift)
    assert a["true_tdoa"] == b["true_tdoa"]


def test_manifest_validation_catches_damage(tmp_path):
    m = build_dataset(small_config(pairs=1, sources=1), tmp_path, with_test=False)
    target = tmp_path / m.train[0]["noisy"]
    target.write_bytes(target.read_bytes()[:-8])
    with pytest.raises(ValueError, match="bytes"):
        DatasetManifest.load(tmp_path)
    target.unlink()
    with pytest.raises(FileNotFoundError):
        DatasetManifest.load(tmp_path)
    (tmp_path / "manifest.json").write_text(json.dumps({"format": "other"}))
    with pytest.raises(ValueError):
        DatasetManifest.load(tmp_path)


def test_generation_is_reproducible(tmp_path):
    cfg = small_config(seed=9)
    a = build_dataset(cfg, tmp_path / "a")
    b = build_dataset(cfg, tmp_path / "b")
    assert (tmp_path / "a/manifest.json").read_bytes() == (tmp_path / "b/manifest.json").read_bytes()
    for rel, _ in a.tensor_paths():
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    c = build_dataset(small_config(seed=10), tmp_path / "c")
    assert c.to_json() != a.to_json()


def test_several_frames_per_rendering(tmp_path):
    one = build_dataset(small_config(pairs=1, sources=2), tmp_path / "one", with_test=False)
    base = small_config(pairs=1, sources=2)
    cfg = dataclasses.replace(base, experiment=dataclasses.replace(base.experiment, frames_per_pair=3))
    three = build_dataset(cfg, tmp_path / "three", with_test=False)
    assert len(three.train) == 6
    for s in range(2):
        recs = [r for r in three.train if r["source"] == s]
        frames = [r["frame_index"] for r in recs]
        assert frames[0] == one.train[s]["frame_index"]
        assert len(set(frames)) == 3
        assert {r["t60"] for r in recs} == {one.train[s]["t60"]}
    x1, _ = one.train_arrays()
    x3, _ = three.train_arrays()
    assert np.array_equal(x3[0], x1[0]) and np.array_equal(x3[3], x1[1])
    with pytest.raises(ConfigError):
        ExperimentConfig(frames_per_pair=0)


def test_short_sources_are_skipped(tmp_path, caplog):
    cfg = RunConfig(experiment=ExperimentConfig(n_mic_pairs=1, n_sources=2, source_duration_s=0.03))
    m = build_dataset(cfg, tmp_path, with_test=False)
    assert m.train == [] and len(m.skipped) == 2
    assert "shorter than one frame" in caplog.text


def test_wav_sources_with_speaker_filter(tmp_path):
    src = tmp_path / "wavs"
    src.mkdir()
    for name, seed in (("spk1-a.wav", 1), ("spk2-a.wav", 2)):
        write_wav(src / name, synth_speech_like(0.3, seed).samples, 44100)
    bank = dataset.source_bank(3, 0, 0, 44100.0, 1.0, str(src), ("spk2",))
    assert [label for label, _ in bank] == ["spk2-a.wav"] * 3
    with pytest.raises(ConfigError):
        dataset.source_bank(1, 0, 0, 44100.0, 1.0, str(src), ("nobody",))
