"""Simulated training pairs and test frames, stored as raw float64 tensors.

A dataset root holds ``manifest.json`` plus ``train/`` and ``test/``
directories of little-endian float64 files (row-major, no header). Paths
in the manifest are relative to the root.

Training example: for one (mic pair, source) combination, the FS-GCC
magnitude of the highest-energy frame under a random (T60, SNR) and the
same frame rendered anechoic and noise-free, both cropped to
``crop_width`` central lags.

Test record: raw two-channel time frames of one (room, T60, SNR, pair,
source) setup, so every method starts from identical samples.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, RunConfig, TestSweepConfig
from .dsp import SampleBuffer, fft, frame_count, frame_signal, get_window, hop_from_overlap
from .fsgcc import FsGccConfig, band_average_tdoa, crop_lags, fs_gcc_from_phat
from .gcc import correlation_time, phat_spectrum
from .parallel import pmap
from .room import RoomSetup, image_source_rir, render_mic_signals, true_tdoa
from .sources import synth_speech_like
from .wavio import load_wav

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "fsgcc-dataset"
MANIFEST_VERSION = 1
TENSOR_DTYPE = "<f8"
SOURCE_MIC_CLEARANCE = 0.5
# exact delays this close to a rounding midpoint make the integer label ill-posed
MIDPOINT_MARGIN = 0.01
MAX_PLACEMENT_TRIES = 100_000

# stream tags for independent random streams
_GEOMETRY, _CONDITIONS, _NOISE, _SOURCE, _FRAMES = 1, 2, 3, 4, 5


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *map(int, tags)])


def _stream_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, tags)]).generate_state(1)[0])


# ---------------------------------------------------------------- geometry

def place_mic_pair(rng, room_dims, spacing_range, height_range, clearance):
    """Horizontal pair with a random centre, spacing and azimuth."""
    dims = np.asarray(room_dims, dtype=float)
    zlo = max(height_range[0], clearance)
    zhi = min(height_range[1], dims[2] - clearance)
    if zlo > zhi:
        raise ConfigError("mic height range does not fit inside the room")
    for _ in range(MAX_PLACEMENT_TRIES):
        d = rng.uniform(*spacing_range)
        az = rng.uniform(0.0, 2.0 * np.pi)
        centre = np.array([rng.uniform(clearance, dims[0] - clearance),
                           rng.uniform(clearance, dims[1] - clearance),
                           rng.uniform(zlo, zhi)])
        half = 0.5 * d * np.array([np.cos(az), np.sin(az), 0.0])
        m1, m2 = centre - half, centre + half
        if all(np.all(m >= clearance) and np.all(m <= dims - clearance) for m in (m1, m2)):
            return m1, m2
    raise ConfigError("could not place a microphone pair; room too small")


def near_midpoint(source, pair, fs: float, c: float = 343.0) -> bool:
    delay = (np.linalg.norm(source - pair[0]) - np.linalg.norm(source - pair[1])) * fs / c
    return abs(abs(delay) % 1.0 - 0.5) < MIDPOINT_MARGIN


def place_source(rng, room_dims, height, clearance, pairs, fs: float = 44100.0):
    """Source on the plane z = height, clear of walls and mics, with a
    well-posed rounded TDoA for every pair."""
    dims = np.asarray(room_dims, dtype=float)
    if not clearance <= height <= dims[2] - clearance:
        raise ConfigError("source height violates the wall clearance")
    mics = [m for p in pairs for m in p]
    for _ in range(MAX_PLACEMENT_TRIES):
        s = np.array([rng.uniform(clearance, dims[0] - clearance),
                      rng.uniform(clearance, dims[1] - clearance), height])
        if any(np.linalg.norm(s - m) < SOURCE_MIC_CLEARANCE for m in mics):
            continue
        if any(near_midpoint(s, p, fs) for p in pairs):
            continue
        return s
    raise ConfigError("could not place a source away from the microphones")


def _geometry(seed, room_dims, n_pairs, n_sources, spacing_range, height_range, clearance, z, fs):
    rng = _rng(seed, _GEOMETRY)
    pairs = [place_mic_pair(rng, room_dims, spacing_range, height_range, clearance)
             for _ in range(n_pairs)]
    sources = [place_source(rng, room_dims, z, clearance, pairs, fs) for _ in range(n_sources)]
    return pairs, sources


# ----------------------------------------------------------------- sources

def speaker_of(path: Path) -> str:
    """Speaker label: the file stem up to the first '-' or '_'."""
    return path.stem.replace("_", "-").split("-")[0]


def source_bank(n: int, role: int, seed: int, fs: float, duration_s: float,
                source_dir: str | None = None, speakers: tuple | None = None):
    """``n`` (label, SampleBuffer) utterances, synthetic unless ``source_dir`` is set.

    With ``speakers`` only files whose speaker label is listed are used,
    which keeps training and test talkers apart.
    """
    if source_dir is None:
        return [(f"synth:{_stream_seed(seed, _SOURCE, role, i)}",
                 synth_speech_like(duration_s, _stream_seed(seed, _SOURCE, role, i), fs))
                for i in range(n)]
    files = sorted(Path(source_dir).glob("*.wav"))
    if speakers is not None:
        wanted = {str(s) for s in speakers}
        files = [f for f in files if speaker_of(f) in wanted]
    if not files:
        raise ConfigError(f"no usable WAV files in {source_dir}")
    bank = []
    for i in range(n):
        f = files[i % len(files)]
        bank.append((f.name, load_wav(f, fs)))
    return bank


# -------------------------------------------------------------- transforms

def frame_spectra(frames: np.ndarray, window_kind: str = "hann") -> np.ndarray:
    """Windowed DFT of time frames along the last axis."""
    return fft(frames * get_window(window_kind, frames.shape[-1]))


def fsgcc_magnitude(frame_pair: np.ndarray, config: FsGccConfig, crop_width: int) -> np.ndarray:
    """Cropped |FS-GCC| of frames shaped (..., 2, N)."""
    spec = frame_spectra(frame_pair)
    psi = phat_spectrum(spec[..., 0, :], spec[..., 1, :])
    return np.abs(crop_lags(fs_gcc_from_phat(psi, config), crop_width))


def loudest_frame(x: np.ndarray, frame_length: int, hop: int) -> int:
    frames = frame_signal(x, frame_length, hop)
    return int(np.argmax(np.einsum("ij,ij->i", frames, frames)))


# ---------------------------------------------------------------- manifest

@dataclass
class DatasetManifest:
    root: Path
    config: dict
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def to_json(self) -> str:
        body = {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "tensor_dtype": TENSOR_DTYPE,
                "config": self.config,
                "config_digest": hashlib.sha256(
                    json.dumps(self.config, sort_keys=True).encode()).hexdigest()[:16],
                "train": self.train, "test": self.test, "skipped": self.skipped}
        return json.dumps(body, indent=1, sort_keys=True) + "\n"

    def save(self) -> Path:
        path = self.root / MANIFEST_NAME
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, root) -> "DatasetManifest":
        root = Path(root)
        path = root / MANIFEST_NAME
        try:
            data = json.loads(path.read_text())
        except OSError as exc:
            raise FileNotFoundError(f"no dataset manifest at {path}") from exc
        if data.get("format") != MANIFEST_FORMAT or data.get("version") != MANIFEST_VERSION:
            raise ValueError(f"{path} is not a version-{MANIFEST_VERSION} dataset manifest")
        m = cls(root, data["config"], data["train"], data["test"], data.get("skipped", []))
        m.validate()
        return m

    def tensor_paths(self):
        for rec in self.train:
            yield rec["noisy"], tuple(rec["shape"])
            yield rec["clean"], tuple(rec["shape"])
        for rec in self.test:
            yield rec["frames"], tuple(rec["shape"])

    def validate(self) -> None:
        for rel, shape in self.tensor_paths():
            p = self.root / rel
            if not p.is_file():
                raise FileNotFoundError(f"manifest references missing tensor {rel}")
            expect = 8 * math.prod(shape)
            if p.stat().st_size != expect:
                raise ValueError(f"{rel}: {p.stat().st_size} bytes, expected {expect} for {shape}")

    def read(self, rel: str, shape) -> np.ndarray:
        return np.fromfile(self.root / rel, dtype=TENSOR_DTYPE).reshape(shape)

    def train_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(noisy, clean) stacks shaped (n, L, crop_width)."""
        if not self.train:
            raise ValueError("dataset has no training examples")
        noisy = np.stack([self.read(r["noisy"], r["shape"]) for r in self.train])
        clean = np.stack([self.read(r["clean"], r["shape"]) for r in self.train])
        return noisy, clean

    def run_config(self) -> RunConfig:
        from .config import from_dict
        return from_dict(RunConfig, self.config)


def _write(root: Path, rel: str, arr: np.ndarray) -> None:
    np.ascontiguousarray(arr, dtype=TENSOR_DTYPE).tofile(root / rel)


# ---------------------------------------------------------------- training

def _train_job(job):
    exp: ExperimentConfig = job["exp"]
    signal: SampleBuffer = job["signal"]
    hop = hop_from_overlap(exp.frame_length, exp.overlap)
    noisy_setup = RoomSetup(exp.room_dims, job["mic_1"], job["mic_2"], job["source"],
                            job["t60"], job["snr_db"], fs=exp.fs)
    clean_setup = RoomSetup(exp.room_dims, job["mic_1"], job["mic_2"], job["source"], 0.0,
                            math.inf, fs=exp.fs)
    out = {}
    for tag, setup, seed in (("noisy", noisy_setup, job["noise_seed"]), ("clean", clean_setup, 0)):
        y1, y2 = render_mic_signals(setup, signal, noise_seed=seed)
        pairs = [np.stack([y1.samples[k * hop:k * hop + exp.frame_length],
                           y2.samples[k * hop:k * hop + exp.frame_length]]) for k in job["frames"]]
        out[tag] = fsgcc_magnitude(np.stack(pairs), exp.fsgcc, exp.crop_width)
    out["true_tdoa"] = true_tdoa(clean_setup)
    return out


def _training_frames(x: np.ndarray, exp: ExperimentConfig, hop: int, pair: int, source: int) -> list:
    """The loudest frame, then distinct seeded random ones up to ``frames_per_pair``."""
    first = loudest_frame(x, exp.frame_length, hop)
    others = [k for k in range(frame_count(len(x), exp.frame_length, hop)) if k != first]
    extra = min(exp.frames_per_pair - 1, len(others))
    picks = _rng(exp.seed, _FRAMES, pair, source).choice(len(others), size=extra, replace=False)
    return [first] + [others[i] for i in sorted(picks)]


def generate_pairs(exp: ExperimentConfig, root, workers: int | None = None) -> tuple[list, list]:
    """Write every (mic pair, source) training example under ``root/train``.

    Returns (records, skipped). Sources shorter than one frame are skipped
    and logged.
    """
    root = Path(root)
    (root / "train").mkdir(parents=True, exist_ok=True)
    pairs, sources = _geometry(exp.seed, exp.room_dims, exp.n_mic_pairs, exp.n_sources,
                               exp.mic_spacing_range, exp.mic_height_range,
                               exp.wall_clearance, exp.source_height, exp.fs)
    bank = source_bank(exp.n_sources, 0, exp.seed, exp.fs, exp.source_duration_s,
                       exp.source_dir, exp.speakers)
    hop = hop_from_overlap(exp.frame_length, exp.overlap)
    cond = _rng(exp.seed, _CONDITIONS)
    jobs, skipped = [], []
    for p, (m1, m2) in enumerate(pairs):
        for s, (label, sig) in enumerate(bank):
            t60 = float(cond.uniform(*exp.t60_range_s))
            snr = float(cond.uniform(*exp.snr_range_db))
            if len(sig) < exp.frame_length:
                log.warning("source %s shorter than one frame; example (%d, %d) skipped", label, p, s)
                skipped.append({"pair": p, "source": s, "source_id": label,
                                "reason": "shorter than one frame"})
                continue
            jobs.append({"exp": exp, "signal": sig, "pair": p, "source_index": s, "label": label,
                         "mic_1": tuple(m1), "mic_2": tuple(m2), "source": tuple(sources[s]),
                         "t60": t60, "snr_db": snr,
                         "noise_seed": _stream_seed(exp.seed, _NOISE, p, s),
                         "frames": _training_frames(sig.samples, exp, hop, p, s)})
    results = pmap(_train_job, jobs, workers)
    records = []
    shape = [exp.fsgcc.band_count, exp.crop_width]
    for job, res in zip(jobs, results):
        for frame, noisy_mag, clean_mag in zip(job["frames"], res["noisy"], res["clean"]):
            i = len(records)
            noisy, clean = f"train/noisy_{i:05d}.f64", f"train/clean_{i:05d}.f64"
            _write(root, noisy, noisy_mag)
            _write(root, clean, clean_mag)
            records.append({"id": i, "setup": f"p{job['pair']}-s{job['source_index']}",
                            "pair": job["pair"], "source": job["source_index"],
                            "mic_1": list(job["mic_1"]), "mic_2": list(job["mic_2"]),
                            "source_pos": list(job["source"]), "t60": job["t60"],
                            "snr_db": job["snr_db"], "source_id": job["label"],
                            "frame_index": frame, "noisy": noisy, "clean": clean,
                            "shape": shape, "true_tdoa": res["true_tdoa"]})
    return records, skipped


# -------------------------------------------------------------------- test

def room_label(dims) -> str:
    return "x".join(f"{float(d):g}" for d in dims)


def test_cells(test: TestSweepConfig) -> list[tuple[float, float | None]]:
    """(t60, snr_db) sweep cells; snr None means noiseless."""
    cells = [(float(t), test.snr_db) for t in test.t60_grid]
    if test.include_anechoic and (0.0, None) not in cells:
        cells.append((0.0, None))
    return cells


def _test_job(job):
    exp: ExperimentConfig = job["exp"]
    setup = RoomSetup(job["room_dims"], job["mic_1"], job["mic_2"], job["source"], job["t60"],
                      math.inf if job["snr_db"] is None else job["snr_db"], fs=exp.fs)
    y1, y2 = render_mic_signals(setup, job["signal"], noise_seed=job["noise_seed"])
    hop = hop_from_overlap(exp.frame_length, exp.overlap)
    f1 = frame_signal(y1.samples, exp.frame_length, hop)
    f2 = frame_signal(y2.samples, exp.frame_length, hop)
    idx = job["frames_wanted"]
    if idx is None:
        idx = np.arange(len(f1))
    else:
        idx = np.unique(np.rint(np.linspace(0, len(f1) - 1, idx)).astype(int))
    frames = np.stack([f1[idx], f2[idx]], axis=1)
    return frames, idx.tolist(), true_tdoa(setup), setup.max_lag()


def generate_test_set(exp: ExperimentConfig, test: TestSweepConfig, root,
                      workers: int | None = None) -> list:
    root = Path(root)
    (root / "test").mkdir(parents=True, exist_ok=True)
    ref = np.asarray(test.rooms[0], dtype=float)
    pairs, sources = _geometry(test.seed, ref, test.n_mic_pairs, test.n_sources,
                               exp.mic_spacing_range, exp.mic_height_range,
                               exp.wall_clearance, exp.source_height, exp.fs)
    bank = source_bank(test.n_sources, 1, test.seed, exp.fs, exp.source_duration_s,
                       test.source_dir, test.speakers)
    tcs = [correlation_time(sig) for _, sig in bank]
    jobs = []
    for r, dims in enumerate(test.rooms):
        dims = np.asarray(dims, dtype=float)
        shift = np.array([(dims[0] - ref[0]) / 2, (dims[1] - ref[1]) / 2, 0.0])
        for c, (t60, snr) in enumerate(test_cells(test)):
            for p, (m1, m2) in enumerate(pairs):
                for s, (label, sig) in enumerate(bank):
                    if len(sig) < exp.frame_length:
                        log.warning("test source %s shorter than one frame; skipped", label)
                        continue
                    jobs.append({"exp": exp, "signal": sig, "room_dims": tuple(dims),
                                 "mic_1": tuple(m1 + shift), "mic_2": tuple(m2 + shift),
                                 "source": tuple(sources[s] + shift), "t60": t60, "snr_db": snr,
                                 "noise_seed": _stream_seed(test.seed, _NOISE, r, c, p, s),
                                 "frames_wanted": test.frames_per_source,
                                 "pair": p, "source_index": s, "label": label, "tc": tcs[s]})
    results = pmap(_test_job, jobs, workers)
    records = []
    for i, (job, (frames, idx, tdoa, max_lag)) in enumerate(zip(jobs, results)):
        rel = f"test/frames_{i:05d}.f64"
        _write(root, rel, frames)
        records.append({"id": i, "room": room_label(job["room_dims"]),
                        "room_dims": list(job["room_dims"]), "t60": job["t60"],
                        "snr_db": job["snr_db"], "pair": job["pair"], "source": job["source_index"],
                        "mic_1": list(job["mic_1"]), "mic_2": list(job["mic_2"]),
                        "source_pos": list(job["source"]), "source_id": job["label"],
                        "frame_indices": idx, "frames": rel, "shape": list(frames.shape),
                        "true_tdoa": tdoa, "max_lag": max_lag, "correlation_time": job["tc"]})
    return records


def build_dataset(cfg: RunConfig, root, workers: int | None = None,
                  with_train: bool = True, with_test: bool = True) -> DatasetManifest:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    train, skipped = generate_pairs(cfg.experiment, root, workers) if with_train else ([], [])
    test = generate_test_set(cfg.experiment, cfg.test, root, workers) if with_test else []
    manifest = DatasetManifest(root, cfg.to_dict(), train, test, skipped)
    manifest.save()
    return manifest


def check_clean_targets(manifest: DatasetManifest) -> list[int]:
    """Ids of training examples whose clean band-average peak misses the true TDoA."""
    bad = []
    for rec in manifest.train:
        clean = manifest.read(rec["clean"], rec["shape"])
        limit = clean.shape[-1] // 2 - 1
        if band_average_tdoa(clean, limit) != rec["true_tdoa"]:
            bad.append(rec["id"])
    return bad
