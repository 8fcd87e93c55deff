"""Log-mel spectrogram frontend.

Mono PCM audio is framed with a 30 ms Hann window and 10 ms hop (no
centering, so frame t covers samples [t*hop, t*hop + window)), run through an
FFT of the next power of two above the window length, pooled by a 96-band
mel filterbank (Slaney-style scale: linear below 1 kHz, log above, spanning
0 Hz to Nyquist), floored at 1e-10 energy and log-compressed. Networks
consume fixed 101-frame x 96-band patches cut with 50% overlap.
"""

import json
import wave
from dataclasses import dataclass, field

import numpy as np

from . import aapt

N_BANDS = 96
WINDOW_SECONDS = 0.030
HOP_SECONDS = 0.010
PATCH_FRAMES = 101
PATCH_HOP = 50
LOG_FLOOR = 1e-10


class AudioFormatError(ValueError):
    pass


@dataclass
class LogMelSpec:
    """A log-energy mel spectrogram, [frames, 96] float32."""

    values: np.ndarray
    sample_rate: int
    hop: float = HOP_SECONDS
    window: float = WINDOW_SECONDS

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or self.values.shape[1] != N_BANDS:
            raise AudioFormatError(
                f"spectrogram must be [frames, {N_BANDS}], got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise AudioFormatError("spectrogram contains non-finite values")

    @property
    def frames(self):
        return self.values.shape[0]

    @property
    def bands(self):
        return N_BANDS


@dataclass
class Patch:
    """One fixed-size network input window cut from a clip spectrogram."""

    values: np.ndarray
    source_clip_id: str = ""
    start_frame: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.shape != (PATCH_FRAMES, N_BANDS):
            raise AudioFormatError(
                f"patch must be [{PATCH_FRAMES}, {N_BANDS}], got {self.values.shape}"
            )


# ---------------------------------------------------------------------- #
# WAV I/O


def read_wav(path):
    """Read a mono 16-bit PCM RIFF WAV file. Returns (int16 samples, rate)."""
    with wave.open(str(path), "rb") as fh:
        channels = fh.getnchannels()
        if channels != 1:
            raise AudioFormatError(f"{path}: expected mono audio, got {channels} channels")
        if fh.getsampwidth() != 2:
            raise AudioFormatError(f"{path}: expected 16-bit PCM samples")
        n = fh.getnframes()
        if n == 0:
            raise AudioFormatError(f"{path}: empty audio")
        data = np.frombuffer(fh.readframes(n), dtype="<i2")
        return data.copy(), fh.getframerate()


def write_wav(path, samples, sample_rate):
    """Write mono PCM16. Float input is clipped to [-1, 1] and scaled."""
    samples = np.asarray(samples)
    if samples.dtype != np.int16:
        samples = (np.clip(samples, -1.0, 1.0) * 32767.0).astype(np.int16)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(sample_rate))
        fh.writeframes(samples.astype("<i2").tobytes())


# ---------------------------------------------------------------------- #
# mel filterbank

_FILTERBANK_CACHE = {}


def _hz_to_mel(freq):
    freq = np.asarray(freq, dtype=np.float64)
    linear = freq / (200.0 / 3.0)
    log_step = np.log(6.4) / 27.0
    with np.errstate(divide="ignore"):
        logged = 15.0 + np.log(np.maximum(freq, 1e-12) / 1000.0) / log_step
    return np.where(freq < 1000.0, linear, logged)


def _mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    linear = mel * (200.0 / 3.0)
    log_step = np.log(6.4) / 27.0
    logged = 1000.0 * np.exp(log_step * (mel - 15.0))
    return np.where(mel < 15.0, linear, logged)


def mel_band_centers(sample_rate):
    """Center frequency in Hz of each of the 96 mel bands."""
    edges = _mel_edges(sample_rate)
    return edges[1:-1].copy()


def _mel_edges(sample_rate):
    top = _hz_to_mel(sample_rate / 2.0)
    mels = np.linspace(0.0, float(top), N_BANDS + 2)
    return _mel_to_hz(mels)


def mel_filterbank(sample_rate, n_fft):
    """Triangular [96, n_fft//2 + 1] filterbank with unit peaks."""
    key = (int(sample_rate), int(n_fft))
    if key in _FILTERBANK_CACHE:
        return _FILTERBANK_CACHE[key]
    edges = _mel_edges(sample_rate)
    bins = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    bank = np.zeros((N_BANDS, len(bins)), dtype=np.float32)
    for b in range(N_BANDS):
        lo, center, hi = edges[b], edges[b + 1], edges[b + 2]
        rising = (bins - lo) / max(center - lo, 1e-12)
        falling = (hi - bins) / max(hi - center, 1e-12)
        bank[b] = np.maximum(0.0, np.minimum(rising, falling))
    _FILTERBANK_CACHE[key] = bank
    return bank


# ---------------------------------------------------------------------- #
# operations


def logmel(samples, sample_rate):
    """Convert mono PCM samples to a LogMelSpec.

    Accepts int16 (scaled by 1/32768) or float samples. Raises
    AudioFormatError for empty, multi-channel, or too-short input and for
    rates below 8 kHz.
    """
    samples = np.asarray(samples)
    if samples.ndim != 1:
        raise AudioFormatError(f"expected mono 1D samples, got shape {samples.shape}")
    if samples.size == 0:
        raise AudioFormatError("empty input")
    if sample_rate < 8000:
        raise AudioFormatError(f"sample rate {sample_rate} below 8 kHz")
    if samples.dtype == np.int16:
        samples = samples.astype(np.float64) / 32768.0
    else:
        samples = samples.astype(np.float64)

    win_len = int(round(WINDOW_SECONDS * sample_rate))
    hop_len = int(round(HOP_SECONDS * sample_rate))
    if samples.size < win_len:
        raise AudioFormatError(
            f"clip of {samples.size} samples is shorter than one {win_len}-sample window"
        )
    n_fft = 1 << (win_len - 1).bit_length()
    n_frames = 1 + (samples.size - win_len) // hop_len
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win_len) / win_len)

    idx = hop_len * np.arange(n_frames)[:, None] + np.arange(win_len)[None, :]
    frames = samples[idx] * window
    spectrum = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    bank = mel_filterbank(sample_rate, n_fft)
    energy = spectrum @ bank.T
    values = np.log(np.maximum(energy, LOG_FLOOR)).astype(np.float32)
    return LogMelSpec(values=values, sample_rate=int(sample_rate))


def extract_patches(spec, clip_id=""):
    """Cut a spectrogram into 101-frame patches with 50% overlap.

    Clips shorter than one patch are tiled by cyclic frame replication up to
    101 frames. Longer clips yield windows every 50 frames, with the last
    window anchored to the clip end (duplicate coverage allowed). Pure
    function: the same spectrogram always yields the same patch list.
    """
    frames = spec.frames
    if frames < PATCH_FRAMES:
        rows = np.arange(PATCH_FRAMES) % frames
        return [Patch(spec.values[rows], source_clip_id=clip_id, start_frame=0)]
    starts = list(range(0, frames - PATCH_FRAMES + 1, PATCH_HOP))
    if starts[-1] != frames - PATCH_FRAMES:
        starts.append(frames - PATCH_FRAMES)
    return [
        Patch(spec.values[s : s + PATCH_FRAMES], source_clip_id=clip_id, start_frame=s)
        for s in starts
    ]


# ---------------------------------------------------------------------- #
# AAPT export with JSON sidecars


def _sidecar_path(path):
    path = str(path)
    return (path[: -len(".aapt")] if path.endswith(".aapt") else path) + ".json"


def save_spec(spec, path, clip_id="", labels=None):
    aapt.save_tensor(path, spec.values)
    meta = {
        "kind": "logmel",
        "clip_id": clip_id,
        "sample_rate": spec.sample_rate,
        "frames": spec.frames,
        "bands": spec.bands,
        "hop_seconds": spec.hop,
        "window_seconds": spec.window,
    }
    if labels is not None:
        meta["labels"] = list(np.asarray(labels).astype(float))
    with open(_sidecar_path(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_spec(path):
    values = aapt.load_tensor(path)
    with open(_sidecar_path(path)) as fh:
        meta = json.load(fh)
    spec = LogMelSpec(
        values=values,
        sample_rate=int(meta["sample_rate"]),
        hop=meta.get("hop_seconds", HOP_SECONDS),
        window=meta.get("window_seconds", WINDOW_SECONDS),
    )
    return spec, meta


def save_patch(patch, path, labels=None):
    aapt.save_tensor(path, patch.values)
    meta = {
        "kind": "patch",
        "clip_id": patch.source_clip_id,
        "start_frame": patch.start_frame,
    }
    if labels is not None:
        meta["labels"] = list(np.asarray(labels).astype(float))
    with open(_sidecar_path(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
