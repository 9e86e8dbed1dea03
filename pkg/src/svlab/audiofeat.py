"""Audio ingestion, log-Mel features, SpecAugment, cropping and augmentation.

Feature pipeline (fixed so outputs are bit-reproducible): 25 ms Hamming
windows with 10 ms shift, 512-point FFT power spectrum, 80 triangular Mel
filters spanning 20-7600 Hz, natural log floored at 1e-10, then per-row
mean normalization across time. No pre-emphasis, no dither.
"""

import struct
import wave
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError, FormatError, UsageError
from .util import atomic_write

SAMPLE_RATE = 16000
FRAME_LEN = 400       # 25 ms
FRAME_SHIFT = 160     # 10 ms
NFFT = 512
N_MELS = 80
MEL_FMIN = 20.0
MEL_FMAX = 7600.0
LOG_FLOOR = 1e-10

AUGMENT_KINDS = ("clean", "noise", "music-like", "babble-like", "reverb")


@dataclass
class Utterance:
    id: str
    speaker_id: str
    samples: np.ndarray          # float64 in [-1, 1), 16 kHz mono
    language: str = "A"
    domain: str = "clean"
    gender: str = "M"

    @property
    def duration_s(self):
        return len(self.samples) / SAMPLE_RATE


@dataclass
class FeatureMatrix:
    utt_id: str
    values: np.ndarray           # (80, T) log-Mel energies
    frame_shift_s: float = 0.010
    speaker_id: str = ""
    language: str = "A"
    domain: str = "clean"
    gender: str = "M"
    duration_s: float = 0.0

    @property
    def num_frames(self):
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# WAV I/O

def load_wav(path, utt_id=None):
    """Read a PCM16 mono 16 kHz RIFF/WAVE file; samples scaled by 1/32768."""
    try:
        with wave.open(str(path), "rb") as fh:
            ch, sw, rate = fh.getnchannels(), fh.getsampwidth(), fh.getframerate()
            comp = fh.getcomptype()
            n = fh.getnframes()
            raw = fh.readframes(n)
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: not a RIFF/WAVE file ({exc})") from None
    if comp != "NONE":
        raise FormatError(f"{path}: compression type {comp!r}, expected PCM")
    if sw != 2:
        raise FormatError(f"{path}: sample width {sw} bytes, expected 2 (PCM 16-bit)")
    if ch != 1:
        raise FormatError(f"{path}: {ch} channels, expected mono")
    if rate != SAMPLE_RATE:
        raise FormatError(f"{path}: sample rate {rate}, expected {SAMPLE_RATE}")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if utt_id is None:
        utt_id = str(path)
    return Utterance(id=utt_id, speaker_id="", samples=samples)


def write_wav(path, samples):
    """Write float samples as PCM16 mono 16 kHz; values clipped to [-1, 1)."""
    pcm = np.clip(np.asarray(samples) * 32768.0, -32768, 32767)
    pcm = np.round(pcm).astype("<i2")
    with atomic_write(path, "wb") as fh:
        with wave.open(fh, "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(SAMPLE_RATE)
            w.writeframes(pcm.tobytes())


# ---------------------------------------------------------------------------
# log-Mel filterbank

def _mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_inv(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies():
    """Center frequency in Hz of each of the 80 Mel filters."""
    edges = _mel_inv(np.linspace(_mel(MEL_FMIN), _mel(MEL_FMAX), N_MELS + 2))
    return edges[1:-1]


def _mel_filterbank():
    edges = _mel_inv(np.linspace(_mel(MEL_FMIN), _mel(MEL_FMAX), N_MELS + 2))
    bins = np.arange(NFFT // 2 + 1) * (SAMPLE_RATE / NFFT)
    fb = np.zeros((N_MELS, NFFT // 2 + 1))
    for m in range(N_MELS):
        lo, c, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (bins - lo) / (c - lo)
        down = (hi - bins) / (hi - c)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


_FBANK = _mel_filterbank()
_WINDOW = np.hamming(FRAME_LEN)


def num_frames(n_samples):
    return 1 + (n_samples - FRAME_LEN) // FRAME_SHIFT


def fbank(utt):
    """80 x T log-Mel energy matrix, mean normalized across time per row."""
    x = utt.samples
    if len(x) < FRAME_LEN:
        raise DataError(
            f"{utt.id}: {len(x)} samples, shorter than one {FRAME_LEN}-sample window")
    T = num_frames(len(x))
    idx = np.arange(FRAME_LEN)[None, :] + FRAME_SHIFT * np.arange(T)[:, None]
    frames = x[idx] * _WINDOW
    spec = np.fft.rfft(frames, n=NFFT, axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    mel = power @ _FBANK.T
    logmel = np.log(np.maximum(mel, LOG_FLOOR)).T
    logmel -= logmel.mean(axis=1, keepdims=True)
    return FeatureMatrix(
        utt_id=utt.id, values=logmel, speaker_id=utt.speaker_id,
        language=utt.language, domain=utt.domain, gender=utt.gender,
        duration_s=utt.duration_s)


# ---------------------------------------------------------------------------
# feature-level transforms

def spec_augment(feat, rng, max_freq_width=10, max_time_width=5):
    """Mask one frequency band (width 0..10) and one time band (width 0..5)."""
    F, T = feat.values.shape
    if T < 5:
        raise DataError(f"{feat.utt_id}: {T} frames, SpecAugment needs >= 5")
    out = feat.values.copy()
    wf = int(rng.integers(0, max_freq_width + 1))
    f0 = int(rng.integers(0, F - wf + 1))
    wt = int(rng.integers(0, max_time_width + 1))
    t0 = int(rng.integers(0, T - wt + 1))
    out[f0:f0 + wf, :] = 0.0
    out[:, t0:t0 + wt] = 0.0
    return replace(feat, values=out)


def crop(feat, seconds, rng):
    """Random crop to round(seconds/shift) frames; wraps cyclically if longer."""
    T = feat.values.shape[1]
    want = int(round(seconds / feat.frame_shift_s))
    if want <= T:
        start = int(rng.integers(0, T - want + 1))
        out = feat.values[:, start:start + want].copy()
    else:
        start = int(rng.integers(0, T))
        idx = (start + np.arange(want)) % T
        out = feat.values[:, idx]
    return replace(feat, values=out)


# ---------------------------------------------------------------------------
# waveform-level augmentation

def _synth_noise(kind, n, rng):
    t = np.arange(n) / SAMPLE_RATE
    if kind == "noise":
        return rng.standard_normal(n)
    if kind == "music-like":
        k = int(rng.integers(3, 6))
        out = np.zeros(n)
        for _ in range(k):
            f = rng.uniform(100.0, 4000.0)
            phase = rng.uniform(0.0, 2 * np.pi)
            env = 1.0 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.2, 2.0) * t
                                     + rng.uniform(0.0, 2 * np.pi))
            out += env * np.sin(2 * np.pi * f * t + phase)
        return out
    if kind == "babble-like":
        out = np.zeros(n)
        for _ in range(6):
            f0 = rng.uniform(80.0, 300.0)
            for h in range(1, 9):
                if h * f0 > 3000.0:
                    break
                out += (rng.uniform(0.2, 1.0) / h) * np.sin(
                    2 * np.pi * h * f0 * t + rng.uniform(0.0, 2 * np.pi))
        return out
    raise UsageError(f"unknown additive noise kind {kind!r}")


def synth_impulse_response(rng, length=3200):
    """Exponentially decaying impulse response with a dominant direct path."""
    tau = rng.uniform(300.0, 1200.0)
    env = np.exp(-np.arange(length) / tau)
    ir = 0.3 * rng.standard_normal(length) * env
    ir[0] = 1.0
    return ir


def convolve_ir(samples, ir):
    """FFT convolution truncated to the input length."""
    n = len(samples) + len(ir) - 1
    nfft = 1 << (n - 1).bit_length()
    spec = np.fft.rfft(samples, nfft) * np.fft.rfft(ir, nfft)
    return np.fft.irfft(spec, nfft)[:len(samples)]


def augment(utt, kind, rng):
    """Synthetic additive/convolutive augmentation; additive kinds mix at an
    SNR drawn uniformly from [5, 20] dB."""
    if kind not in AUGMENT_KINDS:
        raise UsageError(f"unknown augmentation kind {kind!r}")
    if kind == "clean":
        return utt
    x = utt.samples
    if kind == "reverb":
        y = convolve_ir(x, synth_impulse_response(rng))
        return replace(utt, samples=y)
    snr_db = rng.uniform(5.0, 20.0)
    noise = _synth_noise(kind, len(x), rng)
    ps = np.mean(x ** 2)
    pn = np.mean(noise ** 2)
    if ps == 0.0 or pn == 0.0:
        return replace(utt, samples=x.copy())
    scale = np.sqrt(ps / (pn * 10.0 ** (snr_db / 10.0)))
    return replace(utt, samples=x + scale * noise)


# ---------------------------------------------------------------------------
# feature cache ("SVFB")

CACHE_MAGIC = b"SVFB"


def write_feature_cache(path, feats):
    """feats: iterable of (utt_id, (F, T) float array) or FeatureMatrix."""
    with atomic_write(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        for item in feats:
            if isinstance(item, FeatureMatrix):
                uid, vals = item.utt_id, item.values
            else:
                uid, vals = item
            ident = uid.encode("utf-8")
            F, T = vals.shape
            fh.write(struct.pack("<I", len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<II", F, T))
            fh.write(np.ascontiguousarray(vals, dtype="<f8").tobytes())


def read_feature_cache(path):
    """Return an ordered dict utt_id -> (F, T) float64 array."""
    out = {}
    with open(path, "rb") as fh:
        if fh.read(4) != CACHE_MAGIC:
            raise FormatError(f"{path}: bad magic, expected SVFB")
        while True:
            head = fh.read(4)
            if not head:
                break
            (idlen,) = struct.unpack("<I", head)
            uid = fh.read(idlen).decode("utf-8")
            F, T = struct.unpack("<II", fh.read(8))
            buf = fh.read(8 * F * T)
            if len(buf) != 8 * F * T:
                raise FormatError(f"{path}: truncated record for id {uid!r}")
            out[uid] = np.frombuffer(buf, dtype="<f8").reshape(F, T).copy()
    return out
