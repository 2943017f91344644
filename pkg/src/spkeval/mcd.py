"""Mel-cepstral distortion between reference and resynthesised audio."""

from __future__ import annotations

import math
import wave
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Tuple

import numpy as np
from scipy.fft import dct
from scipy.signal import get_window

from .distance import dtw_from_cost
from .errors import InputError

MCD_CONST = 10.0 * math.sqrt(2.0) / math.log(10.0)


@dataclass(frozen=True)
class MFCCConfig:
    sample_rate: int = 16000
    win_length: int = 400  # 25 ms
    hop_length: int = 160  # 10 ms
    n_fft: int = 1024
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    n_ceps: int = 13
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.win_length > self.n_fft:
            raise InputError(f"win_length {self.win_length} exceeds n_fft {self.n_fft}")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise InputError(f"mel range {self.fmin}-{self.fmax} Hz invalid for {self.sample_rate} Hz audio")
        if not 1 <= self.n_ceps < self.n_mels:
            raise InputError(f"n_ceps must lie in [1, n_mels), got {self.n_ceps}")


@dataclass(frozen=True)
class CepstralSequence:
    """Cepstral frames c1..cN (c0 dropped) and the analysis settings that produced them."""

    coeffs: np.ndarray
    config: MFCCConfig = MFCCConfig()

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] == 0:
            raise InputError(f"cepstral sequence must be a non-empty matrix, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise InputError("non-finite cepstral coefficients")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    def __len__(self):
        return self.coeffs.shape[0]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(config: MFCCConfig) -> np.ndarray:
    """n_mels + 2 frequencies (Hz): lower edge, centres, upper edge."""
    return mel_to_hz(np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.n_mels + 2))


def mel_filterbank(config: MFCCConfig) -> np.ndarray:
    """Triangular filters sampled at the FFT bin frequencies, shape (n_mels, n_fft//2 + 1)."""
    edges = mel_band_edges(config)
    freqs = np.arange(config.n_fft // 2 + 1) * config.sample_rate / config.n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def _frames(audio: np.ndarray, config: MFCCConfig) -> np.ndarray:
    if audio.shape[0] < config.win_length:
        audio = np.pad(audio, (0, config.win_length - audio.shape[0]))
    n = 1 + (audio.shape[0] - config.win_length) // config.hop_length
    idx = np.arange(config.win_length)[None, :] + config.hop_length * np.arange(n)[:, None]
    return audio[idx]


def log_mel_spectrogram(audio, config: MFCCConfig = MFCCConfig()) -> np.ndarray:
    audio = np.asarray(audio, dtype=np.float64).ravel()
    if audio.size == 0:
        raise InputError("empty audio")
    if not np.all(np.isfinite(audio)):
        raise InputError("non-finite audio samples")
    window = get_window("hann", config.win_length, fftbins=True)
    spec = np.fft.rfft(_frames(audio, config) * window, n=config.n_fft, axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    energies = power @ mel_filterbank(config).T
    return np.log(np.maximum(energies, config.log_floor))


def mfcc(audio, config: MFCCConfig = MFCCConfig(), sample_rate: int | None = None) -> CepstralSequence:
    """Hann-windowed STFT -> mel energies -> log -> orthonormal DCT-II, keeping c1..c{n_ceps}."""
    if sample_rate is not None and sample_rate != config.sample_rate:
        raise InputError(f"sample rate {sample_rate} Hz does not match analysis config {config.sample_rate} Hz")
    logmel = log_mel_spectrogram(audio, config)
    ceps = dct(logmel, type=2, axis=1, norm="ortho")
    return CepstralSequence(ceps[:, 1:config.n_ceps + 1], config)


def read_wav(path) -> Tuple[np.ndarray, int]:
    """16-bit PCM mono WAV as float samples in [-1, 1)."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"wav file not found: {path}")
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise InputError(f"{path}: expected mono audio, got {w.getnchannels()} channels")
            if w.getsampwidth() != 2:
                raise InputError(f"{path}: expected 16-bit PCM, got {8 * w.getsampwidth()}-bit")
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise InputError(f"{path}: {exc}") from None
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0, rate


def write_wav(path, audio, sample_rate: int) -> None:
    pcm = np.clip(np.round(np.asarray(audio) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def wav_mfcc(path, config: MFCCConfig = MFCCConfig()) -> CepstralSequence:
    audio, rate = read_wav(path)
    return mfcc(audio, config, sample_rate=rate)


def _frame_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def mcd(ref: CepstralSequence, syn: CepstralSequence, align: str = "dtw") -> float:
    """Mel-cepstral distortion in dB, averaged over aligned frame pairs."""
    if ref.config != syn.config:
        raise InputError("reference and synthesis were analysed with different settings")
    if ref.coeffs.shape[1] != syn.coeffs.shape[1]:
        raise InputError("coefficient counts differ")
    if align == "frame":
        if len(ref) != len(syn):
            raise InputError(f"frame alignment needs equal lengths, got {len(ref)} and {len(syn)}")
        diff = ref.coeffs - syn.coeffs
        return MCD_CONST * float(np.mean(np.sqrt((diff * diff).sum(axis=1))))
    if align == "dtw":
        return MCD_CONST * dtw_from_cost(_frame_distances(ref.coeffs, syn.coeffs))
    raise InputError(f"align must be 'dtw' or 'frame', got {align!r}")


def mcd_by_group(pairs: Iterable[Tuple[CepstralSequence, CepstralSequence, str]], align: str = "dtw") -> dict:
    """Mean MCD per group label and over all pairs."""
    per_group = defaultdict(list)
    for ref, syn, group in pairs:
        per_group[group].append(mcd(ref, syn, align))
    if not per_group:
        raise InputError("no pairs")
    groups = {g: {"mcd": sum(sorted(v)) / len(v), "n_pairs": len(v)} for g, v in sorted(per_group.items())}
    # order-independent: sum in sorted value order within sorted groups
    values = [x for g in sorted(per_group) for x in sorted(per_group[g])]
    return {"groups": groups, "overall": sum(values) / len(values), "n_pairs": len(values)}
