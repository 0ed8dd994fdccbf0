"""Framing of multichannel audio and per-pair time-delay estimation

Delays follow the geometry convention: τ = arrival_b - arrival_a, so τ > 0
when the wavefront reaches ``index_a`` first.
"""
import logging
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window

from .geometry import ArrayGeometry, MicPair
from .utils import DoaError

logger = logging.getLogger(__name__)

WEIGHTINGS = ("none", "phat")
WINDOWS = ("rectangular", "hann")


class TdeError(DoaError):
    """Framing, correlation or audio input failure"""
    default_error_type = "tde_error"


@dataclass(frozen=True, eq=False)
class MultichannelFrame:
    """One analysis window: channels x samples, plus its position in the stream"""
    channels: np.ndarray
    sample_rate: float
    start_time: float = 0.0

    def __post_init__(self):
        channels = np.asarray(self.channels, dtype=float)
        if channels.ndim != 2 or channels.shape[1] == 0:
            raise TdeError(
                "Frame channels must be a non-empty channels x samples array",
                error_type="invalid_frame",
                details={"shape": list(channels.shape)}
            )
        if not self.sample_rate > 0:
            raise TdeError("Sample rate must be positive", error_type="invalid_frame",
                           details={"sample_rate": self.sample_rate})
        channels.flags.writeable = False
        object.__setattr__(self, "channels", channels)

    @property
    def num_channels(self) -> int:
        return self.channels.shape[0]

    @property
    def num_samples(self) -> int:
        return self.channels.shape[1]

    def check_geometry(self, geometry: ArrayGeometry):
        """Raise channel_mismatch unless there is one channel per microphone"""
        if self.num_channels != geometry.num_mics:
            raise TdeError(
                f"Frame has {self.num_channels} channels but the array has {geometry.num_mics} microphones",
                error_type="channel_mismatch",
                details={"channels": self.num_channels, "mics": geometry.num_mics}
            )


@dataclass(frozen=True)
class TdeResult:
    pair: MicPair
    tau: float
    peak_value: float


def frame_stream(signal, sample_rate: float, frame_len: float,
                 hop: float) -> Iterator[MultichannelFrame]:
    """Split channels x samples audio into overlapping frames

    Frames start at 0, hop, 2·hop, ... and a trailing partial window is
    discarded. Raises ``signal_too_short`` eagerly when no full frame fits.
    """
    data = np.atleast_2d(np.asarray(signal, dtype=float))
    if not frame_len > 0 or not 0 < hop <= frame_len:
        raise TdeError(
            "Framing needs frame_len > 0 and 0 < hop <= frame_len",
            error_type="invalid_frame",
            details={"frame_len": frame_len, "hop": hop}
        )

    frame_samples = int(round(frame_len * sample_rate))
    hop_samples = max(1, int(round(hop * sample_rate)))
    total = data.shape[1]
    if frame_samples < 1 or total < frame_samples:
        raise TdeError(
            f"Signal of {total / sample_rate:.3f} s is shorter than one {frame_len} s frame",
            error_type="signal_too_short",
            details={"samples": total, "frame_samples": frame_samples}
        )

    count = (total - frame_samples) // hop_samples + 1
    logger.debug("Framing signal", extra={"frames": count, "frame_samples": frame_samples,
                                          "hop_samples": hop_samples})
    return _iter_frames(data, sample_rate, frame_samples, hop_samples, count)


def _iter_frames(data: np.ndarray, sample_rate: float, frame_samples: int,
                 hop_samples: int, count: int) -> Iterator[MultichannelFrame]:
    for k in range(count):
        start = k * hop_samples
        yield MultichannelFrame(data[:, start:start + frame_samples], sample_rate,
                                start / sample_rate)


def cross_correlation(a: np.ndarray, b: np.ndarray, max_lag: int,
                      weighting: str = "none") -> Tuple[np.ndarray, np.ndarray]:
    """Cross-correlation c[lag] = Σ a[t]·b[t + lag] for |lag| <= max_lag

    Computed as a frequency-domain product; ``weighting="phat"`` whitens the
    cross spectrum first.

    Returns:
        Tuple of (lags, correlation values)
    """
    if weighting not in WEIGHTINGS:
        raise TdeError(f"Unknown spectral weighting: {weighting}", error_type="invalid_frame",
                       details={"weighting": weighting, "choices": list(WEIGHTINGS)})

    n = len(a) + len(b) - 1
    nfft = 1 << (n - 1).bit_length()
    spectrum = np.conj(np.fft.rfft(a, nfft)) * np.fft.rfft(b, nfft)
    if weighting == "phat":
        spectrum /= np.abs(spectrum) + 1e-15
    full = np.fft.irfft(spectrum, nfft)

    max_lag = int(min(max_lag, len(a) - 1, len(b) - 1))
    lags = np.arange(-max_lag, max_lag + 1)
    return lags, np.concatenate((full[nfft - max_lag:], full[:max_lag + 1]))


def parabolic_offset(y_left: float, y_peak: float, y_right: float) -> float:
    """Sub-sample offset of a peak from three equally spaced samples, in [-0.5, 0.5]"""
    denom = y_left - 2.0 * y_peak + y_right
    if denom >= 0.0:
        return 0.0
    return float(np.clip(0.5 * (y_left - y_right) / denom, -0.5, 0.5))


def estimate_tde(frame: MultichannelFrame, pair: MicPair, v: float,
                 weighting: str = "none", window: str = "rectangular") -> TdeResult:
    """Delay τ = arrival_b - arrival_a between a pair's channels

    The correlation peak is searched within the physically possible lag range
    ceil(d/v·fs) and refined by three-point parabolic interpolation.
    """
    if window not in WINDOWS:
        raise TdeError(f"Unknown window: {window}", error_type="invalid_frame",
                       details={"window": window, "choices": list(WINDOWS)})
    for index in (pair.index_a, pair.index_b):
        if not 0 <= index < frame.num_channels:
            raise TdeError(
                f"Pair index {index} not present in a {frame.num_channels}-channel frame",
                error_type="channel_mismatch",
                details={"index": index, "channels": frame.num_channels}
            )

    a = frame.channels[pair.index_a]
    b = frame.channels[pair.index_b]
    if not np.any(a) or not np.any(b):
        raise TdeError(
            f"Channel {pair.index_a if not np.any(a) else pair.index_b} is silent",
            error_type="degenerate_signal",
            details={"pair": [pair.index_a, pair.index_b], "start_time": frame.start_time}
        )

    if window != "rectangular":
        taper = get_window(window, frame.num_samples)
        a, b = a * taper, b * taper

    fs = frame.sample_rate
    max_lag = max(1, math.ceil(pair.baseline / v * fs))
    lags, cc = cross_correlation(a, b, max_lag, weighting)

    k = int(np.argmax(cc))
    offset = 0.0
    if 0 < k < len(cc) - 1:
        offset = parabolic_offset(cc[k - 1], cc[k], cc[k + 1])

    bound = pair.baseline / v + 1.0 / fs
    tau = float(np.clip((lags[k] + offset) / fs, -bound, bound))

    norm = math.sqrt(float(np.dot(a, a)) * float(np.dot(b, b)))
    peak_value = float(cc[k]) / norm if weighting == "none" else float(cc[k])
    return TdeResult(pair=pair, tau=tau, peak_value=peak_value)


def read_wav(path: str) -> Tuple[np.ndarray, float]:
    """Read a PCM WAV file as a channels x samples float array in [-1, 1)

    Returns:
        Tuple of (signal, sample_rate)
    """
    try:
        sample_rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except (ValueError, EOFError) as e:
        raise TdeError(f"Malformed WAV file {path}: {e}", error_type="malformed_wav",
                       details={"path": str(path)})

    if np.issubdtype(data.dtype, np.integer):
        if data.dtype == np.uint8:
            data = (data.astype(float) - 128.0) / 128.0
        else:
            data = data.astype(float) / float(-np.iinfo(data.dtype).min)
    else:
        data = data.astype(float)

    signal = np.ascontiguousarray(data.T) if data.ndim == 2 else data[np.newaxis, :]
    logger.info("Read WAV file", extra={"path": str(path), "channels": signal.shape[0],
                                        "sample_rate": sample_rate, "samples": signal.shape[1]})
    return signal, float(sample_rate)


def write_wav(path: str, signal, sample_rate: int):
    """Write channels x samples audio in [-1, 1] as 16-bit PCM"""
    data = np.atleast_2d(np.asarray(signal, dtype=float))
    pcm = np.round(np.clip(data, -1.0, 32767.0 / 32768.0) * 32768.0).astype(np.int16)
    wavfile.write(path, int(sample_rate), pcm.T.copy())


def synthesize_plane_wave(geometry: ArrayGeometry, doa: float, duration: float,
                          sample_rate: float, band: Sequence[float] = (100.0, 1000.0),
                          seed: Optional[int] = 0, amplitude: float = 0.5) -> np.ndarray:
    """Band-limited noise arriving as a far-field plane wave from polar angle doa

    Fractional per-microphone delays are applied as phase shifts, so the
    result is periodic over its own duration.

    Returns:
        channels x samples array with peak magnitude ``amplitude``
    """
    n = int(round(duration * sample_rate))
    rng = np.random.default_rng(seed)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spectrum = np.fft.rfft(rng.standard_normal(n))
    spectrum[(freqs < band[0]) | (freqs > band[1])] = 0.0

    direction = np.array([math.cos(doa), math.sin(doa)])
    arrivals = -(geometry.positions @ direction) / geometry.speed_of_sound
    shifted = spectrum[np.newaxis, :] * np.exp(-2j * np.pi * freqs[np.newaxis, :] * arrivals[:, np.newaxis])
    signal = np.fft.irfft(shifted, n, axis=1)
    return amplitude * signal / np.max(np.abs(signal))
