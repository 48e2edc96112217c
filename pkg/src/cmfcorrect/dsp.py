"""Anti-aliasing filters, decimation and per-experiment averaging."""

from dataclasses import dataclass

import numpy as np

from .errors import LengthError, ParameterError
from .series import SampledSeries

INTERVALS_S = (0.25, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0)
ORIGINAL = "original"
PER_EXPERIMENT_MEAN = "per_experiment_mean"


@dataclass(frozen=True, eq=False)
class FirFilter:
    taps: np.ndarray
    cutoff_hz: float
    source_rate_hz: float
    cutoff_norm: float = 0.8

    @property
    def length(self):
        return len(self.taps)

    @property
    def group_delay(self):
        return (self.length - 1) // 2

    def response(self, freqs_hz):
        """Complex frequency response at ``freqs_hz``, evaluated directly from the taps."""
        k = np.arange(self.length)
        w = 2 * np.pi * np.atleast_1d(np.asarray(freqs_hz, dtype=float)) / self.source_rate_hz
        return np.exp(-1j * np.outer(w, k)) @ self.taps

    def to_text(self):
        return "\n".join(repr(float(c)) for c in self.taps) + "\n"


def design_lowpass(length=129, cutoff_norm=0.8, target_rate_hz=None, source_rate_hz=14.3):
    """Hamming-windowed sinc low-pass with unit DC gain.

    The cutoff sits at ``cutoff_norm`` times the Nyquist frequency of the
    *target* rate, i.e. the rate after decimation.
    """
    if length < 3 or length % 2 == 0:
        raise ParameterError(f"filter length must be odd and >= 3, got {length}")
    if target_rate_hz is None:
        target_rate_hz = source_rate_hz
    cutoff_hz = cutoff_norm * target_rate_hz / 2
    if not 0 < cutoff_hz < source_rate_hz / 2:
        raise ParameterError(
            f"cutoff {cutoff_hz!r} Hz must lie in (0, {source_rate_hz / 2!r}) Hz"
        )
    fc = cutoff_hz / source_rate_hz
    m = np.arange(length) - (length - 1) / 2
    taps = 2 * fc * np.sinc(2 * fc * m) * np.hamming(length)
    taps = taps / taps.sum()
    # exact symmetry, independent of rounding in the window
    taps = 0.5 * (taps + taps[::-1])
    return FirFilter(taps, cutoff_hz, source_rate_hz, cutoff_norm)


def filter_series(s, f):
    """Zero-phase-aligned FIR filtering of every channel.

    Each channel is reflect-padded by the group delay on both sides, so the
    output has the input's length and is aligned with it in time.
    """
    if s.n_samples < f.length:
        raise LengthError(f"series has {s.n_samples} samples, filter needs at least {f.length}")
    if not np.isclose(s.sample_rate_hz, f.source_rate_hz, rtol=1e-12, atol=0):
        raise ParameterError(
            f"filter designed for {f.source_rate_hz} Hz, series sampled at {s.sample_rate_hz} Hz"
        )
    half = f.group_delay
    padded = np.pad(s.data, ((0, 0), (half, half)), mode="reflect")
    out = np.vstack([np.convolve(row, f.taps, mode="valid") for row in padded])
    return s.replace(data=out, lowpass_hz=f.cutoff_hz)


@dataclass(frozen=True)
class ResampleSpec:
    """One of the decimation intervals, ``original`` or ``per_experiment_mean``."""

    interval_s: object
    source_rate_hz: float = 14.3

    def __post_init__(self):
        if self.interval_s in (ORIGINAL, PER_EXPERIMENT_MEAN):
            return
        try:
            interval = float(self.interval_s)
        except (TypeError, ValueError):
            raise ParameterError(f"unknown resample interval {self.interval_s!r}") from None
        if interval <= 0:
            raise ParameterError("interval_s must be positive")
        object.__setattr__(self, "interval_s", interval)
        if self.factor < 1:
            raise ParameterError(
                f"interval {interval} s at {self.source_rate_hz} Hz gives decimation factor < 1"
            )

    @property
    def decimates(self):
        return isinstance(self.interval_s, float)

    @property
    def factor(self):
        if not self.decimates:
            return 1
        return int(round(self.interval_s * self.source_rate_hz))

    @property
    def target_rate_hz(self):
        return self.source_rate_hz / self.factor

    @property
    def label(self):
        if self.interval_s == ORIGINAL:
            return "original"
        if self.interval_s == PER_EXPERIMENT_MEAN:
            return "60s"
        return f"{self.interval_s:g}s"


def parse_rate(label, source_rate_hz=14.3):
    """Map CLI rate labels (``4``, ``4s``, ``0.25``, ``original``, ``60s``) to a spec."""
    text = str(label).strip().lower()
    if text in ("original", "orig"):
        return ResampleSpec(ORIGINAL, source_rate_hz)
    if text in ("60s", "60", "per_experiment_mean", "mean"):
        return ResampleSpec(PER_EXPERIMENT_MEAN, source_rate_hz)
    if text.endswith("ms"):
        value = float(text[:-2]) / 1000
    else:
        value = float(text.rstrip("s"))
    if value not in INTERVALS_S:
        raise ParameterError(f"rate {label!r} is not one of {INTERVALS_S}, original or 60s")
    return ResampleSpec(value, source_rate_hz)


def downsample(s, spec):
    if spec.interval_s == ORIGINAL:
        return s
    if spec.interval_s == PER_EXPERIMENT_MEAN:
        return s.replace(data=s.data.mean(axis=1, keepdims=True))
    k = spec.factor
    if k < 1:
        raise ParameterError(f"decimation factor {k} < 1")
    return s.replace(data=s.data[:, ::k], sample_rate_hz=s.sample_rate_hz / k)


@dataclass(frozen=True)
class AliasReport:
    channels: tuple
    fractions: tuple
    threshold: float

    @property
    def flags(self):
        return tuple(f > self.threshold for f in self.fractions)

    @property
    def at_risk(self):
        return [c for c, flag in zip(self.channels, self.flags) if flag]


def assess_aliasing(s, target_rate_hz, threshold=0.01):
    """Share of each channel's (mean-removed) periodogram energy above the target Nyquist."""
    if s.n_samples < 8:
        raise LengthError("aliasing assessment needs at least 8 samples")
    if target_rate_hz >= s.sample_rate_hz:
        raise ParameterError("target rate must be below the source rate")
    x = s.data - s.data.mean(axis=1, keepdims=True)
    power = np.abs(np.fft.rfft(x, axis=1)) ** 2
    freqs = np.fft.rfftfreq(s.n_samples, 1.0 / s.sample_rate_hz)
    above = freqs > target_rate_hz / 2
    total = power.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(total > 0, power[:, above].sum(axis=1) / total, 0.0)
    return AliasReport(s.channels, tuple(float(v) for v in frac), threshold)


class Preprocessor:
    """Applies the filter-then-decimate chain for one resample spec.

    The filter is designed once per (source rate, target rate). Decimation
    refuses series that did not pass through this preprocessor's filter.
    """

    def __init__(self, spec, filter_length=129, cutoff_norm=0.8):
        self.spec = spec
        self.filter = None
        if spec.decimates and spec.factor > 1:
            self.filter = design_lowpass(
                filter_length, cutoff_norm, spec.target_rate_hz, spec.source_rate_hz
            )

    def __call__(self, s):
        if self.filter is not None:
            s = filter_series(s, self.filter)
            assert s.lowpass_hz == self.filter.cutoff_hz, "filter must precede decimation"
        return downsample(s, self.spec)
