"""Uniformly sampled multichannel series."""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True, eq=False)
class SampledSeries:
    """A ``D x N`` block of samples with named rows.

    ``lowpass_hz`` records the cutoff of the last anti-aliasing filter
    applied, so the preprocessing pipeline can check ordering.
    """

    data: np.ndarray
    channels: tuple
    sample_rate_hz: float
    lowpass_hz: float | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise ParameterError(f"series data must be 2-D, got shape {data.shape}")
        if data.shape[0] != len(self.channels):
            raise ParameterError(
                f"{data.shape[0]} data rows but {len(self.channels)} channel names"
            )
        if not self.sample_rate_hz > 0:
            raise ParameterError("sample_rate_hz must be positive")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channels", tuple(self.channels))

    @property
    def n_samples(self):
        return self.data.shape[1]

    @property
    def times(self):
        return np.arange(self.n_samples) / self.sample_rate_hz

    def channel(self, name):
        try:
            return self.data[self.channels.index(name)]
        except ValueError:
            raise KeyError(name) from None

    def replace(self, data=None, sample_rate_hz=None, lowpass_hz=...):
        return SampledSeries(
            self.data if data is None else data,
            self.channels,
            self.sample_rate_hz if sample_rate_hz is None else sample_rate_hz,
            self.lowpass_hz if lowpass_hz is ... else lowpass_hz,
        )

    def __eq__(self, other):
        if not isinstance(other, SampledSeries):
            return NotImplemented
        return (
            self.channels == other.channels
            and self.sample_rate_hz == other.sample_rate_hz
            and self.lowpass_hz == other.lowpass_hz
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )
