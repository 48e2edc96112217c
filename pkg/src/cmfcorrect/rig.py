"""Synthetic three-phase flow rig.

Generates air/water/oil experiments that look like Coriolis meter recordings
under multiphase conditions: the main meter under-reads more and more as the
gas volume fraction (GVF) grows and oscillates near a dominant frequency.
The gas content wanders around its set point; pressure and temperature
respond to it at once, the meter's under-read only with a lag.  Nothing here
models tube dynamics; the point is a seeded, fully testable stand-in for a
proprietary rig dataset.
"""

from dataclasses import asdict, dataclass, fields
import math

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigError, ParseError, ValidationError
from .series import SampledSeries

FEATURES = (
    "apparent_mf_main",
    "apparent_mf_liquid",
    "temp_main",
    "temp_liquid",
    "pressure",
)
TARGET = "true_total_mf"
SCHEMA_VERSION = 1

# Rig operating ranges (fractions for water cut and GVF).
RANGES = {
    "water_cut": (0.0, 0.994),
    "viscosity": (7.17e-4, 666.0),
    "oil_mass_flow": (10.6, 12900.0),
    "total_mass_flow": (930.0, 14900.0),
    "gvf": (0.0, 0.955),
    "pressure_base": (1.01, 4.49),
    "temperature_base": (19.2, 35.7),
}


@dataclass(frozen=True)
class OperatingPoint:
    water_cut: float
    viscosity: float
    oil_mass_flow: float
    total_mass_flow: float
    gvf: float
    pressure_base: float
    temperature_base: float

    def validate(self):
        for name, (lo, hi) in RANGES.items():
            value = getattr(self, name)
            if not (math.isfinite(value) and lo <= value <= hi):
                raise ValidationError(f"{name}={value!r} outside [{lo}, {hi}]")
        if self.oil_mass_flow > self.total_mass_flow:
            raise ValidationError(
                f"oil_mass_flow={self.oil_mass_flow!r} exceeds "
                f"total_mass_flow={self.total_mass_flow!r}"
            )


@dataclass(frozen=True, eq=False)
class Experiment:
    group_id: int
    op: OperatingPoint
    duration_s: float
    sample_rate_hz: float
    channels: SampledSeries
    truth: SampledSeries

    @property
    def n_samples(self):
        return self.channels.n_samples

    def __eq__(self, other):
        if not isinstance(other, Experiment):
            return NotImplemented
        return (
            self.group_id == other.group_id
            and self.op == other.op
            and self.duration_s == other.duration_s
            and self.sample_rate_hz == other.sample_rate_hz
            and self.channels == other.channels
            and self.truth == other.truth
        )


@dataclass(frozen=True)
class RigConfig:
    """Knobs of the synthetic error model.

    ``noise_scale`` multiplies every stochastic disturbance: sensor noise,
    AR(1) drift of the auxiliary channels and the wandering of the gas
    content around its set point (``slug_amplitude`` is its relative size).
    ``meter_lag_s`` is the time constant with which the main meter's
    under-read follows the gas content.
    """

    n_baselines: int = 57
    gvf_steps_per_baseline: int = 6
    seed: int = 2024
    noise_scale: float = 1.0
    oscillation_freq_hz: float = 0.8
    bias_gain: float = 0.4
    sample_rate_hz: float = 14.3
    duration_s: float = 60.0
    gvf_max: float = 0.95
    oscillation_amplitude: float = 0.1
    slug_amplitude: float = 0.5
    meter_lag_s: float = 8.0

    def validate(self):
        def need(ok, field, msg):
            if not ok:
                raise ConfigError(field, f"{msg} (got {getattr(self, field)!r})")

        for name in ("n_baselines", "gvf_steps_per_baseline", "seed"):
            need(isinstance(getattr(self, name), (int, np.integer)), name, "must be an integer")
        need(self.n_baselines >= 1, "n_baselines", "must be >= 1")
        need(self.gvf_steps_per_baseline >= 1, "gvf_steps_per_baseline", "must be >= 1")
        if self.n_baselines * self.gvf_steps_per_baseline < 2:
            raise ConfigError(
                "gvf_steps_per_baseline",
                "n_baselines * gvf_steps_per_baseline must be >= 2",
            )
        need(0 <= self.seed < 2**64, "seed", "must fit in 64 bits")
        need(self.noise_scale >= 0, "noise_scale", "must be >= 0")
        need(self.oscillation_freq_hz > 0, "oscillation_freq_hz", "must be > 0")
        need(
            self.oscillation_freq_hz < self.sample_rate_hz / 2,
            "oscillation_freq_hz",
            "must be below the Nyquist frequency",
        )
        need(0 <= self.bias_gain < 1, "bias_gain", "must be in [0, 1)")
        need(self.sample_rate_hz > 0, "sample_rate_hz", "must be > 0")
        need(self.duration_s > 0, "duration_s", "must be > 0")
        need(0 <= self.gvf_max <= RANGES["gvf"][1], "gvf_max", "must be in [0, 0.955]")
        need(0 <= self.oscillation_amplitude < 0.5, "oscillation_amplitude", "must be in [0, 0.5)")
        need(0 <= self.slug_amplitude < 1, "slug_amplitude", "must be in [0, 1)")
        need(self.meter_lag_s > 0, "meter_lag_s", "must be > 0")
        return self

    @classmethod
    def from_mapping(cls, values):
        """Build from string values (config files, CLI overrides)."""
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(key, "unknown rig setting")
            default = known[key].default
            try:
                kwargs[key] = int(raw) if isinstance(default, int) else float(raw)
            except (TypeError, ValueError):
                raise ConfigError(key, f"cannot parse {raw!r}") from None
        return cls(**kwargs).validate()

    def as_dict(self):
        return asdict(self)


def _ar1(rng, n, phi, sigma):
    return lfilter([1.0], [1.0, -phi], rng.normal(0.0, sigma, n))


def _gvf_ladder(rng, cfg):
    """Increasing GVF set points for one baseline.

    Random sorted draws rather than a fixed grid, so that alternate
    experiments (the even/odd split) both cover the whole GVF range.
    Half of the baselines start from single-phase flow.
    """
    ladder = np.sort(rng.uniform(0.0, cfg.gvf_max, cfg.gvf_steps_per_baseline))
    if rng.random() < 0.5:
        ladder[0] = 0.0
    return [float(g) for g in ladder]


def _draw_baseline(rng):
    water_cut = rng.uniform(0.0, 0.994)
    viscosity = math.exp(rng.uniform(math.log(7.17e-4), math.log(666.0)))
    total = rng.uniform(930.0, 14900.0)
    oil = total * (1.0 - water_cut) * rng.uniform(0.3, 1.0)
    oil = min(max(oil, 10.6), 12900.0, total)
    return {
        "water_cut": water_cut,
        "viscosity": viscosity,
        "oil_mass_flow": oil,
        "total_mass_flow": total,
        "pressure_base": rng.uniform(1.01, 3.2),
        "temperature_base": rng.uniform(19.2, 35.7),
        # viscous mixtures under-read a little more
        "bias_scale": 1.0 + 0.05 * (math.log(viscosity / 7.17e-4) / math.log(666.0 / 7.17e-4) * 2 - 1),
    }


def _lowpass_noise(rng, n, fs, tau_s):
    """Unit-variance AR(1) noise with correlation time ``tau_s``."""
    phi = math.exp(-1.0 / (tau_s * fs))
    x = _ar1(rng, n + int(5 * tau_s * fs), phi, math.sqrt(1 - phi * phi))
    return x[-n:]


def _lag(x, fs, tau_s):
    """First-order lag, started at the signal's initial value."""
    a = math.exp(-1.0 / (tau_s * fs))
    out, _ = lfilter([1 - a], [1.0, -a], x, zi=[a * x[0]])
    return out


def _simulate(rng, cfg, base, gvf, group_id):
    fs = cfg.sample_rate_hz
    duration = cfg.duration_s * (1.0 + rng.uniform(-0.05, 0.05))
    n = max(int(round(duration * fs)), 1)
    t = np.arange(n) / fs
    ns = cfg.noise_scale
    total = base["total_mass_flow"]
    oil = base["oil_mass_flow"]

    drift = rng.uniform(-0.01, 0.01)
    truth = total * (1.0 + drift * (t / duration - 0.5))

    # Gas content wanders around its set point. Pressure and temperature
    # follow it immediately; the meter's under-read follows it with a lag.
    spread = cfg.slug_amplitude * ns * rng.uniform(0.5, 1.5)
    gvf_now = np.clip(gvf * (1.0 + spread * _lowpass_noise(rng, n, fs, 6.0)), 0.0, 0.99)
    gvf_seen = _lag(gvf_now, fs, cfg.meter_lag_s)
    under_read = cfg.bias_gain * base["bias_scale"] * gvf_seen**2

    phase = rng.uniform(0.0, 2 * np.pi, 2)
    omega = 2 * np.pi * cfg.oscillation_freq_hz
    # centred so the oscillation leaves the experiment's mean reading alone
    wave = np.sin(omega * t[None, :] + phase[:, None])
    wave -= wave.mean(axis=1, keepdims=True)
    osc = cfg.oscillation_amplitude * gvf * wave[0]
    osc_liq = cfg.oscillation_amplitude * gvf * wave[1]
    noise = rng.normal(0.0, 0.01 * ns, (2, n))

    main = truth * (1.0 - under_read) * (1.0 + osc) + total * noise[0]
    liquid = oil * (1.0 - 0.25 * under_read) * (1.0 + 0.5 * osc_liq) + oil * noise[1]

    p_mean = base["pressure_base"] * (1.0 + 0.25 * gvf)
    pressure = base["pressure_base"] * (1.0 + 0.25 * gvf_now) + _ar1(rng, n, 0.98, 0.002 * ns)
    temp_base = base["temperature_base"]
    temp_main = temp_base - 1.5 * gvf_now + _ar1(rng, n, 0.995, 0.01 * ns)
    temp_liquid = temp_base + 0.3 + _ar1(rng, n, 0.995, 0.01 * ns)

    op = OperatingPoint(
        water_cut=base["water_cut"],
        viscosity=base["viscosity"],
        oil_mass_flow=oil,
        total_mass_flow=total,
        gvf=float(gvf),
        pressure_base=p_mean,
        temperature_base=temp_base,
    )
    channels = SampledSeries(np.vstack([main, liquid, temp_main, temp_liquid, pressure]), FEATURES, fs)
    return Experiment(group_id, op, duration, fs, channels, SampledSeries(truth[None, :], (TARGET,), fs))


def generate_dataset(cfg):
    """Generate ``n_baselines * gvf_steps_per_baseline`` experiments.

    Each experiment draws from its own child of the config seed, so the
    output is a pure function of ``cfg`` and experiments could be generated
    in any order.
    """
    cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    experiments = []
    group_id = 0
    for baseline_seq in root.spawn(cfg.n_baselines):
        base_seq, *exp_seqs = baseline_seq.spawn(1 + cfg.gvf_steps_per_baseline)
        base_rng = np.random.default_rng(base_seq)
        base = _draw_baseline(base_rng)
        for gvf, seq in zip(_gvf_ladder(base_rng, cfg), exp_seqs):
            group_id += 1
            experiments.append(_simulate(np.random.default_rng(seq), cfg, base, gvf, group_id))
    return experiments


# -- dataset files -----------------------------------------------------------

_OP_FIELDS = [f.name for f in fields(OperatingPoint)]


def _fmt(x):
    return repr(float(x))


def save_dataset(ds, path):
    """Write experiments as tab-separated text (see README for the layout)."""
    if not ds:
        raise ValidationError("refusing to save an empty dataset")
    rate = ds[0].sample_rate_hz
    lines = [f"cmfcorrect-dataset\tversion={SCHEMA_VERSION}\tsample_rate_hz={_fmt(rate)}"]
    for exp in ds:
        if exp.sample_rate_hz != rate:
            raise ValidationError("all experiments in a file must share one sample rate")
        meta = [f"group_id={exp.group_id}"]
        meta += [f"{name}={_fmt(getattr(exp.op, name))}" for name in _OP_FIELDS]
        meta += [f"duration_s={_fmt(exp.duration_s)}", f"n_samples={exp.n_samples}"]
        lines.append("experiment\t" + "\t".join(meta))
        block = np.vstack([exp.channels.times, exp.channels.data, exp.truth.data])
        lines.extend("\t".join(map(_fmt, row)) for row in block.T)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_kv(tokens, lineno):
    out = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep:
            raise ParseError(f"expected key=value, got {tok!r}", lineno)
        out[key] = value
    return out


def load_dataset(path):
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty dataset file", 1)
    head = lines[0].split("\t")
    if head[0] != "cmfcorrect-dataset":
        raise ParseError("missing dataset header", 1)
    header = _parse_kv(head[1:], 1)
    try:
        version = int(header["version"])
        rate = float(header["sample_rate_hz"])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad header: {exc}", 1) from None
    if version != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema version {version}", 1)

    experiments = []
    i = 1
    while i < len(lines):
        lineno = i + 1
        tokens = lines[i].split("\t")
        if tokens[0] != "experiment":
            raise ParseError("expected an experiment metadata record", lineno)
        meta = _parse_kv(tokens[1:], lineno)
        try:
            group_id = int(meta["group_id"])
            op = OperatingPoint(**{name: float(meta[name]) for name in _OP_FIELDS})
            duration = float(meta["duration_s"])
            n = int(meta["n_samples"])
        except (KeyError, ValueError) as exc:
            raise ParseError(f"bad experiment record: {exc}", lineno) from None
        rows = lines[i + 1 : i + 1 + n]
        if len(rows) != n or n < 1:
            raise ParseError(f"experiment {group_id} declares {n} samples, found {len(rows)}", lineno)
        block = np.empty((n, 7))
        for j, r in enumerate(rows):
            values = r.split("\t")
            if len(values) != 7:
                raise ParseError(f"experiment {group_id}: data records must have 7 columns", lineno + 1 + j)
            try:
                block[j] = [float(v) for v in values]
            except ValueError as exc:
                raise ParseError(f"non-numeric sample in experiment {group_id}: {exc}", lineno + 1 + j) from None
        op.validate()
        if not np.all(np.isfinite(block)) or not np.all(block[:, 6] > 0):
            raise ValidationError(f"experiment {group_id}: non-finite values or truth <= 0 (line {lineno})")
        if group_id < 1 or any(e.group_id >= group_id for e in experiments):
            raise ValidationError(f"group_id {group_id} not positive and increasing (line {lineno})")
        experiments.append(
            Experiment(
                group_id,
                op,
                duration,
                rate,
                SampledSeries(block[:, 1:6].T, FEATURES, rate),
                SampledSeries(block[:, 6][None, :], (TARGET,), rate),
            )
        )
        i += 1 + n
    if not experiments:
        raise ParseError("dataset contains no experiments", len(lines))
    return experiments
