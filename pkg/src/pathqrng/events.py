"""Detection-event simulation, binning, and randomness extraction.

Streams are generated bin by bin: arrivals in each time bin are Poisson,
and each arrival lands in one of the four detector channels according to
the chip's output distribution.  Bins holding more than one record are
ambiguous and get resolved to a single outcome by a seeded tie rule before
bit extraction.  Bell statistics elsewhere use the raw records directly;
only the extracted bit pipeline goes through tie resolution.

The extractor is a seeded Toeplitz hash, implemented as one long FFT
convolution reduced mod 2, so that megabit inputs stay fast without any
matrix materialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, NamedTuple, Sequence

import numpy as np
from scipy import signal, stats

from .qmath import CHANNELS, distribution_dict, distribution_vector


class DetectionRecord(NamedTuple):
    timestamp_ns: int
    channel: str


@dataclass(frozen=True)
class EventStream:
    """One angle setting's worth of simulated detection records.

    Timestamps are bin start times in integer nanoseconds, non-decreasing.
    ``channels`` holds detector indices 0..3 in the fixed channel order.
    """

    timestamps_ns: np.ndarray
    channels: np.ndarray
    phi: float
    theta: float
    duration_s: float
    bin_width_us: float
    seed: int
    rate_hz: float | None = None

    def __post_init__(self) -> None:
        ts = np.asarray(self.timestamps_ns, dtype=np.int64)
        ch = np.asarray(self.channels, dtype=np.uint8)
        object.__setattr__(self, "timestamps_ns", ts)
        object.__setattr__(self, "channels", ch)
        for name in ("phi", "theta", "duration_s", "bin_width_us"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "seed", int(self.seed))
        if self.rate_hz is not None:
            object.__setattr__(self, "rate_hz", float(self.rate_hz))
        if ts.shape != ch.shape or ts.ndim != 1:
            raise ValueError("timestamps and channels must be matching 1-d arrays")
        if self.duration_s <= 0.0 or self.bin_width_us <= 0.0:
            raise ValueError("duration and bin width must be positive")
        if ts.size:
            if ts[0] < 0 or np.any(np.diff(ts) < 0):
                raise ValueError("timestamps must be non-negative and non-decreasing")
            if ts[-1] >= int(math.ceil(self.duration_s * 1e9)):
                raise ValueError("timestamp beyond the stream duration")
            if int(ch.max()) > 3:
                raise ValueError("channel indices must be 0..3")

    @property
    def bin_width_ns(self) -> int:
        return int(round(self.bin_width_us * 1000.0))

    def __len__(self) -> int:
        return int(self.timestamps_ns.size)

    def records(self) -> Iterator[DetectionRecord]:
        for t, c in zip(self.timestamps_ns, self.channels):
            yield DetectionRecord(int(t), CHANNELS[int(c)])


def simulate_events(distribution: Mapping[str, float] | Sequence[float], rate_hz: float,
                    duration_s: float, bin_width_us: float = 1.0, seed: int = 0,
                    phi: float = 0.0, theta: float = 0.0) -> EventStream:
    """Monte Carlo detection stream for one output distribution.

    Each of the ``duration / bin_width`` time bins receives a Poisson number
    of records with mean ``rate * bin_width`` (which must stay below one
    record per bin for the model to make sense), and every record picks a
    channel independently from ``distribution``.
    """
    p = distribution_vector(distribution)
    if np.any(p < 0.0) or abs(float(p.sum()) - 1.0) > 1e-9:
        raise ValueError("distribution must be non-negative and sum to 1")
    p = p / p.sum()
    if rate_hz < 0.0:
        raise ValueError("rate must be non-negative")
    mean_per_bin = rate_hz * bin_width_us * 1e-6
    if mean_per_bin >= 1.0:
        raise ValueError(f"mean records per bin {mean_per_bin!r} must be < 1; "
                         "shrink the bin or the rate")
    bin_ns = int(round(bin_width_us * 1000.0))
    if bin_ns < 1:
        raise ValueError("bin width below 1 ns")
    n_bins = int(duration_s * 1e9) // bin_ns
    if n_bins < 1:
        raise ValueError("duration shorter than one bin")

    rng = np.random.default_rng(seed)
    counts = rng.poisson(mean_per_bin, size=n_bins)
    total = int(counts.sum())
    channels = rng.choice(4, size=total, p=p).astype(np.uint8)
    timestamps = np.repeat(np.arange(n_bins, dtype=np.int64) * bin_ns, counts)
    return EventStream(timestamps, channels, phi=phi, theta=theta, duration_s=duration_s,
                       bin_width_us=bin_width_us, seed=seed, rate_hz=rate_hz)


def bin_and_resolve(stream: EventStream, tie_seed: int = 0, mode: str = "fired") -> np.ndarray:
    """Collapse each occupied bin to a single outcome label.

    Bins with one record keep it.  Bins with several are resolved with a
    seeded draw, consumed in chronological bin order:

    * ``"fired"``: uniformly among the distinct channels that fired;
    * ``"uniform4"``: uniformly among all four channels, discarding which
      detectors actually fired.

    Returns the outcome labels in bin order.
    """
    if mode not in ("fired", "uniform4"):
        raise ValueError(f"unknown tie mode {mode!r}")
    if len(stream) == 0:
        return np.empty(0, dtype="U2")
    bins = stream.timestamps_ns // stream.bin_width_ns
    starts = np.flatnonzero(np.r_[True, np.diff(bins) > 0])
    ends = np.r_[starts[1:], len(stream)]
    sizes = ends - starts

    out_idx = stream.channels[starts].astype(np.int64)
    rng = np.random.default_rng(tie_seed)
    for k in np.flatnonzero(sizes > 1):
        group = stream.channels[starts[k] : ends[k]]
        if mode == "fired":
            options = np.unique(group)
            out_idx[k] = int(options[rng.integers(len(options))])
        else:
            out_idx[k] = int(rng.integers(4))
    return np.asarray(CHANNELS, dtype="U2")[out_idx]


def estimate_probabilities(outcomes: Sequence[str] | np.ndarray) -> dict[str, float]:
    """Channel frequencies of a label (or index) sequence."""
    arr = np.asarray(outcomes)
    if arr.size == 0:
        raise ValueError("no outcomes to estimate from")
    if arr.dtype.kind in ("U", "S"):
        idx = {c: i for i, c in enumerate(CHANNELS)}
        try:
            arr = np.array([idx[str(v)] for v in arr], dtype=np.int64)
        except KeyError as bad:
            raise ValueError(f"unknown channel label {bad.args[0]!r}") from None
    counts = np.bincount(arr.astype(np.int64), minlength=4)
    if counts.size > 4:
        raise ValueError("channel indices must be 0..3")
    return distribution_dict(counts / arr.size)


def resolved_distribution(distribution: Mapping[str, float] | Sequence[float],
                          mean_per_bin: float, mode: str = "fired") -> dict[str, float]:
    """Exact outcome distribution after binning and tie resolution.

    Arrivals per bin are Poisson with the given mean, split over channels
    by ``distribution``; conditioning on the bin being occupied, this
    returns the law of :func:`bin_and_resolve`'s outcome.  Under ``"fired"``
    the per-channel arrival processes are independent Poissons, so the set
    of fired channels has a product law over 15 non-empty subsets.
    """
    d = distribution_vector(distribution)
    if np.any(d < 0.0) or abs(float(d.sum()) - 1.0) > 1e-9:
        raise ValueError("distribution must be non-negative and sum to 1")
    d = d / d.sum()
    lam = float(mean_per_bin)
    if lam <= 0.0:
        raise ValueError("mean per bin must be positive")
    occupied = -math.expm1(-lam)
    out = np.zeros(4)
    if mode == "fired":
        fire = -np.expm1(-lam * d)  # P(channel has >= 1 arrival)
        for mask in range(1, 16):
            members = [c for c in range(4) if mask >> c & 1]
            w = 1.0
            for c in range(4):
                w *= fire[c] if c in members else 1.0 - fire[c]
            for c in members:
                out[c] += w / len(members)
    elif mode == "uniform4":
        single = lam * math.exp(-lam)
        multi = occupied - single
        out = single * d + multi / 4.0
    else:
        raise ValueError(f"unknown tie mode {mode!r}")
    return distribution_dict(out / occupied)


@dataclass(frozen=True)
class WindowedTrace:
    """Per-window channel probabilities and Bell value over four streams.

    ``probabilities`` has shape (4 settings, n_windows, 4 channels), in the
    CHSH setting order (phi,theta), (phi,theta'), (phi',theta),
    (phi',theta').  ``chi_values`` applies the minus sign to the second
    setting.  The confidence interval is the normal-approximation interval
    for the mean of the per-window Bell values.
    """

    window_s: float
    confidence: float
    probabilities: np.ndarray
    chi_values: np.ndarray
    chi_mean: float
    ci_low: float
    ci_high: float
    n_windows: int = field(default=0)

    def __post_init__(self) -> None:
        if self.n_windows == 0:
            object.__setattr__(self, "n_windows", int(self.chi_values.size))


def windowed_traces(streams: Sequence[EventStream], window_s: float = 0.05,
                    confidence: float = 0.99) -> WindowedTrace:
    """Slice four CHSH streams into common windows and trace the Bell value.

    Uses raw record counts per window (no tie resolution).  Needs at least
    two full windows and at least one record per stream in every window.
    """
    if len(streams) != 4:
        raise ValueError("need the four CHSH streams in setting order")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    n_win = min(int(s.duration_s / window_s + 1e-9) for s in streams)
    if n_win < 2:
        raise ValueError("need at least two windows; shrink the window or extend the run")
    width_ns = int(round(window_s * 1e9))
    probs = np.empty((4, n_win, 4))
    es = np.empty((4, n_win))
    for i, s in enumerate(streams):
        inside = s.timestamps_ns < n_win * width_ns
        idx = s.timestamps_ns[inside] // width_ns
        ch = s.channels[inside].astype(np.int64)
        counts = np.bincount(idx * 4 + ch, minlength=4 * n_win).reshape(n_win, 4).astype(float)
        totals = counts.sum(axis=1)
        if np.any(totals == 0):
            raise ValueError(f"stream {i} has an empty {window_s} s window")
        probs[i] = counts / totals[:, None]
        es[i] = probs[i, :, 0] + probs[i, :, 3] - probs[i, :, 1] - probs[i, :, 2]
    chis = es[0] - es[1] + es[2] + es[3]
    mean = float(chis.mean())
    half = 0.0
    if n_win > 1:
        z = float(stats.norm.ppf(0.5 + confidence / 2.0))
        half = z * float(chis.std(ddof=1)) / math.sqrt(n_win)
    return WindowedTrace(window_s=window_s, confidence=confidence, probabilities=probs,
                         chi_values=chis, chi_mean=mean, ci_low=mean - half, ci_high=mean + half)


def raw_bits(outcomes: Sequence[str] | np.ndarray) -> str:
    """Two bits per outcome: the channel index written in binary.

    UF -> 00, UN -> 01, DF -> 10, DN -> 11; the first bit is the absolute
    position (U/D), the second the relative one (F/N).
    """
    arr = np.asarray(outcomes)
    if arr.size == 0:
        return ""
    if arr.dtype.kind in ("U", "S"):
        idx = {c: i for i, c in enumerate(CHANNELS)}
        codes = np.array([idx[str(v)] for v in arr], dtype=np.int64)
    else:
        codes = arr.astype(np.int64)
        if codes.size and (codes.min() < 0 or codes.max() > 3):
            raise ValueError("channel indices must be 0..3")
    table = np.array(["00", "01", "10", "11"])
    return "".join(table[codes])


def toeplitz_extract(bits: str, h_min_bits_per_event: float,
                     security_eps: float = 2.0 ** -32, seed: int = 0) -> str:
    """Seeded Toeplitz extraction of the certified entropy from raw bits.

    Each detection event contributes two raw bits but only
    ``h_min_bits_per_event`` certified ones, so ``n = len(bits)`` raw bits
    hold ``k = n // 2`` events' worth of entropy.  The output length is

        m = floor(k * h_min) - ceil(2 * log2(1 / eps)),

    the leftover-hash length at distinguishing advantage ``security_eps``.
    The Toeplitz matrix is generated from ``seed``; same seed, same input,
    same output.
    """
    if not 0.0 < h_min_bits_per_event <= 1.0:
        raise ValueError("certified entropy per event must lie in (0, 1]")
    if not 0.0 < security_eps < 1.0:
        raise ValueError("security parameter must lie in (0, 1)")
    if any(c not in "01" for c in bits):
        raise ValueError("raw bits must be a 0/1 string")
    n = len(bits)
    k = n // 2
    m = math.floor(k * h_min_bits_per_event) - math.ceil(2.0 * math.log2(1.0 / security_eps))
    if m <= 0:
        raise ValueError(f"insufficient certified entropy ({k} events) for the "
                         f"security parameter; need a longer run")

    x = np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0")
    rng = np.random.default_rng(seed)
    t = rng.integers(0, 2, size=n + m - 1, dtype=np.uint32)

    # y_i = sum_j t[i - j + n - 1] x_j mod 2 is a slice of the convolution
    # of t with x; the counts stay far below 2^53, so the FFT convolution
    # rounds back to the exact integers
    conv = signal.fftconvolve(t.astype(float), x.astype(float))[n - 1 : n - 1 + m]
    ints = np.rint(conv)
    if float(np.max(np.abs(conv - ints), initial=0.0)) > 0.25:
        raise RuntimeError("convolution lost integer precision")
    y = ints.astype(np.int64) & 1
    return "".join("1" if b else "0" for b in y)
