"""Evaluation metrics, test-case segment selection and signal alignment.

SNR-style metrics are capped at +/-100 dB so reports never carry
infinities.  Segmental SNR averages 30 ms frame SNRs, clamped to
[-10, +35] dB, over voice-active regions only.  Reference signals
recorded on a separate clock are aligned with a coarse offset followed
by a GCC-PHAT refinement.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

DB_CAP = 100.0
SEG_SNR_FRAME_S = 0.030
SEG_SNR_CLAMP_DB = (-10.0, 35.0)


class UndefinedMetricError(ValueError):
    """Metric has no value for the given inputs (e.g. no active frames)."""


Interval = tuple[float, float]


@dataclass(frozen=True)
class VaSegments:
    """Voice-activity intervals [start_s, end_s) for one participant."""

    participant_id: str
    segments: tuple[Interval, ...]

    def __post_init__(self):
        segs = tuple((float(a), float(b)) for a, b in self.segments)
        for a, b in segs:
            if not a < b:
                raise ValueError(f"empty or inverted interval [{a}, {b})")
        for (_, b0), (a1, _) in zip(segs, segs[1:]):
            if a1 < b0:
                raise ValueError("intervals must be sorted and non-overlapping")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def from_intervals(cls, participant_id: str, intervals: Iterable[Interval]) -> "VaSegments":
        """Build from unsorted, possibly overlapping intervals (merged)."""
        return cls(participant_id, tuple(_merge(list(intervals))))

    def total_s(self) -> float:
        return sum(b - a for a, b in self.segments)


class TestCase(Enum):
    NOISE = "noise"
    NOISE_AND_INTERFERER = "noise_and_interferer"


TestCase.__test__ = False  # a domain term, not a pytest class


# --- interval algebra (half-open, sorted, disjoint) -------------------------


def _merge(intervals: list[Interval]) -> list[Interval]:
    out: list[Interval] = []
    for a, b in sorted((float(a), float(b)) for a, b in intervals):
        if b <= a:
            continue
        if out and a <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def _intersect(xs: list[Interval], ys: list[Interval]) -> list[Interval]:
    out = []
    i = j = 0
    while i < len(xs) and j < len(ys):
        a = max(xs[i][0], ys[j][0])
        b = min(xs[i][1], ys[j][1])
        if a < b:
            out.append((a, b))
        if xs[i][1] <= ys[j][1]:
            i += 1
        else:
            j += 1
    return out


def _subtract(xs: list[Interval], ys: list[Interval]) -> list[Interval]:
    out = []
    ys = list(ys)
    for a, b in xs:
        cur = a
        for ya, yb in ys:
            if yb <= cur or ya >= b:
                continue
            if ya > cur:
                out.append((cur, ya))
            cur = max(cur, yb)
            if cur >= b:
                break
        if cur < b:
            out.append((cur, b))
    return out


def select_segments(
    va: Iterable[VaSegments] | Mapping[str, VaSegments],
    target_id: str,
    wearer_id: str,
    case: TestCase,
) -> VaSegments:
    """Evaluation intervals for one target under a test case.

    ``noise``: target active and no other participant active.
    ``noise_and_interferer``: target active, competing talkers allowed.
    Intervals where the device wearer is active are excluded in both cases.
    """
    if isinstance(va, Mapping):
        by_id = dict(va)
    else:
        by_id = {v.participant_id: v for v in va}
    if target_id not in by_id:
        raise ValueError(f"unknown target participant '{target_id}'")
    selected = list(by_id[target_id].segments)
    if case is TestCase.NOISE:
        others = [iv for pid, v in by_id.items() if pid != target_id for iv in v.segments]
        selected = _subtract(selected, _merge(others))
    elif case is not TestCase.NOISE_AND_INTERFERER:
        raise ValueError(f"unknown test case {case!r}")
    if wearer_id in by_id:
        selected = _subtract(selected, list(by_id[wearer_id].segments))
    return VaSegments(participant_id=target_id, segments=tuple(selected))


# --- SNR family --------------------------------------------------------------


def _cap_db(value: float) -> float:
    return float(min(DB_CAP, max(-DB_CAP, value)))


def snr_db(signal_component: np.ndarray, residual_component: np.ndarray) -> float:
    """Broadband ratio of signal power to residual power in dB, capped +/-100."""
    s = np.asarray(signal_component, dtype=np.float64)
    r = np.asarray(residual_component, dtype=np.float64)
    if s.shape != r.shape:
        raise ValueError(f"length mismatch: {s.shape} vs {r.shape}")
    ps = float(np.sum(s**2))
    pr = float(np.sum(r**2))
    if ps == 0.0:
        return -DB_CAP
    if pr == 0.0:
        return DB_CAP
    return _cap_db(10.0 * np.log10(ps / pr))


def seg_snr_db(
    signal: np.ndarray,
    residual: np.ndarray,
    active: VaSegments,
    sample_rate: float,
    frame_s: float = SEG_SNR_FRAME_S,
    clamp_db: tuple[float, float] = SEG_SNR_CLAMP_DB,
) -> float:
    """Mean of clamped per-frame SNRs over voice-active regions.

    Frames of ``frame_s`` partition each active interval; frames with zero
    signal energy are skipped.  Raises UndefinedMetricError when nothing
    remains to average.
    """
    s = np.asarray(signal, dtype=np.float64)
    r = np.asarray(residual, dtype=np.float64)
    if s.shape != r.shape:
        raise ValueError(f"length mismatch: {s.shape} vs {r.shape}")
    if frame_s <= 0.0:
        raise ValueError("frame_s must be positive")
    frame_len = max(1, int(round(frame_s * sample_rate)))
    lo, hi = clamp_db
    values = []
    for a, b in active.segments:
        i0 = max(0, int(round(a * sample_rate)))
        i1 = min(s.size, int(round(b * sample_rate)))
        for start in range(i0, i1, frame_len):
            stop = min(start + frame_len, i1)
            ps = float(np.sum(s[start:stop] ** 2))
            if ps == 0.0:
                continue
            pr = float(np.sum(r[start:stop] ** 2))
            snr = DB_CAP if pr == 0.0 else 10.0 * np.log10(ps / pr)
            values.append(min(hi, max(lo, snr)))
    if not values:
        raise UndefinedMetricError("no voice-active frames with signal energy")
    return float(np.mean(values))


def si_sdr_db(estimate: np.ndarray, reference: np.ndarray) -> float:
    """Scale-invariant signal-to-distortion ratio in dB, capped +/-100.

    The estimate is projected onto the reference; the ratio of projected
    power to residual power is scale-invariant in the estimate.
    """
    e = np.asarray(estimate, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if e.shape != r.shape:
        raise ValueError(f"length mismatch: {e.shape} vs {r.shape}")
    pr = float(np.dot(r, r))
    if pr == 0.0:
        raise ValueError("reference has zero energy")
    alpha = float(np.dot(e, r)) / pr
    target = alpha * r
    pt = float(np.dot(target, target))
    pe = float(np.sum((e - target) ** 2))
    if pt == 0.0:
        return -DB_CAP
    if pe == 0.0:
        return DB_CAP
    return _cap_db(10.0 * np.log10(pt / pe))


# --- alignment ---------------------------------------------------------------


def gcc_phat_delay(x: np.ndarray, y: np.ndarray, max_lag: int) -> int:
    """Integer delay of y relative to x from the GCC-PHAT peak.

    Positive lag means y lags x (y looks like x delayed).  Cross-spectrum
    bins are normalized to unit magnitude; bins below 1e-12 are zeroed.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    if min(x.size, y.size) < 2 * max_lag:
        raise ValueError(f"signals must be at least 2*max_lag = {2 * max_lag} samples")
    if not np.any(x) or not np.any(y):
        raise ValueError("all-zero input signal")
    n = max(x.size, y.size) + max_lag
    nfft = 1 << (n - 1).bit_length()
    spec = np.fft.rfft(y, nfft) * np.conj(np.fft.rfft(x, nfft))
    mag = np.abs(spec)
    keep = mag >= 1e-12
    spec = np.where(keep, spec, 0.0) / np.where(keep, mag, 1.0)
    cc = np.fft.irfft(spec, nfft)
    lags = np.concatenate([np.arange(-max_lag, 0), np.arange(max_lag + 1)])
    samples = np.concatenate([cc[-max_lag:], cc[: max_lag + 1]])
    return int(lags[np.argmax(np.abs(samples))])


def shift_samples(x: np.ndarray, lag: int, length: int | None = None) -> np.ndarray:
    """Shift x by ``lag`` samples (positive delays), zero-padding the edges."""
    x = np.asarray(x, dtype=np.float64)
    length = x.size if length is None else int(length)
    out = np.zeros(length)
    src_start = max(0, -lag)
    dst_start = max(0, lag)
    n = min(x.size - src_start, length - dst_start)
    if n > 0:
        out[dst_start : dst_start + n] = x[src_start : src_start + n]
    return out


def align_to_reference(
    x: np.ndarray,
    ref: np.ndarray,
    coarse_offset: int = 0,
    max_lag: int = 2400,
) -> np.ndarray:
    """Align x to ref: apply the coarse offset, then refine with GCC-PHAT.

    Returns x shifted by coarse_offset plus the refined lag, zero-padded,
    with the same length as ref.
    """
    ref = np.asarray(ref, dtype=np.float64)
    coarse = shift_samples(x, int(coarse_offset), length=ref.size)
    residual = gcc_phat_delay(coarse, ref, max_lag)
    return shift_samples(x, int(coarse_offset) + residual, length=ref.size)


# --- file formats ------------------------------------------------------------


def load_va(path: str | os.PathLike) -> dict[str, VaSegments]:
    """Read voice activity JSON: array of {participant_id, start_s, end_s}."""
    with open(path, encoding="utf-8") as f:
        entries = json.load(f)
    if not isinstance(entries, list):
        raise ValueError("VA file must be a JSON array")
    per_id: dict[str, list[Interval]] = {}
    for i, e in enumerate(entries):
        try:
            per_id.setdefault(str(e["participant_id"]), []).append(
                (float(e["start_s"]), float(e["end_s"]))
            )
        except (TypeError, KeyError, ValueError) as exc:
            raise ValueError(f"VA entry {i}: {exc}") from exc
    return {pid: VaSegments.from_intervals(pid, ivs) for pid, ivs in per_id.items()}


def write_va(path: str | os.PathLike, va: Mapping[str, VaSegments]) -> None:
    entries = [
        {"participant_id": pid, "start_s": a, "end_s": b}
        for pid in sorted(va)
        for a, b in va[pid].segments
    ]
    tmp = f"{os.fspath(path)}.tmp{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(entries, f, indent=2)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def metric_report(
    test_case: TestCase,
    target_id: str,
    snr: float | None,
    seg_snr: float | None,
    si_sdr: float | None,
    external: Mapping[str, float] | None = None,
) -> dict:
    """Single-signal metric report; None marks an undefined metric."""
    return {
        "test_case": test_case.value,
        "target_id": target_id,
        "snr_db": snr,
        "seg_snr_db": seg_snr,
        "si_sdr_db": si_sdr,
        "external": dict(external or {}),
    }
