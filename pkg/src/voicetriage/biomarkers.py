"""Handcrafted acoustic biomarkers from sustained-vowel recordings.

The recording-level feature vector has 21 slots, in fixed order:
[gender, f0, jitter%, shimmer%, hnr_dB, f1, f2, f3, mfcc0..mfcc12].
Extractors that fail on a recording leave NaN sentinels; downstream scalers
impute them from training-set means.
"""

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .dataset import Recording, TARGET_SAMPLE_RATE, resample
from .errors import SignalTooShortError, TooFewCyclesError, UnvoicedError
from .spectral import SpectroConfig, mfcc

N_FEATURES = 21
FEATURE_NAMES = (
    "gender",
    "f0",
    "jitter",
    "shimmer",
    "hnr",
    "f1",
    "f2",
    "f3",
) + tuple(f"mfcc{i}" for i in range(13))

F0_MIN = 60.0
F0_MAX = 500.0
VOICING_THRESHOLD = 0.3
_OCTAVE_COST = 0.01
HNR_CLAMP_DB = (-20.0, 40.0)


@dataclass
class CycleMarks:
    peak_times: np.ndarray  # seconds, strictly increasing
    peak_amps: np.ndarray   # > 0, one per cycle

    def __len__(self):
        return self.peak_times.shape[0]


def _frame_signal(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    n_frames = 1 + (x.shape[0] - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    return x[idx]


def _parabolic_offset(ym, y0, yp):
    denom = ym - 2.0 * y0 + yp
    if denom == 0.0:
        return 0.0, y0
    d = 0.5 * (ym - yp) / denom
    d = min(1.0, max(-1.0, d))
    return d, y0 - 0.25 * (ym - yp) * d


def estimate_f0(samples, sample_rate, fmin: float = F0_MIN, fmax: float = F0_MAX) -> Optional[float]:
    """Median F0 over voiced frames via normalized autocorrelation, or None.

    Per frame, the autocorrelation peak in the lag band [1/fmax, 1/fmin] is
    refined by parabolic interpolation; a small octave cost prefers the shorter
    of near-equal period candidates. Frames whose peak correlation falls below
    0.3 count as unvoiced; an all-unvoiced recording yields None.
    """
    x = np.asarray(samples, dtype=np.float64)
    frame_len = int(round(2.0 * sample_rate / fmin))
    if x.shape[0] < frame_len:
        raise SignalTooShortError(
            f"need {frame_len} samples ({2.0 / fmin:.3f}s) for F0, got {x.shape[0]}"
        )
    hop = frame_len // 2
    frames = _frame_signal(x, frame_len, hop)
    min_lag = max(2, int(np.floor(sample_rate / fmax)))
    max_lag = min(int(np.ceil(sample_rate / fmin)), frame_len - 2)
    r = kernels.ncc_matrix(frames, min_lag, max_lag)
    lags = np.arange(r.shape[1])
    penalty = np.zeros_like(lags, dtype=np.float64)
    penalty[min_lag:] = _OCTAVE_COST * np.log2(lags[min_lag:] / float(min_lag))
    voiced = []
    for fi in range(r.shape[0]):
        row = r[fi]
        score = row.copy()
        score[:min_lag] = -np.inf
        score[min_lag:] -= penalty[min_lag:]
        tau = int(np.argmax(score))
        if tau < min_lag:
            continue
        if min_lag < tau < max_lag:
            d, peak = _parabolic_offset(row[tau - 1], row[tau], row[tau + 1])
        else:
            d, peak = 0.0, row[tau]
        if peak < VOICING_THRESHOLD:
            continue
        voiced.append(sample_rate / (tau + d))
    if not voiced:
        return None
    return float(np.median(voiced))


def detect_cycles(samples, sample_rate, f0: float) -> CycleMarks:
    """Locate one positive peak per glottal cycle by constrained peak picking.

    Starting from the global maximum, successive peaks are searched within
    +-40% of the expected period; peak times get sub-sample parabolic
    refinement. Raises TooFewCyclesError below 3 cycles.
    """
    if f0 is None or not np.isfinite(f0) or f0 <= 0:
        raise UnvoicedError("cycle detection requires a voiced f0")
    x = np.asarray(samples, dtype=np.float64)
    n = x.shape[0]
    period = sample_rate / f0
    half_win = 0.4 * period

    def refine(i):
        if 0 < i < n - 1:
            d, amp = _parabolic_offset(x[i - 1], x[i], x[i + 1])
        else:
            d, amp = 0.0, x[i]
        return i + d, amp

    start = int(np.argmax(x))
    marks = []
    t = float(start)
    while True:
        ti, amp = refine(int(round(t)))
        marks.append((ti, amp))
        pred = t + period
        lo = int(np.floor(pred - half_win))
        hi = int(np.ceil(pred + half_win)) + 1
        if lo >= n:
            break
        lo = max(lo, int(round(t)) + 1)
        hi = min(hi, n)
        if hi - lo < 1:
            break
        t = lo + int(np.argmax(x[lo:hi]))
    t = float(start)
    while True:
        pred = t - period
        hi = int(np.ceil(pred + half_win)) + 1
        lo = int(np.floor(pred - half_win))
        if hi <= 0:
            break
        hi = min(hi, int(round(t)))
        lo = max(lo, 0)
        if hi - lo < 1:
            break
        t = lo + int(np.argmax(x[lo:hi]))
        ti, amp = refine(int(round(t)))
        marks.append((ti, amp))
    marks.sort(key=lambda m: m[0])
    times = np.array([m[0] for m in marks]) / sample_rate
    amps = np.array([m[1] for m in marks])
    keep = amps > 0
    times, amps = times[keep], amps[keep]
    # boundary cycles clipped by the signal edges show up as weak spurious
    # peaks in the decay tail; drop leading/trailing marks far below median
    if amps.shape[0] >= 3:
        floor = 0.5 * np.median(amps)
        lo_i, hi_i = 0, amps.shape[0]
        while lo_i < hi_i and amps[lo_i] < floor:
            lo_i += 1
        while hi_i > lo_i and amps[hi_i - 1] < floor:
            hi_i -= 1
        times, amps = times[lo_i:hi_i], amps[lo_i:hi_i]
    if times.shape[0] < 3:
        raise TooFewCyclesError(f"found {times.shape[0]} cycles, need at least 3")
    return CycleMarks(peak_times=times, peak_amps=amps)


def jitter_local(marks: CycleMarks) -> float:
    """Local jitter %: 100 * mean|T_i - T_{i-1}| / mean(T) over cycle periods."""
    if len(marks) < 3:
        raise TooFewCyclesError("jitter needs at least 3 cycle marks")
    periods = np.diff(marks.peak_times)
    return float(100.0 * np.mean(np.abs(np.diff(periods))) / np.mean(periods))


def shimmer_local(marks: CycleMarks) -> float:
    """Local shimmer %: 100 * mean|A_i - A_{i+1}| / mean(A) over peak amplitudes."""
    if len(marks) < 3:
        raise TooFewCyclesError("shimmer needs at least 3 cycle marks")
    amps = marks.peak_amps
    return float(100.0 * np.mean(np.abs(np.diff(amps))) / np.mean(amps))


def hnr_from_correlation(r: float) -> float:
    """10*log10(r / (1-r)), clamped to [-20, 40] dB."""
    lo, hi = HNR_CLAMP_DB
    if r >= 1.0 / (1.0 + 10.0 ** (-hi / 10.0)):
        return hi
    if r <= 1.0 / (1.0 + 10.0 ** (-lo / 10.0)):
        return lo
    return float(np.clip(10.0 * np.log10(r / (1.0 - r)), lo, hi))


def hnr(samples, sample_rate, f0: float) -> float:
    """Harmonics-to-noise ratio: mean over voiced frames of the clamped
    10*log10(r/(1-r)) at the F0 autocorrelation lag."""
    if f0 is None or not np.isfinite(f0) or f0 <= 0:
        raise UnvoicedError("HNR requires a voiced f0")
    x = np.asarray(samples, dtype=np.float64)
    frame_len = int(round(2.0 * sample_rate / F0_MIN))
    if x.shape[0] < frame_len:
        raise SignalTooShortError("signal shorter than one HNR analysis frame")
    hop = frame_len // 2
    frames = _frame_signal(x, frame_len, hop)
    lag0 = sample_rate / f0
    lo = max(2, int(np.floor(0.9 * lag0)))
    hi = min(int(np.ceil(1.1 * lag0)), frame_len - 2)
    if hi <= lo:
        raise UnvoicedError("F0 lag out of analyzable range")
    r = kernels.ncc_matrix(frames, lo, hi)
    values = []
    for fi in range(r.shape[0]):
        row = r[fi]
        tau = lo + int(np.argmax(row[lo : hi + 1]))
        if lo < tau < hi:
            _, peak = _parabolic_offset(row[tau - 1], row[tau], row[tau + 1])
        else:
            peak = row[tau]
        if peak < VOICING_THRESHOLD:
            continue
        values.append(hnr_from_correlation(peak))
    if not values:
        raise UnvoicedError("no voiced frames at the F0 lag")
    return float(np.mean(values))


def _levinson_durbin(r: np.ndarray, order: int) -> np.ndarray:
    """Prediction coefficients a[1..order] for x[t] ~= sum a_k x[t-k]."""
    a = np.zeros(order)
    err = r[0]
    for i in range(1, order + 1):
        acc = r[i] - np.dot(a[: i - 1], r[i - 1 : 0 : -1])
        k = acc / err
        new_a = a.copy()
        new_a[i - 1] = k
        new_a[: i - 1] = a[: i - 1] - k * a[: i - 1][::-1]
        a = new_a
        err *= 1.0 - k * k
        if err <= 0:
            break
    return a


@dataclass
class FormantEstimate:
    frequencies: np.ndarray  # (3,) Hz ascending, NaN-filled when incomplete
    complete: bool


LPC_ORDER = 12
LPC_RATE = 11025
MAX_FORMANT_BANDWIDTH = 400.0
FORMANT_RANGE_HZ = (90.0, 5000.0)


def formants_lpc(samples, sample_rate) -> FormantEstimate:
    """First three formants via order-12 LPC at 11.025 kHz.

    Pre-emphasis 0.97, Kaiser-sinc downsampling, Levinson-Durbin on the
    windowed autocorrelation; roots with bandwidth under 400 Hz in
    [90, 5000] Hz qualify. Fewer than three qualifying roots leaves NaN slots
    with complete=False.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.shape[0] < int(0.05 * sample_rate):
        raise SignalTooShortError("formant analysis needs at least 50 ms of signal")
    emph = np.empty_like(x)
    emph[0] = x[0]
    emph[1:] = x[1:] - 0.97 * x[:-1]
    if sample_rate != LPC_RATE:
        emph = resample(emph, sample_rate, LPC_RATE)
    w = emph * np.hanning(emph.shape[0])
    r = np.array([np.dot(w[: w.shape[0] - k], w[k:]) for k in range(LPC_ORDER + 1)])
    out = np.full(3, np.nan)
    if r[0] <= 0:
        return FormantEstimate(frequencies=out, complete=False)
    a = _levinson_durbin(r, LPC_ORDER)
    poly = np.concatenate([[1.0], -a])
    roots = np.roots(poly)
    roots = roots[roots.imag > 1e-9]
    freqs = np.arctan2(roots.imag, roots.real) * LPC_RATE / (2.0 * np.pi)
    mags = np.abs(roots)
    with np.errstate(divide="ignore"):
        bws = -(LPC_RATE / np.pi) * np.log(mags)
    ok = (bws > 0) & (bws < MAX_FORMANT_BANDWIDTH)
    ok &= (freqs >= FORMANT_RANGE_HZ[0]) & (freqs <= FORMANT_RANGE_HZ[1])
    cand = np.sort(freqs[ok])
    take = min(3, cand.shape[0])
    out[:take] = cand[:take]
    return FormantEstimate(frequencies=out, complete=take == 3)


def assemble_features(rec: Recording, cfg: SpectroConfig = SpectroConfig()) -> np.ndarray:
    """Build the 21-slot biomarker vector for one recording.

    Extraction failures become NaN sentinels rather than exceptions; callers
    impute them from training statistics before classification.
    """
    samples = rec.samples
    if rec.sample_rate != TARGET_SAMPLE_RATE:
        samples = resample(samples, rec.sample_rate, TARGET_SAMPLE_RATE)
    vec = np.full(N_FEATURES, np.nan)
    vec[0] = rec.gender.encoded
    try:
        f0 = estimate_f0(samples, TARGET_SAMPLE_RATE)
    except SignalTooShortError:
        f0 = None
    if f0 is not None:
        vec[1] = f0
        try:
            marks = detect_cycles(samples, TARGET_SAMPLE_RATE, f0)
            vec[2] = jitter_local(marks)
            vec[3] = shimmer_local(marks)
        except (TooFewCyclesError, UnvoicedError):
            pass
        try:
            vec[4] = hnr(samples, TARGET_SAMPLE_RATE, f0)
        except (UnvoicedError, SignalTooShortError):
            pass
    try:
        est = formants_lpc(samples, TARGET_SAMPLE_RATE)
        vec[5:8] = est.frequencies
    except SignalTooShortError:
        pass
    try:
        vec[8:] = mfcc(samples, cfg)
    except SignalTooShortError:
        pass
    return vec


# ---------------------------------------------------------------------------
# Feature table CSV

def write_feature_table(entries, provenance: Optional[str] = None) -> str:
    """Serialize (descriptor, vector) pairs to the export CSV format."""
    buf = io.StringIO()
    if provenance:
        buf.write(f"# {provenance}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["recording_id", "speaker_id", "diagnosis"] + list(FEATURE_NAMES))
    for desc, vec in entries:
        writer.writerow(
            [desc.recording_id, desc.speaker_id, desc.diagnosis.value]
            + [repr(float(v)) for v in vec]
        )
    return buf.getvalue()


def read_feature_table(text: str):
    """Parse the export CSV back into (recording_id, speaker_id, diagnosis, vector)."""
    from .dataset import DiagnosisLabel

    rows = [
        r
        for r in csv.reader(io.StringIO(text))
        if r and not r[0].lstrip().startswith("#")
    ]
    header = rows[0]
    expected = ["recording_id", "speaker_id", "diagnosis"] + list(FEATURE_NAMES)
    if header != expected:
        raise ValueError("unexpected feature table header")
    out = []
    for r in rows[1:]:
        vec = np.array([float(v) for v in r[3:]])
        out.append((r[0], r[1], DiagnosisLabel(r[2]), vec))
    return out
