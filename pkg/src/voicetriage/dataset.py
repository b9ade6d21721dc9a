"""Cohort data handling: audio decode/resample, manifest ingestion, speaker-grouped
stratified splits, diagnosis-to-etiology mapping, and the synthetic phonation
generator used as the extraction-oracle test signal."""

import csv
import io
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import (
    DataError,
    DuplicateRecordingIdError,
    EmptyAudioError,
    MalformedWavError,
    MissingColumnError,
    UnknownEnumError,
    UnsupportedCodecError,
)

TARGET_SAMPLE_RATE = 44100


class Vowel(str, Enum):
    A = "a"
    I = "i"
    U = "u"


class PitchCondition(str, Enum):
    NEUTRAL = "neutral"
    HIGH = "high"
    LOW = "low"
    GLIDE = "glide"


class Gender(str, Enum):
    FEMALE = "F"
    MALE = "M"

    @property
    def encoded(self) -> float:
        """Binary feature encoding: female 0, male 1."""
        return 0.0 if self is Gender.FEMALE else 1.0


class DiagnosisLabel(str, Enum):
    HEALTHY = "Healthy"
    HYPERFUNCTIONAL_DYSPHONIA = "Hyperfunctional Dysphonia"
    LARYNGITIS = "Laryngitis"
    FUNCTIONAL_DYSPHONIA = "Functional Dysphonia"
    DYSODIA = "Dysodia"
    PSYCHOGENIC_DYSPHONIA = "Psychogenic Dysphonia"
    CONTACT_PACHYDERMIA = "Contact Pachydermia"
    REINKE_EDEMA = "Reinke Edema"
    VOCAL_CORD_POLYP = "Vocal Cord Polyp"


class EtiologyGroup(str, Enum):
    HEALTHY = "Healthy"
    FUNCTIONAL_PSYCHOGENIC = "FunctionalPsychogenic"
    STRUCTURAL_INFLAMMATORY = "StructuralInflammatory"


class Partition(str, Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


_GROUP_OF = {
    DiagnosisLabel.HEALTHY: EtiologyGroup.HEALTHY,
    DiagnosisLabel.HYPERFUNCTIONAL_DYSPHONIA: EtiologyGroup.FUNCTIONAL_PSYCHOGENIC,
    DiagnosisLabel.FUNCTIONAL_DYSPHONIA: EtiologyGroup.FUNCTIONAL_PSYCHOGENIC,
    DiagnosisLabel.PSYCHOGENIC_DYSPHONIA: EtiologyGroup.FUNCTIONAL_PSYCHOGENIC,
    DiagnosisLabel.DYSODIA: EtiologyGroup.FUNCTIONAL_PSYCHOGENIC,
    DiagnosisLabel.LARYNGITIS: EtiologyGroup.STRUCTURAL_INFLAMMATORY,
    DiagnosisLabel.CONTACT_PACHYDERMIA: EtiologyGroup.STRUCTURAL_INFLAMMATORY,
    DiagnosisLabel.REINKE_EDEMA: EtiologyGroup.STRUCTURAL_INFLAMMATORY,
    DiagnosisLabel.VOCAL_CORD_POLYP: EtiologyGroup.STRUCTURAL_INFLAMMATORY,
}


def map_group(diagnosis: DiagnosisLabel) -> EtiologyGroup:
    """Map a diagnosis to its etiological triage group (total over the enum)."""
    return _GROUP_OF[diagnosis]


@dataclass
class Recording:
    recording_id: str
    speaker_id: str
    samples: np.ndarray
    sample_rate: int
    vowel: Vowel
    pitch: PitchCondition
    gender: Gender
    diagnosis: DiagnosisLabel
    age: Optional[float] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size == 0:
            raise DataError("recording has no samples")
        if self.sample_rate <= 0:
            raise DataError("sample_rate must be positive")
        peak = float(np.max(np.abs(self.samples)))
        if peak > 1.0 + 1e-9:
            raise DataError(f"samples exceed [-1, 1] (peak {peak:.6g})")


@dataclass(frozen=True)
class RecordingDescriptor:
    recording_id: str
    path: str
    speaker_id: str
    gender: Gender
    age: Optional[float]
    vowel: Vowel
    pitch: PitchCondition
    diagnosis: DiagnosisLabel
    split: Optional[Partition] = None


# ---------------------------------------------------------------------------
# WAV codec (RIFF/WAVE, PCM16 little-endian)

def decode_wav(data: bytes):
    """Decode PCM16 RIFF/WAVE bytes to (samples in [-1, 1], sample_rate).

    Stereo is downmixed by channel mean. Raises MalformedWavError,
    UnsupportedCodecError, or EmptyAudioError.
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWavError("not a RIFF/WAVE container")
    pos = 12
    fmt = None
    payload = None
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise MalformedWavError(f"chunk {cid!r} truncated")
        if cid == b"fmt ":
            if size < 16:
                raise MalformedWavError("fmt chunk too small")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            payload = body
        pos += 8 + size + (size & 1)
    if fmt is None or payload is None:
        raise MalformedWavError("missing fmt or data chunk")
    audio_format, channels, sample_rate, _, _, bits = fmt
    if audio_format != 1 or bits != 16:
        raise UnsupportedCodecError(
            f"only PCM16 supported (format {audio_format}, {bits}-bit)"
        )
    if channels not in (1, 2):
        raise UnsupportedCodecError(f"unsupported channel count {channels}")
    if len(payload) == 0:
        raise EmptyAudioError("zero-length data chunk")
    if len(payload) % (2 * channels) != 0:
        raise MalformedWavError("data chunk not frame-aligned")
    raw = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    if channels == 2:
        raw = raw.reshape(-1, 2).mean(axis=1)
    return raw, int(sample_rate)


def encode_wav(samples: np.ndarray, sample_rate: int) -> bytes:
    """Encode float samples in [-1, 1] to mono PCM16 RIFF/WAVE bytes."""
    x = np.asarray(samples, dtype=np.float64)
    pcm = np.clip(np.rint(x * 32768.0), -32768, 32767).astype("<i2")
    payload = pcm.tobytes()
    hdr = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        1,
        1,
        sample_rate,
        sample_rate * 2,
        2,
        16,
        b"data",
        len(payload),
    )
    return hdr + payload


# ---------------------------------------------------------------------------
# Resampling

def resample(samples: Sequence[float], from_rate: float, to_rate: float) -> np.ndarray:
    """Band-limited resampling (64-tap Kaiser-windowed sinc).

    Output length is round(len * to_rate / from_rate); equal rates return an
    identical copy.
    """
    if from_rate <= 0 or to_rate <= 0:
        raise DataError("sample rates must be positive")
    x = np.ascontiguousarray(samples, dtype=np.float64)
    if from_rate == to_rate:
        return x.copy()
    n_out = int(round(x.shape[0] * to_rate / from_rate))
    step = from_rate / to_rate
    cutoff = min(1.0, to_rate / from_rate)
    return kernels.sinc_resample(x, n_out, step, cutoff, 32, 9.0)


# ---------------------------------------------------------------------------
# Manifest

MANIFEST_COLUMNS = (
    "recording_id",
    "path",
    "speaker_id",
    "gender",
    "age",
    "vowel",
    "pitch",
    "diagnosis",
)


def _parse_enum(enum_cls, token, row, fieldname):
    try:
        return enum_cls(token)
    except ValueError:
        raise UnknownEnumError(row, fieldname, token) from None


def parse_manifest(text: str):
    """Parse a cohort manifest CSV into descriptors.

    The header must contain all of MANIFEST_COLUMNS (an optional extra `split`
    column is honored); lines starting with '#' are ignored. Errors carry the
    1-based row number.
    """
    lines = [ln for ln in io.StringIO(text)]
    reader = csv.reader(lines)
    rows = list(reader)
    numbered = [
        (i + 1, r) for i, r in enumerate(rows) if r and not r[0].lstrip().startswith("#")
    ]
    if not numbered:
        raise MissingColumnError(0, "empty manifest (no header row)")
    header_row, header = numbered[0]
    header = [h.strip() for h in header]
    for col in MANIFEST_COLUMNS:
        if col not in header:
            raise MissingColumnError(header_row, f"missing column {col!r}")
    col_idx = {name: header.index(name) for name in header}
    has_split = "split" in col_idx
    seen_ids = {}
    out = []
    for row_no, row in numbered[1:]:
        if len(row) < len(header):
            raise MissingColumnError(row_no, f"expected {len(header)} fields, got {len(row)}")
        get = lambda c: row[col_idx[c]].strip()
        rid = get("recording_id")
        if rid in seen_ids:
            raise DuplicateRecordingIdError(
                row_no, f"duplicate recording_id {rid!r} (first at row {seen_ids[rid]})"
            )
        seen_ids[rid] = row_no
        age_tok = get("age")
        age = float(age_tok) if age_tok else None
        split = None
        if has_split and row[col_idx["split"]].strip():
            split = _parse_enum(Partition, row[col_idx["split"]].strip(), row_no, "split")
        out.append(
            RecordingDescriptor(
                recording_id=rid,
                path=get("path"),
                speaker_id=get("speaker_id"),
                gender=_parse_enum(Gender, get("gender"), row_no, "gender"),
                age=age,
                vowel=_parse_enum(Vowel, get("vowel"), row_no, "vowel"),
                pitch=_parse_enum(PitchCondition, get("pitch"), row_no, "pitch"),
                diagnosis=_parse_enum(DiagnosisLabel, get("diagnosis"), row_no, "diagnosis"),
                split=split,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Speaker-grouped stratified split

@dataclass(frozen=True)
class SplitAssignment:
    by_speaker: dict
    warnings: tuple = ()

    def partition_of(self, speaker_id: str) -> Partition:
        return self.by_speaker[speaker_id]


def _allocate(n: int, ratios) -> tuple:
    """Largest-remainder allocation of n items over ratios; ties favor earlier parts."""
    raw = [n * r for r in ratios]
    counts = [int(np.floor(v)) for v in raw]
    rem = n - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:rem]:
        counts[i] += 1
    return tuple(counts)


def split_speakers(descriptors, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> SplitAssignment:
    """Assign every speaker to exactly one partition, stratified by diagnosis.

    Deterministic for a fixed seed. Strata with fewer than 3 speakers go
    entirely to train and emit a warning record.
    """
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError("ratios must be positive and sum to 1")
    diag_of = {}
    for d in descriptors:
        prev = diag_of.get(d.speaker_id)
        if prev is not None and prev != d.diagnosis:
            raise DataError(
                f"speaker {d.speaker_id!r} has conflicting diagnoses {prev.value!r} / {d.diagnosis.value!r}"
            )
        diag_of[d.speaker_id] = d.diagnosis
    strata = {}
    for spk, diag in diag_of.items():
        strata.setdefault(diag, []).append(spk)
    rng = np.random.default_rng(seed)
    assignment = {}
    warnings = []
    parts = (Partition.TRAIN, Partition.VALIDATION, Partition.TEST)
    for diag in sorted(strata, key=lambda d: d.value):
        speakers = sorted(strata[diag])
        rng.shuffle(speakers)
        if len(speakers) < 3:
            for spk in speakers:
                assignment[spk] = Partition.TRAIN
            warnings.append(
                f"stratum {diag.value!r} has {len(speakers)} speaker(s); assigned to train only"
            )
            continue
        counts = _allocate(len(speakers), ratios)
        pos = 0
        for part, cnt in zip(parts, counts):
            for spk in speakers[pos : pos + cnt]:
                assignment[spk] = part
            pos += cnt
    return SplitAssignment(by_speaker=assignment, warnings=tuple(warnings))


# ---------------------------------------------------------------------------
# Synthetic phonation

@dataclass(frozen=True)
class SynthParams:
    f0: float
    jitter_pct: float = 0.0
    shimmer_pct: float = 0.0
    noise_snr_db: float = 60.0
    formants: tuple = ((700.0, 100.0), (1200.0, 120.0), (2600.0, 150.0))
    duration: float = 1.0
    sample_rate: int = TARGET_SAMPLE_RATE
    seed: int = 0
    # slow physiologic tremor: sinusoidal frequency/amplitude modulation.
    # Unlike jitter/shimmer (cycle-to-cycle), this is a few-Hz drift that shows
    # in the spectrogram's temporal texture far more than in local perturbation
    # measures. Zero disables it.
    tremor_rate_hz: float = 0.0
    tremor_fm_pct: float = 0.0
    tremor_am_pct: float = 0.0
    # bursty aspiration: sinusoidal amplitude modulation of the noise floor at
    # a few Hz. Total noise power stays at noise_snr_db; only its temporal
    # distribution changes, so recording-level biomarkers barely move while the
    # spectrogram's noise texture pulses visibly.
    noise_mod_rate_hz: float = 0.0
    noise_mod_depth: float = 0.0

    def __post_init__(self):
        if not (60.0 <= self.f0 <= 500.0):
            raise DataError("f0 must lie in [60, 500] Hz")
        if self.duration <= 0:
            raise DataError("duration must be positive")
        if any(bw <= 0 for _, bw in self.formants):
            raise DataError("formant bandwidths must be positive")
        if self.tremor_rate_hz < 0 or self.tremor_fm_pct < 0 or self.tremor_am_pct < 0:
            raise DataError("tremor parameters must be nonnegative")
        if self.noise_mod_rate_hz < 0 or not (0.0 <= self.noise_mod_depth <= 1.0):
            raise DataError("noise modulation: rate >= 0 and depth in [0, 1]")


# Uniform perturbations of half-width w have E|u - u'| = 2w/3, so scaling the
# half-width by 3/2 makes the expected measured local jitter/shimmer equal the
# requested percentage.
_PERTURB_SCALE = 1.5


def synth_phonation(params: SynthParams):
    """Generate a glottal-pulse phonation signal with known ground truth.

    Impulse train at f0 with per-cycle period and amplitude perturbations,
    shaped by a cascade of three two-pole resonators, plus white noise at the
    requested SNR. Deterministic per seed. Returns (samples, sample_rate).
    """
    sr = params.sample_rate
    rng = np.random.default_rng(params.seed)
    n_samples = int(round(params.duration * sr))
    period = sr / params.f0
    n_cycles = int(np.ceil(n_samples / period)) + 2

    jit = _PERTURB_SCALE * params.jitter_pct / 100.0
    shim = _PERTURB_SCALE * params.shimmer_pct / 100.0
    periods = period * (1.0 + jit * rng.uniform(-1.0, 1.0, n_cycles))
    amps = 1.0 + shim * rng.uniform(-1.0, 1.0, n_cycles)
    phase_fm, phase_am = rng.uniform(0.0, 2.0 * np.pi, 2)
    if params.tremor_rate_hz > 0.0:
        cycle_t = np.arange(n_cycles) / params.f0
        wobble = 2.0 * np.pi * params.tremor_rate_hz * cycle_t
        # raise f0 -> shorten the period
        periods = periods * (1.0 - params.tremor_fm_pct / 100.0 * np.sin(wobble + phase_fm))
        amps = amps * (1.0 + params.tremor_am_pct / 100.0 * np.sin(wobble + phase_am))
    positions = np.cumsum(periods) - periods[0]

    excitation = np.zeros(n_samples)
    for pos, amp in zip(positions, amps):
        base = int(np.floor(pos))
        frac = pos - base
        if 0 <= base < n_samples:
            excitation[base] += amp * (1.0 - frac)
        if 0 <= base + 1 < n_samples:
            excitation[base + 1] += amp * frac

    a1 = np.empty(3)
    a2 = np.empty(3)
    gain = np.empty(3)
    for i, (freq, bw) in enumerate(params.formants):
        r = np.exp(-np.pi * bw / sr)
        theta = 2.0 * np.pi * freq / sr
        a1[i] = 2.0 * r * np.cos(theta)
        a2[i] = -r * r
        # unity gain at the resonance frequency
        w = np.exp(-1j * theta)
        gain[i] = abs(1.0 - a1[i] * w - a2[i] * w * w)
    voiced = kernels.iir_cascade(excitation, a1, a2, gain)

    sig_power = float(np.mean(voiced**2))
    noise_power = sig_power / (10.0 ** (params.noise_snr_db / 10.0))
    noise = rng.normal(0.0, 1.0, n_samples)
    if params.noise_mod_rate_hz > 0.0 and params.noise_mod_depth > 0.0:
        phase = rng.uniform(0.0, 2.0 * np.pi)
        t = np.arange(n_samples) / sr
        envelope = 1.0 + params.noise_mod_depth * np.sin(
            2.0 * np.pi * params.noise_mod_rate_hz * t + phase
        )
        noise = noise * envelope
        # keep the requested total SNR: only the temporal shape changes
        noise = noise / np.sqrt(np.mean(envelope**2))
    out = voiced + noise * np.sqrt(noise_power)
    peak = float(np.max(np.abs(out)))
    if peak > 0:
        out = out * (0.9 / peak)
    return out, sr


def make_recording(
    recording_id: str,
    speaker_id: str,
    params: SynthParams,
    vowel: Vowel = Vowel.A,
    pitch: PitchCondition = PitchCondition.NEUTRAL,
    gender: Gender = Gender.FEMALE,
    diagnosis: DiagnosisLabel = DiagnosisLabel.HEALTHY,
    age: Optional[float] = None,
) -> Recording:
    """Convenience wrapper: synthesize and wrap in a Recording."""
    samples, sr = synth_phonation(params)
    return Recording(
        recording_id=recording_id,
        speaker_id=speaker_id,
        samples=samples,
        sample_rate=sr,
        vowel=vowel,
        pitch=pitch,
        gender=gender,
        diagnosis=diagnosis,
        age=age,
    )
