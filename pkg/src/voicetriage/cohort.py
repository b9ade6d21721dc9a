"""Parameterized synthetic 9-class cohort for testing and benchmarks.

Class acoustics are arranged with group-level structure: healthy voices are
clean, functional/psychogenic disorders carry moderate perturbations that
overlap heavily between subtypes, and structural/inflammatory disorders carry
strong perturbations plus f0 and bandwidth shifts. Speaker-level random
effects dominate within-class variation so that per-speaker idiosyncrasies do
not trivially identify the class.
"""

from dataclasses import dataclass

import numpy as np

from .dataset import (
    DiagnosisLabel,
    Gender,
    PitchCondition,
    Recording,
    SynthParams,
    Vowel,
    synth_phonation,
)

# per class: jitter %, shimmer %, SNR dB, f0 mult, (F1, F2, F3) mult,
# (bw1, bw2, bw3) mult, (tremor rate Hz, FM %, AM %), (noise-mod rate Hz, depth).
#
# The design mirrors how the three information channels separate:
# - perturbation severity (jitter/shimmer/SNR) is a group-level trait, with
#   structural/inflammatory voices clearly severe but the mild functional
#   classes overlapping the healthy range speaker-to-speaker;
# - every pathological voice carries unsteady phonation dynamics - slow tremor
#   and bursty aspiration noise - which live in the spectrogram's temporal
#   texture (the CNN's input) and barely register in recording-level
#   perturbation measures;
# - subtype identity within a group lives in diffuse spectral signatures,
#   correlated formant shifts and resonance-bandwidth patterns spread across
#   the MFCC envelope, rather than in any single feature level.
_CLASS_ACOUSTICS = {
    DiagnosisLabel.HEALTHY: (
        0.80, 2.4, 26.0, 1.00, (1.0, 1.0, 1.0), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), (0.0, 0.0)),
    DiagnosisLabel.HYPERFUNCTIONAL_DYSPHONIA: (
        0.85, 2.6, 25.5, 1.05, (1.07, 0.95, 1.02), (1.25, 0.95, 1.10), (3.4, 2.5, 4.0), (3.6, 0.70)),
    DiagnosisLabel.FUNCTIONAL_DYSPHONIA: (
        0.90, 2.4, 26.0, 0.98, (0.94, 1.07, 0.97), (0.95, 1.25, 1.10), (2.6, 2.0, 4.5), (2.4, 0.60)),
    DiagnosisLabel.PSYCHOGENIC_DYSPHONIA: (
        0.85, 2.5, 25.0, 0.95, (1.00, 1.00, 1.06), (1.10, 1.10, 0.85), (4.2, 3.0, 3.5), (4.4, 0.75)),
    DiagnosisLabel.DYSODIA: (
        0.80, 2.7, 26.5, 1.02, (0.92, 0.96, 0.93), (1.20, 1.20, 1.20), (2.0, 3.5, 5.0), (3.0, 0.65)),
    DiagnosisLabel.LARYNGITIS: (
        2.60, 5.2, 15.5, 0.97, (1.08, 0.93, 1.03), (1.50, 1.15, 1.30), (3.0, 3.0, 5.0), (3.2, 0.80)),
    DiagnosisLabel.CONTACT_PACHYDERMIA: (
        2.70, 5.1, 15.0, 0.91, (0.93, 1.08, 0.97), (1.15, 1.50, 1.30), (2.4, 2.5, 4.5), (2.2, 0.70)),
    DiagnosisLabel.REINKE_EDEMA: (
        2.50, 5.5, 15.5, 0.86, (0.91, 0.98, 1.05), (1.45, 1.30, 1.15), (3.8, 3.5, 5.5), (4.0, 0.85)),
    DiagnosisLabel.VOCAL_CORD_POLYP: (
        2.60, 5.3, 16.0, 1.01, (1.05, 1.06, 0.94), (1.30, 1.30, 1.50), (2.8, 2.0, 4.0), (2.8, 0.75)),
}

_VOWEL_FORMANTS = {
    Vowel.A: (780.0, 1250.0, 2650.0),
    Vowel.I: (300.0, 2200.0, 2950.0),
    Vowel.U: (330.0, 850.0, 2350.0),
}

_PITCH_FACTOR = {
    PitchCondition.NEUTRAL: 1.0,
    PitchCondition.HIGH: 1.25,
    PitchCondition.LOW: 0.82,
    PitchCondition.GLIDE: 1.08,
}

_BASE_BANDWIDTHS = (110.0, 130.0, 160.0)
RECORDINGS_PER_SPEAKER = 12


@dataclass(frozen=True)
class CohortSpec:
    n_speakers: int = 200
    seed: int = 0
    duration: float = 0.8
    contrast: float = 1.0        # scales each class's acoustic offset from healthy
    speaker_spread: float = 0.25 # lognormal sigma of speaker-level random effects


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    gender: Gender
    age: float
    diagnosis: DiagnosisLabel
    base_f0: float
    jitter: float
    shimmer: float
    snr_db: float
    tract_factor: float
    bw_factors: tuple
    formant_mults: tuple
    tremor: tuple
    noise_mod: tuple


def _speaker_profile(spec: CohortSpec, index: int) -> SpeakerProfile:
    classes = list(_CLASS_ACOUSTICS)
    diagnosis = classes[index % len(classes)]
    rng = np.random.default_rng((spec.seed, 11, index))
    jitter, shimmer, snr, f0_mult, f_mults, bw_mults, tremor, noise_mod = _CLASS_ACOUSTICS[diagnosis]
    healthy_j, healthy_s, healthy_snr = _CLASS_ACOUSTICS[DiagnosisLabel.HEALTHY][:3]
    c = spec.contrast
    gender = Gender.FEMALE if rng.random() < 0.6 else Gender.MALE
    base = rng.normal(205.0, 14.0) if gender is Gender.FEMALE else rng.normal(118.0, 9.0)
    return SpeakerProfile(
        speaker_id=f"spk{index:04d}",
        gender=gender,
        age=float(np.round(rng.uniform(18, 85), 1)),
        diagnosis=diagnosis,
        base_f0=float(np.clip(base * f0_mult**c, 70.0, 330.0)),
        jitter=float(healthy_j * (jitter / healthy_j) ** c * rng.lognormal(0.0, spec.speaker_spread)),
        shimmer=float(healthy_s * (shimmer / healthy_s) ** c * rng.lognormal(0.0, spec.speaker_spread)),
        snr_db=float(healthy_snr + c * (snr - healthy_snr) + rng.normal(0.0, 12.0 * spec.speaker_spread)),
        tract_factor=float(rng.normal(1.0, 0.04)),
        # healthy vocal tracts vary as widely as the functional signature
        # envelope, so no static spectral pattern marks a voice as healthy
        bw_factors=tuple(
            float(b**c * w)
            for b, w in zip(bw_mults, rng.lognormal(0.0, 0.12 if diagnosis is DiagnosisLabel.HEALTHY else 0.06, 3))
        ),
        formant_mults=tuple(
            float(m**c * w)
            for m, w in zip(f_mults, rng.lognormal(0.0, 0.055 if diagnosis is DiagnosisLabel.HEALTHY else 0.03, 3))
        ),
        tremor=(tremor[0], float(tremor[1] * c), float(tremor[2] * c)),
        noise_mod=(noise_mod[0], float(min(1.0, noise_mod[1] * c))),
    )


def _recording_params(spec: CohortSpec, profile: SpeakerProfile, speaker_index: int,
                      vowel: Vowel, pitch: PitchCondition, rec_index: int) -> SynthParams:
    rng = np.random.default_rng((spec.seed, 23, speaker_index, rec_index))
    f0 = profile.base_f0 * _PITCH_FACTOR[pitch] * rng.lognormal(0.0, 0.03)
    f0 = float(np.clip(f0, 65.0, 480.0))
    formants = tuple(
        (float(f * fm * profile.tract_factor * rng.lognormal(0.0, 0.02)),
         float(bw * bwm * rng.lognormal(0.0, 0.05)))
        for f, bw, fm, bwm in zip(
            _VOWEL_FORMANTS[vowel], _BASE_BANDWIDTHS, profile.formant_mults, profile.bw_factors
        )
    )
    rate, fm, am = profile.tremor
    nm_rate, nm_depth = profile.noise_mod
    return SynthParams(
        f0=f0,
        jitter_pct=float(np.clip(profile.jitter * rng.lognormal(0.0, 0.10), 0.05, 8.0)),
        shimmer_pct=float(np.clip(profile.shimmer * rng.lognormal(0.0, 0.10), 0.1, 12.0)),
        noise_snr_db=float(profile.snr_db + rng.normal(0.0, 1.0)),
        formants=formants,
        duration=spec.duration,
        seed=int(rng.integers(0, 2**31 - 1)),
        tremor_rate_hz=float(rate * rng.lognormal(0.0, 0.08)) if rate > 0 else 0.0,
        tremor_fm_pct=float(fm * rng.lognormal(0.0, 0.10)),
        tremor_am_pct=float(am * rng.lognormal(0.0, 0.10)),
        noise_mod_rate_hz=float(nm_rate * rng.lognormal(0.0, 0.08)) if nm_rate > 0 else 0.0,
        noise_mod_depth=float(min(1.0, nm_depth * rng.lognormal(0.0, 0.08))),
    )


def generate_cohort(spec: CohortSpec):
    """Yield (descriptor-fields, Recording) pairs for the whole population.

    Every speaker contributes 12 recordings: vowels a/i/u under the four pitch
    conditions. Deterministic per seed.
    """
    for s in range(spec.n_speakers):
        profile = _speaker_profile(spec, s)
        rec_index = 0
        for vowel in (Vowel.A, Vowel.I, Vowel.U):
            for pitch in (
                PitchCondition.NEUTRAL,
                PitchCondition.HIGH,
                PitchCondition.LOW,
                PitchCondition.GLIDE,
            ):
                params = _recording_params(spec, profile, s, vowel, pitch, rec_index)
                samples, sr = synth_phonation(params)
                yield Recording(
                    recording_id=f"{profile.speaker_id}_r{rec_index:02d}",
                    speaker_id=profile.speaker_id,
                    samples=samples,
                    sample_rate=sr,
                    vowel=vowel,
                    pitch=pitch,
                    gender=profile.gender,
                    diagnosis=profile.diagnosis,
                    age=profile.age,
                )
                rec_index += 1


def cohort_manifest_rows(spec: CohortSpec, path_pattern: str = "{recording_id}.wav"):
    """Manifest rows (without audio synthesis) matching generate_cohort order."""
    rows = []
    for s in range(spec.n_speakers):
        profile = _speaker_profile(spec, s)
        rec_index = 0
        for vowel in (Vowel.A, Vowel.I, Vowel.U):
            for pitch in (
                PitchCondition.NEUTRAL,
                PitchCondition.HIGH,
                PitchCondition.LOW,
                PitchCondition.GLIDE,
            ):
                rid = f"{profile.speaker_id}_r{rec_index:02d}"
                rows.append(
                    {
                        "recording_id": rid,
                        "path": path_pattern.format(recording_id=rid),
                        "speaker_id": profile.speaker_id,
                        "gender": profile.gender.value,
                        "age": f"{profile.age:.1f}",
                        "vowel": vowel.value,
                        "pitch": pitch.value,
                        "diagnosis": profile.diagnosis.value,
                    }
                )
                rec_index += 1
    return rows
