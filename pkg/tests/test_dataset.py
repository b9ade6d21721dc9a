import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voicetriage.dataset import (
    DiagnosisLabel,
    EtiologyGroup,
    Gender,
    Partition,
    PitchCondition,
    RecordingDescriptor,
    SynthParams,
    Vowel,
    decode_wav,
    encode_wav,
    map_group,
    parse_manifest,
    resample,
    split_speakers,
    synth_phonation,
)
from voicetriage.errors import (
    DataError,
    DuplicateRecordingIdError,
    EmptyAudioError,
    MalformedWavError,
    MissingColumnError,
    UnknownEnumError,
    UnsupportedCodecError,
)


def pcm16_wav(samples_i16, rate=44100, channels=1, fmt=1, bits=16):
    payload = np.asarray(samples_i16, dtype="<i2").tobytes()
    hdr = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, fmt, channels, rate, rate * 2 * channels, 2 * channels, bits,
        b"data", len(payload),
    )
    return hdr + payload


class TestDecodeWav:
    def test_full_scale_positive(self):
        samples, rate = decode_wav(pcm16_wav([0x7FFF]))
        assert rate == 44100
        assert samples[0] == pytest.approx(32767 / 32768)

    def test_zero(self):
        samples, _ = decode_wav(pcm16_wav([0]))
        assert samples[0] == 0.0

    def test_stereo_downmix_symmetric(self):
        # L = +0.5, R = -0.5 -> mean 0
        samples, _ = decode_wav(pcm16_wav([16384, -16384], channels=2))
        assert samples.shape == (1,)
        assert samples[0] == 0.0

    def test_malformed_header(self):
        with pytest.raises(MalformedWavError):
            decode_wav(b"RIFX" + b"\x00" * 40)

    def test_unsupported_codec(self):
        with pytest.raises(UnsupportedCodecError):
            decode_wav(pcm16_wav([0], fmt=3))
        with pytest.raises(UnsupportedCodecError):
            decode_wav(pcm16_wav([0], bits=8))

    def test_empty_data(self):
        with pytest.raises(EmptyAudioError):
            decode_wav(pcm16_wav([]))

    def test_truncated_chunk(self):
        good = pcm16_wav([1, 2, 3])
        with pytest.raises(MalformedWavError):
            decode_wav(good[:-2])

    @given(st.lists(st.integers(min_value=-32768, max_value=32767), min_size=1, max_size=200))
    @settings(max_examples=50, deadline=None)
    def test_decode_encode_round_trip(self, values):
        original = pcm16_wav(values)
        samples, rate = decode_wav(original)
        assert np.all(samples >= -1.0) and np.all(samples <= 1.0)
        assert encode_wav(samples, rate) == original


class TestResample:
    def test_length_arithmetic(self):
        x = np.zeros(50000)
        assert resample(x, 50000, 44100).shape[0] == 44100

    def test_identity_same_rate(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=1000)
        out = resample(x, 44100, 44100)
        assert np.array_equal(out, x)

    def test_sine_round_trip_error(self):
        sr_in, sr_out, f = 50000, 44100, 1000.0
        t_in = np.arange(sr_in) / sr_in
        x = np.sin(2 * np.pi * f * t_in)
        y = resample(x, sr_in, sr_out)
        t_out = np.arange(y.shape[0]) / sr_out
        target = np.sin(2 * np.pi * f * t_out)
        # steady-state comparison away from the filter edge transients
        sl = slice(64, -64)
        rms = np.sqrt(np.mean((y[sl] - target[sl]) ** 2))
        assert rms < 1e-3

    def test_bad_rates(self):
        with pytest.raises(DataError):
            resample(np.zeros(10), 0, 44100)
        with pytest.raises(DataError):
            resample(np.zeros(10), 44100, -1)


MANIFEST_HEADER = "recording_id,path,speaker_id,gender,age,vowel,pitch,diagnosis"


class TestManifest:
    def test_basic_row(self):
        text = MANIFEST_HEADER + "\nr1,a.wav,s1,F,44,a,neutral,Reinke Edema\n"
        rows = parse_manifest(text)
        assert len(rows) == 1
        d = rows[0]
        assert d.diagnosis is DiagnosisLabel.REINKE_EDEMA
        assert d.gender is Gender.FEMALE
        assert d.vowel is Vowel.A
        assert d.pitch is PitchCondition.NEUTRAL
        assert d.age == 44.0

    def test_unknown_vowel_reports_row(self):
        text = MANIFEST_HEADER + "\nr1,a.wav,s1,F,,e,neutral,Healthy\n"
        with pytest.raises(UnknownEnumError) as exc:
            parse_manifest(text)
        assert exc.value.row == 2
        assert exc.value.field == "vowel"

    def test_header_only(self):
        assert parse_manifest(MANIFEST_HEADER + "\n") == []

    def test_missing_column(self):
        with pytest.raises(MissingColumnError):
            parse_manifest("recording_id,path,speaker_id\nr1,a.wav,s1\n")

    def test_duplicate_recording_id(self):
        text = (
            MANIFEST_HEADER
            + "\nr1,a.wav,s1,F,,a,neutral,Healthy\nr1,b.wav,s2,M,,i,high,Laryngitis\n"
        )
        with pytest.raises(DuplicateRecordingIdError) as exc:
            parse_manifest(text)
        assert exc.value.row == 3

    def test_optional_age_and_split_column(self):
        text = (
            MANIFEST_HEADER
            + ",split\nr1,a.wav,s1,M,,u,glide,Healthy,test\n"
        )
        d = parse_manifest(text)[0]
        assert d.age is None
        assert d.split is Partition.TEST

    def test_comment_lines_ignored(self):
        text = "# provenance\n" + MANIFEST_HEADER + "\nr1,a.wav,s1,F,30,a,low,Dysodia\n"
        assert parse_manifest(text)[0].diagnosis is DiagnosisLabel.DYSODIA


def _descriptor(rid, spk, diagnosis):
    return RecordingDescriptor(
        recording_id=rid, path=f"{rid}.wav", speaker_id=spk, gender=Gender.FEMALE,
        age=None, vowel=Vowel.A, pitch=PitchCondition.NEUTRAL, diagnosis=diagnosis,
    )


class TestSplit:
    def test_ten_speakers_one_stratum(self):
        descs = [_descriptor(f"r{i}", f"s{i}", DiagnosisLabel.HEALTHY) for i in range(10)]
        a = split_speakers(descs, (0.8, 0.1, 0.1), seed=0)
        parts = list(a.by_speaker.values())
        assert parts.count(Partition.TRAIN) == 8
        assert parts.count(Partition.VALIDATION) == 1
        assert parts.count(Partition.TEST) == 1

    def test_deterministic(self):
        descs = [_descriptor(f"r{i}", f"s{i}", DiagnosisLabel.LARYNGITIS) for i in range(20)]
        a1 = split_speakers(descs, seed=7)
        a2 = split_speakers(descs, seed=7)
        assert a1.by_speaker == a2.by_speaker

    def test_large_cohort_stratum_counts(self):
        # 1261 speakers over 9 strata sized per the cohort table
        sizes = {
            DiagnosisLabel.HEALTHY: 681,
            DiagnosisLabel.HYPERFUNCTIONAL_DYSPHONIA: 173,
            DiagnosisLabel.LARYNGITIS: 117,
            DiagnosisLabel.FUNCTIONAL_DYSPHONIA: 92,
            DiagnosisLabel.DYSODIA: 51,
            DiagnosisLabel.PSYCHOGENIC_DYSPHONIA: 44,
            DiagnosisLabel.CONTACT_PACHYDERMIA: 42,
            DiagnosisLabel.REINKE_EDEMA: 35,
            DiagnosisLabel.VOCAL_CORD_POLYP: 26,
        }
        descs = []
        n = 0
        for diag, count in sizes.items():
            for _ in range(count):
                descs.append(_descriptor(f"r{n}", f"s{n}", diag))
                n += 1
        assert n == 1261
        a = split_speakers(descs, (0.8, 0.1, 0.1), seed=3)
        for diag, count in sizes.items():
            spk = [f"s{i}" for i, d in enumerate(descs) if d.diagnosis is diag]
            got = [a.by_speaker[s] for s in spk]
            for part, frac in ((Partition.TRAIN, 0.8), (Partition.VALIDATION, 0.1), (Partition.TEST, 0.1)):
                assert abs(got.count(part) - frac * count) <= 1

    def test_small_stratum_goes_to_train(self):
        descs = [
            _descriptor("r0", "s0", DiagnosisLabel.VOCAL_CORD_POLYP),
            _descriptor("r1", "s1", DiagnosisLabel.VOCAL_CORD_POLYP),
        ] + [_descriptor(f"r{i}", f"s{i}", DiagnosisLabel.HEALTHY) for i in range(2, 12)]
        a = split_speakers(descs, seed=0)
        assert a.by_speaker["s0"] is Partition.TRAIN
        assert a.by_speaker["s1"] is Partition.TRAIN
        assert len(a.warnings) == 1

    def test_bad_ratios(self):
        descs = [_descriptor("r0", "s0", DiagnosisLabel.HEALTHY)]
        with pytest.raises(DataError):
            split_speakers(descs, (0.5, 0.2, 0.2))

    def test_conflicting_diagnosis(self):
        descs = [
            _descriptor("r0", "s0", DiagnosisLabel.HEALTHY),
            _descriptor("r1", "s0", DiagnosisLabel.LARYNGITIS),
        ]
        with pytest.raises(DataError):
            split_speakers(descs)

    @given(
        st.lists(
            st.tuples(st.integers(0, 30), st.sampled_from(list(DiagnosisLabel)), st.integers(1, 3)),
            min_size=1,
            max_size=40,
        ),
        st.integers(0, 2**31),
    )
    @settings(max_examples=40, deadline=None)
    def test_subject_independence(self, spec, seed):
        descs = []
        n = 0
        for spk, diag, reps in spec:
            for _ in range(reps):
                descs.append(_descriptor(f"r{n}", f"spk{spk}", diag))
                n += 1
        try:
            a = split_speakers(descs, seed=seed)
        except DataError:
            return  # conflicting diagnoses for a speaker: rejected input
        seen = {}
        for d in descs:
            p = a.partition_of(d.speaker_id)
            assert seen.setdefault(d.speaker_id, p) is p


class TestMapGroup:
    def test_paper_examples(self):
        assert map_group(DiagnosisLabel.LARYNGITIS) is EtiologyGroup.STRUCTURAL_INFLAMMATORY
        assert map_group(DiagnosisLabel.DYSODIA) is EtiologyGroup.FUNCTIONAL_PSYCHOGENIC
        assert map_group(DiagnosisLabel.HEALTHY) is EtiologyGroup.HEALTHY

    def test_partition_sizes_1_4_4(self):
        buckets = {}
        for d in DiagnosisLabel:
            buckets.setdefault(map_group(d), set()).add(d)
        assert sorted(len(v) for v in buckets.values()) == [1, 4, 4]


class TestSynth:
    def test_deterministic(self):
        p = SynthParams(f0=150, jitter_pct=2, shimmer_pct=3, noise_snr_db=20, seed=9)
        x1, sr1 = synth_phonation(p)
        x2, sr2 = synth_phonation(p)
        assert sr1 == sr2
        assert np.array_equal(x1, x2)

    def test_amplitude_bounded(self):
        x, _ = synth_phonation(SynthParams(f0=100, noise_snr_db=5, seed=1))
        assert np.max(np.abs(x)) <= 1.0

    def test_param_validation(self):
        with pytest.raises(DataError):
            SynthParams(f0=10)
        with pytest.raises(DataError):
            SynthParams(f0=100, duration=0)
        with pytest.raises(DataError):
            SynthParams(f0=100, formants=((700, 0), (1200, 100), (2600, 100)))
