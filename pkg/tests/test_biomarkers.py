import numpy as np
import pytest

from voicetriage import biomarkers as bm
from voicetriage.biomarkers import (
    CycleMarks,
    FEATURE_NAMES,
    N_FEATURES,
    assemble_features,
    detect_cycles,
    estimate_f0,
    formants_lpc,
    hnr,
    hnr_from_correlation,
    jitter_local,
    read_feature_table,
    shimmer_local,
    write_feature_table,
)
from voicetriage.dataset import (
    DiagnosisLabel,
    Gender,
    PitchCondition,
    Recording,
    RecordingDescriptor,
    SynthParams,
    Vowel,
    synth_phonation,
)
from voicetriage.errors import SignalTooShortError, TooFewCyclesError, UnvoicedError

SR = 44100

# resonator bandwidths wide enough that cycles decay between pulses; the
# narrow-bandwidth case is exercised by the formant tests
WIDE = ((700.0, 250.0), (1300.0, 280.0), (2600.0, 320.0))


def sine(freq, duration=1.0, amp=0.8):
    t = np.arange(int(duration * SR)) / SR
    return amp * np.sin(2 * np.pi * freq * t)


def impulse_train(period_samples, n_cycles, amps=None):
    x = np.zeros(period_samples * n_cycles + period_samples // 2)
    for i in range(n_cycles):
        x[i * period_samples] = 1.0 if amps is None else amps[i % len(amps)]
    return x


class TestEstimateF0:
    def test_silence_unvoiced(self):
        assert estimate_f0(np.zeros(SR), SR) is None

    def test_noise_unvoiced(self):
        rng = np.random.default_rng(0)
        assert estimate_f0(rng.normal(size=SR) * 0.1, SR) is None

    def test_pure_sine_440(self):
        est = estimate_f0(sine(440.0), SR)
        assert est == pytest.approx(440.0, abs=1.0)

    def test_synth_round_trip_200(self):
        x, sr = synth_phonation(SynthParams(f0=200, jitter_pct=0.5, shimmer_pct=1.0,
                                            noise_snr_db=30, formants=WIDE, seed=2))
        assert estimate_f0(x, sr) == pytest.approx(200.0, abs=2.0)

    def test_too_short(self):
        with pytest.raises(SignalTooShortError):
            estimate_f0(np.zeros(100), SR)


class TestDetectCycles:
    def test_impulse_train_marks(self):
        x = impulse_train(441, 10)
        marks = detect_cycles(x, SR, 100.0)
        assert len(marks) == 10
        gaps = np.diff(marks.peak_times) * SR
        assert np.all(np.abs(gaps - 441) <= 1.0)

    def test_amplitude_modulated_train(self):
        x = impulse_train(441, 20, amps=[1.0, 1.1])
        marks = detect_cycles(x, SR, 100.0)
        amps = marks.peak_amps
        for i in range(len(amps) - 2):
            assert amps[i] == pytest.approx(amps[i + 2], rel=0.01)
        lo, hi = sorted((np.median(amps[::2]), np.median(amps[1::2])))
        assert lo == pytest.approx(1.0, rel=0.01)
        assert hi == pytest.approx(1.1, rel=0.01)

    def test_two_cycles_error(self):
        x = impulse_train(441, 2)
        with pytest.raises(TooFewCyclesError):
            detect_cycles(x, SR, 100.0)

    def test_unvoiced_f0_rejected(self):
        with pytest.raises(UnvoicedError):
            detect_cycles(np.zeros(SR), SR, None)


class TestJitterShimmer:
    def test_periodic_zero_jitter(self):
        # spacing 1/128 s is exactly representable, so the periods are identical
        marks = CycleMarks(np.arange(10) / 128.0, np.ones(10))
        assert jitter_local(marks) == 0.0

    def test_alternating_periods_hand_value(self):
        # periods alternate 5.00 / 5.05 ms -> 100 * 0.05 / 5.025
        times = [0.0]
        for i in range(20):
            times.append(times[-1] + (0.005 if i % 2 == 0 else 0.00505))
        marks = CycleMarks(np.array(times), np.ones(len(times)))
        assert jitter_local(marks) == pytest.approx(100 * 0.05 / 5.025, rel=1e-9)

    def test_constant_amp_zero_shimmer(self):
        marks = CycleMarks(np.arange(5) * 0.005, np.full(5, 0.7))
        assert shimmer_local(marks) == 0.0

    def test_alternating_amps_hand_value(self):
        amps = np.array([1.0, 1.1] * 10)
        marks = CycleMarks(np.arange(20) * 0.005, amps)
        assert shimmer_local(marks) == pytest.approx(100 * 0.1 / 1.05, rel=1e-9)

    def test_too_few_cycles(self):
        marks = CycleMarks(np.array([0.0, 0.005]), np.ones(2))
        with pytest.raises(TooFewCyclesError):
            jitter_local(marks)
        with pytest.raises(TooFewCyclesError):
            shimmer_local(marks)

    def test_reversal_symmetry(self):
        rng = np.random.default_rng(1)
        times = np.cumsum(0.005 * (1 + 0.03 * rng.uniform(-1, 1, 30)))
        amps = 1 + 0.05 * rng.uniform(-1, 1, 30)
        marks = CycleMarks(times, amps)
        rev = CycleMarks((times[-1] - times)[::-1].copy(), amps[::-1].copy())
        assert jitter_local(rev) == pytest.approx(jitter_local(marks), rel=1e-12)
        assert shimmer_local(rev) == pytest.approx(shimmer_local(marks), rel=1e-12)

    def test_zero_perturbation_round_trip(self):
        x, sr = synth_phonation(SynthParams(f0=150, jitter_pct=0, shimmer_pct=0,
                                            noise_snr_db=60, seed=3))
        f0 = estimate_f0(x, sr)
        marks = detect_cycles(x, sr, f0)
        assert jitter_local(marks) < 0.1
        assert shimmer_local(marks) < 0.5

    def test_jitter_set_point_round_trip(self):
        vals = []
        for seed in range(4):
            x, sr = synth_phonation(SynthParams(f0=120, jitter_pct=2.0, shimmer_pct=0.3,
                                                noise_snr_db=50, formants=WIDE,
                                                duration=1.5, seed=seed))
            marks = detect_cycles(x, sr, estimate_f0(x, sr))
            vals.append(jitter_local(marks))
        assert np.mean(vals) == pytest.approx(2.0, abs=0.4)

    def test_shimmer_set_point_round_trip(self):
        vals = []
        for seed in range(4):
            x, sr = synth_phonation(SynthParams(f0=120, jitter_pct=0.3, shimmer_pct=5.0,
                                                noise_snr_db=50, formants=WIDE,
                                                duration=1.5, seed=seed))
            marks = detect_cycles(x, sr, estimate_f0(x, sr))
            vals.append(shimmer_local(marks))
        assert np.mean(vals) == pytest.approx(5.0, abs=1.0)


class TestHnr:
    def test_hand_value(self):
        assert hnr_from_correlation(0.99) == pytest.approx(10 * np.log10(99), abs=1e-6)

    def test_clamps(self):
        assert hnr_from_correlation(0.99999) == 40.0
        assert hnr_from_correlation(0.001) == -20.0
        assert hnr_from_correlation(-0.5) == -20.0

    def test_pure_sine_hits_ceiling(self):
        x = sine(220.0)
        assert hnr(x, SR, 220.0) == pytest.approx(40.0, abs=0.5)

    def test_monotone_in_snr(self):
        values = []
        for snr in (0.0, 10.0, 20.0, 30.0, 40.0):
            x, sr = synth_phonation(SynthParams(f0=150, jitter_pct=0.1, shimmer_pct=0.2,
                                                noise_snr_db=snr, formants=WIDE, seed=7))
            values.append(hnr(x, sr, estimate_f0(x, sr)))
        assert all(a < b for a, b in zip(values, values[1:]))

    def test_unvoiced_rejected(self):
        with pytest.raises(UnvoicedError):
            hnr(sine(220.0), SR, None)


class TestFormants:
    def test_synthetic_recovery(self):
        x, sr = synth_phonation(SynthParams(
            f0=110, jitter_pct=0.8, shimmer_pct=1.5, noise_snr_db=35,
            formants=((700, 80), (1200, 90), (2600, 120)), duration=1.2, seed=0,
        ))
        est = formants_lpc(x, sr)
        assert est.complete
        for got, want in zip(est.frequencies, (700, 1200, 2600)):
            assert got == pytest.approx(want, abs=50)

    def test_ordering(self):
        x, sr = synth_phonation(SynthParams(f0=120, noise_snr_db=30, seed=4))
        est = formants_lpc(x, sr)
        present = est.frequencies[np.isfinite(est.frequencies)]
        assert np.all(np.diff(present) > 0)

    def test_white_noise_flagged(self):
        rng = np.random.default_rng(5)
        flagged = 0
        for _ in range(5):
            est = formants_lpc(rng.normal(size=SR // 2) * 0.5, SR)
            if not est.complete:
                flagged += 1
                assert np.isnan(est.frequencies).any()
        assert flagged >= 3

    def test_too_short(self):
        with pytest.raises(SignalTooShortError):
            formants_lpc(np.zeros(1000), SR)


class TestGainInvariance:
    def test_scalar_gain_leaves_biomarkers(self):
        x, sr = synth_phonation(SynthParams(f0=140, jitter_pct=1.0, shimmer_pct=2.0,
                                            noise_snr_db=25, formants=WIDE, seed=8))
        y = 3.7 * x
        f0a, f0b = estimate_f0(x, sr), estimate_f0(y, sr)
        assert f0b == pytest.approx(f0a, rel=1e-6)
        ma, mb = detect_cycles(x, sr, f0a), detect_cycles(y, sr, f0b)
        assert jitter_local(mb) == pytest.approx(jitter_local(ma), rel=1e-6)
        assert shimmer_local(mb) == pytest.approx(shimmer_local(ma), rel=1e-6)
        assert hnr(y, sr, f0b) == pytest.approx(hnr(x, sr, f0a), rel=1e-6)


@pytest.mark.slow
class TestGeneratorMonotonicity:
    def _means(self, param_name, grid, measure, seeds=20):
        means = []
        for value in grid:
            vals = []
            for seed in range(seeds):
                kwargs = dict(f0=130, jitter_pct=0.3, shimmer_pct=0.5, noise_snr_db=45,
                              formants=WIDE, duration=0.6, seed=seed)
                kwargs[param_name] = value
                x, sr = synth_phonation(SynthParams(**kwargs))
                vals.append(measure(x, sr))
            means.append(np.mean(vals))
        return means

    def test_jitter_monotone(self):
        def measure(x, sr):
            return jitter_local(detect_cycles(x, sr, estimate_f0(x, sr)))

        means = self._means("jitter_pct", (0.5, 1.0, 2.0, 3.5, 5.0), measure)
        assert all(a < b for a, b in zip(means, means[1:]))

    def test_shimmer_monotone(self):
        def measure(x, sr):
            return shimmer_local(detect_cycles(x, sr, estimate_f0(x, sr)))

        means = self._means("shimmer_pct", (1.0, 2.0, 3.5, 5.0, 7.0), measure)
        assert all(a < b for a, b in zip(means, means[1:]))

    def test_hnr_monotone(self):
        def measure(x, sr):
            return hnr(x, sr, estimate_f0(x, sr))

        means = self._means("noise_snr_db", (0.0, 10.0, 20.0, 30.0, 40.0), measure)
        assert all(a < b for a, b in zip(means, means[1:]))


class TestAssembleFeatures:
    def make_recording(self, **synth_kwargs):
        defaults = dict(f0=200, jitter_pct=1.0, shimmer_pct=3.0, noise_snr_db=30,
                        formants=((700, 250), (1200, 280), (2600, 320)), duration=1.2, seed=6)
        defaults.update(synth_kwargs)
        samples, sr = synth_phonation(SynthParams(**defaults))
        return Recording(
            recording_id="r0", speaker_id="s0", samples=samples, sample_rate=sr,
            vowel=Vowel.A, pitch=PitchCondition.NEUTRAL, gender=Gender.FEMALE,
            diagnosis=DiagnosisLabel.HEALTHY,
        )

    def test_vector_length_and_gender(self):
        vec = assemble_features(self.make_recording())
        assert vec.shape == (N_FEATURES,) == (21,)
        assert vec[0] == 0.0

    def test_round_trip_slots(self):
        vec = assemble_features(self.make_recording())
        assert vec[1] == pytest.approx(200.0, abs=2.0)        # f0
        assert vec[2] == pytest.approx(1.0, abs=0.35)         # jitter %
        assert vec[3] == pytest.approx(3.0, abs=1.0)          # shimmer %
        assert np.isfinite(vec[4])                            # hnr
        assert vec[5] == pytest.approx(700, abs=50)
        assert vec[6] == pytest.approx(1200, abs=50)
        assert vec[7] == pytest.approx(2600, abs=50)
        assert np.all(np.isfinite(vec[8:]))

    def test_silence_gets_sentinels(self):
        rec = Recording(
            recording_id="r1", speaker_id="s1", samples=np.zeros(SR), sample_rate=SR,
            vowel=Vowel.I, pitch=PitchCondition.HIGH, gender=Gender.MALE,
            diagnosis=DiagnosisLabel.HEALTHY,
        )
        vec = assemble_features(rec)
        assert vec[0] == 1.0
        assert np.isnan(vec[1:5]).all()

    def test_feature_table_round_trip(self):
        rec = self.make_recording()
        vec = assemble_features(rec)
        desc = RecordingDescriptor(
            recording_id="r0", path="r0.wav", speaker_id="s0", gender=Gender.FEMALE,
            age=None, vowel=Vowel.A, pitch=PitchCondition.NEUTRAL,
            diagnosis=DiagnosisLabel.HEALTHY,
        )
        text = write_feature_table([(desc, vec)], provenance="seed=0")
        header = text.splitlines()[1]
        assert header == "recording_id,speaker_id,diagnosis," + ",".join(FEATURE_NAMES)
        rows = read_feature_table(text)
        assert rows[0][0] == "r0"
        assert np.allclose(rows[0][3], vec, equal_nan=True)
