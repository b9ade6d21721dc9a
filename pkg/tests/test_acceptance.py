"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Sizes and tolerances are pinned here, not tuned at runtime. Criterion 8 is
non-gating and skips unless a real cohort manifest is supplied via
VOICETRIAGE_SVD_MANIFEST.
"""

import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import split_cohort_sets, tiny_train_config
from oracles import (
    dual_objective,
    pair_count_auc,
    qp_dual_solve,
    rank_walk_ap,
    recompute_prf,
    recount_confusion,
)
from voicetriage.biomarkers import (
    detect_cycles,
    estimate_f0,
    formants_lpc,
    hnr,
    jitter_local,
    shimmer_local,
)
from voicetriage.classifiers import KernelSpec, kernel_matrix, smo_train
from voicetriage.cli import _report_inputs
from voicetriage.cnn import CnnConfig, CnnModel, cnn_backward_check, cnn_train
from voicetriage.cohort import CohortSpec
from voicetriage.dataset import EtiologyGroup, SynthParams, synth_phonation
from voicetriage.errors import DimensionError
from voicetriage.fusion import majority_vote_fuse, subject_accuracy_estimate
from voicetriage.metrics import confusion, pr_auc, prf, report, roc_auc
from voicetriage.pipeline import (
    TrainConfig,
    build_stage1_vector,
    build_stage2_vector,
    build_stage3_vector,
    bundle_digest,
    predict_set,
    save_bundle,
    train_pipeline,
)

WIDE = ((700.0, 250.0), (1300.0, 280.0), (2600.0, 320.0))


def _line(ok: bool, n: int, name: str, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    msg = f"ACCEPTANCE {n} ({name}): {status}"
    if detail:
        msg += f" [{detail}]"
    sys.__stdout__.write(msg + "\n")
    sys.__stdout__.flush()
    assert ok, msg


def test_criterion_1_binomial_fusion_reproduction():
    v5 = subject_accuracy_estimate(0.805, 5)
    v11 = subject_accuracy_estimate(0.805, 11)
    t0 = time.perf_counter()
    for _ in range(1000):
        subject_accuracy_estimate(0.805, 11)
    per_call = (time.perf_counter() - t0) / 1000.0
    ok = abs(v5 - 0.9459) <= 0.0005 and abs(v11 - 0.990) <= 0.001 and per_call < 1e-3
    _line(ok, 1, "binomial fusion values",
          f"acc(0.805,5)={v5:.6f} acc(0.805,11)={v11:.6f} {per_call * 1e6:.1f}us/call")


def test_criterion_2_metric_oracle_equivalence():
    rng = np.random.default_rng(202)
    worst_roc = worst_pr = worst_prf = 0.0
    for trial in range(100):
        n = int(rng.integers(10, 201))
        scores = np.round(rng.normal(size=n), rng.integers(1, 4))
        rel = rng.random(n) < rng.uniform(0.15, 0.85)
        if not rel.any() or rel.all():
            rel[0] = True
            rel[1] = False
        ours_roc, _ = roc_auc(scores, rel)
        worst_roc = max(worst_roc, abs(ours_roc - pair_count_auc(scores, rel)))
        ours_pr, _ = pr_auc(scores, rel)
        worst_pr = max(worst_pr, abs(ours_pr - rank_walk_ap(scores, rel)))

        k = int(rng.integers(2, 7))
        classes = list(range(k))
        y_true = rng.integers(0, k, n).tolist()
        y_pred = rng.integers(0, k, n).tolist()
        cm = confusion(y_true, y_pred, classes)
        oracle = recompute_prf(recount_confusion(y_true, y_pred, classes))
        for avg in ("macro", "micro", "weighted"):
            got = prf(cm, avg)
            for i, field in enumerate(("precision", "recall", "f1")):
                worst_prf = max(worst_prf, abs(getattr(got, field) - oracle[avg][i]))
        worst_prf = max(worst_prf, abs(prf(cm, "macro").accuracy - oracle["accuracy"]))
    ok = worst_roc < 1e-12 and worst_pr < 1e-12 and worst_prf < 1e-9
    _line(ok, 2, "metric oracle equivalence",
          f"worst: roc={worst_roc:.2e} pr={worst_pr:.2e} prf={worst_prf:.2e}")


def test_criterion_3_smo_vs_qp_oracle():
    rng = np.random.default_rng(303)
    worst_obj = 0.0
    worst_kkt = 0.0
    agree = True
    for trial in range(50):
        n = int(rng.integers(4, 13))
        d = int(rng.integers(1, 4))
        X = rng.normal(size=(n, d))
        y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        if abs(y.sum()) == n:
            y[0] *= -1
        spec = (
            KernelSpec("gaussian", gamma=float(rng.uniform(0.2, 2.0)))
            if trial % 2
            else KernelSpec("polynomial", degree=int(rng.choice([2, 3])),
                            scale=float(rng.uniform(0.5, 4.0)))
        )
        C = float(rng.choice([0.5, 1.0, 5.0, 20.0]))
        model = smo_train(X, y, spec, C, tol=1e-8)
        K = kernel_matrix(spec, X, X)
        alpha_oracle = qp_dual_solve(K, y, C)
        worst_obj = max(worst_obj, abs(
            dual_objective(K, y, model._alpha_full) - dual_objective(K, y, alpha_oracle)
        ))
        # KKT residuals on every training point
        yf = y * model.decision(X)
        alpha = model._alpha_full
        res = np.zeros(n)
        free = (alpha > 1e-9) & (alpha < C - 1e-9)
        res[free] = np.abs(yf[free] - 1.0)
        low = alpha <= 1e-9
        res[low] = np.maximum(0.0, 1.0 - yf[low])
        upper = alpha >= C - 1e-9
        res[upper] = np.maximum(0.0, yf[upper] - 1.0)
        worst_kkt = max(worst_kkt, res.max())
        # probe-grid prediction agreement
        probes = rng.normal(size=(100, d)) * 1.5
        w_o = (alpha_oracle * y) @ kernel_matrix(spec, X, probes)
        free_o = (alpha_oracle > 1e-7) & (alpha_oracle < C - 1e-7)
        if free_o.any():
            b_o = float(np.mean(y[free_o] - (alpha_oracle * y) @ K[:, free_o]))
        else:
            b_o = model.bias
        agree &= bool(np.all((model.decision(probes) >= 0) == (w_o + b_o >= 0)))
    ok = worst_obj < 1e-6 and worst_kkt <= 1e-3 and agree
    _line(ok, 3, "SMO vs dense QP oracle",
          f"worst: obj={worst_obj:.2e} kkt={worst_kkt:.2e} probes_agree={agree}")


def test_criterion_4_cnn_gradient_check_and_overfit():
    cfg = CnnConfig(input_shape=(16, 16), filters=(2, 2, 2), dtype="float64", seed=4)
    model = CnnModel(cfg)
    rng = np.random.default_rng(44)
    x = rng.normal(size=(2, 1, 16, 16))
    y = np.array([0, 1])
    err = cnn_backward_check(model, x, y)

    over_cfg = CnnConfig(input_shape=(16, 16), filters=(4, 4, 4), seed=5,
                         epochs_max=200, patience=None, batch_size=8)
    x8 = rng.normal(size=(8, 1, 16, 16)).astype(np.float32)
    y8 = (np.arange(8) % 2).astype(np.int64)
    _, log = cnn_train(x8, y8, x8, y8, over_cfg)
    final_loss = log[-1][1]
    ok = err < 1e-4 and final_loss < 0.05
    _line(ok, 4, "CNN gradient check + tiny overfit",
          f"max_rel_grad_err={err:.2e} overfit_loss={final_loss:.4f}")


def test_criterion_5_dsp_oracles():
    t0 = time.perf_counter()
    problems = []

    f0_errs = []
    for f0 in (80.0, 120.0, 180.0, 270.0, 400.0):
        x, sr = synth_phonation(SynthParams(f0=f0, jitter_pct=0.5, shimmer_pct=1.0,
                                            noise_snr_db=30, formants=WIDE, seed=1))
        est = estimate_f0(x, sr)
        f0_errs.append(abs(est - f0) / f0)
        if abs(est - f0) / f0 > 0.01:
            problems.append(f"f0@{f0}: {est:.2f}")

    for target in (1.0, 2.0, 5.0):
        vals = []
        for seed in range(6):
            x, sr = synth_phonation(SynthParams(f0=120, jitter_pct=target, shimmer_pct=0.3,
                                                noise_snr_db=50, formants=WIDE,
                                                duration=1.5, seed=seed))
            vals.append(jitter_local(detect_cycles(x, sr, estimate_f0(x, sr))))
        if abs(np.mean(vals) - target) / target > 0.20:
            problems.append(f"jitter@{target}: {np.mean(vals):.3f}")

    for target in (1.0, 2.0, 5.0):
        vals = []
        for seed in range(6):
            x, sr = synth_phonation(SynthParams(f0=120, jitter_pct=0.3, shimmer_pct=target,
                                                noise_snr_db=50, formants=WIDE,
                                                duration=1.5, seed=seed))
            vals.append(shimmer_local(detect_cycles(x, sr, estimate_f0(x, sr))))
        if abs(np.mean(vals) - target) / target > 0.20:
            problems.append(f"shimmer@{target}: {np.mean(vals):.3f}")

    for seed in (0, 1):
        x, sr = synth_phonation(SynthParams(f0=110, jitter_pct=0.8, shimmer_pct=1.5,
                                            noise_snr_db=35,
                                            formants=((700, 80), (1200, 90), (2600, 120)),
                                            duration=1.2, seed=seed))
        est = formants_lpc(x, sr)
        if not est.complete or np.max(np.abs(est.frequencies - (700, 1200, 2600))) > 50:
            problems.append(f"formants@seed{seed}: {est.frequencies.round(1)}")

    hnr_vals = []
    for snr in (0.0, 10.0, 20.0, 30.0, 40.0):
        x, sr = synth_phonation(SynthParams(f0=150, jitter_pct=0.1, shimmer_pct=0.2,
                                            noise_snr_db=snr, formants=WIDE, seed=7))
        hnr_vals.append(hnr(x, sr, estimate_f0(x, sr)))
    if not all(a < b for a, b in zip(hnr_vals, hnr_vals[1:])):
        problems.append(f"hnr not monotone: {[f'{v:.1f}' for v in hnr_vals]}")

    elapsed = time.perf_counter() - t0
    ok = not problems and elapsed < 120.0
    _line(ok, 5, "DSP generator oracles",
          f"max_f0_rel_err={max(f0_errs):.2e} elapsed={elapsed:.1f}s "
          + ("; ".join(problems) if problems else "all within tolerance"))


def test_criterion_6_dimension_ledger():
    f = np.zeros(21)
    ok = (
        build_stage1_vector(f, (0.4, 0.6)).shape == (23,)
        and build_stage2_vector(f, 1.0).shape == (22,)
        and build_stage3_vector(f, 1.0, EtiologyGroup.HEALTHY).shape == (25,)
    )
    for bad_call in (
        lambda: build_stage1_vector(np.zeros(20), (0.5, 0.5)),
        lambda: build_stage1_vector(f, (0.2, 0.3, 0.5)),
        lambda: build_stage2_vector(np.zeros(22), 1.0),
        lambda: build_stage3_vector(np.zeros(23), 1.0, EtiologyGroup.HEALTHY),
    ):
        try:
            bad_call()
            ok = False
        except DimensionError:
            pass
    _line(ok, 6, "fused vector dimension ledger", "23/22/25 enforced on all paths")


@pytest.fixture(scope="module")
def desk_scale_run(tmp_path_factory):
    """Criterion 7: full train+eval on the 200-speaker default-difficulty cohort."""
    t0 = time.perf_counter()
    spec = CohortSpec(n_speakers=200, seed=29, duration=0.8)
    train, val, test = split_cohort_sets(
        spec, pattern=("train",) * 8 + ("val", "test")
    )
    config = TrainConfig(
        seed=31,
        cnn=CnnConfig(filters=(4, 8, 8), epochs_max=5, patience=2, batch_size=32, seed=31),
        folds=5,
        compact_grids=True,
        trees=30,
    )
    bundle = train_pipeline(train, val, config)
    pred = predict_set(bundle, test)
    elapsed = time.perf_counter() - t0
    return bundle, test, pred, elapsed


def _macro_ovr_auc(y_idx, scores, class_indices):
    vals = []
    for c in class_indices:
        rel = y_idx == c
        if rel.any() and not rel.all():
            vals.append(roc_auc(scores[:, c], rel)[0])
    return float(np.mean(vals))


def test_criterion_7_hierarchy_beats_flat(desk_scale_run):
    bundle, test, pred, elapsed = desk_scale_run
    y = test.class_indices
    disorders = [i for i in range(9) if i != 0]  # all classes except healthy control
    stage3_macro8 = _macro_ovr_auc(y, pred.subtype_scores, disorders)
    flat_macro8 = _macro_ovr_auc(y, pred.flat_scores, disorders)
    stage3_macro9 = _macro_ovr_auc(y, pred.subtype_scores, list(range(9)))
    flat_macro9 = _macro_ovr_auc(y, pred.flat_scores, list(range(9)))
    margin = stage3_macro8 - flat_macro8
    ok = margin >= 0.03 and elapsed < 900.0
    _line(ok, 7, "hierarchy beats flat at desk scale",
          f"stage3_macro8={stage3_macro8:.4f} flat_macro8={flat_macro8:.4f} "
          f"margin={margin:.4f} (all-9: {stage3_macro9:.4f} vs {flat_macro9:.4f}) "
          f"train+eval={elapsed:.0f}s")


def test_criterion_8_optional_svd_reproduction():
    """Non-gating: reports stage-1 accuracy against the published 80.5% when a
    real cohort manifest is supplied; the absolute published numbers are not
    reproducible without the licensed corpus and exact toolbox settings."""
    manifest = os.environ.get("VOICETRIAGE_SVD_MANIFEST")
    if not manifest:
        sys.__stdout__.write(
            "ACCEPTANCE 8 (optional corpus reproduction): SKIP "
            "[set VOICETRIAGE_SVD_MANIFEST to a split manifest to run]\n"
        )
        pytest.skip("no corpus manifest supplied")
    from voicetriage.cli import _load_recordings, _partition_descriptors
    from voicetriage.dataset import Partition, parse_manifest
    from voicetriage.pipeline import extract_set

    descriptors = parse_manifest(Path(manifest).read_text())
    train = extract_set(_load_recordings(manifest, _partition_descriptors(descriptors, Partition.TRAIN)))
    val = extract_set(_load_recordings(manifest, _partition_descriptors(descriptors, Partition.VALIDATION)))
    test = extract_set(_load_recordings(manifest, _partition_descriptors(descriptors, Partition.TEST)))
    bundle = train_pipeline(train, val, TrainConfig(seed=0))
    pred = predict_set(bundle, test)
    acc = float(np.mean(pred.binary == test.binary_labels))
    within = abs(acc - 0.805) <= 0.05
    sys.__stdout__.write(
        f"ACCEPTANCE 8 (optional corpus reproduction): REPORTED "
        f"[stage-1 accuracy {acc:.3f}; within 5pp of 0.805: {within}; non-gating]\n"
    )


def test_criterion_9_determinism(tmp_path):
    def one_run(tag):
        spec = CohortSpec(n_speakers=27, seed=13, duration=0.6)
        train, val, test = split_cohort_sets(spec, pattern=("train", "val", "test"))
        bundle = train_pipeline(train, val, tiny_train_config(seed=7))
        path = tmp_path / f"bundle_{tag}.vtmb"
        save_bundle(bundle, path)
        pred = predict_set(bundle, test)
        doc, _ = report(_report_inputs(pred, test.diagnoses), {"seed": 7})
        return bundle_digest(path), json.dumps(doc, indent=2, sort_keys=True)

    d1, r1 = one_run("a")
    d2, r2 = one_run("b")
    ok = d1 == d2 and r1 == r2
    _line(ok, 9, "end-to-end determinism",
          f"bundle_digest_equal={d1 == d2} report_bytes_equal={r1 == r2}")
