"""Three-stage hierarchical training and inference, plus model persistence.

Stage 1 screens pathological vs non-pathological on [21 biomarkers ||
CNN probabilities] (23 dims, Gaussian SVM). Stage 2 triages into three
etiological groups on [21 || stage-1 label] (22 dims, cubic SVM). Stage 3
classifies the nine diagnoses on [21 || stage-1 label || one-hot group]
(25 dims, quadratic SVM). A bagged-trees flat baseline runs on the raw 21.
Downstream stages train on upstream *predictions*, computed out-of-fold so the
training rows carry realistically noisy augmentation rather than optimistic
resubstitution labels; an oracle-upstream mode exists for ablation.
"""

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._backend import backend_name
from .biomarkers import N_FEATURES, assemble_features
from .classifiers import (
    KernelSpec,
    OvoSvm,
    Scaler,
    SvmBinary,
    TreeEnsemble,
    CartTree,
    bagged_trees_train,
    default_grid,
    grid_search_cv,
    ovo_fit,
    scaler_fit,
    smo_train,
)
from .cnn import CnnConfig, CnnModel, cnn_train
from .dataset import DiagnosisLabel, EtiologyGroup, Recording, map_group
from .errors import (
    ChecksumError,
    DataError,
    DimensionError,
    MissingClassError,
    TruncatedFileError,
    VersionMismatchError,
)
from .spectral import SpectroConfig, log_mel_spectrogram

STAGE1_DIM = 23
STAGE2_DIM = 22
STAGE3_DIM = 25

CLASS_ORDER = tuple(DiagnosisLabel)
GROUP_ORDER = (
    EtiologyGroup.HEALTHY,
    EtiologyGroup.FUNCTIONAL_PSYCHOGENIC,
    EtiologyGroup.STRUCTURAL_INFLAMMATORY,
)
_GROUP_INDEX = {g: i for i, g in enumerate(GROUP_ORDER)}
_CLASS_INDEX = {c: i for i, c in enumerate(CLASS_ORDER)}

FORMAT_VERSION = 1
_BUNDLE_MAGIC = b"VTMB"


def _require_dim(vec, dim, what):
    if vec.shape[-1] != dim:
        raise DimensionError(f"{what} must have width {dim}, got {vec.shape[-1]}")


def build_stage1_vector(features, cnn_probs) -> np.ndarray:
    """[21 biomarkers || p_nonpath, p_path] -> 23 entries."""
    features = np.asarray(features, dtype=np.float64)
    probs = np.asarray(cnn_probs, dtype=np.float64)
    _require_dim(features, N_FEATURES, "biomarker vector")
    _require_dim(probs, 2, "CNN probability pair")
    if abs(probs.sum() - 1.0) > 1e-6:
        raise DataError(f"CNN probabilities must sum to 1, got {probs.sum()!r}")
    out = np.concatenate([features, probs])
    _require_dim(out, STAGE1_DIM, "stage-1 vector")
    return out


def build_stage2_vector(features, stage1_output) -> np.ndarray:
    """[21 biomarkers || binary indicator] -> 22 entries.

    stage1_output may be a probability or a hard label; it is thresholded at
    0.5 with the boundary assigned to pathological (indicator 1).
    """
    features = np.asarray(features, dtype=np.float64)
    _require_dim(features, N_FEATURES, "biomarker vector")
    indicator = 1.0 if float(stage1_output) >= 0.5 else 0.0
    out = np.concatenate([features, [indicator]])
    _require_dim(out, STAGE2_DIM, "stage-2 vector")
    return out


def group_one_hot(group: EtiologyGroup) -> np.ndarray:
    """One-hot over (Healthy, FunctionalPsychogenic, StructuralInflammatory)."""
    out = np.zeros(len(GROUP_ORDER))
    out[_GROUP_INDEX[group]] = 1.0
    return out


def build_stage3_vector(features, stage1_output, group: EtiologyGroup) -> np.ndarray:
    """[21 biomarkers || binary indicator || one-hot group] -> 25 entries."""
    features = np.asarray(features, dtype=np.float64)
    _require_dim(features, N_FEATURES, "biomarker vector")
    indicator = 1.0 if float(stage1_output) >= 0.5 else 0.0
    out = np.concatenate([features, [indicator], group_one_hot(group)])
    _require_dim(out, STAGE3_DIM, "stage-3 vector")
    return out


# ---------------------------------------------------------------------------
# Extraction

@dataclass
class ExtractedSet:
    recording_ids: list
    speaker_ids: list
    diagnoses: list
    features: np.ndarray      # (n, 21) with NaN sentinels
    spectrograms: np.ndarray  # (n, 1, mel_bands, fixed_frames) float32

    def __len__(self):
        return len(self.recording_ids)

    @property
    def binary_labels(self) -> np.ndarray:
        return np.array(
            [0 if d is DiagnosisLabel.HEALTHY else 1 for d in self.diagnoses],
            dtype=np.int64,
        )

    @property
    def group_indices(self) -> np.ndarray:
        return np.array([_GROUP_INDEX[map_group(d)] for d in self.diagnoses], dtype=np.int64)

    @property
    def class_indices(self) -> np.ndarray:
        return np.array([_CLASS_INDEX[d] for d in self.diagnoses], dtype=np.int64)

    def digest(self) -> str:
        h = hashlib.sha256()
        for rid, spk, d in zip(self.recording_ids, self.speaker_ids, self.diagnoses):
            h.update(f"{rid}|{spk}|{d.value}\n".encode())
        h.update(str(self.features.shape).encode())
        return h.hexdigest()


def extract_set(recordings, spectro_cfg: SpectroConfig = SpectroConfig()) -> ExtractedSet:
    """Run biomarker and spectrogram extraction over Recordings.

    Accepts any iterable (including a generator) so large cohorts can stream
    without holding every waveform in memory.
    """
    feats, specs = [], []
    ids, speakers, diagnoses = [], [], []
    for rec in recordings:
        feats.append(assemble_features(rec, spectro_cfg))
        specs.append(
            log_mel_spectrogram(rec.samples, spectro_cfg).values.astype(np.float32)[None, :, :]
        )
        ids.append(rec.recording_id)
        speakers.append(rec.speaker_id)
        diagnoses.append(rec.diagnosis)
    if not ids:
        raise DataError("no recordings to extract")
    return ExtractedSet(
        recording_ids=ids,
        speaker_ids=speakers,
        diagnoses=diagnoses,
        features=np.stack(feats),
        spectrograms=np.stack(specs),
    )


# ---------------------------------------------------------------------------
# Training

@dataclass
class TrainConfig:
    seed: int = 0
    cnn: Optional[CnnConfig] = None          # defaults to CnnConfig(seed=seed)
    stage1_grid: Optional[list] = None
    stage2_grid: Optional[list] = None
    stage3_grid: Optional[list] = None
    folds: int = 5
    svm_tol: float = 1e-3
    trees: int = 30
    min_leaf: int = 1
    soft_augmentation: bool = False          # augment with probabilities, not hard labels
    oracle_upstream: bool = False            # augment training rows with true upstream labels
    compact_grids: bool = False              # 3x3 grids for quick experiments


@dataclass
class ModelBundle:
    format_version: int
    cnn: CnnModel
    scalers: dict                 # stage1 / stage2 / stage3 / flat -> Scaler
    stage1: SvmBinary
    stage2: OvoSvm
    stage3: OvoSvm
    flat: TreeEnsemble
    classes: tuple = CLASS_ORDER
    groups: tuple = GROUP_ORDER
    provenance: dict = field(default_factory=dict)

    @property
    def soft_augmentation(self) -> bool:
        return bool(self.provenance.get("soft_augmentation", False))


def _grid_to_meta(grid):
    return [
        {
            "C": p["C"],
            "kernel": {
                "kind": p["kernel"].kind,
                "gamma": p["kernel"].gamma,
                "degree": p["kernel"].degree,
                "scale": p["kernel"].scale,
            },
        }
        for p in grid
    ]


def _oof_binary_labels(X, y, params, folds, seed, tol):
    """Out-of-fold stage-1 labels so downstream training sees honestly noisy
    augmentation (resubstitution predictions would be optimistically clean)."""
    from .classifiers import stratified_folds

    fid = stratified_folds(y, folds, seed)
    out = np.empty(y.shape[0])
    for f in range(folds):
        tr = fid != f
        m = smo_train(X[tr], y[tr], params["kernel"], params["C"], tol=tol)
        out[~tr] = (m.decision(X[~tr]) >= 0.0).astype(np.float64)
    return out


def _oof_ovo_scores(X, y, params, folds, seed, n_classes, tol):
    """Out-of-fold multiclass scores and labels, same rationale as above."""
    from .classifiers import stratified_folds

    fid = stratified_folds(y, folds, seed)
    scores = np.empty((y.shape[0], n_classes))
    labels = np.empty(y.shape[0], dtype=np.int64)
    for f in range(folds):
        tr = fid != f
        m = ovo_fit(X[tr], y[tr], params["kernel"], params["C"], n_classes=n_classes, tol=tol)
        s, l = m.predict_scores(X[~tr])
        scores[~tr] = s
        labels[~tr] = l
    return scores, labels


def _softmax_rows(scores):
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def train_pipeline(train: ExtractedSet, val: ExtractedSet, config: TrainConfig) -> ModelBundle:
    """Train the full hierarchy plus the flat baseline.

    Sequential: CNN -> stage-1 Gaussian SVM on 23-dim fusion -> stage-2 cubic
    OvO on 22-dim -> stage-3 quadratic OvO on 25-dim -> bagged trees on the raw
    21. Scalers fit on training data only; each SVM stage grid-searches with
    stratified 5-fold CV inside the training partition.
    """
    if len(train) == 0 or len(val) == 0:
        raise DataError("train and validation sets must be non-empty")
    present = {d for d in train.diagnoses}
    missing = [c.value for c in CLASS_ORDER if c not in present]
    if missing:
        raise MissingClassError(f"training set lacks classes: {', '.join(missing)}")

    cnn_cfg = config.cnn if config.cnn is not None else CnnConfig(seed=config.seed)
    if cnn_cfg.input_shape != train.spectrograms.shape[2:]:
        raise DataError(
            f"CNN input shape {cnn_cfg.input_shape} != spectrogram shape "
            f"{train.spectrograms.shape[2:]}"
        )
    cnn_model, cnn_log = cnn_train(
        train.spectrograms, train.binary_labels, val.spectrograms, val.binary_labels, cnn_cfg
    )
    probs_train = _cnn_probs(cnn_model, train.spectrograms)

    # stage 1: Gaussian SVM on [21 || p_nonpath, p_path]
    v1 = np.hstack([train.features, probs_train])
    _require_dim(v1, STAGE1_DIM, "stage-1 matrix")
    scaler1 = scaler_fit(v1)
    z1 = scaler1.transform(v1)
    y1 = np.where(train.binary_labels == 1, 1.0, -1.0)
    grid1 = config.stage1_grid or default_grid("gaussian", STAGE1_DIM, compact=config.compact_grids)

    def fit_binary(X, y, params):
        return smo_train(X, y, params["kernel"], params["C"], tol=config.svm_tol)

    best1, table1 = grid_search_cv(z1, y1, fit_binary, grid1, config.folds, config.seed)
    stage1 = smo_train(z1, y1, best1["kernel"], best1["C"], tol=config.svm_tol)

    if config.oracle_upstream:
        aug1 = train.binary_labels.astype(np.float64)
    elif config.soft_augmentation:
        aug1 = probs_train[:, 1]
    else:
        aug1 = _oof_binary_labels(z1, y1, best1, config.folds, config.seed, config.svm_tol)

    # stage 2: cubic OvO over the three etiological groups
    v2 = np.hstack([train.features, aug1[:, None]])
    _require_dim(v2, STAGE2_DIM, "stage-2 matrix")
    scaler2 = scaler_fit(v2)
    z2 = scaler2.transform(v2)
    y2 = train.group_indices
    grid2 = config.stage2_grid or default_grid(
        "polynomial", STAGE2_DIM, degree=3, compact=config.compact_grids
    )

    def fit_ovo3(X, y, params):
        return ovo_fit(X, y, params["kernel"], params["C"], n_classes=3, tol=config.svm_tol)

    best2, table2 = grid_search_cv(z2, y2, fit_ovo3, grid2, config.folds, config.seed)
    stage2 = ovo_fit(z2, y2, best2["kernel"], best2["C"], n_classes=3, tol=config.svm_tol)

    if config.oracle_upstream:
        g_aug = np.eye(3)[train.group_indices]
    else:
        scores2, labels2 = _oof_ovo_scores(
            z2, y2, best2, config.folds, config.seed, 3, config.svm_tol
        )
        g_aug = _softmax_rows(scores2) if config.soft_augmentation else np.eye(3)[labels2]

    # stage 3: quadratic OvO over the nine diagnoses
    v3 = np.hstack([train.features, aug1[:, None], g_aug])
    _require_dim(v3, STAGE3_DIM, "stage-3 matrix")
    scaler3 = scaler_fit(v3)
    z3 = scaler3.transform(v3)
    y3 = train.class_indices
    grid3 = config.stage3_grid or default_grid(
        "polynomial", STAGE3_DIM, degree=2, compact=config.compact_grids
    )

    def fit_ovo9(X, y, params):
        return ovo_fit(X, y, params["kernel"], params["C"], n_classes=9, tol=config.svm_tol)

    best3, table3 = grid_search_cv(z3, y3, fit_ovo9, grid3, config.folds, config.seed)
    stage3 = ovo_fit(z3, y3, best3["kernel"], best3["C"], n_classes=9, tol=config.svm_tol)

    # flat baseline: bagged trees on the raw biomarkers
    scaler_flat = scaler_fit(train.features)
    zf = scaler_flat.transform(train.features)
    flat = bagged_trees_train(
        zf, y3, B=config.trees, min_leaf=config.min_leaf, seed=config.seed, n_classes=9
    )

    provenance = {
        "seed": config.seed,
        "backend": backend_name(),
        "data_digest": train.digest(),
        "val_digest": val.digest(),
        "cnn_config": {
            "input_shape": list(cnn_cfg.input_shape),
            "filters": list(cnn_cfg.filters),
            "lr": cnn_cfg.lr,
            "epochs_max": cnn_cfg.epochs_max,
            "patience": cnn_cfg.patience,
            "batch_size": cnn_cfg.batch_size,
            "seed": cnn_cfg.seed,
            "dtype": cnn_cfg.dtype,
        },
        "cnn_best_epoch": cnn_model.best_epoch,
        "cnn_epochs_run": len(cnn_log),
        "stage1": {"best": _grid_to_meta([best1])[0], "grid": _grid_to_meta(grid1)},
        "stage2": {"best": _grid_to_meta([best2])[0], "grid": _grid_to_meta(grid2)},
        "stage3": {"best": _grid_to_meta([best3])[0], "grid": _grid_to_meta(grid3)},
        "cv_tables": {
            "stage1": [
                {"C": t["params"]["C"], "mean_accuracy": t["mean_accuracy"]} for t in table1
            ],
            "stage2": [
                {"C": t["params"]["C"], "mean_accuracy": t["mean_accuracy"]} for t in table2
            ],
            "stage3": [
                {"C": t["params"]["C"], "mean_accuracy": t["mean_accuracy"]} for t in table3
            ],
        },
        "soft_augmentation": config.soft_augmentation,
        "oracle_upstream": config.oracle_upstream,
        "trees": config.trees,
        "folds": config.folds,
    }
    bundle = ModelBundle(
        format_version=FORMAT_VERSION,
        cnn=cnn_model,
        scalers={"stage1": scaler1, "stage2": scaler2, "stage3": scaler3, "flat": scaler_flat},
        stage1=stage1,
        stage2=stage2,
        stage3=stage3,
        flat=flat,
        provenance=provenance,
    )
    bundle.training_log = cnn_log
    return bundle


def _cnn_probs(model: CnnModel, spectrograms, batch: int = 64) -> np.ndarray:
    out = np.empty((spectrograms.shape[0], 2))
    for i in range(0, spectrograms.shape[0], batch):
        out[i : i + batch] = model.forward(spectrograms[i : i + batch], mode="infer")
    return out


# ---------------------------------------------------------------------------
# Inference

@dataclass
class PredictionSet:
    recording_ids: list
    speaker_ids: list
    diagnoses: list               # true labels when known, else None
    cnn_probs: np.ndarray         # (n, 2)
    binary: np.ndarray            # (n,) 0/1, 1 = pathological
    binary_scores: np.ndarray     # (n, 2) [-f, f] from the stage-1 decision value
    group_idx: np.ndarray         # (n,)
    group_scores: np.ndarray      # (n, 3)
    subtype_idx: np.ndarray       # (n,)
    subtype_scores: np.ndarray    # (n, 9)
    flat_idx: np.ndarray
    flat_scores: np.ndarray

    def group_labels(self):
        return [GROUP_ORDER[i] for i in self.group_idx]

    def subtype_labels(self):
        return [CLASS_ORDER[i] for i in self.subtype_idx]

    def flat_labels(self):
        return [CLASS_ORDER[i] for i in self.flat_idx]


def predict_set(
    bundle: ModelBundle,
    data: ExtractedSet,
    hard_gate: bool = False,
    oracle_binary: Optional[np.ndarray] = None,
    oracle_groups: Optional[np.ndarray] = None,
) -> PredictionSet:
    """Run every recording through all stages (no gating by default).

    `oracle_binary` / `oracle_groups` replace the *augmentation features* fed
    downstream with ground truth (ablation mode). `hard_gate` overrides the
    reported group/subtype with Healthy whenever stage 1 says non-pathological.
    """
    soft = bundle.soft_augmentation
    probs = _cnn_probs(bundle.cnn, data.spectrograms)
    v1 = np.hstack([data.features, probs])
    _require_dim(v1, STAGE1_DIM, "stage-1 matrix")
    z1 = bundle.scalers["stage1"].transform(v1)
    f1 = bundle.stage1.decision(z1)
    binary = (f1 >= 0.0).astype(np.int64)
    binary_scores = np.stack([-f1, f1], axis=1)

    if oracle_binary is not None:
        aug1 = np.asarray(oracle_binary, dtype=np.float64)
    else:
        aug1 = probs[:, 1] if soft else binary.astype(np.float64)

    v2 = np.hstack([data.features, aug1[:, None]])
    _require_dim(v2, STAGE2_DIM, "stage-2 matrix")
    z2 = bundle.scalers["stage2"].transform(v2)
    group_scores, group_idx = bundle.stage2.predict_scores(z2)

    if oracle_groups is not None:
        g_aug = np.eye(3)[np.asarray(oracle_groups, dtype=np.int64)]
    elif soft:
        g_aug = _softmax_rows(group_scores)
    else:
        g_aug = np.eye(3)[group_idx]

    v3 = np.hstack([data.features, aug1[:, None], g_aug])
    _require_dim(v3, STAGE3_DIM, "stage-3 matrix")
    if oracle_binary is None and oracle_groups is None and not soft:
        # stage-consistency: the augmentation embedded in v3 must equal the
        # returned upstream outputs
        if not np.array_equal(v3[:, N_FEATURES], binary.astype(np.float64)) or not np.array_equal(
            v3[:, N_FEATURES + 1 :], np.eye(3)[group_idx]
        ):
            raise DataError("stage-consistency violation in fused vectors")
    z3 = bundle.scalers["stage3"].transform(v3)
    subtype_scores, subtype_idx = bundle.stage3.predict_scores(z3)

    zf = bundle.scalers["flat"].transform(data.features)
    flat_scores = bundle.flat.predict_fractions(zf)
    flat_idx = np.argmax(flat_scores, axis=1)

    if hard_gate:
        gated = binary == 0
        group_idx = group_idx.copy()
        subtype_idx = subtype_idx.copy()
        group_idx[gated] = _GROUP_INDEX[EtiologyGroup.HEALTHY]
        subtype_idx[gated] = _CLASS_INDEX[DiagnosisLabel.HEALTHY]

    return PredictionSet(
        recording_ids=data.recording_ids,
        speaker_ids=data.speaker_ids,
        diagnoses=data.diagnoses,
        cnn_probs=probs,
        binary=binary,
        binary_scores=binary_scores,
        group_idx=group_idx,
        group_scores=group_scores,
        subtype_idx=subtype_idx,
        subtype_scores=subtype_scores,
        flat_idx=flat_idx,
        flat_scores=flat_scores,
    )


def predict_pipeline(bundle: ModelBundle, rec: Recording, hard_gate: bool = False):
    """Single-recording convenience wrapper around predict_set."""
    data = extract_set([rec])
    out = predict_set(bundle, data, hard_gate=hard_gate)
    return out


# ---------------------------------------------------------------------------
# Bundle container (single-file, versioned, checksummed)

def _canonical_dtype(a: np.ndarray) -> str:
    dt = a.dtype.newbyteorder("<")
    return dt.str


def _collect_arrays(bundle: ModelBundle):
    arrays = {}
    meta = {"classes": [c.value for c in bundle.classes],
            "groups": [g.value for g in bundle.groups],
            "provenance": bundle.provenance}

    cfg = bundle.cnn.config
    meta["cnn"] = {
        "input_shape": list(cfg.input_shape),
        "filters": list(cfg.filters),
        "lr": cfg.lr, "beta1": cfg.beta1, "beta2": cfg.beta2, "adam_eps": cfg.adam_eps,
        "epochs_max": cfg.epochs_max, "patience": cfg.patience,
        "batch_size": cfg.batch_size, "seed": cfg.seed, "dtype": cfg.dtype,
        "bn_eps": cfg.bn_eps, "bn_momentum": cfg.bn_momentum,
    }
    for k in sorted(bundle.cnn.params):
        arrays[f"cnn/{k}"] = bundle.cnn.params[k]
    for k in sorted(bundle.cnn.running):
        arrays[f"cnn/run/{k}"] = bundle.cnn.running[k]

    meta["scalers"] = sorted(bundle.scalers)
    for name in sorted(bundle.scalers):
        s = bundle.scalers[name]
        arrays[f"scaler/{name}/mean"] = s.mean
        arrays[f"scaler/{name}/std"] = s.std
        arrays[f"scaler/{name}/impute"] = s.impute
        arrays[f"scaler/{name}/zero_variance"] = s.zero_variance.astype(np.uint8)
        arrays[f"scaler/{name}/all_missing"] = s.all_missing.astype(np.uint8)

    def kernel_meta(spec: KernelSpec):
        return {"kind": spec.kind, "gamma": spec.gamma, "degree": spec.degree, "scale": spec.scale}

    meta["stage1"] = {
        "bias": bundle.stage1.bias, "C": bundle.stage1.C,
        "kernel": kernel_meta(bundle.stage1.kernel),
        "n_iterations": bundle.stage1.n_iterations, "final_gap": bundle.stage1.final_gap,
    }
    arrays["stage1/sv"] = bundle.stage1.support_vectors
    arrays["stage1/dual"] = bundle.stage1.dual_coef

    for sname, ovo in (("stage2", bundle.stage2), ("stage3", bundle.stage3)):
        meta[sname] = {
            "n_classes": ovo.n_classes,
            "pairs": [list(p) for p in ovo.pairs],
            "machines": [
                {
                    "bias": m.bias, "C": m.C, "kernel": kernel_meta(m.kernel),
                    "n_iterations": m.n_iterations, "final_gap": m.final_gap,
                }
                for m in ovo.machines
            ],
        }
        for mi, m in enumerate(ovo.machines):
            arrays[f"{sname}/m{mi}/sv"] = m.support_vectors
            arrays[f"{sname}/m{mi}/dual"] = m.dual_coef

    meta["flat"] = {"n_classes": bundle.flat.n_classes, "seed": bundle.flat.seed,
                    "n_trees": len(bundle.flat.trees)}
    for ti, tree in enumerate(bundle.flat.trees):
        arrays[f"flat/t{ti}/feature"] = tree.feature
        arrays[f"flat/t{ti}/threshold"] = tree.threshold
        arrays[f"flat/t{ti}/left"] = tree.left
        arrays[f"flat/t{ti}/right"] = tree.right
        arrays[f"flat/t{ti}/counts"] = tree.counts
    return meta, arrays


def save_bundle(bundle: ModelBundle, path) -> None:
    """Write the single-file container: magic, version, JSON section table,
    little-endian arrays, trailing CRC32."""
    meta, arrays = _collect_arrays(bundle)
    table = []
    blobs = []
    offset = 0
    for name, a in arrays.items():
        a = np.ascontiguousarray(a)
        blob = a.astype(_canonical_dtype(a), copy=False).tobytes()
        table.append(
            {"name": name, "dtype": _canonical_dtype(a), "shape": list(a.shape),
             "offset": offset, "nbytes": len(blob)}
        )
        blobs.append(blob)
        offset += len(blob)
    doc = {"format_version": FORMAT_VERSION, "meta": meta, "arrays": table}
    mj = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    body = _BUNDLE_MAGIC + struct.pack("<I", FORMAT_VERSION) + struct.pack("<Q", len(mj)) + mj + b"".join(blobs)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", crc))


def load_bundle(path) -> ModelBundle:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 20:
        raise TruncatedFileError(f"{path}: too short to be a bundle")
    if data[:4] != _BUNDLE_MAGIC:
        raise DataError(f"{path}: not a model bundle")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path}: format version {version}, reader supports {FORMAT_VERSION}"
        )
    body, crc_bytes = data[:-4], data[-4:]
    (crc_stored,) = struct.unpack("<I", crc_bytes)
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise ChecksumError(f"{path}: CRC32 mismatch")
    (meta_len,) = struct.unpack_from("<Q", data, 8)
    meta_start = 16
    blob_start = meta_start + meta_len
    if blob_start > len(body):
        raise TruncatedFileError(f"{path}: metadata extends past end of file")
    doc = json.loads(body[meta_start:blob_start].decode())
    blob = body[blob_start:]
    arrays = {}
    for entry in doc["arrays"]:
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(blob):
            raise TruncatedFileError(f"{path}: array {entry['name']} extends past end")
        arrays[entry["name"]] = (
            np.frombuffer(blob[lo:hi], dtype=entry["dtype"]).reshape(entry["shape"]).copy()
        )
    meta = doc["meta"]

    cm = meta["cnn"]
    cfg = CnnConfig(
        input_shape=tuple(cm["input_shape"]), filters=tuple(cm["filters"]),
        lr=cm["lr"], beta1=cm["beta1"], beta2=cm["beta2"], adam_eps=cm["adam_eps"],
        epochs_max=cm["epochs_max"], patience=cm["patience"], batch_size=cm["batch_size"],
        seed=cm["seed"], dtype=cm["dtype"], bn_eps=cm["bn_eps"], bn_momentum=cm["bn_momentum"],
    )
    cnn = CnnModel(cfg)
    for k in list(cnn.params):
        cnn.params[k] = arrays[f"cnn/{k}"]
    for k in list(cnn.running):
        cnn.running[k] = arrays[f"cnn/run/{k}"]

    scalers = {}
    for name in meta["scalers"]:
        scalers[name] = Scaler(
            mean=arrays[f"scaler/{name}/mean"],
            std=arrays[f"scaler/{name}/std"],
            impute=arrays[f"scaler/{name}/impute"],
            zero_variance=arrays[f"scaler/{name}/zero_variance"].astype(bool),
            all_missing=arrays[f"scaler/{name}/all_missing"].astype(bool),
        )

    def load_machine(prefix, m):
        return SvmBinary(
            support_vectors=arrays[f"{prefix}/sv"],
            dual_coef=arrays[f"{prefix}/dual"],
            bias=m["bias"],
            kernel=KernelSpec(**m["kernel"]),
            C=m["C"],
            n_iterations=m["n_iterations"],
            final_gap=m["final_gap"],
        )

    stage1 = load_machine("stage1", meta["stage1"])
    ovos = {}
    for sname in ("stage2", "stage3"):
        sm = meta[sname]
        machines = [
            load_machine(f"{sname}/m{mi}", m) for mi, m in enumerate(sm["machines"])
        ]
        ovos[sname] = OvoSvm(
            n_classes=sm["n_classes"],
            pairs=[tuple(p) for p in sm["pairs"]],
            machines=machines,
        )

    trees = []
    for ti in range(meta["flat"]["n_trees"]):
        trees.append(
            CartTree(
                feature=arrays[f"flat/t{ti}/feature"],
                threshold=arrays[f"flat/t{ti}/threshold"],
                left=arrays[f"flat/t{ti}/left"],
                right=arrays[f"flat/t{ti}/right"],
                counts=arrays[f"flat/t{ti}/counts"],
            )
        )
    flat = TreeEnsemble(trees=trees, n_classes=meta["flat"]["n_classes"], seed=meta["flat"]["seed"])

    classes = tuple(DiagnosisLabel(v) for v in meta["classes"])
    groups = tuple(EtiologyGroup(v) for v in meta["groups"])
    return ModelBundle(
        format_version=version,
        cnn=cnn,
        scalers=scalers,
        stage1=stage1,
        stage2=ovos["stage2"],
        stage3=ovos["stage3"],
        flat=flat,
        classes=classes,
        groups=groups,
        provenance=meta["provenance"],
    )


def bundle_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
