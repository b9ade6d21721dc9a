"""Batch CLI: reproducible extract/split/train/evaluate/predict/fuse runs.

All tabular outputs are plain CSV with a leading `# seed=... config_digest=...
format_version=...` provenance comment; reports are JSON. Exit codes: 0 ok,
2 usage, 3 data/schema error, 4 numeric failure.
"""

import functools
import hashlib
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import fusion as fusion_mod
from . import metrics as metrics_mod
from ._backend import USE_NUMBA, backend_name
from .biomarkers import FEATURE_NAMES, assemble_features, write_feature_table
from .cnn import CnnConfig, training_log_csv
from .cohort import CohortSpec, cohort_manifest_rows, generate_cohort
from .dataset import (
    DiagnosisLabel,
    Partition,
    Recording,
    TARGET_SAMPLE_RATE,
    decode_wav,
    encode_wav,
    map_group,
    parse_manifest,
    resample,
    split_speakers,
)
from .errors import DataError, NumericError, VoiceTriageError
from .pipeline import (
    CLASS_ORDER,
    GROUP_ORDER,
    ModelBundle,
    TrainConfig,
    extract_set,
    load_bundle,
    predict_set,
    save_bundle,
    train_pipeline,
)
from .spectral import SpectroConfig, log_mel_spectrogram, write_spectrogram

FORMAT_VERSION = 1
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _slug(name: str) -> str:
    return name.lower().replace(" ", "_")


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NumericError as e:
            click.echo(f"error: {type(e).__name__}: {e}", err=True)
            sys.exit(EXIT_NUMERIC)
        except (DataError, VoiceTriageError, OSError) as e:
            click.echo(f"error: {type(e).__name__}: {e}", err=True)
            sys.exit(EXIT_DATA)

    return wrapper


def load_config_file(path):
    """Flat key=value config with # comments."""
    values = {}
    for i, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{i}: expected key=value, got {line!r}")
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    return values


class Settings:
    """Resolved run settings: defaults < config file < explicit CLI flags."""

    DEFAULTS = {
        "seed": 0,
        "threads": 0,
        "deterministic": False,
        "trees": 30,
        "folds": 5,
        "svm_tol": 1e-3,
        "compact_grids": False,
        "soft_augmentation": False,
        "oracle_upstream": False,
        "hard_gate": False,
        "cnn.filters": (32, 64, 128),
        "cnn.epochs_max": 50,
        "cnn.patience": 5,
        "cnn.batch_size": 32,
        "cnn.lr": 1e-3,
    }

    def __init__(self, config_path=None, **overrides):
        self.values = dict(self.DEFAULTS)
        env_seed = os.environ.get("VOICETRIAGE_SEED")
        if env_seed is not None:
            self.values["seed"] = int(env_seed)
        if config_path:
            for key, raw in load_config_file(config_path).items():
                if key not in self.DEFAULTS:
                    raise DataError(f"unknown config key {key!r}")
                self.values[key] = self._coerce(key, raw)
        for key, val in overrides.items():
            key = key.replace("__", ".")
            if val is not None:
                self.values[key] = val
        if self.values["deterministic"]:
            self.values["threads"] = 1
        if USE_NUMBA and self.values["threads"]:
            import numba

            numba.set_num_threads(max(1, int(self.values["threads"])))

    def _coerce(self, key, raw):
        default = self.DEFAULTS[key]
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(","))
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, int):
            return int(raw)
        return raw

    def __getitem__(self, key):
        return self.values[key]

    def digest(self) -> str:
        canon = json.dumps(
            {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(self.values.items())},
            sort_keys=True,
        )
        return hashlib.sha256(canon.encode()).hexdigest()[:12]

    def provenance_line(self) -> str:
        return (
            f"seed={self['seed']} config_digest={self.digest()} "
            f"format_version={FORMAT_VERSION} backend={backend_name()}"
        )

    def cnn_config(self, input_shape=(128, 256)) -> CnnConfig:
        return CnnConfig(
            input_shape=input_shape,
            filters=self["cnn.filters"],
            lr=self["cnn.lr"],
            epochs_max=self["cnn.epochs_max"],
            patience=self["cnn.patience"] if self["cnn.patience"] > 0 else None,
            batch_size=self["cnn.batch_size"],
            seed=self["seed"],
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            seed=self["seed"],
            cnn=self.cnn_config(),
            folds=self["folds"],
            svm_tol=self["svm_tol"],
            trees=self["trees"],
            compact_grids=self["compact_grids"],
            soft_augmentation=self["soft_augmentation"],
            oracle_upstream=self["oracle_upstream"],
        )


def _load_recordings(manifest_path, descriptors):
    root = Path(manifest_path).parent
    out = []
    for d in descriptors:
        p = Path(d.path)
        if not p.is_absolute():
            p = root / p
        samples, rate = decode_wav(p.read_bytes())
        if rate != TARGET_SAMPLE_RATE:
            samples = resample(samples, rate, TARGET_SAMPLE_RATE)
            rate = TARGET_SAMPLE_RATE
        out.append(
            Recording(
                recording_id=d.recording_id,
                speaker_id=d.speaker_id,
                samples=samples,
                sample_rate=rate,
                vowel=d.vowel,
                pitch=d.pitch,
                gender=d.gender,
                diagnosis=d.diagnosis,
                age=d.age,
            )
        )
    return out


def _partition_descriptors(descriptors, part: Partition):
    sel = [d for d in descriptors if d.split is part]
    if not sel:
        raise DataError(f"manifest has no rows with split={part.value!r}")
    return sel


def _prediction_rows(pred):
    header = (
        ["recording_id", "speaker_id", "true_diagnosis", "binary_pred", "group_pred",
         "subtype_pred", "flat_pred", "cnn_p_nonpath", "cnn_p_path",
         "bin_score_nonpath", "bin_score_path"]
        + [f"grp_score_{_slug(g.value)}" for g in GROUP_ORDER]
        + [f"sub_score_{_slug(c.value)}" for c in CLASS_ORDER]
        + [f"flat_score_{_slug(c.value)}" for c in CLASS_ORDER]
    )
    rows = [header]
    subtype = pred.subtype_labels()
    group = pred.group_labels()
    flat = pred.flat_labels()
    for i in range(len(pred.recording_ids)):
        true = pred.diagnoses[i].value if pred.diagnoses[i] is not None else ""
        rows.append(
            [pred.recording_ids[i], pred.speaker_ids[i], true,
             str(int(pred.binary[i])), group[i].value, subtype[i].value, flat[i].value,
             repr(float(pred.cnn_probs[i, 0])), repr(float(pred.cnn_probs[i, 1])),
             repr(float(pred.binary_scores[i, 0])), repr(float(pred.binary_scores[i, 1]))]
            + [repr(float(v)) for v in pred.group_scores[i]]
            + [repr(float(v)) for v in pred.subtype_scores[i]]
            + [repr(float(v)) for v in pred.flat_scores[i]]
        )
    return rows


def _write_csv(path, rows, provenance: str):
    lines = [f"# {provenance}"]
    lines += [",".join(r) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


@click.group()
def cli():
    """Hierarchical voice-disorder classification experiments."""


@cli.command("extract")
@click.argument("manifest", type=click.Path())
@click.option("--out", required=True, type=click.Path(), help="Feature CSV to write.")
@click.option("--spectrograms", type=click.Path(), default=None,
              help="Directory for binary spectrogram dumps.")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@_handle_errors
def cmd_extract(manifest, out, spectrograms, config_path, seed):
    """Extract the 21 biomarkers (and optionally spectrograms) for a manifest."""
    settings = Settings(config_path, seed=seed)
    descriptors = parse_manifest(Path(manifest).read_text())
    recordings = _load_recordings(manifest, descriptors)
    entries = []
    spec_dir = Path(spectrograms) if spectrograms else None
    if spec_dir:
        spec_dir.mkdir(parents=True, exist_ok=True)
    for d, rec in zip(descriptors, recordings):
        entries.append((d, assemble_features(rec)))
        if spec_dir:
            spec = log_mel_spectrogram(rec.samples)
            (spec_dir / f"{d.recording_id}.vtsg").write_bytes(write_spectrogram(spec))
    Path(out).write_text(write_feature_table(entries, settings.provenance_line()))
    click.echo(f"wrote {len(entries)} feature rows to {out}")


@cli.command("split")
@click.argument("manifest", type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--ratios", default="0.8,0.1,0.1", show_default=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@_handle_errors
def cmd_split(manifest, out, ratios, config_path, seed):
    """Add a speaker-grouped stratified split column to a manifest."""
    settings = Settings(config_path, seed=seed)
    ratios = tuple(float(r) for r in ratios.split(","))
    if len(ratios) != 3:
        raise DataError("ratios must be three comma-separated numbers")
    text = Path(manifest).read_text()
    descriptors = parse_manifest(text)
    assignment = split_speakers(descriptors, ratios, settings["seed"])
    for w in assignment.warnings:
        click.echo(f"warning: {w}", err=True)
    header = ["recording_id", "path", "speaker_id", "gender", "age", "vowel", "pitch",
              "diagnosis", "split"]
    rows = [header]
    for d in descriptors:
        rows.append([
            d.recording_id, d.path, d.speaker_id, d.gender.value,
            "" if d.age is None else f"{d.age:g}", d.vowel.value, d.pitch.value,
            d.diagnosis.value, assignment.partition_of(d.speaker_id).value,
        ])
    _write_csv(out, rows, settings.provenance_line())
    click.echo(f"wrote split manifest to {out}")


@cli.command("train")
@click.argument("manifest", type=click.Path())
@click.option("--out", required=True, type=click.Path(), help="Bundle file to write.")
@click.option("--log", "log_path", type=click.Path(), default=None, help="CNN training log CSV.")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=None)
@click.option("--deterministic", is_flag=True, default=None)
@click.option("--compact-grids", is_flag=True, default=None)
@click.option("--soft-augmentation", is_flag=True, default=None)
@click.option("--oracle-upstream", is_flag=True, default=None)
@_handle_errors
def cmd_train(manifest, out, log_path, config_path, seed, threads, deterministic,
              compact_grids, soft_augmentation, oracle_upstream):
    """Train the full hierarchy from a split manifest."""
    settings = Settings(
        config_path, seed=seed, threads=threads, deterministic=deterministic,
        compact_grids=compact_grids, soft_augmentation=soft_augmentation,
        oracle_upstream=oracle_upstream,
    )
    descriptors = parse_manifest(Path(manifest).read_text())
    train_d = _partition_descriptors(descriptors, Partition.TRAIN)
    val_d = _partition_descriptors(descriptors, Partition.VALIDATION)
    train_x = extract_set(_load_recordings(manifest, train_d))
    val_x = extract_set(_load_recordings(manifest, val_d))
    bundle = train_pipeline(train_x, val_x, settings.train_config())
    bundle.provenance["config_digest"] = settings.digest()
    save_bundle(bundle, out)
    if log_path:
        Path(log_path).write_text(
            f"# {settings.provenance_line()}\n" + training_log_csv(bundle.training_log)
        )
    click.echo(f"wrote bundle to {out}")


def _group_of_9class(c):
    g = map_group(c)
    return None if c is DiagnosisLabel.HEALTHY else g


def _report_inputs(pred, truths):
    y_bin_true = ["Pathological" if d is not DiagnosisLabel.HEALTHY else "NonPathological"
                  for d in truths]
    y_bin_pred = ["Pathological" if b else "NonPathological" for b in pred.binary]
    true_groups = [map_group(d) for d in truths]
    return {
        "stage1": {
            "y_true": y_bin_true, "y_pred": y_bin_pred,
            "scores": pred.binary_scores, "classes": ("NonPathological", "Pathological"),
        },
        "stage2": {
            "y_true": true_groups, "y_pred": pred.group_labels(),
            "scores": pred.group_scores, "classes": GROUP_ORDER,
        },
        "stage3": {
            "y_true": list(truths), "y_pred": pred.subtype_labels(),
            "scores": pred.subtype_scores, "classes": CLASS_ORDER,
            "group_of": _group_of_9class,
        },
        "flat": {
            "y_true": list(truths), "y_pred": pred.flat_labels(),
            "scores": pred.flat_scores, "classes": CLASS_ORDER,
            "group_of": _group_of_9class,
        },
    }


@cli.command("evaluate")
@click.argument("bundle_path", type=click.Path())
@click.argument("manifest", type=click.Path())
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
@click.option("--partition", type=click.Choice([p.value for p in Partition]),
              default=Partition.TEST.value, show_default=True)
@click.option("--hard-gate", is_flag=True, default=None)
@click.option("--oracle-upstream", is_flag=True, default=None,
              help="Also evaluate stages 2-3 with ground-truth upstream augmentation.")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@_handle_errors
def cmd_evaluate(bundle_path, manifest, out, partition, hard_gate, oracle_upstream,
                 config_path, seed):
    """Evaluate a bundle on one manifest partition; write report + curves."""
    settings = Settings(config_path, seed=seed, hard_gate=hard_gate)
    bundle = load_bundle(bundle_path)
    descriptors = parse_manifest(Path(manifest).read_text())
    part = _partition_descriptors(descriptors, Partition(partition))
    data = extract_set(_load_recordings(manifest, part))
    pred = predict_set(bundle, data, hard_gate=settings["hard_gate"])
    provenance = {
        "seed": settings["seed"],
        "config_digest": settings.digest(),
        "backend": backend_name(),
        "bundle_data_digest": bundle.provenance.get("data_digest"),
        "partition": partition,
        "n_samples": len(data),
    }
    stage_inputs = _report_inputs(pred, data.diagnoses)
    doc, curves = metrics_mod.report(stage_inputs, provenance)
    if oracle_upstream:
        oracle_pred = predict_set(
            bundle, data,
            oracle_binary=data.binary_labels.astype(np.float64),
            oracle_groups=data.group_indices,
        )
        oracle_inputs = _report_inputs(oracle_pred, data.diagnoses)
        oracle_doc, _ = metrics_mod.report(
            {f"{k}_oracle_upstream": v for k, v in oracle_inputs.items() if k != "stage1"}
        )
        doc["stages"].update(oracle_doc["stages"])
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    curve_dir = outdir / "curves"
    curve_dir.mkdir(exist_ok=True)
    for stage, per_class in curves.items():
        for cls, kinds in per_class.items():
            for kind in ("roc", "pr"):
                if kinds[kind] is None:
                    continue
                fname = f"{stage}_{_slug(cls)}_{kind}.csv"
                (curve_dir / fname).write_text(
                    f"# {settings.provenance_line()}\n"
                    + metrics_mod.curve_csv(kinds[kind], kind)
                )
    _write_csv(outdir / "predictions.csv", _prediction_rows(pred), settings.provenance_line())
    click.echo(f"wrote report to {outdir / 'report.json'}")


@cli.command("predict")
@click.argument("bundle_path", type=click.Path())
@click.argument("manifest", type=click.Path())
@click.option("--out", required=True, type=click.Path(), help="Predictions CSV.")
@click.option("--hard-gate", is_flag=True, default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@_handle_errors
def cmd_predict(bundle_path, manifest, out, hard_gate, config_path, seed):
    """Per-recording predictions for every manifest row."""
    settings = Settings(config_path, seed=seed, hard_gate=hard_gate)
    bundle = load_bundle(bundle_path)
    descriptors = parse_manifest(Path(manifest).read_text())
    data = extract_set(_load_recordings(manifest, descriptors))
    pred = predict_set(bundle, data, hard_gate=settings["hard_gate"])
    _write_csv(out, _prediction_rows(pred), settings.provenance_line())
    click.echo(f"wrote predictions for {len(data)} recordings to {out}")


@cli.command("fuse")
@click.argument("predictions", type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--stage", type=click.Choice(["subtype", "flat", "group", "binary"]),
              default="subtype", show_default=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@_handle_errors
def cmd_fuse(predictions, out, stage, config_path, seed):
    """Majority-vote subject-level fusion of per-recording predictions."""
    import csv as csv_mod

    settings = Settings(config_path, seed=seed)
    lines = [ln for ln in Path(predictions).read_text().splitlines()
             if ln and not ln.startswith("#")]
    reader = list(csv_mod.reader(lines))
    header, rows = reader[0], reader[1:]
    col = {name: i for i, name in enumerate(header)}
    if stage == "binary":
        label_names = ["NonPathological", "Pathological"]
        label_col, score_cols = "binary_pred", ["bin_score_nonpath", "bin_score_path"]
        to_idx = lambda v: int(v)
    elif stage == "group":
        label_names = [g.value for g in GROUP_ORDER]
        label_col = "group_pred"
        score_cols = [f"grp_score_{_slug(g.value)}" for g in GROUP_ORDER]
        to_idx = lambda v: label_names.index(v)
    else:
        label_names = [c.value for c in CLASS_ORDER]
        label_col = "subtype_pred" if stage == "subtype" else "flat_pred"
        prefix = "sub_score_" if stage == "subtype" else "flat_score_"
        score_cols = [f"{prefix}{_slug(c.value)}" for c in CLASS_ORDER]
        to_idx = lambda v: label_names.index(v)
    by_speaker = {}
    for r in rows:
        by_speaker.setdefault(r[col["speaker_id"]], []).append(r)
    out_rows = [["speaker_id", "n_recordings", "fused_label", "true_label"]]
    for spk in sorted(by_speaker):
        group_rows = by_speaker[spk]
        labels = [to_idx(r[col[label_col]]) for r in group_rows]
        scores = np.array(
            [[float(r[col[c]]) for c in score_cols] for r in group_rows]
        )
        fused = fusion_mod.majority_vote_fuse(labels, scores)
        truths = {r[col["true_diagnosis"]] for r in group_rows if r[col["true_diagnosis"]]}
        true_label = truths.pop() if len(truths) == 1 else ""
        if stage == "binary" and true_label:
            true_label = "NonPathological" if true_label == DiagnosisLabel.HEALTHY.value else "Pathological"
        elif stage == "group" and true_label:
            true_label = map_group(DiagnosisLabel(true_label)).value
        out_rows.append([spk, str(len(group_rows)), label_names[fused], true_label])
    _write_csv(out, out_rows, settings.provenance_line())
    click.echo(f"wrote {len(out_rows) - 1} fused decisions to {out}")


@cli.command("synth-cohort")
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
@click.option("--speakers", type=int, default=200, show_default=True)
@click.option("--duration", type=float, default=0.8, show_default=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@_handle_errors
def cmd_synth_cohort(out, speakers, duration, config_path, seed):
    """Generate a synthetic 9-class cohort: WAV files plus manifest."""
    settings = Settings(config_path, seed=seed)
    spec = CohortSpec(n_speakers=speakers, seed=settings["seed"], duration=duration)
    outdir = Path(out)
    wav_dir = outdir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    n = 0
    for rec in generate_cohort(spec):
        (wav_dir / f"{rec.recording_id}.wav").write_bytes(
            encode_wav(rec.samples, rec.sample_rate)
        )
        n += 1
    rows = cohort_manifest_rows(spec, path_pattern="wav/{recording_id}.wav")
    header = list(rows[0].keys())
    csv_rows = [header] + [[r[c] for c in header] for r in rows]
    _write_csv(outdir / "manifest.csv", csv_rows, settings.provenance_line())
    click.echo(f"wrote {n} recordings and manifest to {outdir}")


@cli.command("estimate-fusion")
@click.argument("p", type=float)
@click.argument("k", type=int)
@_handle_errors
def cmd_estimate_fusion(p, k):
    """Binomial subject-level accuracy estimate for k fused recordings."""
    value = fusion_mod.subject_accuracy_estimate(p, k)
    click.echo(f"{value:.4f}")


def main():
    cli(prog_name="voicetriage")


if __name__ == "__main__":
    main()
