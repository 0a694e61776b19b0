"""Experiment orchestration: split once, SMOTE the train side, train one
classifier per modality subset, evaluate on the untouched test side, and
render tables shaped like the paper's flood/landslide results."""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import boosting
from .boosting import BoostParams, Model
from .dataset import Dataset, DisasterType, ModalityMask, fuse_features
from .metrics import MetricSet, auroc, balanced_accuracy, confusion, f1
from .resample import SmoteParams, smote_oversample

DECISION_THRESHOLD = 0.5
THREADS_ENV_VAR = "GEOSEER_THREADS"


def default_combos() -> tuple[ModalityMask, ...]:
    """The 7 nonempty modality subsets in the paper's column order."""
    return (
        ModalityMask(weather=True, text=True, image=True),
        ModalityMask(weather=True, text=True),
        ModalityMask(weather=True, image=True),
        ModalityMask(text=True, image=True),
        ModalityMask(weather=True),
        ModalityMask(text=True),
        ModalityMask(image=True),
    )


@dataclass(frozen=True)
class AblationSpec:
    combos: tuple[ModalityMask, ...]
    boost: BoostParams
    smote: SmoteParams
    test_fraction: float = 0.3
    seed: int = 42

    def __post_init__(self) -> None:
        object.__setattr__(self, "combos", tuple(self.combos))
        if not self.combos:
            raise ValueError("combos must be nonempty")
        if len(set(self.combos)) != len(self.combos):
            raise ValueError("combos must not repeat")


@dataclass(frozen=True)
class Provenance:
    seed: int
    test_fraction: float
    train_pos: int
    train_neg: int
    train_pos_after: int
    train_neg_after: int
    test_pos: int
    test_neg: int
    timestamp: str | None = None


@dataclass(frozen=True)
class ReportTable:
    """Metric rows by modality-subset columns, one MetricSet per combo."""

    disaster_type: DisasterType
    combos: tuple[ModalityMask, ...]
    columns: tuple[MetricSet, ...]
    provenance: Provenance | None = None

    def __post_init__(self) -> None:
        if len(self.combos) != len(self.columns):
            raise ValueError("one metrics column per combo required")


def _worker_count() -> int:
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        return 1
    if n == 0:
        return os.cpu_count() or 1
    return max(1, n)


def _fuse_all(samples, mask: ModalityMask) -> tuple[np.ndarray, np.ndarray]:
    rows = np.stack([fuse_features(s, mask).values for s in samples])
    y = np.array([s.label for s in samples], dtype=np.int64)
    return rows, y


def _run_combo(train_ds: Dataset, test_ds: Dataset, mask: ModalityMask, spec: AblationSpec):
    balanced = smote_oversample(train_ds, mask, spec.smote)
    rows, y = _fuse_all(balanced.samples, mask)
    model = boosting.train(rows, y, spec.boost)
    test_rows, test_y = _fuse_all(test_ds.samples, mask)
    scores = boosting.predict_proba_many(model, test_rows)
    cm = confusion(test_y, scores, DECISION_THRESHOLD)
    metric_set = MetricSet(
        auroc=auroc(test_y, scores),
        f1=f1(cm),
        balanced_accuracy=balanced_accuracy(cm),
    )
    return metric_set, balanced.label_counts(), model


def run_ablation(
    ds: Dataset,
    spec: AblationSpec,
    *,
    timestamp: str | None = None,
    collect_models: dict[ModalityMask, Model] | None = None,
) -> ReportTable:
    """Evaluate every combo against one shared stratified split.

    SMOTE balances each combo's fused training set; the test set is never
    oversampled and is identical across combos. Deterministic for fixed
    (ds, spec). Trained models are stashed in ``collect_models`` when given.
    """
    from .dataset import stratified_split

    train_ds, test_ds = stratified_split(ds, spec.test_fraction, spec.seed)
    for s in test_ds.samples:
        if s.synthetic:
            raise ValueError(f"synthetic sample {s.sample_id!r} reached the evaluation set")

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda m: _run_combo(train_ds, test_ds, m, spec), spec.combos))
    else:
        outcomes = [_run_combo(train_ds, test_ds, mask, spec) for mask in spec.combos]

    columns = tuple(out[0] for out in outcomes)
    after_pos, after_neg = outcomes[0][1]
    if collect_models is not None:
        for mask, out in zip(spec.combos, outcomes):
            collect_models[mask] = out[2]

    train_pos, train_neg = train_ds.label_counts()
    test_pos, test_neg = test_ds.label_counts()
    provenance = Provenance(
        seed=spec.seed,
        test_fraction=spec.test_fraction,
        train_pos=train_pos,
        train_neg=train_neg,
        train_pos_after=after_pos,
        train_neg_after=after_neg,
        test_pos=test_pos,
        test_neg=test_neg,
        timestamp=timestamp,
    )
    return ReportTable(ds.disaster_type, spec.combos, columns, provenance)


_METRIC_ROWS = (
    ("AUROC", "auroc", lambda v: f"{v:.4f}"),
    ("F1", "f1", lambda v: f"{v:.4f}"),
    ("Balanced accuracy", "balanced_accuracy", lambda v: f"{v * 100:.2f}%"),
)


def _render_text(rt: ReportTable) -> str:
    headers = ["Metric"] + [m.label() for m in rt.combos]
    body = []
    for title, attr, fmt in _METRIC_ROWS:
        body.append([title] + [fmt(getattr(col, attr)) for col in rt.columns])
    widths = [max(len(row[i]) for row in [headers] + body) for i in range(len(headers))]
    lines = [f"Results for {rt.disaster_type.value} prediction.", ""]
    for row in [headers] + body:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
    if rt.provenance is not None:
        p = rt.provenance
        lines.append("")
        lines.append(
            f"seed={p.seed}  test_fraction={p.test_fraction}  "
            f"train(pos/neg)={p.train_pos}/{p.train_neg}  "
            f"smote(pos/neg)={p.train_pos_after}/{p.train_neg_after}  "
            f"test(pos/neg)={p.test_pos}/{p.test_neg}"
        )
        if p.timestamp is not None:
            lines.append(f"generated={p.timestamp}")
    return "\n".join(lines) + "\n"


def _render_csv(rt: ReportTable) -> str:
    buf = io.StringIO()
    buf.write(f"# geoseer ablation report: {rt.disaster_type.value}\n")
    if rt.provenance is not None:
        for key, value in _provenance_obj(rt.provenance).items():
            buf.write(f"# {key}={value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric"] + [m.slug() for m in rt.combos])
    for _, attr, _ in _METRIC_ROWS:
        writer.writerow([attr] + [repr(getattr(col, attr)) for col in rt.columns])
    return buf.getvalue()


def _provenance_obj(p: Provenance) -> dict:
    obj = {
        "seed": p.seed,
        "test_fraction": p.test_fraction,
        "train_pos": p.train_pos,
        "train_neg": p.train_neg,
        "train_pos_after_smote": p.train_pos_after,
        "train_neg_after_smote": p.train_neg_after,
        "test_pos": p.test_pos,
        "test_neg": p.test_neg,
    }
    if p.timestamp is not None:
        obj["timestamp"] = p.timestamp
    return obj


def _render_json(rt: ReportTable) -> str:
    doc = {
        "disaster_type": rt.disaster_type.value,
        "columns": [
            {
                "label": mask.label(),
                "slug": mask.slug(),
                "mask": {"weather": mask.weather, "text": mask.text, "image": mask.image},
                "metrics": {
                    "auroc": col.auroc,
                    "f1": col.f1,
                    "balanced_accuracy": col.balanced_accuracy,
                },
            }
            for mask, col in zip(rt.combos, rt.columns)
        ],
        "provenance": _provenance_obj(rt.provenance) if rt.provenance is not None else {},
    }
    return json.dumps(doc, indent=2) + "\n"


def render_report(rt: ReportTable, format: str = "text") -> str:
    """Render as 'text' (paper-style layout, AUROC/F1 to 4 decimals, balanced
    accuracy as a percentage), 'csv', or 'json' (both full precision)."""
    if format == "text":
        return _render_text(rt)
    if format == "csv":
        return _render_csv(rt)
    if format == "json":
        return _render_json(rt)
    raise ValueError(f"unknown report format {format!r}")
