"""Bit-exact interchange formats.

* Prediction matrix: UTF-8 CSV, header ``id,p0,...,p{C-1}``, floats written
  with 17 significant digits so a write/read round trip is lossless at
  float64 precision. Row sums may deviate from 1 by at most 1e-6 on ingest
  and are renormalized; larger deviations are rejected with the line number.
* Dataset: one hash-prefixed header line carrying d, C, n and whether a
  label column is present, then ``id,x0,...,x{d-1}[,label]`` rows.
* Metrics: one JSON object per line (NDJSON), schema carried by the manifest.
* Manifest: a single JSON document with the config snapshot, seeds, input
  digests, version and output paths; no timestamps, so identical runs emit
  identical bytes.
"""

import hashlib
import json

import numpy as np

from . import __version__
from .errors import ParseError
from .simplex import PredictionMatrix
from .synth import TargetDataset

ROW_SUM_TOLERANCE = 1e-6

METRICS_SCHEMA = "dualdistill-metrics-v1"

_FLOAT_FMT = "{:.17g}"


def _fmt(x):
    return _FLOAT_FMT.format(float(x))


def write_prediction_matrix(path, matrix):
    c = matrix.class_count
    lines = ["id," + ",".join(f"p{j}" for j in range(c))]
    for sid, row in zip(matrix.sample_ids, matrix.probs):
        lines.append(str(sid) + "," + ",".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_prediction_matrix(path, expected_classes=None):
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty prediction file", line=1)
    header = lines[0].split(",")
    if header[0] != "id" or len(header) < 3:
        raise ParseError(f"bad header {lines[0]!r}, expected id,p0,...", line=1)
    c = len(header) - 1
    if expected_classes is not None and c != expected_classes:
        raise ParseError(f"file has {c} classes, expected {expected_classes}", line=1)
    ids = []
    seen = set()
    rows = []
    for lineno, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        parts = text.split(",")
        if len(parts) != c + 1:
            raise ParseError(f"expected {c + 1} columns, found {len(parts)}", line=lineno)
        sid = parts[0]
        if sid in seen:
            raise ParseError(f"duplicate sample id {sid!r}", line=lineno)
        try:
            row = np.array([float(v) for v in parts[1:]], dtype=float)
        except ValueError as exc:
            raise ParseError(f"malformed probability: {exc}", line=lineno) from None
        if not np.all(np.isfinite(row)) or np.any(row < 0):
            raise ParseError("probabilities must be finite and non-negative", line=lineno)
        s = row.sum()
        if abs(s - 1.0) > ROW_SUM_TOLERANCE:
            raise ParseError(f"row sums to {s!r}, beyond tolerance {ROW_SUM_TOLERANCE}", line=lineno)
        rows.append(row / s)
        seen.add(sid)
        ids.append(sid)
    if not rows:
        raise ParseError("prediction file has no data rows", line=2)
    return PredictionMatrix(np.vstack(rows), tuple(ids))


def write_dataset(path, dataset, class_count=None):
    labeled = dataset.labels is not None
    c = "?" if class_count is None else int(class_count)
    lines = [f"# dualdistill-dataset d={dataset.dim} C={c} n={dataset.n_samples} labels={int(labeled)}"]
    for i, (sid, row) in enumerate(zip(dataset.sample_ids, dataset.features)):
        cells = [str(sid)] + [_fmt(v) for v in row]
        if labeled:
            cells.append(str(int(dataset.labels[i])))
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_dataset(path):
    """Returns (TargetDataset, class_count_or_None)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("# dualdistill-dataset"):
        raise ParseError("missing dataset header line", line=1)
    header = {}
    for tok in lines[0].split()[2:]:
        key, _, value = tok.partition("=")
        header[key] = value
    try:
        d = int(header["d"])
        n = int(header["n"])
        labeled = bool(int(header["labels"]))
    except (KeyError, ValueError):
        raise ParseError(f"bad dataset header {lines[0]!r}", line=1) from None
    class_count = None if header.get("C", "?") == "?" else int(header["C"])
    want = 1 + d + (1 if labeled else 0)
    ids, feats, labels = [], [], []
    for lineno, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        parts = text.split(",")
        if len(parts) != want:
            raise ParseError(f"expected {want} columns, found {len(parts)}", line=lineno)
        ids.append(parts[0])
        try:
            feats.append([float(v) for v in parts[1 : 1 + d]])
            if labeled:
                labels.append(int(parts[1 + d]))
        except ValueError as exc:
            raise ParseError(f"malformed value: {exc}", line=lineno) from None
    if len(ids) != n:
        raise ParseError(f"header promises {n} rows, file has {len(ids)}", line=1)
    dataset = TargetDataset(np.array(feats), tuple(ids), np.array(labels) if labeled else None)
    return dataset, class_count


def dump_json_line(obj):
    return json.dumps(obj, sort_keys=False, allow_nan=False, separators=(",", ": "))


def write_metrics(path, records):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(dump_json_line(record.to_dict()) + "\n")


def read_metrics(path):
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def write_plot_series(prefix, records):
    """Two-column (epoch, value) plain-text series per scalar metric, for
    direct plotting. Returns the list of paths written."""
    dicts = [r.to_dict() for r in records]
    series = {}
    for rec in dicts:
        epoch = rec["epoch"]
        flat = {
            "target_accuracy": rec["target_accuracy"],
            "gu_of_target": rec["gu_of_target"],
        }
        for name, value in rec["losses"].items():
            flat[f"loss_{name}"] = value
        for name, value in flat.items():
            if value is not None:
                series.setdefault(name, []).append((epoch, value))
    paths = []
    for name, points in sorted(series.items()):
        path = f"{prefix}{name}.dat"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for epoch, value in points:
                fh.write(f"{epoch} {_fmt(value)}\n")
        paths.append(path)
    return paths


def write_ablation_table(path, rows):
    """Tab-separated ablation results with a commented header row."""
    cols = ["label", "target_accuracy", "stage_one_accuracy", "gu_of_target"]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# " + "\t".join(cols) + "\n")
        for row in rows:
            cells = [str(row["label"])]
            for c in cols[1:]:
                v = row[c]
                cells.append("nan" if v is None else _fmt(v))
            fh.write("\t".join(cells) + "\n")


def sha256_of(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, config, seed, inputs, outputs):
    manifest = {
        "version": __version__,
        "metrics_schema": METRICS_SCHEMA,
        "seed": seed,
        "config": config,
        "input_digests": {name: sha256_of(p) for name, p in inputs.items()},
        "outputs": outputs,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return manifest
