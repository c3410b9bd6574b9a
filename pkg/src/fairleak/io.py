"""Run-directory artifacts: model.bin, history.csv, predictions.csv, report.json."""

from __future__ import annotations

import csv
import json
import struct
from importlib import resources
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from .gcn import GcnModel

MAGIC = b"FAIRLEAK"
FORMAT_VERSION = 1


def save_model(model: GcnModel, path):
    """Little-endian float64 matrices behind a small shape header.

    Layout: magic (8 bytes), u32 version, u32 matrix count, then per matrix
    two u64 dimensions, then the row-major data of each matrix in order.
    """
    mats = (model.w1, model.w2)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(mats)))
        for m in mats:
            fh.write(struct.pack("<QQ", *m.shape))
        for m in mats:
            fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def load_model(path) -> GcnModel:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path} is not a model file")
    version, count = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION or count != 2:
        raise ValueError(f"unsupported model file (version {version}, {count} matrices)")
    offset = 16
    shapes = []
    for _ in range(count):
        shapes.append(struct.unpack_from("<QQ", data, offset))
        offset += 16
    mats = []
    for rows, cols in shapes:
        size = rows * cols
        mats.append(np.frombuffer(data, dtype="<f8", count=size, offset=offset)
                    .reshape(rows, cols).astype(np.float64))
        offset += 8 * size
    if offset != len(data):
        raise ValueError(f"{path} has trailing or missing bytes")
    return GcnModel(mats[0], mats[1])


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "acc", "bias"])
        for r in history:
            w.writerow([r.epoch, repr(r.loss), repr(r.acc), repr(r.bias)])


def write_predictions(path, y: np.ndarray):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id"] + [f"p{k}" for k in range(y.shape[1])] + ["pred"])
        for i, row in enumerate(y):
            w.writerow([i] + [repr(float(v)) for v in row] + [int(np.argmax(row))])


def read_predictions(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    cols = [k for k, name in enumerate(header) if name.startswith("p") and name != "pred"]
    return np.array([[float(r[k]) for k in cols] for r in rows[1:]])


def report_schema() -> dict:
    text = resources.files("fairleak").joinpath("schema/report.schema.json").read_text()
    return json.loads(text)


def validate_report(report: dict):
    """Raise jsonschema.ValidationError if ``report`` breaks the schema."""
    Draft202012Validator(report_schema()).validate(report)


def _clean(obj):
    # JSON has no NaN/inf; report them as null
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def write_json(path, obj, validate: bool = False):
    obj = _clean(obj)
    if validate:
        validate_report(obj)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")
    return obj
