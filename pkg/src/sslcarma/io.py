"""File formats: model JSON, headed CSV columns, fit and filter JSON."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from datetime import datetime
from importlib import resources
from pathlib import Path

import numpy as np

from .carma import CarmaModel
from .exceptions import SSLCarmaError, ValidationError
from .semilevy import JumpLaw, PeriodPartition, SemiLevySpec

__all__ = [
    "ParseError",
    "ModelFile",
    "load_model",
    "bundled_models",
    "write_columns",
    "read_columns",
    "read_series",
    "read_prices",
    "write_json",
    "read_json",
    "sha256_file",
    "FLOAT_FORMAT",
]

FLOAT_FORMAT = "%.17g"
SERIES_COLUMNS = ("Y", "y", "RV", "rv", "value", "Yhat")


class ParseError(SSLCarmaError, ValueError):
    """An input file does not follow its schema."""


@dataclass(frozen=True)
class ModelFile:
    model: CarmaModel
    spec: SemiLevySpec
    m0: int
    seed: int | None = None

    def to_dict(self) -> dict:
        part = self.spec.partition
        d = {
            "carma": self.model.to_dict(),
            "semilevy": {"lengths": list(part.lengths), "rates": list(part.rates),
                         "drift": self.spec.drift, "jump_law": self.spec.jump_law.to_dict()},
            "m0": self.m0,
        }
        if self.seed is not None:
            d["seed"] = self.seed
        return d


def _check_keys(d, allowed, required, where):
    if not isinstance(d, dict):
        raise ValidationError(f"{where}: expected an object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ValidationError(f"{where}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(d)
    if missing:
        raise ValidationError(f"{where}: missing keys {sorted(missing)}")


def bundled_models() -> dict:
    root = resources.files("sslcarma") / "models"
    return {p.name[:-5]: p for p in root.iterdir() if p.name.endswith(".json")}


def load_model(path) -> ModelFile:
    """Read a model file; ``path`` may also name a bundled model."""
    models = bundled_models()
    source = models[str(path)] if str(path) in models else Path(path)
    try:
        d = json.loads(source.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    _check_keys(d, {"carma", "semilevy", "m0", "seed"}, {"carma", "semilevy", "m0"}, str(path))
    model = CarmaModel.from_dict(d["carma"])
    sl = d["semilevy"]
    _check_keys(sl, {"lengths", "rates", "drift", "jump_law"}, {"lengths", "rates"},
                f"{path}: semilevy")
    law = JumpLaw.from_dict(sl.get("jump_law", {"law": "exponential", "rate": 1.0}))
    spec = SemiLevySpec(PeriodPartition(tuple(sl["lengths"]), tuple(sl["rates"])),
                        float(sl.get("drift", 0.0)), law)
    m0 = d["m0"]
    if not isinstance(m0, int) or m0 < 1:
        raise ValidationError(f"{path}: m0 must be a positive integer")
    seed = d.get("seed")
    if seed is not None and not isinstance(seed, int):
        raise ValidationError(f"{path}: seed must be an integer")
    return ModelFile(model, spec, m0, seed)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return FLOAT_FORMAT % float(v)


def write_columns(path, header, columns) -> None:
    """Headed CSV, UTF-8, LF line endings, floats with 17 significant digits."""
    cols = [np.asarray(c) for c in columns]
    n = {c.size for c in cols}
    if len(n) != 1 or len(header) != len(cols):
        raise ValidationError("columns must have equal length and match the header")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_columns(path) -> dict:
    """Read a headed CSV into a dict of float arrays (file/line in errors)."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    data = {h: [] for h in header}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        for h, v in zip(header, row):
            try:
                data[h].append(float(v))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: column {h!r}: not a number: {v!r}") from None
    return {h: np.asarray(v, dtype=float) for h, v in data.items()}


def read_series(path, column: str | None = None) -> np.ndarray:
    cols = read_columns(path)
    if column is not None:
        if column not in cols:
            raise ParseError(f"{path}: no column {column!r} (have {list(cols)})")
        return cols[column]
    for name in SERIES_COLUMNS:
        if name in cols:
            return cols[name]
    return cols[list(cols)[-1]]


def _timestamp(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return datetime.fromisoformat(text.strip()).timestamp()


def read_prices(path):
    """``timestamp, price`` CSV; timestamps may be numbers or ISO 8601 strings."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]][:2] != ["timestamp", "price"]:
        raise ParseError(f"{path}: header must be 'timestamp,price'")
    ts, ps = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ParseError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
        try:
            ts.append(_timestamp(row[0]))
            ps.append(float(row[1]))
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
    return np.asarray(ts), np.asarray(ps)


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
