"""Landmark file I/O and run configuration.

Landmark files are schema-versioned JSON:

    {"version": 1, "d": 2, "sets": {"reference": [[x, y], ...], ...}}

CSV import takes one point per row and needs an explicit set name.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .kernel import LandmarkConfig

__all__ = ["LandmarkFile", "RunConfig", "load_landmarks", "save_landmarks"]

SCHEMA_VERSION = 1


class LandmarkFileError(ValueError):
    """Malformed or inconsistent landmark file."""


@dataclass
class LandmarkFile:
    d: int
    sets: dict[str, LandmarkConfig]
    labels: list[str] | None = None

    def require(self, *names: str) -> list[LandmarkConfig]:
        missing = [n for n in names if n not in self.sets]
        if missing:
            raise LandmarkFileError(f"missing landmark sets: {', '.join(missing)}")
        return [self.sets[n] for n in names]


def load_landmarks(path: str | Path, csv_set: str | None = None) -> LandmarkFile:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        if not csv_set:
            raise LandmarkFileError("CSV import needs a set name (--set)")
        with open(path, newline="") as fh:
            rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
        if not rows:
            raise LandmarkFileError("empty CSV file")
        pts = np.asarray(rows, dtype=float)
        return LandmarkFile(d=pts.shape[1], sets={csv_set: LandmarkConfig.from_points(pts)})
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise LandmarkFileError(f"invalid JSON: {exc}") from exc
    if not isinstance(data, dict) or data.get("version") != SCHEMA_VERSION:
        raise LandmarkFileError(f"expected schema version {SCHEMA_VERSION}")
    d = data.get("d")
    raw_sets = data.get("sets")
    if not isinstance(d, int) or d < 1 or not isinstance(raw_sets, dict) or not raw_sets:
        raise LandmarkFileError("landmark file needs integer 'd' and non-empty 'sets'")
    sets = {}
    n_ref = None
    for name, pts in raw_sets.items():
        arr = np.asarray(pts, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != d:
            raise LandmarkFileError(f"set {name!r} is not an array of {d}-d points")
        if not np.all(np.isfinite(arr)):
            raise LandmarkFileError(f"set {name!r} has non-finite coordinates")
        if n_ref is None:
            n_ref = arr.shape[0]
        elif arr.shape[0] != n_ref:
            raise LandmarkFileError("all sets must have the same number of landmarks")
        sets[name] = LandmarkConfig.from_points(arr)
    labels = data.get("labels")
    return LandmarkFile(d=d, sets=sets, labels=labels)


def save_landmarks(path: str | Path, lf: LandmarkFile) -> None:
    payload = {
        "version": SCHEMA_VERSION,
        "d": lf.d,
        "sets": {name: cfg.points.tolist() for name, cfg in lf.sets.items()},
    }
    if lf.labels is not None:
        payload["labels"] = lf.labels
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


@dataclass
class RunConfig:
    """Parameters shared by the CLI pipelines; sigma is always derived."""

    beta: float = 25.0
    lam: float = 0.1
    obs_noise_var: float = 0.01  # observation-error variance
    prior_pos_var: float = 0.01  # midpoint-prior positional variance
    ell: float = 0.5
    h: float = 0.05
    integrator: str = "rk4"
    seed: int = 0
    n_samples: int = 50
    beta_list: list[float] = field(default_factory=lambda: [10.0, 20.0, 40.0, 80.0])
    out_dir: str = "out"

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        data = json.loads(Path(path).read_text())
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise LandmarkFileError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
