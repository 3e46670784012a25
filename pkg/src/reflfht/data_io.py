"""CSV and JSON file formats.

Dataset CSV: one row per gap, header ``subject_id,gap_days,event,x1,x2,...``.
Covariates are repeated on every row of a subject; the intercept column is
implicit.  Draws CSV: one row per retained iteration with named columns.
All CSV files are UTF-8 with LF line endings; floats are written with
``repr`` so they round-trip exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .inference import PosteriorDraws
from .recurrent_model import Dataset, SubjectData

__all__ = ["config_hash", "metadata", "read_dataset", "read_draws", "write_dataset",
           "write_draws", "write_json"]


def write_dataset(dataset: Dataset, path) -> None:
    names = list(dataset.covariate_names[1:])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "gap_days", "event", *names])
        for subj in dataset:
            cov = [repr(float(v)) for v in subj.covariates[1:]]
            for g, e in zip(subj.gaps, subj.events):
                w.writerow([subj.id, int(g), int(e), *cov])


def read_dataset(path) -> Dataset:
    """Read a dataset CSV; rows of a subject must be contiguous and in gap order."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["subject_id", "gap_days", "event"]:
            raise ValueError(f"{path}: header must start with subject_id,gap_days,event")
        cov_names = header[3:]
        groups: dict[str, list] = {}
        order = []
        last = None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields")
            sid = row[0]
            if sid != last and sid in groups:
                raise ValueError(f"{path}:{lineno}: rows of subject {sid} are not contiguous")
            if sid not in groups:
                groups[sid] = []
                order.append(sid)
            last = sid
            try:
                gap = float(row[1])
                event = int(row[2])
                cov = [float(v) for v in row[3:]]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if event not in (0, 1):
                raise ValueError(f"{path}:{lineno}: event must be 0 or 1")
            if groups[sid] and groups[sid][0][2] != cov:
                raise ValueError(f"{path}:{lineno}: covariates change within subject {sid}")
            groups[sid].append((gap, event, cov))
    subjects = []
    for sid in order:
        rows = groups[sid]
        gaps = np.array([r[0] for r in rows])
        events = np.array([r[1] for r in rows], dtype=np.int64)
        X = np.concatenate([[1.0], rows[0][2]])
        ident = int(sid) if sid.lstrip("-").isdigit() else sid
        subjects.append(SubjectData(ident, gaps, events, X))
    return Dataset(subjects, ("intercept", *cov_names))


def write_draws(draws: PosteriorDraws, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", *draws.names])
        cfg = draws.config
        first = cfg.get("burn_in", 0) + cfg.get("thin", 1)
        for k, row in enumerate(draws.values):
            w.writerow([first + k * cfg.get("thin", 1), *(repr(float(v)) for v in row)])


def _kind_from_names(names):
    if "gamma" not in names:
        return "independent"
    if "theta2p" not in names:
        return "shared"
    return "correlated"


def read_draws(path, x0: float = 10.0, nu: float = 3.9, covariate_names=None) -> PosteriorDraws:
    """Read a draws CSV; the frailty kind is inferred from the columns."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"draws file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ValueError(f"{path}: empty draws file")
        rows = [[float(v) for v in row] for row in reader if row]
    names = header[1:] if header[0] == "iteration" else header
    values = np.array(rows, dtype=float).reshape(len(rows), len(header))
    if header[0] == "iteration":
        values = values[:, 1:]
    p = sum(1 for n_ in names if n_.startswith("alpha"))
    if covariate_names is None or len(covariate_names) != p:
        covariate_names = tuple(f"x{j}" for j in range(p))
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{path}: non-finite draws")
    return PosteriorDraws(list(names), values, _kind_from_names(names), x0, nu,
                          tuple(covariate_names))


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def metadata(command: str, config: dict, seeds: dict) -> dict:
    return {"tool": "reflfht", "version": __version__, "command": command,
            "config_hash": config_hash(config), "seeds": seeds, "config": config}


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"cannot serialise {type(x).__name__}")


def write_json(obj, path=None) -> str:
    text = json.dumps(obj, indent=2, default=_json_default) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
