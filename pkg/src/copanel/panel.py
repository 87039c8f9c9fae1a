"""Panel data container, CSV ingestion, and run configuration.

Long format: one row per (subject, time); d ordinal responses (1..K_j,
0 marks missing) plus a per-response covariate matrix.  Within a subject
a gap in the time index restarts every Markov chain at the next
observation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import PanelError

__all__ = ["SeriesData", "OrdinalPanel", "ModelConfig", "ResponseConfig",
           "load_panel_csv", "write_panel_csv"]


@dataclass
class SeriesData:
    """Flattened data for one ordinal series."""

    y: np.ndarray        # (m,) categories 1..K
    X: np.ndarray        # (m, p)
    subject: np.ndarray  # (m,)
    time: np.ndarray     # (m,)
    K: int

    def __post_init__(self):
        first, prev, curr = _chain_index(self.subject, self.time)
        self.first_idx = first
        self.trans_prev = prev
        self.trans_curr = curr

    @property
    def n_obs(self) -> int:
        return self.y.size


def _chain_index(subject, time):
    """Start-of-run rows and consecutive-time transition pairs."""
    n = subject.size
    if n == 0:
        return (np.array([], int),) * 3
    has_prev = np.zeros(n, dtype=bool)
    has_prev[1:] = (subject[1:] == subject[:-1]) & (time[1:] == time[:-1] + 1)
    idx = np.arange(n)
    first = idx[~has_prev]
    curr = idx[has_prev]
    return first, curr - 1, curr


@dataclass
class OrdinalPanel:
    """Subjects x times x d ordinal responses with per-response covariates."""

    subject: np.ndarray          # (N,) sorted
    time: np.ndarray             # (N,) strictly increasing within subject
    y: np.ndarray                # (N, d), 1..K_j, 0 = missing
    x: list                      # d arrays of shape (N, p_j)
    K: tuple

    def __post_init__(self):
        self.subject = np.asarray(self.subject)
        self.time = np.asarray(self.time, dtype=int)
        self.y = np.asarray(self.y, dtype=int)
        if self.y.ndim != 2 or len(self.x) != self.y.shape[1] or len(self.K) != self.y.shape[1]:
            raise PanelError("responses, covariate blocks and K must agree on d")
        self.x = [np.atleast_2d(np.asarray(xj, dtype=float)) for xj in self.x]
        for j, xj in enumerate(self.x):
            if xj.shape[0] != self.y.shape[0]:
                raise PanelError(f"covariate block {j} has wrong number of rows")
        order = np.lexsort((self.time, self.subject))
        if not np.array_equal(order, np.arange(self.subject.size)):
            self.subject = self.subject[order]
            self.time = self.time[order]
            self.y = self.y[order]
            self.x = [xj[order] for xj in self.x]
        same = (self.subject[1:] == self.subject[:-1])
        if np.any(same & (self.time[1:] <= self.time[:-1])):
            raise PanelError("duplicate or non-increasing (subject, time) rows")
        for j, Kj in enumerate(self.K):
            yj = self.y[:, j]
            if np.any((yj < 0) | (yj > Kj)):
                bad = int(np.argmax((yj < 0) | (yj > Kj)))
                raise PanelError(
                    f"response {j} out of range 1..{Kj} at row {bad} "
                    f"(value {yj[bad]})"
                )

    @property
    def d(self) -> int:
        return self.y.shape[1]

    @property
    def n_rows(self) -> int:
        return self.y.shape[0]

    @property
    def subject_ids(self) -> np.ndarray:
        return np.unique(self.subject)

    @property
    def n_subjects(self) -> int:
        return self.subject_ids.size

    def series(self, j: int) -> SeriesData:
        """Per-series view; missing responses drop out and split the chain."""
        valid = self.y[:, j] > 0
        return SeriesData(
            y=self.y[valid, j],
            X=self.x[j][valid],
            subject=self.subject[valid],
            time=self.time[valid],
            K=self.K[j],
        )

    def joint_index(self):
        """Rows usable as joint terms: fully observed; chains restart on
        gaps or on a row with any missing response."""
        valid = np.all(self.y > 0, axis=1)
        sub = self.subject[valid]
        tim = self.time[valid]
        first, prev, curr = _chain_index(sub, tim)
        rows = np.flatnonzero(valid)
        return rows[first], rows[prev], rows[curr]

    def subset_subjects(self, ids) -> "OrdinalPanel":
        mask = np.isin(self.subject, np.asarray(ids))
        return OrdinalPanel(
            subject=self.subject[mask],
            time=self.time[mask],
            y=self.y[mask],
            x=[xj[mask] for xj in self.x],
            K=self.K,
        )

    def drop_subject(self, sid) -> "OrdinalPanel":
        return self.subset_subjects(self.subject_ids[self.subject_ids != sid])

    def __eq__(self, other):
        if not isinstance(other, OrdinalPanel):
            return NotImplemented
        return (
            np.array_equal(self.subject, other.subject)
            and np.array_equal(self.time, other.time)
            and np.array_equal(self.y, other.y)
            and self.K == other.K
            and all(np.array_equal(a, b) for a, b in zip(self.x, other.x))
        )


# ---------------------------------------------------------------------
# configuration


@dataclass
class ResponseConfig:
    name: str
    K: int
    covariates: list
    link: str = "probit"
    family: str = "bvn"
    nu_grid: list = field(default_factory=lambda: list(range(1, 11)))


@dataclass
class ModelConfig:
    responses: list                      # of ResponseConfig
    joint_links: list = field(default_factory=lambda: [{"type": "mvn"}])
    qmc: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    stage: int = 2

    @classmethod
    def from_json(cls, path) -> "ModelConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw) -> "ModelConfig":
        try:
            responses = [ResponseConfig(**r) for r in raw["responses"]]
        except (KeyError, TypeError) as exc:
            raise PanelError(f"bad config: {exc}") from exc
        if not responses:
            raise PanelError("config needs at least one response")
        for r in responses:
            if r.K < 2:
                raise PanelError(f"response {r.name}: K must be >= 2")
            if r.family == "bvt" and not r.nu_grid:
                raise PanelError(f"response {r.name}: empty nu grid")
        joint_links = raw.get("joint", {}).get("links", [{"type": "mvn"}])
        if not joint_links:
            raise PanelError("empty joint link grid")
        return cls(
            responses=responses,
            joint_links=joint_links,
            qmc=raw.get("qmc", {}),
            optimizer=raw.get("optimizer", {}),
            stage=raw.get("stage", 2),
        )

    def echo(self) -> dict:
        """Fully-defaulted copy of the configuration for fit reports."""
        return {
            "responses": [
                {
                    "name": r.name,
                    "K": r.K,
                    "covariates": list(r.covariates),
                    "link": r.link,
                    "family": r.family,
                    "nu_grid": list(r.nu_grid),
                }
                for r in self.responses
            ],
            "joint": {"links": list(self.joint_links)},
            "qmc": {
                "seed": self.qmc.get("seed", 0),
                "shifts": self.qmc.get("shifts", 12),
                "points_per_shift": self.qmc.get("points_per_shift", 4096),
            },
            "optimizer": {
                "tol": self.optimizer.get("tol", 1e-5),
                "max_iter": self.optimizer.get("max_iter", 500),
            },
            "stage": self.stage,
        }


# ---------------------------------------------------------------------
# CSV ingestion


def _parse_cell(value, row_no, col):
    if value is None or value.strip() in ("", "NA"):
        return None
    try:
        return float(value)
    except ValueError as exc:
        raise PanelError(f"row {row_no}: column {col!r} is not numeric: {value!r}") from exc


def load_panel_csv(path, config: ModelConfig) -> OrdinalPanel:
    """Read a long-format panel CSV validated against the configuration.

    Required columns: subject_id, time, then the response and covariate
    columns named in the config.  Missing marker: empty field or "NA".
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise PanelError("CSV has no header row")
        cols = set(reader.fieldnames)
        needed = {"subject_id", "time"}
        for r in config.responses:
            needed.add(r.name)
            needed.update(r.covariates)
        missing = needed - cols
        if missing:
            raise PanelError(f"CSV is missing columns: {sorted(missing)}")
        subjects, times, yrows, xrows = [], [], [], []
        for row_no, row in enumerate(reader, start=2):
            sid = row["subject_id"].strip()
            t = row["time"].strip()
            if not sid or not t:
                raise PanelError(f"row {row_no}: subject_id/time may not be missing")
            subjects.append(sid)
            times.append(int(float(t)))
            yr = []
            for r in config.responses:
                v = _parse_cell(row[r.name], row_no, r.name)
                if v is None:
                    yr.append(0)
                else:
                    iv = int(v)
                    if iv != v or not 1 <= iv <= r.K:
                        raise PanelError(
                            f"row {row_no}: response {r.name} value {row[r.name]!r} "
                            f"outside 1..{r.K}"
                        )
                    yr.append(iv)
            yrows.append(yr)
            xr = []
            for r in config.responses:
                vals = []
                for c in r.covariates:
                    v = _parse_cell(row[c], row_no, c)
                    vals.append(np.nan if v is None else v)
                xr.append(vals)
            xrows.append(xr)

    n = len(subjects)
    if n == 0:
        raise PanelError("CSV contains no data rows")
    try:
        subj = np.asarray([int(s) for s in subjects])
    except ValueError:
        subj = np.asarray(subjects)
    tim = np.asarray(times, dtype=int)
    key = [(s, t) for s, t in zip(subjects, times)]
    if len(set(key)) != n:
        raise PanelError("duplicate (subject, time) rows in CSV")
    y = np.asarray(yrows, dtype=int)
    x = []
    for j, r in enumerate(config.responses):
        pj = max(len(r.covariates), 1)
        block = np.zeros((n, len(r.covariates)))
        for i in range(n):
            block[i] = xrows[i][j]
        x.append(block if r.covariates else np.zeros((n, 0)))
    return OrdinalPanel(subject=subj, time=tim, y=y, x=x, K=tuple(r.K for r in config.responses))


def write_panel_csv(path, panel: OrdinalPanel, config: ModelConfig):
    """Emit a panel in the load_panel_csv schema (covariate columns are
    deduplicated by name across responses)."""
    cov_cols = []
    for r in config.responses:
        for c in r.covariates:
            if c not in cov_cols:
                cov_cols.append(c)
    col_source = {}
    for j, r in enumerate(config.responses):
        for pos, c in enumerate(r.covariates):
            col_source.setdefault(c, (j, pos))
    header = ["subject_id", "time"] + [r.name for r in config.responses] + cov_cols
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(panel.n_rows):
            row = [panel.subject[i], panel.time[i]]
            for j in range(panel.d):
                v = panel.y[i, j]
                row.append("" if v == 0 else v)
            for c in cov_cols:
                j, pos = col_source[c]
                v = panel.x[j][i, pos]
                row.append("" if np.isnan(v) else repr(float(v)))
            writer.writerow(row)
