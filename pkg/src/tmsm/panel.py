"""Longitudinal panel data: regime coding, observation masks, history features, CSV I/O.

A panel holds, for ``N`` subjects over times ``1..T``, baseline covariates
``x0`` (N x d0), per-time covariate matrices ``x[t-1]`` (N x d_t), binary
treatments ``a`` (N x T) and outcomes ``y`` (N x T).  The panel must be
complete: every subject observed at every time, no gaps.

Treatment regimes of length ``k`` are encoded as integers with the earliest
treatment as the most significant bit and the current treatment as the least
significant bit, so e.g. the length-5 history (0,0,1,0,1) encodes to 5.
Flipping this order silently permutes the regime mode of every tensor built
from the panel, so it is fixed here once.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def encode_regime(bits) -> int:
    """Integer code of a treatment history; ``bits[0]`` is the earliest
    treatment (most significant), ``bits[-1]`` the current one."""
    bits = np.asarray(bits)
    if bits.size == 0:
        raise ValueError("empty treatment history")
    if not np.isin(bits, (0, 1)).all():
        raise ValueError("treatment history entries must be 0 or 1")
    code = 0
    for b in bits.astype(int).ravel():
        code = (code << 1) | b
    return code


def decode_regime(index: int, k: int) -> np.ndarray:
    """Inverse of :func:`encode_regime` for histories of length ``k``."""
    if k < 1:
        raise ValueError("history length k must be >= 1")
    if not 0 <= index < 2**k:
        raise ValueError(f"regime index {index} out of range for k={k}")
    return np.array([(index >> (k - 1 - j)) & 1 for j in range(k)], dtype=np.int64)


@dataclass(frozen=True)
class RegimeCode:
    """A treatment regime: history length ``k`` and integer index ``index``."""

    k: int
    index: int

    def __post_init__(self):
        if not 0 <= self.index < 2**self.k:
            raise ValueError(f"regime index {self.index} out of range for k={self.k}")

    @classmethod
    def from_bits(cls, bits) -> "RegimeCode":
        bits = np.asarray(bits)
        return cls(k=int(bits.size), index=encode_regime(bits))

    @property
    def bits(self) -> np.ndarray:
        return decode_regime(self.index, self.k)


@dataclass
class PanelDataset:
    """Complete longitudinal panel; immutable after construction."""

    subject_ids: np.ndarray  # (N,) int
    x0: np.ndarray  # (N, d0)
    x: list  # T matrices of shape (N, d_t)
    a: np.ndarray  # (N, T) in {0, 1}
    y: np.ndarray  # (N, T)

    def __post_init__(self):
        self.subject_ids = np.asarray(self.subject_ids, dtype=np.int64)
        self.x0 = np.atleast_2d(np.asarray(self.x0, dtype=np.float64))
        self.a = np.asarray(self.a)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.x = [np.atleast_2d(np.asarray(m, dtype=np.float64)) for m in self.x]
        n = self.subject_ids.shape[0]
        if self.x0.shape[0] != n or self.a.shape[0] != n or self.y.shape[0] != n:
            raise ValueError("subject dimension mismatch across panel arrays")
        if self.a.shape != self.y.shape:
            raise ValueError("treatments and outcomes must share shape (N, T)")
        if len(self.x) != self.a.shape[1]:
            raise ValueError("need one covariate matrix per time point")
        for t, m in enumerate(self.x):
            if m.shape[0] != n:
                raise ValueError(f"covariate matrix at time {t + 1} has wrong row count")
        if not np.isin(self.a, (0, 1)).all():
            raise ValueError("treatments must be binary")
        self.a = self.a.astype(np.int64)

    @property
    def n_subjects(self) -> int:
        return int(self.subject_ids.shape[0])

    @property
    def n_times(self) -> int:
        return int(self.a.shape[1])

    @property
    def d0(self) -> int:
        return int(self.x0.shape[1])


def observed_regimes(data: PanelDataset, k: int) -> np.ndarray:
    """(N, T) array of observed regime indices; histories before time 1 are
    padded with treatment 0."""
    if not 1 <= k <= data.n_times:
        raise ValueError(f"history length k={k} must lie in 1..T={data.n_times}")
    n, t_max = data.n_subjects, data.n_times
    padded = np.zeros((n, t_max + k - 1), dtype=np.int64)
    padded[:, k - 1 :] = data.a
    codes = np.zeros((n, t_max), dtype=np.int64)
    for j in range(k):
        codes = (codes << 1) | padded[:, j : j + t_max]
    return codes


def observation_tensor(data: PanelDataset, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Observation mask ``omega`` (N, T, 2^k) with exactly one 1 per (i, t)
    fiber, and ``y_obs`` holding the outcome at the observed regime slot."""
    codes = observed_regimes(data, k)
    n, t_max = codes.shape
    big_k = 2**k
    omega = np.zeros((n, t_max, big_k))
    y_obs = np.zeros((n, t_max, big_k))
    ii, tt = np.meshgrid(np.arange(n), np.arange(t_max), indexing="ij")
    omega[ii, tt, codes] = 1.0
    y_obs[ii, tt, codes] = data.y
    return omega, y_obs


def history_vector(data: PanelDataset, i: int, t: int, lag: int) -> np.ndarray:
    """Feature vector available just before treatment at time ``t``:
    baseline covariates, then the ``lag`` most recent covariate vectors
    strictly before ``t`` (x_{t-1}, ..., x_{t-lag}), then the matching lagged
    treatments and outcomes, zero-padded before time 1."""
    parts = [data.x0[i]]
    for j in range(1, lag + 1):
        s = t - j
        if s >= 1:
            parts.append(data.x[s - 1][i])
        else:
            parts.append(np.zeros(data.x[0].shape[1]))
    for j in range(1, lag + 1):
        s = t - j
        parts.append(np.array([float(data.a[i, s - 1]) if s >= 1 else 0.0]))
    for j in range(1, lag + 1):
        s = t - j
        parts.append(np.array([data.y[i, s - 1] if s >= 1 else 0.0]))
    return np.concatenate(parts)


def history_matrix(data: PanelDataset, t: int, lag: int) -> np.ndarray:
    """Stacked :func:`history_vector` for all subjects at time ``t``."""
    n = data.n_subjects
    blocks = [data.x0]
    d = data.x[0].shape[1]
    for j in range(1, lag + 1):
        s = t - j
        blocks.append(data.x[s - 1] if s >= 1 else np.zeros((n, d)))
    for j in range(1, lag + 1):
        s = t - j
        col = data.a[:, s - 1].astype(float) if s >= 1 else np.zeros(n)
        blocks.append(col[:, None])
    for j in range(1, lag + 1):
        s = t - j
        col = data.y[:, s - 1] if s >= 1 else np.zeros(n)
        blocks.append(col[:, None])
    return np.column_stack(blocks) if blocks else np.zeros((n, 0))


class PanelFormatError(ValueError):
    """Raised when a panel CSV violates the schema."""


def _parse_float(value: str, path, row_no: int, col: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise PanelFormatError(
            f"{path}: row {row_no}: column {col!r} is not numeric: {value!r}"
        ) from None


def load_panel_csv(baseline_path, longitudinal_path) -> PanelDataset:
    """Load a panel from its two CSV files.

    Baseline schema: ``subject_id,x0_1,...,x0_d0``.  Longitudinal schema:
    ``subject_id,time,treatment,outcome,x_1,...,x_d``.  Subjects are sorted by
    id; each subject must be observed at contiguous times ``1..T``.
    """
    baseline_path, longitudinal_path = Path(baseline_path), Path(longitudinal_path)
    with open(baseline_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "subject_id":
            raise PanelFormatError(f"{baseline_path}: missing 'subject_id' header column")
        d0 = len(header) - 1
        expect = ["x0_%d" % (j + 1) for j in range(d0)]
        if header[1:] != expect:
            raise PanelFormatError(
                f"{baseline_path}: baseline columns must be {['subject_id'] + expect}, got {header}"
            )
        base_rows = {}
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d0 + 1:
                raise PanelFormatError(
                    f"{baseline_path}: row {row_no}: expected {d0 + 1} fields, got {len(row)}"
                )
            try:
                sid = int(row[0])
            except ValueError:
                raise PanelFormatError(
                    f"{baseline_path}: row {row_no}: subject_id is not an integer: {row[0]!r}"
                ) from None
            if sid in base_rows:
                raise PanelFormatError(
                    f"{baseline_path}: row {row_no}: duplicate subject_id {sid}"
                )
            base_rows[sid] = [
                _parse_float(v, baseline_path, row_no, header[j + 1])
                for j, v in enumerate(row[1:])
            ]
    if not base_rows:
        raise PanelFormatError(f"{baseline_path}: no subjects")

    with open(longitudinal_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        fixed = ["subject_id", "time", "treatment", "outcome"]
        if header is None or header[: len(fixed)] != fixed:
            raise PanelFormatError(
                f"{longitudinal_path}: header must start with {fixed}, got {header}"
            )
        d = len(header) - len(fixed)
        if header[len(fixed) :] != ["x_%d" % (j + 1) for j in range(d)]:
            raise PanelFormatError(
                f"{longitudinal_path}: covariate columns must be x_1..x_{d}, got {header[len(fixed):]}"
            )
        records = {}
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(fixed) + d:
                raise PanelFormatError(
                    f"{longitudinal_path}: row {row_no}: expected {len(fixed) + d} fields, got {len(row)}"
                )
            try:
                sid, t = int(row[0]), int(row[1])
            except ValueError:
                raise PanelFormatError(
                    f"{longitudinal_path}: row {row_no}: subject_id/time must be integers"
                ) from None
            if sid not in base_rows:
                raise PanelFormatError(
                    f"{longitudinal_path}: row {row_no}: subject_id {sid} missing from baseline file"
                )
            if t < 1:
                raise PanelFormatError(
                    f"{longitudinal_path}: row {row_no}: times must be positive integers, got {t}"
                )
            if row[2] not in ("0", "1"):
                raise PanelFormatError(
                    f"{longitudinal_path}: row {row_no}: treatment must be 0 or 1, got {row[2]!r}"
                )
            outcome = _parse_float(row[3], longitudinal_path, row_no, "outcome")
            covs = [
                _parse_float(v, longitudinal_path, row_no, "x_%d" % (j + 1))
                for j, v in enumerate(row[len(fixed) :])
            ]
            key = (sid, t)
            if key in records:
                raise PanelFormatError(
                    f"{longitudinal_path}: row {row_no}: duplicate (subject_id, time) {key}"
                )
            records[key] = (int(row[2]), outcome, covs)

    sids = sorted(base_rows)
    times_by_sid = {}
    for sid, t in records:
        times_by_sid.setdefault(sid, []).append(t)
    t_max = 0
    for sid in sids:
        times = sorted(times_by_sid.get(sid, []))
        if not times:
            raise PanelFormatError(f"{longitudinal_path}: subject {sid} has no rows")
        if times != list(range(1, len(times) + 1)):
            raise PanelFormatError(
                f"{longitudinal_path}: subject {sid} has ragged times {times}; "
                "need contiguous 1..T"
            )
        t_max = t_max or len(times)
        if len(times) != t_max:
            raise PanelFormatError(
                f"{longitudinal_path}: subject {sid} has {len(times)} times, others have {t_max}"
            )

    n = len(sids)
    x0 = np.array([base_rows[sid] for sid in sids])
    a = np.zeros((n, t_max), dtype=np.int64)
    y = np.zeros((n, t_max))
    x = [np.zeros((n, d)) for _ in range(t_max)]
    for i, sid in enumerate(sids):
        for t in range(1, t_max + 1):
            treat, outcome, covs = records[(sid, t)]
            a[i, t - 1] = treat
            y[i, t - 1] = outcome
            x[t - 1][i] = covs
    return PanelDataset(subject_ids=np.array(sids), x0=x0, x=x, a=a, y=y)


def write_panel_csv(data: PanelDataset, baseline_path, longitudinal_path) -> None:
    """Write the two-file CSV representation read by :func:`load_panel_csv`."""
    with open(baseline_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id"] + ["x0_%d" % (j + 1) for j in range(data.d0)])
        for i, sid in enumerate(data.subject_ids):
            writer.writerow([int(sid)] + [repr(float(v)) for v in data.x0[i]])
    d = data.x[0].shape[1]
    with open(longitudinal_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["subject_id", "time", "treatment", "outcome"]
            + ["x_%d" % (j + 1) for j in range(d)]
        )
        for i, sid in enumerate(data.subject_ids):
            for t in range(data.n_times):
                writer.writerow(
                    [int(sid), t + 1, int(data.a[i, t]), repr(float(data.y[i, t]))]
                    + [repr(float(v)) for v in data.x[t][i]]
                )
