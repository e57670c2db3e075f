"""Parsers for the solver's CSV artifacts.

Three file kinds are understood: the sweep report (report.csv), the step
history (steps.csv) and grid fields (field_*.csv, NaN marks exterior
nodes).  The parsers validate the column schema so figure code can assume
well-formed frames.
"""

from dataclasses import dataclass

import numpy as np


class SchemaError(Exception):
    """Input CSV does not match the expected artifact schema."""


REPORT_COLUMNS = ("n_u", "alpha2", "k", "tol", "rel_l2", "rel_linf",
                  "gmres_iters", "wall_time", "steps_accepted",
                  "steps_rejected", "error")
STEPS_COLUMNS = ("t", "dt", "r", "accepted")


@dataclass
class ReportFrame:
    """Rows of report.csv as column arrays."""

    columns: dict

    def __getitem__(self, name):
        return self.columns[name]

    @property
    def n_rows(self):
        return len(self.columns["n_u"])

    def groups(self, key):
        """Distinct values of one column, in order of first appearance."""
        seen = []
        for v in self.columns[key]:
            if v not in seen:
                seen.append(v)
        return seen

    def select(self, key, value):
        mask = self.columns[key] == value
        return {name: col[mask] for name, col in self.columns.items()}


def read_report(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != REPORT_COLUMNS:
            raise SchemaError(f"{path}: unexpected report header {header}")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    if not rows:
        raise SchemaError(f"{path}: report has no data rows")
    if any(len(r) != len(REPORT_COLUMNS) for r in rows):
        raise SchemaError(f"{path}: ragged report rows")
    cols = {}
    for j, name in enumerate(REPORT_COLUMNS):
        vals = [r[j] for r in rows]
        if name == "error":
            cols[name] = np.array(vals, dtype=object)
        else:
            try:
                cols[name] = np.array(vals, dtype=float)
            except ValueError as exc:
                raise SchemaError(f"{path}: non-numeric value in column "
                                  f"{name}") from exc
    return ReportFrame(columns=cols)


@dataclass
class StepsFrame:
    t: np.ndarray
    dt: np.ndarray
    r: np.ndarray
    accepted: np.ndarray


def read_steps(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != STEPS_COLUMNS:
            raise SchemaError(f"{path}: unexpected steps header {header}")
        try:
            body = np.array([[float(v) for v in line.split(",")]
                             for line in fh if line.strip()])
        except ValueError as exc:
            raise SchemaError(f"{path}: non-numeric steps row") from exc
    if body.size == 0 or body.shape[1] != 4:
        raise SchemaError(f"{path}: empty or ragged steps body")
    return StepsFrame(t=body[:, 0], dt=body[:, 1], r=body[:, 2],
                      accepted=body[:, 3] > 0.5)


@dataclass
class FieldFrame:
    box_half_length: float
    n_u: int
    values: np.ndarray    # NaN outside the domain
    mask: np.ndarray      # True on interior nodes


def read_field(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "L,N_u":
            raise SchemaError(f"{path}: unexpected field header {header!r}")
        try:
            l_str, n_str = fh.readline().strip().split(",")
            box, n_u = float(l_str), int(n_str)
        except ValueError as exc:
            raise SchemaError(f"{path}: malformed field size line") from exc
        rows = [np.fromstring(line, sep=",") for line in fh if line.strip()]
    values = np.vstack(rows) if rows else np.empty((0, 0))
    if values.shape != (n_u, n_u):
        raise SchemaError(f"{path}: field body {values.shape} does not match "
                          f"N_u = {n_u}")
    return FieldFrame(box_half_length=box, n_u=n_u, values=values,
                      mask=~np.isnan(values))
