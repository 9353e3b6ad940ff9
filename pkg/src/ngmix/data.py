"""Long-format dataset ingestion and full-precision table output.

The on-disk format is one CSV row per measurement: ``subject_id``
(string), ``time``, ``y``, and any covariate columns the model formulas
reference.  Ingestion validates hard (named missing columns, row-level
line numbers for bad cells, duplicate visit times listed explicitly),
sorts canonically, and builds the fixed/random design matrices, so the
rest of the package never sees raw tables.  Rows with a missing outcome
are dropped with a log line; single-measurement subjects are kept and
counted in the log rather than silently removed.
"""

from __future__ import annotations

import logging

import numpy as np
import pandas as pd

from .errors import DataError
from .model import SubjectRecord

__all__ = ["ingest", "write_table", "subjects_to_frame"]

logger = logging.getLogger(__name__)

_REQUIRED = ("subject_id", "time", "y")
_FLOAT_FMT = "%.17g"


def _numeric_column(raw: pd.Series, name: str, path, allow_missing=False):
    """Parse one column to float64 with line-numbered error reporting.

    Cells go through Python's float() — pandas' fast parser can be off
    by an ulp, which would break bitwise round trips.
    """
    text = raw.str.strip()
    blank = (text == "").to_numpy()
    values = np.full(len(text), np.nan)
    for row, (missing, cell) in enumerate(zip(blank, text.to_numpy())):
        if missing:
            if not allow_missing:
                raise DataError(
                    f"{path}: missing value in column {name!r} at line "
                    f"{row + 2}"
                )
            continue
        try:
            parsed = float(cell)
        except ValueError:
            parsed = np.nan
        if not np.isfinite(parsed):
            raise DataError(
                f"{path}: non-numeric value {raw.iloc[row]!r} in column "
                f"{name!r} at line {row + 2}"
            )
        values[row] = parsed
    return values, blank


def ingest(path, config) -> list[SubjectRecord]:
    """Read, validate and sort a dataset, building design matrices.

    ``config`` supplies the formula term lists (``fixed`` and
    ``random`` attributes); ``"1"`` means an intercept column and
    ``"time"`` the time column itself.
    """
    fixed = list(config.fixed)
    random = list(config.random)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False,
                            skipinitialspace=True)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"{path}: could not read CSV ({exc})") from exc
    frame.index = np.arange(len(frame))

    covariates = [t for t in dict.fromkeys(fixed + random)
                  if t not in ("1", "time")]
    for col in (*_REQUIRED, *covariates):
        if col not in frame.columns:
            raise DataError(f"{path}: missing required column {col!r}")

    sid = frame["subject_id"].str.strip()
    if (sid == "").any():
        row = int((sid == "").idxmax())
        raise DataError(f"{path}: empty subject_id at line {row + 2}")

    time, _ = _numeric_column(frame["time"], "time", path)
    y, y_missing = _numeric_column(frame["y"], "y", path, allow_missing=True)
    cov = {c: _numeric_column(frame[c], c, path)[0] for c in covariates}

    if y_missing.any():
        logger.info("%s: dropped %d row(s) with missing y", path,
                    int(y_missing.sum()))
    keep = ~y_missing
    table = pd.DataFrame({"subject_id": sid[keep].to_numpy(),
                          "time": time[keep], "y": y[keep],
                          **{c: v[keep] for c, v in cov.items()}})
    if not len(table):
        raise DataError(f"{path}: no usable rows after dropping missing y")

    dup = table.duplicated(subset=["subject_id", "time"], keep=False)
    if dup.any():
        pairs = table.loc[dup, ["subject_id", "time"]].drop_duplicates()
        listing = ", ".join(f"({r.subject_id}, {r.time:g})"
                            for r in pairs.head(10).itertuples())
        more = "" if len(pairs) <= 10 else f" and {len(pairs) - 10} more"
        raise DataError(
            f"{path}: duplicate (subject, time) pairs: {listing}{more}"
        )

    table = table.sort_values(["subject_id", "time"], kind="stable")

    def design(terms, values):
        cols = [np.ones(len(values)) if t == "1"
                else values["time"].to_numpy() if t == "time"
                else values[t].to_numpy() for t in terms]
        return (np.column_stack(cols) if cols
                else np.zeros((len(values), 0)))

    subjects = []
    for sid_val, rows in table.groupby("subject_id", sort=True):
        subjects.append(SubjectRecord(
            id=str(sid_val), times=rows["time"].to_numpy(),
            y=rows["y"].to_numpy(), x=design(fixed, rows),
            d=design(random, rows),
        ))
    single = sum(1 for s in subjects if s.n == 1)
    logger.info("%s: ingested %d rows across %d subjects (%d with a single "
                "measurement)", path, len(table), len(subjects), single)
    return subjects


def subjects_to_frame(subjects, covariates=()) -> pd.DataFrame:
    """Flatten records back to the long format.

    Raw covariate columns live only inside the design matrices after
    ingestion, so each extra output column is named by a ``(column
    name, record attribute, design column index)`` triple, e.g.
    ``("age", "x", 2)``.
    """
    rows = {"subject_id": [], "time": [], "y": []}
    for name, _, _ in covariates:
        rows[name] = []
    for s in subjects:
        rows["subject_id"].extend([s.id] * s.n)
        rows["time"].extend(s.times.tolist())
        rows["y"].extend(s.y.tolist())
        for name, attr, col in covariates:
            rows[name].extend(getattr(s, attr)[:, col].tolist())
    return pd.DataFrame(rows)


def write_table(frame: pd.DataFrame, path) -> None:
    """Write a CSV that round-trips float64 values exactly."""
    frame.to_csv(path, index=False, float_format=_FLOAT_FMT,
                 lineterminator="\n")
