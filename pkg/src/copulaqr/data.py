"""Long-format panel dataset: subjects x visits x responses with covariates,
missingness and right-censoring thresholds.

The canonical on-disk form is a long CSV with one row per (subject, visit,
response) cell; in memory the cells are packed into dense (N, J, H) arrays
with NaN marking missing values, which is what the sampler consumes.
A censored cell carries a finite threshold; its likelihood contribution is
the event {Y > threshold}, never the stored value.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

__all__ = ["PanelDataset", "ValidationReport", "validate_long"]

CELL_COLUMNS = ["subject", "visit", "response", "value", "censor_threshold"]


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)
    missing_pct: dict = field(default_factory=dict)
    n_subjects: int = 0
    n_cells: int = 0
    n_censored: int = 0

    @property
    def ok(self) -> bool:
        return not self.errors

    def format(self) -> str:
        lines = [f"subjects: {self.n_subjects}", f"cells: {self.n_cells}",
                 f"censored cells: {self.n_censored}"]
        for resp, pct in self.missing_pct.items():
            lines.append(f"response {resp}: {pct:.0%} missing")
        lines.extend(f"ERROR: {e}" for e in self.errors)
        return "\n".join(lines)


@dataclass
class PanelDataset:
    """Dense panel container.

    y / censor : (N, Jmax, H), NaN where absent
    X          : (N, Jmax, P) fixed-effect design, intercept first
    Z          : (N, Jmax, R) random-effect design
    visit_mask : (N, Jmax) True where the subject has that visit
    """

    y: np.ndarray
    censor: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    visit_mask: np.ndarray
    subject_ids: list
    response_ids: list
    fixed_cols: list
    random_cols: list

    @property
    def N(self) -> int:
        return self.y.shape[0]

    @property
    def Jmax(self) -> int:
        return self.y.shape[1]

    @property
    def H(self) -> int:
        return self.y.shape[2]

    @property
    def P(self) -> int:
        return self.X.shape[2]

    @property
    def R(self) -> int:
        return self.Z.shape[2]

    def observed_mask(self) -> np.ndarray:
        """Cells with an uncensored observed value."""
        return np.isfinite(self.y) & ~np.isfinite(self.censor) & self.visit_mask[:, :, None]

    def censored_mask(self) -> np.ndarray:
        return np.isfinite(self.censor) & self.visit_mask[:, :, None]

    def missing_mask(self) -> np.ndarray:
        """In-panel cells with neither a value nor a censoring event."""
        return (~np.isfinite(self.y) & ~np.isfinite(self.censor)
                & self.visit_mask[:, :, None])

    # ------------------------------------------------------------------ IO

    @classmethod
    def from_long(cls, df: pd.DataFrame, fixed_cols, random_cols,
                  response_ids=None) -> "PanelDataset":
        df = df.copy()
        for col in ("subject", "visit", "response", "value"):
            if col not in df.columns:
                raise ValueError(f"missing required column {col!r}")
        if "censor_threshold" not in df.columns:
            df["censor_threshold"] = np.nan
        for col in list(fixed_cols) + list(random_cols):
            if col not in df.columns:
                raise ValueError(f"covariate column {col!r} not in data")
        subjects = list(pd.unique(df["subject"]))
        responses = (list(pd.unique(df["response"])) if response_ids is None
                     else list(response_ids))
        sub_pos = {s: i for i, s in enumerate(subjects)}
        resp_pos = {r: i for i, r in enumerate(responses)}
        visit0 = df.groupby("subject")["visit"].transform("min")
        df["vidx"] = (df["visit"] - visit0).astype(int)
        Jmax = int(df["vidx"].max()) + 1
        N, H = len(subjects), len(responses)
        P, R = 1 + len(fixed_cols), len(random_cols)
        y = np.full((N, Jmax, H), np.nan)
        cen = np.full((N, Jmax, H), np.nan)
        X = np.full((N, Jmax, P), np.nan)
        Z = np.full((N, Jmax, R), np.nan)
        mask = np.zeros((N, Jmax), dtype=bool)
        for row in df.to_dict("records"):
            i = sub_pos[row["subject"]]
            j = int(row["vidx"])
            h = resp_pos.get(row["response"])
            if h is None:
                raise ValueError(f"unknown response id {row['response']!r}")
            y[i, j, h] = row["value"]
            cen[i, j, h] = row["censor_threshold"]
            mask[i, j] = True
            X[i, j, 0] = 1.0
            for k, col in enumerate(fixed_cols):
                X[i, j, 1 + k] = row[col]
            for k, col in enumerate(random_cols):
                Z[i, j, k] = row[col]
        return cls(y=y, censor=cen, X=X, Z=Z, visit_mask=mask,
                   subject_ids=subjects, response_ids=responses,
                   fixed_cols=["(intercept)"] + list(fixed_cols),
                   random_cols=list(random_cols))

    @classmethod
    def read_csv(cls, path, fixed_cols, random_cols, response_ids=None):
        return cls.from_long(pd.read_csv(path), fixed_cols, random_cols,
                             response_ids=response_ids)

    def to_long(self) -> pd.DataFrame:
        rows = []
        for i, sid in enumerate(self.subject_ids):
            for j in range(self.Jmax):
                if not self.visit_mask[i, j]:
                    continue
                for h, rid in enumerate(self.response_ids):
                    row = {"subject": sid, "visit": j, "response": rid,
                           "value": self.y[i, j, h],
                           "censor_threshold": self.censor[i, j, h]}
                    for k, col in enumerate(self.fixed_cols[1:]):
                        row[col] = self.X[i, j, 1 + k]
                    for k, col in enumerate(self.random_cols):
                        row[col] = self.Z[i, j, k]
                    rows.append(row)
        return pd.DataFrame(rows)

    def to_csv(self, path):
        self.to_long().to_csv(path, index=False)

    def content_hash(self) -> str:
        df = self.to_long()
        payload = df.round(12).to_csv(index=False).encode()
        return hashlib.sha256(payload).hexdigest()

    # ---------------------------------------------------------- validation

    @staticmethod
    def validate_long(df: pd.DataFrame, fixed_cols, random_cols) -> ValidationReport:
        """Schema and invariant checks on a long-format frame."""
        rep = ValidationReport()
        required = {"subject", "visit", "response", "value"}
        missing_cols = required - set(df.columns)
        if missing_cols:
            rep.errors.append(f"missing columns: {sorted(missing_cols)}")
            return rep
        for col in list(fixed_cols) + list(random_cols):
            if col not in df.columns:
                rep.errors.append(f"covariate column {col!r} not in data")
        if rep.errors:
            return rep
        if "censor_threshold" not in df.columns:
            df = df.assign(censor_threshold=np.nan)
        dup = df.duplicated(subset=["subject", "visit", "response"], keep=False)
        if dup.any():
            keys = df.loc[dup, ["subject", "visit", "response"]].drop_duplicates()
            rep.errors.append("duplicate (subject, visit, response) keys: "
                              + "; ".join(map(str, keys.itertuples(index=False, name=None))))
        for sid, grp in df.groupby("subject"):
            visits = np.sort(grp["visit"].unique())
            if not np.array_equal(visits, np.arange(visits.min(), visits.min() + len(visits))):
                rep.errors.append(f"subject {sid!r}: visit indices not contiguous "
                                  f"({visits.tolist()})")
        cen_on_missing = df["censor_threshold"].notna() & df["value"].isna()
        if cen_on_missing.any():
            rows = df.index[cen_on_missing].tolist()
            rep.errors.append(f"censor threshold on missing cell(s), rows {rows}")
        if df["value"].notna().sum() == 0:
            rep.errors.append("no non-missing cells in dataset")
        rep.n_subjects = df["subject"].nunique()
        rep.n_cells = len(df)
        rep.n_censored = int(df["censor_threshold"].notna().sum())
        for resp, grp in df.groupby("response"):
            rep.missing_pct[resp] = float(grp["value"].isna().mean())
        return rep

def validate_long(df, fixed_cols, random_cols):
    """Module-level alias for :meth:`PanelDataset.validate_long`."""
    return PanelDataset.validate_long(df, fixed_cols, random_cols)
