import numpy as np
import pandas as pd
import pytest

from copulaqr.data import PanelDataset, validate_long


def make_long(missing=False, censored=False):
    rows = []
    for s in range(3):
        for v in range(2):
            for r in ("sbp", "dbp"):
                rows.append({"subject": f"id{s}", "visit": v, "response": r,
                             "value": float(10 * s + v + (r == "dbp")),
                             "censor_threshold": np.nan,
                             "x1": 0.1 * s - 0.05 * v, "z_one": 1.0})
    df = pd.DataFrame(rows)
    if missing:
        df.loc[0, "value"] = np.nan
    if censored:
        df.loc[3, "censor_threshold"] = df.loc[3, "value"]
    return df


class TestFromLong:
    def test_shapes_and_masks(self):
        data = PanelDataset.from_long(make_long(), fixed_cols=["x1"],
                                      random_cols=["z_one"])
        assert data.y.shape == (3, 2, 2)
        assert data.X.shape == (3, 2, 2)          # intercept + x1
        assert data.fixed_cols == ["(intercept)", "x1"]
        assert data.observed_mask().all()
        assert not data.missing_mask().any()

    def test_missing_cells_flagged(self):
        data = PanelDataset.from_long(make_long(missing=True),
                                      fixed_cols=["x1"], random_cols=["z_one"])
        assert data.missing_mask().sum() == 1
        assert data.observed_mask().sum() == 11

    def test_censored_cells_flagged(self):
        # censored encoding: finite threshold alongside the (recorded) value;
        # a threshold with a missing value is a validation error
        df = make_long()
        df.loc[3, "value"] = np.nan
        df.loc[3, "censor_threshold"] = 50.0
        report = validate_long(df, ["x1"], ["z_one"])
        assert not report.ok

    def test_censoring_encoding(self):
        df = make_long()
        df.loc[3, "censor_threshold"] = df.loc[3, "value"]
        data = PanelDataset.from_long(df, fixed_cols=["x1"],
                                      random_cols=["z_one"])
        assert data.censored_mask().sum() == 1
        assert data.observed_mask().sum() == 11

    def test_ragged_visits_padded(self):
        df = make_long()
        df = df[~((df.subject == "id2") & (df.visit == 1))]
        data = PanelDataset.from_long(df, fixed_cols=["x1"],
                                      random_cols=["z_one"])
        assert data.visit_mask[2, 1] == False  # noqa: E712
        assert np.isnan(data.y[2, 1]).all()


class TestRoundTrips:
    def test_long_round_trip(self):
        df = make_long()
        data = PanelDataset.from_long(df, ["x1"], ["z_one"])
        back = data.to_long()
        merged = back.merge(df, on=["subject", "visit", "response"],
                            suffixes=("_b", ""))
        assert np.allclose(merged["value_b"], merged["value"])
        assert np.allclose(merged["x1_b"], merged["x1"])

    def test_csv_round_trip(self, tmp_path):
        data = PanelDataset.from_long(make_long(), ["x1"], ["z_one"])
        path = tmp_path / "panel.csv"
        data.to_csv(path)
        again = PanelDataset.read_csv(path, ["x1"], ["z_one"])
        assert np.allclose(data.y, again.y, equal_nan=True)
        assert np.allclose(data.X, again.X, equal_nan=True)
        assert data.content_hash() == again.content_hash()

    def test_content_hash_sensitive_to_values(self):
        d1 = PanelDataset.from_long(make_long(), ["x1"], ["z_one"])
        df = make_long()
        df.loc[5, "value"] += 0.001
        d2 = PanelDataset.from_long(df, ["x1"], ["z_one"])
        assert d1.content_hash() != d2.content_hash()


class TestValidation:
    def test_well_formed(self):
        report = validate_long(make_long(), ["x1"], ["z_one"])
        assert report.ok
        assert report.missing_pct == {"dbp": 0.0, "sbp": 0.0}
        assert "missing" in report.format()

    def test_missing_percentage_reported(self):
        df = make_long()
        df.loc[df.response == "sbp", "value"] = np.nan
        report = validate_long(df, ["x1"], ["z_one"])
        assert report.missing_pct["sbp"] == 1.0

    def test_duplicate_keys(self):
        df = pd.concat([make_long(), make_long().iloc[[0]]])
        report = validate_long(df, ["x1"], ["z_one"])
        assert not report.ok
        assert any("duplicate" in e for e in report.errors)

    def test_noncontiguous_visits(self):
        df = make_long()
        df.loc[df.subject == "id1", "visit"] = df.loc[
            df.subject == "id1", "visit"].map({0: 0, 1: 3})
        report = validate_long(df, ["x1"], ["z_one"])
        assert any("contiguous" in e for e in report.errors)

    def test_censor_on_missing_cell(self):
        df = make_long()
        df.loc[2, "value"] = np.nan
        df.loc[2, "censor_threshold"] = 120.0
        report = validate_long(df, ["x1"], ["z_one"])
        assert any("censor" in e for e in report.errors)

    def test_all_missing_rejected(self):
        df = make_long()
        df["value"] = np.nan
        report = validate_long(df, ["x1"], ["z_one"])
        assert any("non-missing" in e for e in report.errors)

    def test_unknown_covariate_column(self):
        report = validate_long(make_long(), ["nope"], ["z_one"])
        assert any("nope" in e for e in report.errors)

    def test_missing_required_column(self):
        report = validate_long(make_long().drop(columns="value"), ["x1"], [])
        assert any("value" in e for e in report.errors)
