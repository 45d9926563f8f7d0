import math

import numpy as np
import pytest

from samdeploy.accounting import (
    AuditReport,
    Ledger,
    LedgerEntry,
    PercentMatrix,
    audit_money,
    compare_sam,
    computed_sam,
    emit_ledger_cells,
    emit_sam_matrix,
    emit_timeseries,
    emit_wealth_histogram,
    gini_coefficient,
    major_cells,
    sample_skewness,
    timeseries_header,
    TimeSeriesRow,
    wealth_histogram,
)


def replay_targets(sam, months=12):
    """Feed the ledger the exact monthly target of every nonzero cell."""
    ledger = Ledger(sam.n_accounts)
    monthly = sam.flows / 12.0
    nz = np.argwhere(sam.flows != 0.0)
    for m in range(1, months + 1):
        for i, j in nz:
            ledger.record(LedgerEntry(month=m, day=1, row=int(i), col=int(j),
                                      amount=float(monthly[i, j]), kind="replay"))
        ledger.close_month()
    return ledger


class TestLedger:
    def test_replay_reproduces_table(self, spain):
        ledger = replay_targets(spain)
        computed = computed_sam(ledger, end_month=12, window=12)
        assert computed.matrix.shape == spain.flows.shape
        np.testing.assert_allclose(computed.matrix, spain.flows, rtol=1e-12)

    def test_replay_comparison_is_100_percent(self, spain):
        ledger = replay_targets(spain)
        pct = compare_sam(computed_sam(ledger, 12, 12), spain)
        nz = spain.flows != 0.0
        np.testing.assert_allclose(pct.percent[nz], 100.0, rtol=1e-9)
        assert np.isnan(pct.percent[~nz]).all()

    def test_window_additivity(self, spain):
        ledger = replay_targets(spain)
        total = np.zeros_like(spain.flows)
        for m in range(1, 13):
            total += computed_sam(ledger, m, window=1).matrix
        np.testing.assert_array_equal(total, computed_sam(ledger, 12, 12).matrix)

    def test_window_bounds_checked(self, spain):
        ledger = replay_targets(spain, months=3)
        with pytest.raises(ValueError):
            computed_sam(ledger, end_month=4, window=1)
        with pytest.raises(ValueError):
            computed_sam(ledger, end_month=3, window=4)
        with pytest.raises(ValueError):
            computed_sam(ledger, end_month=3, window=0)

    def test_chain_hash_ignores_entry_order(self):
        a = Ledger(4)
        b = Ledger(4)
        first = LedgerEntry(1, 1, 0, 1, 5.0, "goods")
        second = LedgerEntry(1, 2, 2, 3, 7.0, "wage")
        a.record(first), a.record(second)
        b.record(second), b.record(first)
        a.close_month()
        b.close_month()
        assert a.chain_hash == b.chain_hash

    def test_chain_hash_detects_amount_change(self):
        a = Ledger(4)
        b = Ledger(4)
        a.record(LedgerEntry(1, 1, 0, 1, 5.0, "goods"))
        b.record(LedgerEntry(1, 1, 0, 1, 5.0 + 1e-9, "goods"))
        a.close_month()
        b.close_month()
        assert a.chain_hash != b.chain_hash

    def test_chain_hash_covers_month_sequence(self):
        a = Ledger(2)
        a.record(LedgerEntry(1, 1, 0, 1, 1.0, "goods"))
        a.close_month()
        a.close_month()
        b = Ledger(2)
        b.close_month()
        b.record(LedgerEntry(2, 1, 0, 1, 1.0, "goods"))
        b.close_month()
        assert a.chain_hash != b.chain_hash

    def test_state_round_trip_continues_identically(self):
        a = Ledger(3)
        a.record(LedgerEntry(1, 1, 0, 2, 4.5, "goods"))
        a.add_kind("loan_grant", 100.0, m_delta=100.0)
        a.close_month()
        b = Ledger.from_state(a.state())
        assert b.chain_hash == a.chain_hash
        np.testing.assert_array_equal(b.month_cells(1), a.month_cells(1))
        assert b.month_m_delta(1) == {"loan_grant": 100.0}
        for led in (a, b):
            led.record(LedgerEntry(2, 1, 1, 0, 2.0, "goods"))
            led.close_month()
        assert b.chain_hash == a.chain_hash


class TestComparison:
    def test_zero_target_cells_are_nan(self, spain):
        ledger = Ledger(spain.n_accounts)
        ledger.record(LedgerEntry(1, 1, 0, spain.household, 10.0, "goods"))
        ledger.close_month()
        pct = compare_sam(computed_sam(ledger, 1, 1), spain)
        assert isinstance(pct, PercentMatrix)
        labor = spain.labor
        assert spain.flows[0, labor] == 0.0
        assert math.isnan(pct.cell(0, labor))

    def test_percent_scales_with_flow(self, spain):
        i, j = 4, spain.household
        target_monthly = spain.flows[i, j] / 12.0
        ledger = Ledger(spain.n_accounts)
        ledger.record(LedgerEntry(1, 1, i, j, 6.0 * target_monthly, "goods"))
        ledger.close_month()
        pct = compare_sam(computed_sam(ledger, 1, 1), spain)
        assert pct.cell(i, j) == pytest.approx(50.0, rel=1e-12)

    def test_shape_mismatch_rejected(self, spain):
        ledger = Ledger(4)
        ledger.close_month()
        with pytest.raises(ValueError):
            compare_sam(computed_sam(ledger, 1, 1), spain)

    def test_major_cells_threshold(self, spain):
        cells = major_cells(spain, threshold_frac=0.005)
        idx = spain.account_index
        assert (idx("P05_ServVenta"), idx("H16_Households")) in cells
        assert (idx("L09_CompEmployees"), idx("P05_ServVenta")) in cells
        assert (idx("P01_AgroPesc"), idx("P02_EnerPetro")) not in cells
        cutoff = 0.005 * spain.total_output()
        assert all(abs(spain.flows[i, j]) >= cutoff for i, j in cells)


class TestDistribution:
    def test_gini_concentrated_example(self):
        assert gini_coefficient([0.0, 0.0, 0.0, 100.0]) == pytest.approx(0.75, abs=1e-12)

    def test_gini_equal_and_degenerate(self):
        assert gini_coefficient([5.0, 5.0, 5.0]) == pytest.approx(0.0, abs=1e-12)
        assert gini_coefficient([]) == 0.0
        assert gini_coefficient([0.0, 0.0]) == 0.0

    def test_gini_order_invariant(self):
        assert gini_coefficient([3.0, 1.0, 7.0, 2.0]) == pytest.approx(
            gini_coefficient([7.0, 2.0, 3.0, 1.0]), abs=1e-15)

    def test_skewness_signs(self):
        assert sample_skewness([1.0, 2.0, 3.0]) == pytest.approx(0.0, abs=1e-12)
        assert sample_skewness([0.0, 0.0, 0.0, 100.0]) > 0.0
        assert sample_skewness([0.0, 100.0, 100.0, 100.0]) < 0.0
        assert sample_skewness([7.0, 7.0]) == 0.0

    def test_histogram_counts_and_range(self):
        rng = np.random.default_rng(7)
        x = rng.exponential(100.0, size=500)
        hist = wealth_histogram(x, bins=20)
        assert hist.counts.sum() == 500
        assert len(hist.bin_edges) == 21
        assert hist.bin_edges[0] == pytest.approx(x.min())
        assert hist.bin_edges[-1] == pytest.approx(x.max())
        assert hist.skewness > 0.0

    def test_histogram_degenerate_sample(self):
        hist = wealth_histogram([4.0, 4.0, 4.0], bins=5)
        assert hist.counts.sum() == 3
        assert hist.gini == 0.0


class TestAudit:
    @staticmethod
    def ledger_with_month(kinds):
        ledger = Ledger(2)
        for kind, amount, delta in kinds:
            ledger.add_kind(kind, amount, delta)
        ledger.close_month()
        return ledger

    def test_loan_grant_explains_increase(self):
        ledger = self.ledger_with_month([("loan_grant", 100.0, +100.0),
                                         ("wage", 50.0, 0.0)])
        report = audit_money(ledger, [1000.0, 1100.0], month=1)
        assert isinstance(report, AuditReport)
        assert report.passed
        assert report.delta == pytest.approx(100.0)
        assert report.terms == {"loan_grant": 100.0}

    def test_export_and_import_net(self):
        ledger = self.ledger_with_month([("export", 50.0, +50.0),
                                         ("import", 20.0, -20.0)])
        report = audit_money(ledger, [500.0, 530.0], month=1)
        assert report.passed
        assert report.explained == pytest.approx(30.0)

    def test_unexplained_change_fails(self):
        ledger = self.ledger_with_month([("wage", 50.0, 0.0)])
        report = audit_money(ledger, [1000.0, 1001.0], month=1)
        assert not report.passed
        assert report.residual == pytest.approx(1.0)

    def test_month_out_of_range(self):
        ledger = self.ledger_with_month([])
        with pytest.raises(ValueError):
            audit_money(ledger, [0.0, 0.0], month=2)


class TestEmission:
    def test_timeseries_header_and_rows(self, tmp_path):
        rows = [TimeSeriesRow(month=1, unemployment_pct=12.5,
                              employment=[10, 20, 30, 40, 50, 60],
                              hh_cons=100.25, gov_cons=50.0, ext_cons=25.0,
                              ic_total=80.0, inv_goods=5.5, inv_inputs=2.0,
                              hh_wealth=4000.0)]
        out = tmp_path / "timeseries.csv"
        emit_timeseries(rows, out)
        lines = out.read_text().splitlines()
        assert lines[0] == ("month,unemployment_pct,emp_s1,emp_s2,emp_s3,emp_s4,"
                            "emp_s5,emp_s6,hh_cons,gov_cons,ext_cons,ic_total,"
                            "inv_goods,inv_inputs,hh_wealth")
        assert lines[1] == "1,12.5,10,20,30,40,50,60,100.25,50,25,80,5.5,2,4000"

    def test_timeseries_named_sector_columns(self, tmp_path):
        rows = [TimeSeriesRow(month=1, unemployment_pct=0.0,
                              employment=[3, 4], hh_cons=1.0, gov_cons=1.0,
                              ext_cons=1.0, ic_total=1.0, inv_goods=0.0,
                              inv_inputs=0.0, hh_wealth=9.0)]
        out = tmp_path / "timeseries.csv"
        emit_timeseries(rows, out, sector_names=["Farms", "Mills"])
        header = out.read_text().splitlines()[0].split(",")
        assert header[2:4] == ["emp_Farms", "emp_Mills"]

    def test_timeseries_name_count_must_match(self, tmp_path):
        rows = [TimeSeriesRow(month=1, unemployment_pct=0.0,
                              employment=[3, 4], hh_cons=1.0, gov_cons=1.0,
                              ext_cons=1.0, ic_total=1.0, inv_goods=0.0,
                              inv_inputs=0.0, hh_wealth=9.0)]
        with pytest.raises(ValueError, match="sector names"):
            emit_timeseries(rows, tmp_path / "ts.csv", sector_names=["Solo"])

    def test_timeseries_header_scales_with_sectors(self):
        assert timeseries_header(2)[2:4] == ["emp_s1", "emp_s2"]
        assert timeseries_header(["A", "B"])[2:4] == ["emp_A", "emp_B"]

    def test_timeseries_requires_rows(self, tmp_path):
        with pytest.raises(ValueError):
            emit_timeseries([], tmp_path / "ts.csv")

    def test_sam_matrix_blanks_nan(self, tmp_path):
        matrix = np.array([[100.0, np.nan], [np.nan, 99.5]])
        out = tmp_path / "pct.csv"
        emit_sam_matrix(matrix, ["A", "B"], out)
        lines = out.read_text().splitlines()
        assert lines[0] == ",A,B"
        assert lines[1] == "A,100,"
        assert lines[2] == "B,,99.5"

    def test_ledger_cells_export(self, tmp_path):
        ledger = Ledger(2)
        ledger.record(LedgerEntry(1, 3, 0, 1, 2.5, "goods"))
        ledger.close_month()
        ledger.record(LedgerEntry(2, 1, 1, 0, 4.0, "wage"))
        ledger.close_month()
        out = tmp_path / "ledger.csv"
        emit_ledger_cells(ledger, ["Alpha", "Beta"], out)
        assert out.read_text().splitlines() == [
            "month,row_account,col_account,amount",
            "1,Alpha,Beta,2.5",
            "2,Beta,Alpha,4",
        ]

    def test_wealth_csv_footers(self, tmp_path):
        hist = wealth_histogram([0.0, 0.0, 0.0, 100.0], bins=2)
        out = tmp_path / "wealth.csv"
        emit_wealth_histogram(hist, out)
        lines = out.read_text().splitlines()
        assert lines[0] == "bin_low,bin_high,count"
        assert lines[1] == "0,50,3"
        assert lines[2] == "50,100,1"
        assert lines[3] == "gini,0.75"
        assert lines[4].startswith("skewness,1.")
