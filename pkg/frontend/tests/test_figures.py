"""Figure rendering from handwritten CSV fixtures.

These tests build their run directories by hand, so the renderer is
exercised purely through the delimited file contract; the simulator
package is never imported.
"""

import math
from pathlib import Path

import numpy as np
import pytest

from samfigs import FIGURES, FigureError, make_figures
from samfigs.cli import main
from samfigs.figures import (
    load_percent_matrix,
    load_timeseries,
    load_wealth_histogram,
)

TIMESERIES = """\
month,unemployment_pct,emp_Farms,emp_Mills,hh_cons,gov_cons,ext_cons,ic_total,inv_goods,inv_inputs,hh_wealth
1,100,0,0,0,10,5,2,0,0,50
2,60,30,20,40,10,5,12,3,1,55
3,30,55,35,70,10,5,20,4,2,61
4,12,70,48,88,10,5,24,4,2,68
5,10,72,50,90,10,5,25,4,2,76
"""

SAM_PCT = """\
,Farms,Mills,Labor,Homes
Farms,100,,90,110
Mills,,100,,95
Labor,105,98,,
Homes,88,,102,
"""

WEALTH = """\
bin_low,bin_high,count
0,10,5
10,20,3
20,30,1
gini,0.35
skewness,1.2
"""


def write_run_dir(root: Path, timeseries: str = TIMESERIES,
                  sam_pct: str = SAM_PCT, wealth: str = WEALTH) -> Path:
    run = root / "run"
    run.mkdir(exist_ok=True)
    (run / "timeseries.csv").write_text(timeseries)
    (run / "sam_pct.csv").write_text(sam_pct)
    (run / "wealth_hist.csv").write_text(wealth)
    return run


class TestLoaders:
    def test_timeseries_columns_and_employment(self, tmp_path):
        run = write_run_dir(tmp_path)
        ts = load_timeseries(run / "timeseries.csv")
        assert ts.months == [1, 2, 3, 4, 5]
        assert list(ts.employment) == ["Farms", "Mills"]
        assert ts.employment["Mills"][-1] == 50
        assert ts.columns["hh_wealth"][0] == 50

    def test_missing_column_is_named(self, tmp_path):
        bad = TIMESERIES.replace("hh_cons", "hh_consumption")
        run = write_run_dir(tmp_path, timeseries=bad)
        with pytest.raises(FigureError, match="hh_cons"):
            load_timeseries(run / "timeseries.csv")

    def test_no_employment_columns(self, tmp_path):
        bad = TIMESERIES.replace("emp_", "staff_")
        run = write_run_dir(tmp_path, timeseries=bad)
        with pytest.raises(FigureError, match="emp_"):
            load_timeseries(run / "timeseries.csv")

    def test_header_only_file(self, tmp_path):
        header = TIMESERIES.splitlines()[0] + "\n"
        run = write_run_dir(tmp_path, timeseries=header)
        with pytest.raises(FigureError, match="at least 1 data row"):
            load_timeseries(run / "timeseries.csv")

    def test_ragged_row_names_line(self, tmp_path):
        lines = TIMESERIES.splitlines()
        lines[3] = lines[3].rsplit(",", 1)[0]  # drop last field of line 4
        run = write_run_dir(tmp_path, timeseries="\n".join(lines) + "\n")
        with pytest.raises(FigureError, match="line 4"):
            load_timeseries(run / "timeseries.csv")

    def test_unparsable_value_names_column(self, tmp_path):
        bad = TIMESERIES.replace("2,60,", "2,sixty,", 1)
        run = write_run_dir(tmp_path, timeseries=bad)
        with pytest.raises(FigureError, match="unemployment_pct"):
            load_timeseries(run / "timeseries.csv")

    def test_matrix_blanks_become_nan(self, tmp_path):
        run = write_run_dir(tmp_path)
        accounts, matrix = load_percent_matrix(run / "sam_pct.csv")
        assert accounts == ["Farms", "Mills", "Labor", "Homes"]
        assert matrix[0, 0] == 100
        assert math.isnan(matrix[0, 1])
        # every blank in the fixture is NaN and everything else is not
        expected_blanks = {(0, 1), (1, 0), (1, 2), (2, 2), (2, 3),
                           (3, 1), (3, 3)}
        nan_cells = {(i, j) for i in range(4) for j in range(4)
                     if math.isnan(matrix[i, j])}
        assert nan_cells == expected_blanks

    def test_matrix_row_count_mismatch(self, tmp_path):
        bad = "\n".join(SAM_PCT.splitlines()[:-1]) + "\n"
        run = write_run_dir(tmp_path, sam_pct=bad)
        with pytest.raises(FigureError, match="4 accounts.*3 data rows"):
            load_percent_matrix(run / "sam_pct.csv")

    def test_matrix_short_row_names_account(self, tmp_path):
        bad = SAM_PCT.replace("Mills,,100,,95", "Mills,,100,95")
        run = write_run_dir(tmp_path, sam_pct=bad)
        with pytest.raises(FigureError, match=r"line 3 \(Mills\)"):
            load_percent_matrix(run / "sam_pct.csv")

    def test_wealth_bins_and_stats(self, tmp_path):
        run = write_run_dir(tmp_path)
        hist = load_wealth_histogram(run / "wealth_hist.csv")
        assert hist.edges == [0, 10, 20, 30]
        assert hist.counts == [5, 3, 1]
        assert hist.stats == {"gini": 0.35, "skewness": 1.2}

    def test_wealth_needs_bins(self, tmp_path):
        bad = "bin_low,bin_high,count\ngini,0.5\n"
        run = write_run_dir(tmp_path, wealth=bad)
        with pytest.raises(FigureError, match="at least 1 histogram bin"):
            load_wealth_histogram(run / "wealth_hist.csv")

    def test_wealth_wrong_header(self, tmp_path):
        bad = WEALTH.replace("bin_low", "lo")
        run = write_run_dir(tmp_path, wealth=bad)
        with pytest.raises(FigureError, match="bin_low,bin_high,count"):
            load_wealth_histogram(run / "wealth_hist.csv")


class TestRendering:
    def test_three_files_written(self, tmp_path):
        run = write_run_dir(tmp_path)
        out = tmp_path / "figs"
        written = make_figures(run, out)
        assert [p.name for p in written] == ["fig2.png", "fig3.png",
                                             "fig4.png"]
        for p in written:
            assert p.stat().st_size > 0

    def test_run_dir_not_touched(self, tmp_path):
        run = write_run_dir(tmp_path)
        before = {p.name: p.read_bytes() for p in run.iterdir()}
        make_figures(run, tmp_path / "figs")
        after = {p.name: p.read_bytes() for p in run.iterdir()}
        assert before == after

    def test_fig2_has_eight_panels(self, tmp_path):
        run = write_run_dir(tmp_path)
        written = make_figures(run, tmp_path / "figs", fmt="svg")
        svg = written[0].read_text()
        assert FIGURES[0].panels == 8
        assert svg.count('id="axes_') == 8

    def test_deterministic_output(self, tmp_path):
        run = write_run_dir(tmp_path)
        for fmt in ("png", "svg"):
            first = make_figures(run, tmp_path / f"a_{fmt}", fmt=fmt)
            second = make_figures(run, tmp_path / f"b_{fmt}", fmt=fmt)
            for p1, p2 in zip(first, second):
                assert p1.read_bytes() == p2.read_bytes(), p1.name

    def test_single_month_series(self, tmp_path):
        one = "\n".join(TIMESERIES.splitlines()[:2]) + "\n"
        run = write_run_dir(tmp_path, timeseries=one)
        written = make_figures(run, tmp_path / "figs")
        assert all(p.stat().st_size > 0 for p in written)

    def test_uniform_matrix_renders(self, tmp_path):
        uniform = (",Farms,Mills,Labor,Homes\n"
                   + "".join(f"{a},100,100,100,100\n"
                             for a in ["Farms", "Mills", "Labor", "Homes"]))
        run = write_run_dir(tmp_path, sam_pct=uniform)
        written = make_figures(run, tmp_path / "figs")
        assert written[1].stat().st_size > 0

    def test_missing_csv_is_refused_before_writing(self, tmp_path):
        run = write_run_dir(tmp_path)
        (run / "sam_pct.csv").unlink()
        out = tmp_path / "figs"
        with pytest.raises(FigureError, match="sam_pct.csv"):
            make_figures(run, out)
        assert not out.exists()

    def test_unknown_format(self, tmp_path):
        run = write_run_dir(tmp_path)
        with pytest.raises(FigureError, match="pdf"):
            make_figures(run, tmp_path / "figs", fmt="pdf")


class TestCli:
    def test_happy_path(self, tmp_path, capsys):
        run = write_run_dir(tmp_path)
        out = tmp_path / "figs"
        code = main(["--in", str(run), "--out", str(out)])
        assert code == 0
        printed = capsys.readouterr().out.splitlines()
        assert len(printed) == 3
        assert all(Path(line).is_file() for line in printed)

    def test_svg_format(self, tmp_path):
        run = write_run_dir(tmp_path)
        out = tmp_path / "figs"
        assert main(["--in", str(run), "--out", str(out),
                     "--format", "svg"]) == 0
        assert (out / "fig3.svg").is_file()

    def test_missing_run_dir(self, tmp_path, capsys):
        code = main(["--in", str(tmp_path / "absent"),
                     "--out", str(tmp_path / "figs")])
        assert code == 1
        err = capsys.readouterr().err
        assert err.startswith("make_figs: ")
        assert "absent" in err

    def test_malformed_csv_diagnostic(self, tmp_path, capsys):
        run = write_run_dir(tmp_path,
                            timeseries=TIMESERIES.replace("hh_cons", "hc"))
        code = main(["--in", str(run), "--out", str(tmp_path / "figs")])
        assert code == 1
        assert "hh_cons" in capsys.readouterr().err

    def test_in_and_out_required(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2
