import numpy as np
import pytest

from permtail import __version__
from permtail.cli import build_parser, main
from permtail.io import RECORD_HEADER
from cli_fixtures import write_matrix


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    lines = text.splitlines()
    header = lines[0].split("\t")
    return [dict(zip(header, line.split("\t"))) for line in lines[1:]]


@pytest.fixture
def below_fixture(tmp_path):
    """One test whose observed value exceeds all 1000 permutations."""
    perms = np.random.default_rng(1).normal(size=(1000, 1))
    return write_matrix(tmp_path / "one.tsv", [[10.0]], perms)


@pytest.fixture
def bounded_fixture(tmp_path):
    perms = np.random.default_rng(11).uniform(0, 1, (1000, 1))
    return write_matrix(tmp_path / "bounded.tsv", [[1.5]], perms)


@pytest.fixture
def multi_fixture(tmp_path):
    rng = np.random.default_rng(5)
    perms = rng.normal(size=(1000, 6))
    obs = [[0.1, 2.2, 2.9, 3.3, -0.5, 4.0]]
    return write_matrix(tmp_path / "multi.tsv", obs, perms)


class TestParser:
    """Argument parsing and exit codes."""

    def test_version(self, capsys):
        code, out, _ = run(["--version"], capsys)
        assert code == 0 and __version__ in out

    def test_bad_flag(self, capsys):
        code, _, err = run(["approx", "--bogus"], capsys)
        assert code == 2 and "error" in err

    def test_no_command(self, capsys):
        assert run([], capsys)[0] == 2

    def test_missing_input(self, capsys):
        code, _, err = run(["approx"], capsys)
        assert code == 2 and "input is required" in err

    def test_both_inputs(self, capsys, tmp_path):
        code, _, _ = run(["approx", "--input", "a", "--observed", "b", "--perms", "c"], capsys)
        assert code == 2

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run(["approx", "--input", str(tmp_path / "absent.tsv")], capsys)
        assert code == 2 and "cannot read" in err

    def test_dimension_mismatch(self, capsys, tmp_path):
        o = tmp_path / "o.tsv"
        o.write_text("1\n2\n3\n")
        p = tmp_path / "p.tsv"
        p.write_text("0\t1\n1\t0\n")
        code, _, err = run(["approx", "--observed", str(o), "--perms", str(p)], capsys)
        assert code == 2 and "permutation columns" in err

    def test_invalid_config(self, capsys, below_fixture):
        code, _, _ = run(["approx", "--input", str(below_fixture), "--alpha", "2"], capsys)
        assert code == 2

    def test_defaults(self):
        args = build_parser().parse_args(["approx", "--input", "x"])
        assert args.estimator == "LME" and args.threshold_method == "robFTR" and args.n_boot == 999


class TestApprox:
    """End-to-end approximation runs."""

    def test_empirical_floor_and_positive_tail(self, capsys, below_fixture):
        code, out, _ = run(["approx", "--input", str(below_fixture), "--n-boot", "199"], capsys)
        assert code == 0
        (r,) = rows(out)
        assert r["p_emp"] == "0.000999000999000999"
        assert r["source"] == "gpd_constrained" and float(r["p_hybrid"]) > 0

    def test_header_stable(self, capsys, below_fixture):
        _, out, _ = run(["approx", "--input", str(below_fixture), "--n-boot", "199"], capsys)
        assert tuple(out.splitlines()[0].split("\t")) == RECORD_HEADER

    def test_unconstrained_zero(self, capsys, bounded_fixture):
        _, out, _ = run(["approx", "--input", str(bounded_fixture), "--n-boot", "199", "--unconstrained"], capsys)
        (r,) = rows(out)
        assert r["source"] == "gpd_unconstrained" and float(r["p_hybrid"]) == 0.0
        _, out, _ = run(["approx", "--input", str(bounded_fixture), "--n-boot", "199"], capsys)
        (r,) = rows(out)
        assert r["source"] == "gpd_constrained" and float(r["p_hybrid"]) > 0

    def test_output_file(self, capsys, tmp_path, multi_fixture):
        dest = tmp_path / "out.tsv"
        code, out, _ = run(["approx", "--input", str(multi_fixture), "--n-boot", "199", "-o", str(dest)], capsys)
        assert code == 0 and out == ""
        recs = rows(dest.read_text())
        assert [r["test_id"] for r in recs] == [str(j) for j in range(1, 7)]
        assert recs[0]["source"] == "empirical"

    def test_bh_column(self, capsys, multi_fixture):
        _, out, _ = run(["approx", "--input", str(multi_fixture), "--n-boot", "199"], capsys)
        recs = rows(out)
        p = np.array([float(r["p_hybrid"]) for r in recs])
        q = np.array([float(r["p_bh"]) for r in recs])
        assert np.all(q >= p) and np.all(q <= 1)

    def test_left_tail(self, capsys, tmp_path):
        perms = np.random.default_rng(2).normal(size=(500, 1))
        path = write_matrix(tmp_path / "l.tsv", [[-0.2]], perms)
        _, out, _ = run(["approx", "--input", str(path), "--tail", "left", "--n-boot", "199"], capsys)
        (r,) = rows(out)
        ref = (1 + np.count_nonzero(perms[:, 0] <= -0.2)) / 501
        assert float(r["p_emp"]) == pytest.approx(ref, rel=1e-15)

    def test_na_fallback_and_invalid(self, capsys, tmp_path):
        rng = np.random.default_rng(3)
        perms = rng.normal(size=(100, 3))
        perms[:40, 1] = np.nan  # 60 rows remain: fallback
        perms[:60, 2] = np.nan  # 40 rows remain: invalid
        path = write_matrix(tmp_path / "na.tsv", [[0.5, 0.5, 0.5]], perms)
        _, out, _ = run(["approx", "--input", str(path), "--n-boot", "199"], capsys)
        recs = rows(out)
        assert [r["source"] for r in recs] == ["empirical", "fallback_empirical", "invalid"]
        col = perms[40:, 1]
        assert float(recs[1]["p_hybrid"]) == (1 + np.count_nonzero(col >= 0.5)) / 61
        assert recs[2]["p_hybrid"] == "NA" and recs[2]["p_bh"] == "NA"

    def test_ad_table_mode(self, capsys, tmp_path, below_fixture):
        table = tmp_path / "cv.tsv"
        table.write_text("neg_xi\tq50\tq75\tq90\tq95\tq975\tq99\n"
                         "-0.5\t0.3\t0.5\t0.7\t0.8\t1.0\t1.2\n"
                         "0.5\t0.3\t0.5\t0.7\t0.8\t1.0\t1.2\n")
        code, out, _ = run(["approx", "--input", str(below_fixture), "--ad-table", str(table)], capsys)
        assert code == 0
        (r,) = rows(out)
        assert float(r["p_hybrid"]) > 0 and 0.01 <= float(r["ad_pvalue"]) <= 0.5

    def test_ad_table_malformed(self, capsys, tmp_path, below_fixture):
        table = tmp_path / "cv.tsv"
        table.write_text("a\tb\n")
        code, _, err = run(["approx", "--input", str(below_fixture), "--ad-table", str(table)], capsys)
        assert code == 2 and "cv.tsv:1" in err

    def test_threads_identical(self, capsys, multi_fixture):
        base = ["approx", "--input", str(multi_fixture), "--n-boot", "199", "--seed", "4"]
        _, a, _ = run(base + ["--threads", "1"], capsys)
        _, b, _ = run(base + ["--threads", "3"], capsys)
        assert a == b


class TestSimulate:
    """Simulation and benchmark subcommands."""

    @pytest.mark.slow
    def test_simulate_rows(self, capsys):
        code, out, _ = run(["simulate", "--family", "gaussian_ttest", "--n", "100", "--d", "1", "--B", "1000",
                            "--reps", "50", "--methods", "permApprox,gamma", "--n-boot", "199"], capsys)
        assert code == 0
        recs = rows(out)
        assert sum(r["method"] == "permApprox" for r in recs) == 50
        assert sum(r["method"] == "gamma" for r in recs) == 50

    def test_simulate_unknown_method(self, capsys):
        code, _, _ = run(["simulate", "--family", "gaussian_ttest", "--n", "10", "--d", "1", "--B", "50",
                          "--reps", "1", "--methods", "nope"], capsys)
        assert code == 2

    def test_bench(self, capsys):
        code, out, _ = run(["bench-estimators", "--xi", "0", "--n", "50", "--methods", "MOM,LME", "--reps", "5"],
                           capsys)
        assert code == 0 and len(out.splitlines()) == 3
