import json

import numpy as np
import pytest

from neurallinear import cli
from neurallinear import runner as R
from neurallinear.errors import ConfigError


def write_records(path, shift=0.0, n=6):
    recs = [
        R.ResultRecord({}, "d", m, True, True, s, 0, test_ll=-1.0 - s / 10 - shift - off, test_rmse=1.0 + s / 10 + shift,
                       train_ll=-1.0, train_rmse=1.0)
        for s in range(n) for m, off in (("a", 0.0), ("b", 0.5))
    ]
    R.append_records(recs, path / R.RECORDS_FILE)
    return path


class TestParseSplits:
    def test_inclusive_range(self):
        assert cli.parse_splits("0..4") == (0, 1, 2, 3, 4)

    def test_single_and_list(self):
        assert cli.parse_splits("3") == (3,)
        assert cli.parse_splits("1,5,7") == (1, 5, 7)
        assert cli.parse_splits(None) is None

    @pytest.mark.parametrize("text", ["4..1", "a..b", "x"])
    def test_malformed(self, text):
        with pytest.raises(ConfigError):
            cli.parse_splits(text)


class TestMain:
    def test_bad_model_exit_code(self, capsys):
        assert cli.main(["run", "--model", "gp-1", "--dataset", "boston"]) == 2
        assert "configuration error" in capsys.readouterr().err

    def test_missing_dataset_exit_code(self, tmp_path, monkeypatch):
        monkeypatch.setenv("NLB_DATA_DIR", str(tmp_path))
        assert cli.main(["run", "--model", "map-1", "--dataset", "yacht", "--out", str(tmp_path)]) == 2

    def test_emit_all(self, tmp_path):
        write_records(tmp_path)
        assert cli.main(["emit", str(tmp_path)]) == 0
        assert (tmp_path / "metrics.csv").exists()
        assert (tmp_path / "ranks_test_ll.json").exists()
        # no untuned runs to difference against: header only
        assert len((tmp_path / "diffs_tuned.csv").read_text().splitlines()) == 1

    def test_compare(self, tmp_path, capsys):
        a = write_records(tmp_path / "a")
        b = write_records(tmp_path / "b", shift=1.0)
        assert cli.main(["compare", str(a), str(b)]) == 0
        table = json.loads(capsys.readouterr().out)
        assert table["d/a"]["test_ll"]["verdict"] == "I"
        assert table["d/a"]["test_rmse"]["verdict"] == "I"

    def test_stats(self, tmp_path, capsys):
        write_records(tmp_path)
        assert cli.main(["stats", str(tmp_path), "--metric", "test_rmse"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["average_ranks"] == {"a": 1.5, "b": 1.5}
        assert report["critical_difference"] == pytest.approx(1.96 * np.sqrt(2 * 3 / (6 * 6)))

    def test_run_tiny_dataset(self, tmp_path, capsys, monkeypatch):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(30, 1))
        np.savetxt(tmp_path / "t.csv", np.c_[x, 2 * x[:, 0] + 0.1 * rng.normal(size=30)], delimiter=",")
        (tmp_path / "t.json").write_text(json.dumps({"name": "t", "path": "t.csv", "target_col": 1, "n_splits": 4}))
        monkeypatch.setenv("NLB_DATA_DIR", str(tmp_path))
        out = tmp_path / "out"
        argv = ["run", "--model", "map-nl-1", "--dataset", "t", "--splits", "1..2", "--no-tune", "--no-slice",
                "--out", str(out)]
        assert cli.main(argv) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert [l.split(":")[0] for l in lines] == ["t map-nl-1 split 1", "t map-nl-1 split 2"]
        assert [r.split for r in R.load_records(out)] == [1, 2]

    def test_partial_failure_exit_code(self, tmp_path, monkeypatch):
        rng = np.random.default_rng(1)
        np.savetxt(tmp_path / "t.csv", rng.normal(size=(30, 2)), delimiter=",")
        (tmp_path / "t.json").write_text(json.dumps({"name": "t", "path": "t.csv", "target_col": 1, "n_splits": 2}))
        monkeypatch.setenv("NLB_DATA_DIR", str(tmp_path))

        def boom(config, sd):
            raise ArithmeticError("forced")

        monkeypatch.setattr(R, "run_split", boom)
        assert cli.main(["run", "--model", "map-1", "--dataset", "t", "--out", str(tmp_path / "o")]) == 1
