import csv
import json

import numpy as np
import pytest

from intnn import cli
from intnn.data import load_csv
from intnn.features import read_table_accuracies
from intnn.network import NetworkParams, save_model

SMALL = "n_units = 120\nn_periods = 10\nseed = 2\nepochs = 2\nbatch_size = 64\nn_per_class = 100\n"


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return str(path)


@pytest.fixture
def panel(tmp_path, config):
    out = tmp_path / "panel.csv"
    assert cli.main(["generate", "--config", config, "--out", str(out)]) == 0
    return str(out)


def reference_model(tmp_path):
    params = NetworkParams.from_smoothing(c=2.60, d=-41.46, w=[[-1.73, 1.84, -4.0, 0.64, 0.62, -0.66, 4.19]],
                                          b=[3.67], k=[0.999999], u=[1.06], v=-2.18)
    path = tmp_path / "reference.json"
    save_model(params, path)
    return str(path)


class TestGenerate:
    def test_row_count(self, panel):
        assert len(load_csv(panel)) == 120 * 10

    def test_byte_identical(self, tmp_path, config, panel):
        again = tmp_path / "again.csv"
        cli.main(["generate", "--config", config, "--out", str(again)])
        assert again.read_bytes() == open(panel, "rb").read()

    def test_teacher(self, tmp_path, config):
        out = tmp_path / "teacher.csv"
        assert cli.main(["generate", "--config", config, "--teacher", reference_model(tmp_path), "--out", str(out)]) == 0
        ds = load_csv(out)
        assert set(np.unique(ds.label)) == {-1, 0, 1}

    def test_bad_key(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text("n_unitz = 5\n")
        assert cli.main(["generate", "--config", str(path), "--out", str(tmp_path / "x.csv")]) == 2
        assert "n_unitz" in capsys.readouterr().err


class TestTrainEvaluate:
    def test_intnn(self, tmp_path, config, panel, capsys):
        model = tmp_path / "m.json"
        assert cli.main(["train", "--data", panel, "--config", config, "--out", str(model)]) == 0
        with open(f"{model}.metrics.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["epoch", "train_loss", "train_acc", "test_acc"]
        assert len(rows) == 3
        capsys.readouterr()
        assert cli.main(["evaluate", "--data", panel, "--model", str(model), "--config", config]) == 0
        out = capsys.readouterr().out
        assert "n = 100" in out
        assert f"accuracy = {float(rows[-1][3]):.5f}" in out

    def test_zero_epochs_is_initial(self, tmp_path, panel):
        cfg = tmp_path / "zero.cfg"
        cfg.write_text(SMALL.replace("epochs = 2", "epochs = 0"))
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        cli.main(["train", "--data", panel, "--config", str(cfg), "--out", str(a)])
        cli.main(["train", "--data", panel, "--config", str(cfg), "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()
        assert open(f"{a}.metrics.csv").read().splitlines() == ["epoch,train_loss,train_acc,test_acc"]

    @pytest.mark.parametrize("kind", ["logistic", "mlp"])
    def test_baselines(self, tmp_path, config, panel, kind):
        model = tmp_path / "m.json"
        assert cli.main(["train", "--data", panel, "--config", config, "--model", kind, "--features", "PC, IC",
                         "--out", str(model)]) == 0
        doc = json.loads(model.read_text())
        assert doc["kind"] == kind and doc["features"] == "PC, IC"
        assert cli.main(["evaluate", "--data", panel, "--model", str(model), "--config", config, "--all"]) == 0

    def test_missing_data(self, tmp_path):
        assert cli.main(["train", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "m.json")]) == 2

    def test_bad_subset(self, tmp_path, config, panel):
        assert cli.main(["train", "--data", panel, "--config", config, "--model", "logistic", "--features", "XX",
                         "--out", str(tmp_path / "m.json")]) == 2

    def test_corrupt_data(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("unit_id,period,pay_1,pay_2,pay_3,pay_4,pay_5,pay_6,pay_7,label\n0,1,1,2,3,4,5,-6,7,1\n")
        assert cli.main(["train", "--data", str(bad), "--out", str(tmp_path / "m.json")]) == 3

    def test_unreadable_model(self, tmp_path, panel):
        junk = tmp_path / "junk.json"
        junk.write_text("not json")
        assert cli.main(["evaluate", "--data", panel, "--model", str(junk)]) == 3


def test_compare(tmp_path, config, panel):
    out = tmp_path / "table.txt"
    assert cli.main(["compare", "--data", panel, "--config", config, "--out", str(out)]) == 0
    text = out.read_text()
    assert sorted(read_table_accuracies(text)) == list(range(1, 12))
    row1 = next(ln for ln in text.splitlines() if ln.startswith("1 "))
    assert row1.split()[1:3] == ["IntNN", "-"]
    again = tmp_path / "again.txt"
    cli.main(["compare", "--data", panel, "--config", config, "--out", str(again)])
    assert again.read_bytes() == out.read_bytes()


class TestInterpret:
    def test_reference_model(self, tmp_path, capsys):
        assert cli.main(["interpret", "--model", reference_model(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "15.9462" in out and "0.999999" in out

    def test_with_logistic(self, tmp_path, capsys):
        names = [f"npc:{n}" for n in ("endowment", "working medical", "unemployment", "injury", "maternity",
                                       "non-working medical", "HPF")]
        doc = {"version": 1, "kind": "logistic", "features": "NPC", "names": names,
               "weights": [2.02, -0.61, 0.32, -0.52, -1.16, 1.53, -0.12], "intercept": 0.0}
        lpath = tmp_path / "logit.json"
        lpath.write_text(json.dumps(doc))
        assert cli.main(["interpret", "--model", reference_model(tmp_path), "--logistic", str(lpath)]) == 0
        assert "7/7" in capsys.readouterr().out

    def test_name_count(self, tmp_path):
        assert cli.main(["interpret", "--model", reference_model(tmp_path), "--names", "a,b,c"]) == 2


class TestFilterDemo:
    def read(self, path):
        with open(path) as fh:
            return [(int(r["t0"]), float(r["k"]), float(r["value"])) for r in csv.DictReader(fh)]

    def test_example1(self, tmp_path):
        out = tmp_path / "fig.csv"
        assert cli.main(["filter-demo", "--mode", "example1", "--out", str(out)]) == 0
        rows = self.read(out)
        assert len(rows) == 21 * 4
        value = {(t0, k): v for t0, k, v in rows}
        assert value[(500, 0.75)] == pytest.approx(500, abs=1e-6)
        assert value[(0, 1.0)] == -1000.0

    def test_example2(self, tmp_path):
        out = tmp_path / "fig.csv"
        assert cli.main(["filter-demo", "--mode", "example2", "--k", "0.6,1.0", "--t0-step", "100",
                         "--seed", "4", "--out", str(out)]) == 0
        rows = [r for r in self.read(out) if 100 <= r[0] <= 900]
        err = {k: np.mean([abs(v - t0) for t0, kk, v in rows if kk == k]) for k in (0.6, 1.0)}
        assert err[1.0] > err[0.6]
        again = tmp_path / "again.csv"
        cli.main(["filter-demo", "--mode", "example2", "--k", "0.6,1.0", "--t0-step", "100", "--seed", "4",
                  "--out", str(again)])
        assert again.read_bytes() == out.read_bytes()

    def test_bad_k(self, tmp_path):
        assert cli.main(["filter-demo", "--k", "0.5,2", "--out", str(tmp_path / "f.csv")]) == 2
        assert cli.main(["filter-demo", "--k", "abc", "--out", str(tmp_path / "f.csv")]) == 2


class TestGradcheck:
    @pytest.mark.parametrize("kind", ["intnn", "logistic", "mlp", "quadratic"])
    def test_pass(self, kind, capsys):
        assert cli.main(["gradcheck", "--model-kind", kind, "--seed", "1"]) == 0
        assert "PASS" in capsys.readouterr().out

    @pytest.mark.parametrize("kind", ["intnn", "quadratic"])
    def test_perturbed_fails(self, kind, capsys):
        assert cli.main(["gradcheck", "--model-kind", kind, "--perturb", "0.01"]) == 1
        assert "FAIL" in capsys.readouterr().out


class TestRobustness:
    def test_zero_rate_matches_clean(self, tmp_path, config, panel, capsys):
        out = tmp_path / "rob"
        assert cli.main(["robustness", "--data", panel, "--config", config, "--rate", "0", "--out", str(out)]) == 0
        clean = read_table_accuracies((out / "clean_table.txt").read_text())
        corrupt = read_table_accuracies((out / "corrupt_table.txt").read_text())
        assert len(clean) == 11 and clean == corrupt
        assert "smoothing k channel 1" in capsys.readouterr().out

    def test_bad_rate(self, tmp_path, config, panel):
        assert cli.main(["robustness", "--data", panel, "--config", config, "--rate", "1.5",
                         "--out", str(tmp_path / "r")]) == 2


def test_no_subcommand():
    assert cli.main([]) == 2
