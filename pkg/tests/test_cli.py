import json

import numpy as np
import pytest

from tpmwatch.cli import format_tree, main, run_sweep
from tpmwatch.data import SyntheticSpec, generate_synthetic, load_csv, save_csv
from tpmwatch.metrics import mae, xauc
from tpmwatch.net import MultiHeadNet, NetConfig
from tpmwatch.persist import save_model
from tpmwatch.pipeline import DEFAULTS, RunConfig, evaluate_model
from tpmwatch.ranks import OrdinalScale, build_balanced_tree, build_tree_from_splits
from tpmwatch.tpm import TpmModel

CONFIG = {"num_leaves": 8, "num_groups": 3, "net": {"hidden_dims": [8]},
          "train": {"epochs": 2, "batch_size": 128}}


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    ds = generate_synthetic(SyntheticSpec(n=500, input_dim=3, seed=2))
    train, test = ds.split(0.3, seed=0)
    save_csv(train, d / "train.csv")
    save_csv(test, d / "test.csv")
    (d / "cfg.json").write_text(json.dumps(CONFIG))
    return d


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, [json.loads(line) for line in out.splitlines() if line.startswith("{")], out, err


def train_model(capsys, files, method, name=None, *extra):
    out = files / (name or f"{method}.json")
    code, rows, _, err = run(capsys, "train", "--config", files / "cfg.json", "--data", files / "train.csv",
                             "--method", method, "--out", out, *extra)
    assert code == 0, err
    return out


class TestTrainEvaluate:
    @pytest.mark.parametrize("method", ["tpm", "tpm-deconfounded", "wlr", "d2q", "or"])
    def test_every_method(self, capsys, files, method):
        model_path = train_model(capsys, files, method)
        log = [json.loads(line) for line in open(str(model_path) + ".log.jsonl")]
        assert len(log) >= 2
        code, rows, _, _ = run(capsys, "evaluate", "--model", model_path, "--data", files / "test.csv")
        assert code == 0
        assert set(rows[0]) == {"method", "n", "mae", "xauc", "mean_std"}
        assert rows[0]["method"] == method
        assert (rows[0]["mean_std"] is None) == (method in ("wlr", "d2q", "or"))

    def test_evaluate_is_a_thin_wrapper(self, capsys, files):
        model_path = train_model(capsys, files, "tpm")
        _, rows, _, _ = run(capsys, "evaluate", "--model", model_path, "--data", files / "test.csv")
        code, preds, _, _ = run(capsys, "predict", "--model", model_path, "--data", files / "test.csv")
        assert code == 0
        p = np.array([r["prediction"] for r in preds])
        t = load_csv(files / "test.csv").watch_time
        assert rows[0]["mae"] == mae(p, t)
        assert rows[0]["xauc"] == xauc(p, t)
        assert rows[0]["mean_std"] == pytest.approx(np.mean([r["std"] for r in preds]), rel=1e-12)

    def test_single_group_deconfounded_matches_plain(self, capsys, files):
        a = train_model(capsys, files, "tpm", "g1a.json", "--groups", 1)
        b = train_model(capsys, files, "tpm-deconfounded", "g1b.json", "--groups", 1)
        ra = run(capsys, "evaluate", "--model", a, "--data", files / "test.csv")[1][0]
        rb = run(capsys, "evaluate", "--model", b, "--data", files / "test.csv")[1][0]
        ra.pop("method"), rb.pop("method")
        assert ra == rb

    def test_seeded_runs_repeat(self, capsys, files):
        rows = []
        for name in ("s1.json", "s2.json"):
            path = train_model(capsys, files, "tpm", name, "--seed", 5)
            rows.append(run(capsys, "evaluate", "--model", path, "--data", files / "test.csv")[1][0])
        assert rows[0] == rows[1]

    def test_predict_to_file(self, capsys, files):
        model_path = train_model(capsys, files, "wlr")
        out = files / "pred.jsonl"
        assert run(capsys, "predict", "--model", model_path, "--data", files / "test.csv", "--out", out)[0] == 0
        assert len(out.read_text().splitlines()) == 150


class TestEvaluateModel:
    def test_constant_model(self):
        ds = generate_synthetic(SyntheticSpec(n=200, input_dim=2, seed=0))
        net = MultiHeadNet(NetConfig(input_dim=2, num_heads=3))
        net.set_flat(np.zeros(net.flat().size))
        model = TpmModel(build_balanced_tree(OrdinalScale(np.arange(5.0))), net)
        row = evaluate_model(model, ds)
        assert row["xauc"] == 0.5
        assert row["mae"] == mae(np.full(200, 2.0), ds.watch_time)


class TestErrors:
    def test_all_config_problems_reported(self, capsys, files):
        bad = files / "bad.json"
        bad.write_text(json.dumps({"num_leaves": 1, "tree_kind": "ternary", "colour": "red"}))
        code, _, _, err = run(capsys, "train", "--config", bad, "--data", files / "train.csv")
        assert code == 2
        lines = err.strip().splitlines()
        assert len(lines) == 3
        assert all(line.startswith("config error:") for line in lines)

    def test_leaf_value_switch_checked(self, capsys, files, tmp_path):
        cfg = tmp_path / "lv.json"
        cfg.write_text(json.dumps({"leaf_value": "empirical_mean", "method": "wlr"}))
        code, _, _, err = run(capsys, "train", "--config", cfg, "--data", files / "train.csv")
        assert code == 2 and "leaf_value" in err

    def test_d2q_without_duration(self, capsys, files, tmp_path):
        ds = generate_synthetic(SyntheticSpec(n=50, input_dim=2, seed=0))
        ds.duration = None
        save_csv(ds, tmp_path / "nodur.csv")
        code, _, _, err = run(capsys, "train", "--method", "d2q", "--data", tmp_path / "nodur.csv",
                              "--out", tmp_path / "m.json")
        assert code == 2
        assert err.count("config error") == 1
        assert "duration" in err

    def test_missing_model_file(self, capsys, files):
        code, _, _, err = run(capsys, "evaluate", "--model", files / "none.json", "--data", files / "test.csv")
        assert code == 3
        assert "data error" in err

    def test_bad_data(self, capsys, files, tmp_path):
        (tmp_path / "x.csv").write_text("watch_time,x\n1,zz\n")
        code, _, _, err = run(capsys, "train", "--data", tmp_path / "x.csv", "--out", tmp_path / "m.json")
        assert code == 3
        assert "row 2" in err

    def test_divergence(self, capsys, files, tmp_path):
        cfg = tmp_path / "div.json"
        cfg.write_text(json.dumps({"num_leaves": 4, "train": {"epochs": 2,
                                                              "optimizer": {"name": "sgd", "lr": 1e300}}}))
        with np.errstate(all="ignore"):
            code, _, _, err = run(capsys, "train", "--config", cfg, "--data", files / "train.csv",
                                  "--out", tmp_path / "m.json")
        assert code == 4
        assert "diverged" in err


class TestSweep:
    def test_one_row_per_value(self, capsys, files):
        code, rows, _, _ = run(capsys, "sweep", "--config", files / "cfg.json", "--data", files / "train.csv",
                               "--axis", "num_leaves", "--values", "4,8,16,32")
        assert code == 0
        assert [r["value"] for r in rows] == [4, 8, 16, 32]

    def test_single_value_equals_train_then_evaluate(self, capsys, files, tmp_path):
        raw = {**CONFIG, "data": {"eval": str(files / "test.csv")}}
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps(raw))
        _, rows, _, _ = run(capsys, "sweep", "--config", cfg_path, "--data", files / "train.csv",
                            "--axis", "alpha2", "--values", "1.0")
        model = train_model(capsys, files, "tpm", "sweep_ref.json")
        ref = run(capsys, "evaluate", "--model", model, "--data", files / "test.csv")[1][0]
        row = rows[0]
        assert {k: row[k] for k in ref} == ref

    def test_bad_values(self, capsys, files):
        code, _, _, err = run(capsys, "sweep", "--config", files / "cfg.json", "--data", files / "train.csv",
                              "--axis", "num_groups", "--values", "a,b")
        assert code == 2
        assert "--values" in err

    def test_run_sweep_directly(self, files):
        cfg = RunConfig.from_dict({**CONFIG, "method": "tpm-deconfounded"})
        train, test = load_csv(files / "train.csv"), load_csv(files / "test.csv")
        rows = run_sweep(cfg, train, test, "num_groups", [1, 2])
        assert len(rows) == 2 and rows[0]["method"] == "tpm-deconfounded"


class TestInspectTree:
    def test_four_leaves_print_seven_nodes(self, capsys, tmp_path):
        tree = build_balanced_tree(OrdinalScale([0.0, 1.0, 3.0, 6.0, 10.0]))
        save_model(TpmModel(tree, MultiHeadNet(NetConfig(input_dim=1, num_heads=3))), tmp_path / "m.json")
        code, _, out, _ = run(capsys, "inspect-tree", "--model", tmp_path / "m.json")
        assert code == 0
        nodes = [line for line in out.splitlines() if line.startswith("n")]
        assert len(nodes) == 7
        assert "midpoint=0.5" in nodes[3] and "midpoint=8" in nodes[6]

    def test_interval_listing(self):
        # root [0, 1] splits into [0, 0.6] and [0.6, 1]; [0, 0.6] into [0, 0.2] and [0.2, 0.6]
        scale = OrdinalScale([0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
        tree = build_tree_from_splits(scale, {(0, 5): 3, (0, 3): 1, (1, 3): 2, (3, 5): 4})
        lines = format_tree(tree).splitlines()
        assert any(line.startswith("n4: [0.2, 0.6)") for line in lines)
        assert any(line.startswith("n1: [0, 0.6)") for line in lines)
        assert any(line.startswith("n6: [0.8, 1]") for line in lines)

    def test_baselines_have_no_tree(self, capsys, files):
        model_path = train_model(capsys, files, "wlr", "wlr_tree.json")
        assert run(capsys, "inspect-tree", "--model", model_path)[0] == 2


class TestGenSynthetic:
    def test_writes_csv(self, capsys, tmp_path):
        cfg = tmp_path / "g.json"
        cfg.write_text(json.dumps({"synthetic": {"input_dim": 3, "confound_t": 0.5}}))
        code, rows, _, _ = run(capsys, "gen-synthetic", "--config", cfg, "--n", 40, "--seed", 1,
                               "--out", tmp_path / "s.csv")
        assert code == 0 and rows[0]["rows"] == 40
        header = (tmp_path / "s.csv").read_text().splitlines()[0]
        assert header == "watch_time,duration,x0,x1,x2"

    def test_unknown_key(self, capsys, tmp_path):
        cfg = tmp_path / "g.json"
        cfg.write_text(json.dumps({"synthetic": {"size": 3}}))
        assert run(capsys, "gen-synthetic", "--config", cfg, "--out", tmp_path / "s.csv")[0] == 2


def test_defaults_table():
    assert DEFAULTS["num_leaves"] == 32 and DEFAULTS["num_groups"] == 32
    assert DEFAULTS["train"]["weights"] == {"alpha1": 1.0, "alpha2": 1.0, "alpha3": 1.0}
    assert DEFAULTS["train"]["optimizer"]["lr"] == 1e-3
    assert DEFAULTS["leaf_value"] == "midpoint"
