import base64
import json

import numpy as np
import pytest

from tpmwatch.data import SyntheticSpec, generate_synthetic
from tpmwatch.net import MultiHeadNet, NetConfig
from tpmwatch.persist import ModelFileError, _checksum, load_model, method_of, save_model
from tpmwatch.pipeline import METHODS, RunConfig, fit_method, predict_dataset
from tpmwatch.ranks import OrdinalScale, build_tree_from_splits
from tpmwatch.tpm import TpmModel

SMALL = {"num_leaves": 8, "num_groups": 3, "net": {"hidden_dims": [8]}, "train": {"epochs": 2, "batch_size": 128}}


@pytest.fixture(scope="module")
def ds():
    return generate_synthetic(SyntheticSpec(n=600, input_dim=4, seed=7))


@pytest.fixture(scope="module", params=[*METHODS, "or-grouped", "tpm-independent", "tpm-empirical"])
def trained(request, ds):
    raw = json.loads(json.dumps(SMALL))
    method = request.param
    if method == "or-grouped":
        raw.update(method="or", **{"or": {"grouped": True}})
    elif method == "tpm-empirical":
        raw.update(method="tpm", leaf_value="empirical_mean")
    elif method == "tpm-independent":
        raw.update(method="tpm-deconfounded", deconfound={"conditioning": "independent"})
    else:
        raw["method"] = method
    cfg = RunConfig.from_dict(raw)
    model, _ = fit_method(cfg, ds)
    return cfg, model


def rewrite(path, mutate, fix_checksum=True):
    doc = json.loads(path.read_text())
    mutate(doc)
    if fix_checksum:
        doc["checksum"] = _checksum(doc)
    path.write_text(json.dumps(doc))


class TestRoundTrip:
    def test_bitwise_predictions(self, trained, ds, tmp_path):
        cfg, model = trained
        path = tmp_path / "m.json"
        save_model(model, path, cfg.raw)
        back, stored = load_model(path, with_config=True)
        assert method_of(back) == method_of(model)
        assert stored == cfg.raw
        if isinstance(model, TpmModel) and model.leaf_values is not None:
            np.testing.assert_array_equal(back.leaf_values, model.leaf_values)
        for mode in ("conditional", "do") if method_of(model) == "tpm-deconfounded" else ("conditional",):
            before, std_before = predict_dataset(model, ds, mode)
            after, std_after = predict_dataset(back, ds, mode)
            np.testing.assert_array_equal(before, after)
            if std_before is not None:
                np.testing.assert_array_equal(std_before, std_after)

    def test_custom_tree(self, tmp_path, rng):
        tree = build_tree_from_splits(OrdinalScale([0.0, 0.2, 0.4, 0.6, 0.8, 1.0]),
                                      {(0, 5): 3, (0, 3): 1, (1, 3): 2, (3, 5): 4})
        model = TpmModel(tree, MultiHeadNet(NetConfig(input_dim=2, num_heads=4, seed=1)))
        save_model(model, tmp_path / "c.json")
        back = load_model(tmp_path / "c.json")
        assert back.tree == tree
        x = rng.normal(size=(5, 2))
        np.testing.assert_array_equal(back.predict(x).expectation, model.predict(x).expectation)


class TestIntegrity:
    @pytest.fixture
    def path(self, tmp_path):
        model = TpmModel(build_tree_from_splits(OrdinalScale([0, 1, 2, 3]), {(0, 3): 2, (0, 2): 1}),
                         MultiHeadNet(NetConfig(input_dim=2, num_heads=2)))
        p = tmp_path / "m.json"
        save_model(model, p)
        return p

    def test_edited_file_fails_checksum(self, path):
        rewrite(path, lambda d: d["payload"]["tree"]["nodes"][0].update(head=1), fix_checksum=False)
        with pytest.raises(ModelFileError, match="checksum"):
            load_model(path)

    def test_version_gate(self, path):
        rewrite(path, lambda d: d.update(version=2))
        with pytest.raises(ModelFileError, match="version"):
            load_model(path)

    def test_foreign_format(self, path):
        rewrite(path, lambda d: d.update(format="other"))
        with pytest.raises(ModelFileError, match="not a"):
            load_model(path)

    def test_inconsistent_tree_record(self, path):
        def swap(d):
            nodes = d["payload"]["tree"]["nodes"]
            nodes[0]["head"], nodes[1]["head"] = nodes[1]["head"], nodes[0]["head"]
        rewrite(path, swap)
        with pytest.raises(ModelFileError, match="tree"):
            load_model(path)

    def test_unknown_method(self, path):
        rewrite(path, lambda d: d.update(method="gbdt"))
        with pytest.raises(ModelFileError, match="unknown method"):
            load_model(path)

    def test_malformed_payload(self, path):
        rewrite(path, lambda d: d["payload"].pop("net"))
        with pytest.raises(ModelFileError, match="invalid model payload"):
            load_model(path)

    def test_unreadable(self, tmp_path):
        (tmp_path / "bad.json").write_text("{not json")
        with pytest.raises(ModelFileError):
            load_model(tmp_path / "bad.json")
        with pytest.raises(ModelFileError):
            load_model(tmp_path / "absent.json")

    def test_arrays_are_little_endian_doubles(self, path):
        doc = json.loads(path.read_text())
        w = doc["payload"]["net"]["params"][0]
        assert len(base64.b64decode(w["data"])) == 8 * int(np.prod(w["shape"]))
