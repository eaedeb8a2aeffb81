import json

import numpy as np
import pytest

from scm_forge import dataset as ds, model as mdl
from scm_forge.cli import main


def write_config(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def tiny_train_cfg(**kw):
    cfg = {
        "seed": 3,
        "algorithm": "scm",
        "dataset": {"generator": "rdb7", "n": 200},
        "split": {"train": 0.8, "val": 0.1, "test": 0.1},
        "builder": {
            "max_layers": 2,
            "max_nodes_per_layer": 6,
            "candidates_per_layer": 30,
            "activations": "tanh",
            "error_tol": 1e-6,
            "early_stop_step": 4,
        },
    }
    cfg.update(kw)
    return cfg


class TestGenData:
    def test_rdb7_with_provenance(self, tmp_path):
        cfg = write_config(tmp_path, "g.json", {"generator": "rdb7", "n": 50, "seed": 4})
        assert main(["gen-data", "--config", cfg, "--out", str(tmp_path)]) == 0
        out = tmp_path / "rdb7.csv"
        first = out.read_text().splitlines()[0]
        assert first.startswith("# generator=rdb7") and "seed=4" in first and "philox" in first
        data = ds.load_csv(out, "last", has_header=True)
        assert data.n_rows == 50

    def test_rastrigin_writes_both_files(self, tmp_path):
        cfg = write_config(
            tmp_path, "g.json",
            {"generator": "rastrigin", "n_train": 40, "n_test": 10, "seed": 1},
        )
        assert main(["gen-data", "--config", cfg, "--out", str(tmp_path)]) == 0
        assert (tmp_path / "rastrigin_train.csv").exists()
        assert (tmp_path / "rastrigin_test.csv").exists()

    def test_deterministic_bytes(self, tmp_path):
        cfg = write_config(tmp_path, "g.json", {"generator": "rdb7", "n": 30, "seed": 9})
        a, b = tmp_path / "a", tmp_path / "b"
        main(["gen-data", "--config", cfg, "--out", str(a)])
        main(["gen-data", "--config", cfg, "--out", str(b)])
        assert (a / "rdb7.csv").read_bytes() == (b / "rdb7.csv").read_bytes()

    def test_unknown_generator(self, tmp_path):
        cfg = write_config(tmp_path, "g.json", {"generator": "mnist"})
        assert main(["gen-data", "--config", cfg, "--out", str(tmp_path)]) == 2


class TestTrain:
    def test_writes_artifacts(self, tmp_path):
        cfg = write_config(tmp_path, "t.json", tiny_train_cfg())
        out = tmp_path / "run"
        assert main(["train", "--config", cfg, "--out", str(out)]) == 0
        assert (out / "model.scm").exists()
        assert (out / "trace.csv").read_text().splitlines()[0] == \
            "layer,node,train_rmse,val_rmse,lambda,r_used"
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["schema_version"] == 1
        assert {"train_rmse", "test_rmse", "nodes_per_layer", "wall_time_s"} <= set(metrics)
        assert metrics["early_stop_source"] == "val"

    def test_byte_identical_reruns(self, tmp_path):
        cfg = write_config(tmp_path, "t.json", tiny_train_cfg())
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--config", cfg, "--out", str(a)]) == 0
        assert main(["train", "--config", cfg, "--out", str(b)]) == 0
        assert (a / "model.scm").read_bytes() == (b / "model.scm").read_bytes()
        assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()

    def test_seed_flag_overrides(self, tmp_path):
        cfg = write_config(tmp_path, "t.json", tiny_train_cfg())
        a, b = tmp_path / "a", tmp_path / "b"
        main(["train", "--config", cfg, "--out", str(a)])
        main(["train", "--config", cfg, "--seed", "99", "--out", str(b)])
        assert (a / "model.scm").read_bytes() != (b / "model.scm").read_bytes()

    def test_missing_dataset_exits_2_without_files(self, tmp_path):
        payload = tiny_train_cfg(dataset={"path": str(tmp_path / "absent.csv")})
        cfg = write_config(tmp_path, "t.json", payload)
        out = tmp_path / "run"
        assert main(["train", "--config", cfg, "--out", str(out)]) == 2
        assert not (out / "model.scm").exists()

    def test_unknown_key_rejected(self, tmp_path):
        payload = tiny_train_cfg()
        payload["learning_rate"] = 0.1  # not a thing here
        cfg = write_config(tmp_path, "t.json", payload)
        assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == 2

    def test_unknown_builder_key_rejected(self, tmp_path):
        payload = tiny_train_cfg()
        payload["builder"]["lmax"] = 3
        cfg = write_config(tmp_path, "t.json", payload)
        assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == 2

    def test_test_split_drives_early_stop_when_no_val(self, tmp_path):
        payload = tiny_train_cfg(split={"train": 0.9, "val": 0.0, "test": 0.1})
        cfg = write_config(tmp_path, "t.json", payload)
        out = tmp_path / "run"
        assert main(["train", "--config", cfg, "--out", str(out)]) == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["early_stop_source"] == "test"

    def test_csv_dataset_path(self, tmp_path):
        data = ds.gen_rdb7(120, seed=5)
        ds.write_csv(data, tmp_path / "d.csv")
        payload = tiny_train_cfg(
            dataset={"path": str(tmp_path / "d.csv"), "target_cols": "last", "has_header": True}
        )
        cfg = write_config(tmp_path, "t.json", payload)
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "r")]) == 0


class TestEval:
    def test_eval_trained_model(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "t.json", tiny_train_cfg())
        out = tmp_path / "run"
        main(["train", "--config", cfg, "--out", str(out)])
        data = ds.gen_rdb7(40, seed=12)
        ds.write_csv(data, tmp_path / "eval.csv")
        capsys.readouterr()  # drain the training output
        code = main(["eval", str(out / "model.scm"), str(tmp_path / "eval.csv"), "--has-header"])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["rows"] == 40
        assert 0 <= payload["rmse_normalized"] < 1
        assert "rmse_raw" in payload


class TestCompare:
    def _cfg(self, trials=2, workers=1):
        return tiny_train_cfg(
            trials=trials,
            workers=workers,
            algorithms=["scm", "irvfl"],
            overrides={"irvfl": {"max_layers": 1, "max_nodes_per_layer": 10}},
        )

    def test_table_shape(self, tmp_path):
        cfg = write_config(tmp_path, "c.json", self._cfg())
        out = tmp_path / "cmp"
        assert main(["compare", "--config", cfg, "--out", str(out)]) == 0
        lines = (out / "table.csv").read_text().splitlines()
        assert lines[0] == "algorithm,train_rmse_mean,train_rmse_std,test_rmse_mean,test_rmse_std"
        assert len(lines) == 3  # header + 2 algorithms
        assert (out / "table.txt").exists()

    def test_single_trial_zero_std(self, tmp_path):
        cfg = write_config(tmp_path, "c.json", self._cfg(trials=1))
        out = tmp_path / "cmp"
        main(["compare", "--config", cfg, "--out", str(out)])
        rows = (out / "table.csv").read_text().splitlines()[1:]
        for row in rows:
            cells = row.split(",")
            assert float(cells[2]) == 0.0 and float(cells[4]) == 0.0

    def test_parallel_equals_serial(self, tmp_path):
        a, b = tmp_path / "serial", tmp_path / "parallel"
        cfg1 = write_config(tmp_path, "c1.json", self._cfg(workers=1))
        cfg2 = write_config(tmp_path, "c2.json", self._cfg(workers=4))
        assert main(["compare", "--config", cfg1, "--out", str(a)]) == 0
        assert main(["compare", "--config", cfg2, "--out", str(b)]) == 0
        assert (a / "table.csv").read_bytes() == (b / "table.csv").read_bytes()


class TestReport:
    def _train(self, tmp_path):
        cfg = write_config(tmp_path, "t.json", tiny_train_cfg())
        out = tmp_path / "run"
        main(["train", "--config", cfg, "--out", str(out)])
        return out / "model.scm"

    def test_size_mode(self, tmp_path, capsys):
        model_path = self._train(tmp_path)
        assert main(["report", str(model_path), "--mode", "size"]) == 0
        text = capsys.readouterr().out
        assert "reduction" in text and "%" in text

    def test_size_reduction_value(self, tmp_path, capsys):
        # hand-built 117-24-31 topology with 36 inputs reproduces 96.22%
        rng = np.random.default_rng(0)
        layers = []
        prev = 36
        for w in (117, 24, 31):
            signs = rng.integers(0, 2, size=(prev, w)) * 2.0 - 1.0
            layers.append(mdl.Layer(
                mdl.BinaryWeightMatrix.from_signs(signs, np.ones(w)),
                np.zeros(w), __import__("scm_forge.activations", fromlist=["ActivationKind"]).ActivationKind("tanh"),
            ))
            prev = w
        model = mdl.ScmModel(None, tuple(layers), rng.normal(size=(1, 172)))
        path = tmp_path / "t9.scm"
        mdl.serialize(model, path)
        assert main(["report", str(path), "--mode", "size"]) == 0
        assert "96.22%" in capsys.readouterr().out

    def test_mc_mode(self, tmp_path, capsys):
        model_path = self._train(tmp_path)
        assert main(["report", str(model_path), "--mode", "mc", "--grid-n", "2001"]) == 0
        text = capsys.readouterr().out
        assert "mc" in text and "extrema_count" in text

    def test_mc_mechanism_only_is_zero(self, tmp_path, capsys):
        mech = mdl.LinearMechanism(np.array([[0.5]]), np.array([0.1]))
        model = mdl.ScmModel(mech, (), np.zeros((1, 0)))
        path = tmp_path / "m.scm"
        mdl.serialize(model, path)
        assert main(["report", str(path), "--mode", "mc", "--grid-n", "101"]) == 0
        out = capsys.readouterr().out
        assert "mc                  0" in out

    def test_mc_too_many_dims_exits_2(self, tmp_path):
        rng = np.random.default_rng(1)
        signs = rng.integers(0, 2, size=(5, 3)) * 2.0 - 1.0
        from scm_forge.activations import ActivationKind
        layer = mdl.Layer(mdl.BinaryWeightMatrix.from_signs(signs, np.ones(3)),
                          np.zeros(3), ActivationKind("tanh"))
        model = mdl.ScmModel(None, (layer,), rng.normal(size=(1, 3)))
        path = tmp_path / "wide.scm"
        mdl.serialize(model, path)
        assert main(["report", str(path), "--mode", "mc"]) == 2

    def test_corrupt_file_exits_1(self, tmp_path):
        model_path = self._train(tmp_path)
        blob = bytearray(model_path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        bad = tmp_path / "bad.scm"
        bad.write_bytes(bytes(blob))
        assert main(["report", str(bad), "--mode", "size"]) == 1
