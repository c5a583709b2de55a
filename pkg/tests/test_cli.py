"""End-to-end command-line pipeline: augment, train, eval, generate."""

import numpy as np
import pytest
import yaml

from conftest import overfit_dialogs
from mmqa import cli
from mmqa.augment import expand_shuffle
from mmqa.formats import load_dataset, load_scores, save_dataset, save_features


def write_dataset(path, dialogs=None):
    save_dataset(str(path), dialogs if dialogs is not None else overfit_dialogs()[:4])


def write_config(path, data_path, **overrides):
    doc = {
        "data": {"train": str(data_path), "val": str(data_path),
                 "features_dir": overrides.pop("features_dir", "")},
        "model": {"embed_width": 8, "hidden_width": 4},
        "training": {"max_epochs": 2, "batch_size": 4, "patience": 5,
                     "seed": 0, "max_generate_len": 6, "augmentation": "basic"},
    }
    for section, key_values in overrides.items():
        doc[section].update(key_values)
    path.write_text(yaml.safe_dump(doc))
    return str(path)


class TestAugmentCommand:
    def test_per_turn_mode(self, tmp_path, capsys):
        data = tmp_path / "in.json"
        out = tmp_path / "out.json"
        write_dataset(data)
        assert cli.main(["augment", "--data", str(data), "--out", str(out),
                         "--mode", "per-turn"]) == 0
        assert "8 examples" in capsys.readouterr().out  # 4 dialogs x 2 turns
        expanded = load_dataset(str(out))
        assert [d.video_id for d in expanded[:2]] == ["vid0#0", "vid0#1"]
        source = overfit_dialogs()[0]
        assert expanded[0].turns == source.turns[:1]
        assert expanded[1].turns == source.turns  # history then target turn
        assert expanded[1].summary == source.summary

    def test_basic_mode_keeps_one_example_per_dialog(self, tmp_path):
        data = tmp_path / "in.json"
        out = tmp_path / "out.json"
        write_dataset(data)
        assert cli.main(["augment", "--data", str(data), "--out", str(out),
                         "--mode", "basic"]) == 0
        expanded = load_dataset(str(out))
        assert [d.video_id for d in expanded] == [f"vid{i}#1" for i in range(4)]

    def test_shuffle_mode_matches_library_expansion(self, tmp_path):
        dialogs = overfit_dialogs()[:2]
        data = tmp_path / "in.json"
        out = tmp_path / "out.json"
        write_dataset(data, dialogs)
        assert cli.main(["augment", "--data", str(data), "--out", str(out),
                         "--mode", "shuffle", "--factor", "2", "--seed", "5"]) == 0
        expected = [ex.video_id for d in dialogs for ex in expand_shuffle(d, 2, 5)]
        assert [d.video_id for d in load_dataset(str(out))] == expected


class TestPipeline:
    def run_train(self, tmp_path, **config_overrides):
        data = tmp_path / "data.json"
        write_dataset(data)
        config = write_config(tmp_path / "run.yaml", data, **config_overrides)
        ckpt = tmp_path / "model.ckpt"
        code = cli.main(["train", "--config", config, "--out", str(ckpt)])
        return code, data, ckpt

    def test_train_eval_generate(self, tmp_path, capsys):
        code, data, ckpt = self.run_train(tmp_path)
        assert code == 0
        assert "trained 2 epochs" in capsys.readouterr().out
        assert ckpt.exists() and (tmp_path / "model.ckpt.vocab").exists()

        scores_path = tmp_path / "scores.tsv"
        assert cli.main(["eval", "--ckpt", str(ckpt), "--data", str(data),
                         "--out", str(scores_path), "--max-len", "6"]) == 0
        scores = load_scores(str(scores_path))
        assert set(scores) == {"bleu1", "bleu2", "bleu3", "bleu4",
                               "rouge_l", "cider", "token_f1"}
        assert all(np.isfinite(v) for v in scores.values())

        answers_path = tmp_path / "answers.txt"
        assert cli.main(["generate", "--ckpt", str(ckpt), "--data", str(data),
                         "--out", str(answers_path), "--max-len", "6"]) == 0
        assert len(answers_path.read_text().splitlines()) == 4

    def test_training_is_byte_deterministic(self, tmp_path):
        data = tmp_path / "data.json"
        write_dataset(data)
        config = write_config(tmp_path / "run.yaml", data)
        blobs = []
        for run in ("a", "b"):
            ckpt = tmp_path / f"{run}.ckpt"
            assert cli.main(["train", "--config", config, "--out", str(ckpt)]) == 0
            blobs.append((ckpt.read_bytes(),
                          (tmp_path / f"{run}.ckpt.vocab").read_bytes()))
        assert blobs[0] == blobs[1]

    def test_features_flow_through_training(self, tmp_path):
        features = tmp_path / "features"
        features.mkdir()
        rng = np.random.default_rng(2)
        for i in range(4):
            save_features(str(features / f"vid{i}.flow.feat"),
                          rng.normal(size=(3, 6)))
        code, data, ckpt = self.run_train(
            tmp_path, model={"flow_width": 6}, features_dir=str(features))
        assert code == 0
        scores_path = tmp_path / "scores.tsv"
        assert cli.main(["eval", "--ckpt", str(ckpt), "--data", str(data),
                         "--out", str(scores_path),
                         "--features", str(features)]) == 0


class TestFailureModes:
    def test_missing_dataset_is_io_failure(self, tmp_path):
        assert cli.main(["augment", "--data", str(tmp_path / "nope.json"),
                         "--out", str(tmp_path / "out.json")]) == 3

    def test_malformed_dataset_is_io_failure(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert cli.main(["augment", "--data", str(bad),
                         "--out", str(tmp_path / "out.json")]) == 3

    def test_invalid_content_is_validation_failure(self, tmp_path):
        bad = tmp_path / "dup.json"
        bad.write_text('{"dialogs": ['
                       '{"video_id": "x", "summary": "a", "turns": []},'
                       '{"video_id": "x", "summary": "a", "turns": []}]}')
        assert cli.main(["augment", "--data", str(bad),
                         "--out", str(tmp_path / "out.json")]) == 1

    def test_bad_config_is_validation_failure(self, tmp_path):
        data = tmp_path / "data.json"
        write_dataset(data)
        config = tmp_path / "run.yaml"
        config.write_text("training:\n  momentum: 0.9\n")
        assert cli.main(["train", "--config", str(config),
                         "--out", str(tmp_path / "m.ckpt")]) == 1

    def test_missing_features_dir_is_validation_failure(self, tmp_path):
        data = tmp_path / "data.json"
        write_dataset(data)
        config = write_config(tmp_path / "run.yaml", data,
                              model={"flow_width": 6})
        assert cli.main(["train", "--config", config,
                         "--out", str(tmp_path / "m.ckpt")]) == 1

    def test_feature_width_mismatch_is_validation_failure(self, tmp_path):
        features = tmp_path / "features"
        features.mkdir()
        for i in range(4):
            save_features(str(features / f"vid{i}.flow.feat"), np.zeros((3, 5)))
        data = tmp_path / "data.json"
        write_dataset(data)
        config = write_config(tmp_path / "run.yaml", data,
                              model={"flow_width": 6},
                              features_dir=str(features))
        assert cli.main(["train", "--config", config,
                         "--out", str(tmp_path / "m.ckpt")]) == 1

    def test_missing_checkpoint_is_io_failure(self, tmp_path):
        data = tmp_path / "data.json"
        write_dataset(data)
        assert cli.main(["eval", "--ckpt", str(tmp_path / "nope.ckpt"),
                         "--data", str(data),
                         "--out", str(tmp_path / "s.tsv")]) == 3

    def test_usage_problems_exit_1(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["augment"])  # required flags missing
        assert exc.value.code == 1
        with pytest.raises(SystemExit) as exc:
            cli.main(["no-such-command"])
        assert exc.value.code == 1
        assert cli.main([]) == 1
        capsys.readouterr()
