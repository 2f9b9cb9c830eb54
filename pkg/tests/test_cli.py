import os

import numpy as np
import pytest

from scnn_forensics import cli, dataset, imageio, model, postproc
from scnn_forensics.errors import DataError, FormatError, ParameterError, ShapeError

IO_ERROR = 4


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert cli.main(["gen", "--out", str(root), "--count", "3", "--seed", "5"]) == 0
    return root


@pytest.fixture(scope="module")
def weights(tmp_path_factory):
    path = tmp_path_factory.mktemp("w") / "w.scnw"
    model.save_params(model.init_params(), path)
    return path


def parse(*argv):
    return cli.build_parser().parse_args(list(argv))


@pytest.mark.parametrize("argv, flag, expected", [
    (["detect", "--weights", "w", "--image", "i", "--out", "o"], "backend", "fast"),
    (["detect", "--weights", "w", "--image", "i", "--out", "o"], "stride", 2),
    (["detect", "--weights", "w", "--image", "i", "--out", "o"], "threshold", 0.5),
    (["detect", "--weights", "w", "--image", "i", "--out", "o"], "median_k", 5),
    (["eval", "--weights", "w", "--corpus", "c"], "stride", 2),
    (["eval", "--weights", "w", "--corpus", "c"], "threshold", 0.5),
    (["eval", "--weights", "w", "--corpus", "c"], "median_k", 5),
    (["train", "--corpus", "c", "--weights", "w"], "epochs", 20),
    (["train", "--corpus", "c", "--weights", "w"], "lr", 1e-3),
    (["train", "--corpus", "c", "--weights", "w"], "batch", 64),
    (["train", "--corpus", "c", "--weights", "w"], "momentum", 0.9),
    (["train", "--corpus", "c", "--weights", "w"], "dropout", 0.5),
    (["gen", "--out", "o"], "count", 64),
    (["gen", "--out", "o"], "size", 128),
    (["bench", "--weights", "w"], "stride", 2),
    (["bench", "--weights", "w"], "sizes", [128, 256, 384]),
    (["bench", "--weights", "w"], "repeats", 3),
])
def test_flag_defaults(argv, flag, expected):
    assert getattr(parse(*argv), flag) == expected


def test_flag_defaults_match_module_constants():
    """Walk every sub-parser and compare each default with its owning module."""
    owners = {
        "stride": 2, "threshold": postproc.DEFAULT_THRESHOLD,
        "median_k": postproc.DEFAULT_MEDIAN_K, "epochs": model.TrainConfig().max_epochs,
        "lr": model.TrainConfig().learning_rate, "batch": model.TrainConfig().batch_size,
        "momentum": model.TrainConfig().momentum, "dropout": model.TrainConfig().dropout_rate,
        "backend": "fast",
    }
    parser = cli.build_parser()
    subparsers = parser._subparsers._group_actions[0].choices
    seen = set()
    for sub in subparsers.values():
        for action in sub._actions:
            if action.dest in owners:
                assert action.default == owners[action.dest], action.dest
                seen.add(action.dest)
    assert seen == set(owners)


def test_backend_choices():
    with pytest.raises(SystemExit) as exc:
        parse("detect", "--weights", "w", "--image", "i", "--out", "o", "--backend", "gpu")
    assert exc.value.code == ParameterError.exit_code


def test_exit_codes_are_distinct():
    codes = [ParameterError.exit_code, DataError.exit_code, IO_ERROR, FormatError.exit_code]
    assert len(set(codes)) == 4 and 0 not in codes


class TestGen:
    def test_deterministic(self, tmp_path):
        for name in ("a", "b"):
            assert cli.main(["gen", "--out", str(tmp_path / name), "--count", "4",
                             "--seed", "7"]) == 0
        files = sorted(os.listdir(tmp_path / "a"))
        assert len(files) == 13
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_zero(self, tmp_path):
        assert cli.main(["gen", "--out", str(tmp_path), "--count", "0"]) == 0
        assert dataset.load_manifest(tmp_path)["images"] == []

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert cli.main(["gen", "--out", str(blocker / "sub"), "--count", "1"]) == IO_ERROR


class TestTrain:
    def run(self, corpus, out, *extra):
        return cli.main(["train", "--corpus", str(corpus), "--weights", str(out),
                         "--epochs", "2", "--batch", "32", "--seed", "1", *extra])

    def test_outputs_and_determinism(self, corpus, tmp_path):
        assert self.run(corpus, tmp_path / "a.scnw", "--patches", str(tmp_path / "p.fpd")) == 0
        assert self.run(corpus, tmp_path / "b.scnw") == 0
        assert (tmp_path / "a.scnw").read_bytes() == (tmp_path / "b.scnw").read_bytes()
        rows = (tmp_path / "a.csv").read_text().splitlines()
        assert rows[0] == "epoch,train_loss,val_accuracy"
        assert len(rows) == 1 + 2
        assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()
        recs = dataset.read_records(tmp_path / "p.fpd")
        assert {r.label for r in recs} == {0, 1}

    def test_missing_corpus(self, tmp_path):
        assert self.run(tmp_path / "nowhere", tmp_path / "w.scnw") == DataError.exit_code

    def test_single_class_corpus(self, tmp_path):
        # identical original and tampered images produce only normal patches
        img = np.full((64, 64, 3), 0.4, np.float32)
        imageio.write_image(img, tmp_path / "o.ppm")
        imageio.write_mask(np.zeros((64, 64)), tmp_path / "m.pgm")
        (tmp_path / "manifest.json").write_text(
            '{"images": [{"id": 0, "original": "o.ppm", "tampered": "o.ppm", "mask": "m.pgm"}]}')
        assert self.run(tmp_path, tmp_path / "w.scnw") == DataError.exit_code


class TestDetect:
    def run(self, weights, image, out, *extra):
        return cli.main(["detect", "--weights", str(weights), "--image", str(image),
                         "--out", str(out), *extra])

    def test_artifacts(self, corpus, weights, tmp_path):
        image = corpus / "tampered_0000.ppm"
        assert self.run(weights, image, tmp_path / "a") == 0
        names = sorted(os.listdir(tmp_path / "a"))
        assert names == ["binary.pgm", "boxes.txt", "map.bin", "map.pgm", "overlay.ppm"]
        overlay = imageio.decode((tmp_path / "a" / "overlay.ppm").read_bytes())
        assert overlay.shape == (128, 128, 3)
        assert self.run(weights, image, tmp_path / "b") == 0
        for n in names:
            assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()

    def test_backends_give_identical_boxes(self, corpus, weights, tmp_path):
        image = corpus / "tampered_0001.ppm"
        for backend in ("swd", "fast"):
            assert self.run(weights, image, tmp_path / backend, "--backend", backend,
                            "--stride", "4") == 0
        assert (tmp_path / "swd" / "boxes.txt").read_bytes() == \
            (tmp_path / "fast" / "boxes.txt").read_bytes()

    def test_undersized_image(self, weights, tmp_path):
        imageio.write_image(np.zeros((20, 40, 3)), tmp_path / "small.ppm")
        assert self.run(weights, tmp_path / "small.ppm", tmp_path / "o") == ShapeError.exit_code

    def test_missing_weights(self, corpus, tmp_path):
        assert self.run(tmp_path / "none.scnw", corpus / "tampered_0000.ppm",
                        tmp_path / "o") == IO_ERROR

    def test_corrupt_weights(self, corpus, tmp_path):
        (tmp_path / "bad.scnw").write_bytes(b"SCNW\x01")
        assert self.run(tmp_path / "bad.scnw", corpus / "tampered_0000.ppm",
                        tmp_path / "o") == FormatError.exit_code

    def test_corrupt_image(self, weights, tmp_path):
        (tmp_path / "bad.ppm").write_bytes(b"P6\n40 40\n255\n\x00")
        assert self.run(weights, tmp_path / "bad.ppm", tmp_path / "o") == FormatError.exit_code

    def test_even_median_k(self, corpus, weights, tmp_path):
        assert self.run(weights, corpus / "tampered_0000.ppm", tmp_path / "o",
                        "--median-k", "4") == ParameterError.exit_code


def test_draw_boxes_outline():
    img = np.zeros((10, 10, 3), np.float32)
    out = cli.draw_boxes(img, [postproc.BoundingBox(2, 3, 6, 8)])
    lit = out[..., 0] == 255
    expected = np.zeros((10, 10), bool)
    expected[2, 3:8] = expected[5, 3:8] = True
    expected[2:6, 3] = expected[2:6, 7] = True
    np.testing.assert_array_equal(lit, expected)


class TestEval:
    def test_forced_correct_harness(self, corpus, weights, monkeypatch, capsys):
        masks = {i: m for i, _, _, m in dataset.iter_corpus(corpus)}
        calls = iter(sorted(masks))

        def oracle(params, image, args):
            return None, None, [postproc.mask_box(masks[next(calls)])]

        monkeypatch.setattr(cli, "detect_image", oracle)
        assert cli.main(["eval", "--corpus", str(corpus), "--weights", str(weights)]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[-1].startswith("accuracy 1.000000")
        assert all(line.endswith("1.000000 correct") for line in out[:-1])

    def test_results_file(self, corpus, weights, tmp_path):
        out = tmp_path / "r.txt"
        assert cli.main(["eval", "--corpus", str(corpus), "--weights", str(weights),
                         "--stride", "8", "--out", str(out)]) == 0
        parsed = postproc.read_results(out)
        assert [p[0] for p in parsed] == ["0", "1", "2"]
        assert all(p[2] is not None for p in parsed)

    def test_empty_corpus(self, weights, tmp_path):
        dataset.generate_corpus(tmp_path, count=0)
        assert cli.main(["eval", "--corpus", str(tmp_path), "--weights", str(weights)]) == \
            DataError.exit_code


def test_bench_small(weights, tmp_path, capsys):
    assert cli.main(["bench", "--weights", str(weights), "--sizes", "40", "48",
                     "--repeats", "1", "--out", str(tmp_path / "b.txt")]) == 0
    lines = (tmp_path / "b.txt").read_text().splitlines()
    assert lines[1] == "size swd_s fast_s ratio saved_s max_abs_diff"
    assert [line.split()[0] for line in lines[2:]] == ["40", "48"]
