import json
import os

import numpy as np
import pytest

from biounet import cli, data, imageio
from conftest import TINY


def run(*argv):
    return cli.main([str(a) for a in argv])


def listed_files(out_dir):
    with open(os.path.join(out_dir, cli.MANIFEST_NAME)) as fh:
        doc = json.load(fh)
    return doc, doc["files"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps({**TINY, "stage_widths": list(TINY["stage_widths"])}))
    assert run("gen-data", "--n", 64, "--size", 32, "--seed", 2, "--out", root / "A") == 0
    assert run("gen-data", "--n", 24, "--size", 32, "--seed", 2, "--unlabeled", "--out", root / "B") == 0
    assert run("train", "--config", cfg, "--data", root / "A", "--unlabeled", root / "B",
               "--out", root / "run", "--attribute", "all") == 0
    return root


class TestGenData:
    def test_table(self, tmp_path, capsys):
        assert run("gen-data", "--n", 20, "--size", 32, "--out", tmp_path) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0].split() == ["attribute", "nonempty", "empty"]
        ds = data.import_dataset(str(tmp_path))
        row = out[4].split()
        assert row[0] == "pigment_network" and int(row[1]) == int(ds.presence[:, 3].sum())
        assert int(row[1]) + int(row[2]) == 20

    def test_seed_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("BIOUNET_SEED", "9")
        assert run("gen-data", "--n", 3, "--size", 32, "--out", tmp_path / "env") == 0
        monkeypatch.delenv("BIOUNET_SEED")
        assert run("gen-data", "--n", 3, "--size", 32, "--seed", 9, "--out", tmp_path / "flag") == 0
        a = data.import_dataset(str(tmp_path / "env"))
        b = data.import_dataset(str(tmp_path / "flag"))
        np.testing.assert_array_equal(a.images, b.images)

    def test_bad_rates(self, tmp_path):
        assert run("gen-data", "--rates", "0.1,0.2", "--out", tmp_path) == cli.EXIT_CONFIG

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert run("gen-data", "--n", 2, "--out", blocker / "sub") == cli.EXIT_IO


class TestTrain:
    def test_manifest_lists_every_file(self, workspace):
        doc, files = listed_files(workspace / "run")
        assert doc["status"] == "complete"
        on_disk = {os.path.relpath(os.path.join(d, f), workspace / "run")
                   for d, _, fs in os.walk(workspace / "run") for f in fs} - {cli.MANIFEST_NAME}
        assert set(files) == on_disk
        assert all(not os.path.isabs(f) for f in files)
        assert len(doc["runs"]) == 5 and "fusion" in doc

    def test_same_seed_identical(self, workspace):
        cfg = workspace / "tiny.json"
        assert run("train", "--config", cfg, "--data", workspace / "A", "--unlabeled", workspace / "B",
                   "--out", workspace / "again", "--attribute", "all") == 0
        for rel in listed_files(workspace / "run")[1] + [cli.MANIFEST_NAME]:
            assert (workspace / "run" / rel).read_bytes() == (workspace / "again" / rel).read_bytes(), rel

    def test_ablation_flags(self, workspace):
        out = workspace / "abl"
        assert run("train", "--config", workspace / "tiny.json", "--data", workspace / "A",
                   "--unlabeled", workspace / "B", "--out", out, "--attribute", "pigment_network",
                   "--no-clr", "--repeat-k", 2, "--epochs", 1) == 0
        doc, _ = listed_files(out)
        steps = doc["runs"]["pigment_network"]["steps"]
        assert "clr" not in steps and steps["seg"] == 2 * steps["e3_refresh"]
        assert doc["config"]["use_clr"] is False

    @pytest.mark.parametrize("argv,code", [
        (["--attribute", "7"], cli.EXIT_CONFIG),
        (["--attribute", "moles"], cli.EXIT_CONFIG),
        (["--repeat-k", "0"], cli.EXIT_CONFIG),
        (["--mode", "nine_task"], cli.EXIT_CONFIG),
    ])
    def test_bad_arguments(self, workspace, tmp_path, argv, code):
        assert run("train", "--data", workspace / "A", "--out", tmp_path, *argv) == code

    def test_missing_inputs(self, workspace, tmp_path):
        assert run("train", "--data", tmp_path / "none", "--out", tmp_path / "o") == cli.EXIT_IO
        assert run("train", "--config", tmp_path / "none.json", "--data", workspace / "A",
                   "--out", tmp_path / "o") == cli.EXIT_IO

    def test_divergence_exit_code(self, workspace, tmp_path, monkeypatch):
        from biounet import pipeline

        def boom(*args, **kwargs):
            raise pipeline.DivergenceError("non-finite loss", None)

        monkeypatch.setattr(pipeline, "train_attribute", boom)
        out = tmp_path / "div"
        assert run("train", "--data", workspace / "A", "--out", out, "--attribute", "0") == cli.EXIT_NUMERIC
        assert listed_files(out)[0]["status"] == "diverged"


class TestExplain:
    def test_outputs(self, workspace, tmp_path):
        out = tmp_path / "ex"
        ck = workspace / "run" / "checkpoints" / cli.checkpoint_name(3)
        image = workspace / "A" / "images" / "syn00004.ppm"
        assert run("explain", "--checkpoint", ck, "--image", image, "--attribute", 3,
                   "--method", "layercam", "--out", out, "--montage") == 0
        _, files = listed_files(out)
        blocks = [f for f in files if "_block" in f]
        assert len(blocks) == 12 and "syn00004_attr3_block12_layercam.pgm" in blocks
        assert "syn00004_attr3_seg.pgm" in files and "syn00004_attr3_montage.ppm" in files
        assert len(files) == 14
        assert imageio.read_pgm(str(out / "syn00004_attr3_seg.pgm")).shape == (32, 32)

    def test_bad_method_and_attribute(self, workspace, tmp_path):
        ck = workspace / "run" / "checkpoints" / cli.checkpoint_name(0)
        image = workspace / "A" / "images" / "syn00000.ppm"
        assert run("explain", "--checkpoint", ck, "--image", image, "--attribute", 0,
                   "--method", "lime", "--out", tmp_path) == cli.EXIT_CONFIG
        assert run("explain", "--checkpoint", ck, "--image", image, "--attribute", 9,
                   "--out", tmp_path) == cli.EXIT_CONFIG
        assert run("explain", "--checkpoint", tmp_path / "x.ckpt", "--image", image, "--attribute", 0,
                   "--out", tmp_path) == cli.EXIT_CONFIG


class TestEvalFuseReport:
    def test_eval_table(self, workspace, tmp_path, capsys):
        out = tmp_path / "ev"
        assert run("eval", "--checkpoints", workspace / "run", "--dataset", workspace / "A",
                   "--methods", "bio_unet,gradcam", "--percent", "--out", out) == 0
        with open(out / "evaluation.json") as fh:
            doc = json.load(fh)
        assert [r["method"] for r in doc["localization_cdc"]] == ["bio_unet", "gradcam"]
        values = [v for r in doc["localization_cdc"] for k, v in r.items() if k != "method" and v is not None]
        assert values and all(0 <= v <= 100 for v in values)
        assert "diagnosis" in doc
        assert "bio_unet" in capsys.readouterr().out

    def test_eval_unknown_method(self, workspace, tmp_path):
        assert run("eval", "--checkpoints", workspace / "run", "--dataset", workspace / "A",
                   "--methods", "lime", "--out", tmp_path) == cli.EXIT_CONFIG

    def test_fuse_matches_train(self, workspace, tmp_path):
        assert run("fuse", "--checkpoints", workspace / "run", "--dataset", workspace / "A", "--out", tmp_path) == 0
        assert (tmp_path / "fusion.json").read_bytes() == (workspace / "run" / "fusion.json").read_bytes()

    def test_report(self, workspace, capsys):
        assert run("report", "--run", workspace / "run") == 0
        assert "pigment_network" in capsys.readouterr().out

    def test_report_missing(self, tmp_path):
        assert run("report", "--run", tmp_path) == cli.EXIT_IO
