"""End-to-end CLI pipeline at toy scale, plus config parsing contracts."""

import os

import numpy as np
import pytest

from voxpart.cli import main, parse_config_file
from voxpart.errors import ConfigError


RUN_CFG = """
[net]
arch = shallow_u_stack
stack = 2
channels = 3
convs_per_block = 1
kernel = 5
branches = 2
input_res = 8

[train]
mode = weak
batch_size = 6
lr = 0.002
seed = 3
phase1_threshold = 0.8
phase1_epoch_cap = 10
schedule = 1,2;2,1
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.cfg"
    cfg.write_text(RUN_CFG)
    data = root / "data"
    assert main(["gen", "--family", "chair", "--pos", "8", "--neg", "8",
                 "--res", "8", "--seed", "3", "--split", "0.5,0.25,0.25",
                 "--out", str(data)]) == 0
    return root


class TestConfigFile:
    def test_sections_and_comments(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("[net]\nchannels = 4  # width\n\n[train]\nseed = 9\n")
        sections = parse_config_file(p)
        assert sections == {"net": {"channels": "4"}, "train": {"seed": "9"}}

    def test_duplicate_key_rejected(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("[net]\nchannels = 4\nchannels = 5\n")
        with pytest.raises(ConfigError):
            parse_config_file(p)

    def test_unknown_key_rejected(self, tmp_path, workspace):
        p = tmp_path / "c.cfg"
        p.write_text("[net]\nchannls = 4\n")
        assert main(["describe", "--config", str(p)]) == 2

    def test_key_outside_section_rejected(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("channels = 4\n")
        with pytest.raises(ConfigError):
            parse_config_file(p)


class TestPipeline:
    def test_gen_wrote_manifest_and_shapes(self, workspace):
        data = workspace / "data"
        assert (data / "manifest.txt").exists()
        assert (data / "run_manifest.txt").exists()
        shapes = list((data / "shapes").glob("*.binvox"))
        assert len(shapes) == 16 + 8  # grids plus gt masks for positives

    def test_describe_prints_params(self, workspace, capsys):
        assert main(["describe", "--config", str(workspace / "run.cfg")]) == 0
        out = capsys.readouterr().out
        assert "parameters:" in out
        from voxpart.network import NetConfig, param_count
        expected = param_count(NetConfig(arch="shallow_u_stack", stack=2, channels=3,
                                         convs_per_block=1, kernel=5, branches=2,
                                         input_res=8))
        assert str(expected) in out

    def test_train_infer_postprocess_eval(self, workspace):
        data = str(workspace / "data" / "manifest.txt")
        ckpt = str(workspace / "ckpt")
        assert main(["train", "--config", str(workspace / "run.cfg"),
                     "--data", data, "--out", ckpt]) == 0
        assert os.path.exists(os.path.join(ckpt, "manifest.txt"))

        # infer every train-split shape, then evaluate
        from voxpart.synth import load_manifest, load_split
        manifest = load_manifest(data)
        maps_dir = workspace / "maps"
        maps_dir.mkdir(exist_ok=True)
        first_grid = None
        for shape in load_split(manifest, "train"):
            grid_path = str(workspace / "data" / f"shapes/{shape.id}.binvox")
            first_grid = first_grid or grid_path
            assert main(["infer", "--ckpt", ckpt, "--grid", grid_path,
                         "--out", str(maps_dir / f"{shape.id}.seg")]) == 0

        pr_path = str(workspace / "pr.csv")
        assert main(["eval", "--pred", str(maps_dir), "--gt", data,
                     "--split", "train", "--out", pr_path]) == 0
        text = open(pr_path).read()
        assert text.startswith("threshold,precision,recall")
        assert "# auc," in text

        # postprocess one map into a binary mask
        some_map = str(next(maps_dir.glob("*.seg")))
        mask_out = str(workspace / "mask.binvox")
        assert main(["postprocess", "--map", some_map, "--grid", first_grid,
                     "--symmetrize", "--threshold", "0.5", "--out", mask_out]) == 0
        from voxpart.voxel import load_voxels
        load_voxels(mask_out)

    def test_search_embed_thumb(self, workspace):
        data = str(workspace / "data" / "manifest.txt")
        ckpt = str(workspace / "ckpt")
        from voxpart.synth import load_manifest, load_split
        shapes = load_split(load_manifest(data), "train")
        pos_id = next(s.id for s in shapes if s.tags["armrest"] == 1)

        # low threshold so toy maps are nonempty
        code = main(["search", "--data", data, "--ckpt", ckpt, "--query", pos_id,
                     "--k", "3", "--threshold", "0.01"])
        assert code == 0

        dist = str(workspace / "dist.csv")
        assert main(["embed", "--data", data, "--ckpt", ckpt, "--out", dist,
                     "--threshold", "0.01"]) == 0
        lines = open(dist).read().strip().splitlines()
        n = len(lines) - 1
        matrix = np.array([[float(v) for v in row.split(",")] for row in lines[1:]])
        assert matrix.shape == (n, n)
        np.testing.assert_allclose(matrix, matrix.T, atol=1e-12)

        thumb = str(workspace / "t.ply")
        assert main(["thumb", "--data", data, "--ckpt", ckpt, "--shape", pos_id,
                     "--threshold", "0.01", "--out", thumb]) == 0
        assert open(thumb).readline().strip() == "ply"

    def test_tag_flag_selects_branch(self, workspace, capsys):
        data = str(workspace / "data" / "manifest.txt")
        ckpt = str(workspace / "ckpt")
        from voxpart.synth import load_manifest, load_split
        pos_id = next(s.id for s in load_split(load_manifest(data), "train")
                      if s.tags["armrest"] == 1)
        assert main(["search", "--data", data, "--ckpt", ckpt, "--query", pos_id,
                     "--tag", "armrest", "--threshold", "0.01"]) == 0
        capsys.readouterr()
        assert main(["search", "--data", data, "--ckpt", ckpt, "--query", pos_id,
                     "--tag", "paws", "--threshold", "0.01"]) == 2
        assert "config-error" in capsys.readouterr().err

    def test_unknown_flag_exits_nonzero(self, workspace, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["gen", "--bogus", "1"])
        assert exc.value.code != 0
        assert "usage" in capsys.readouterr().err

    def test_error_category_on_missing_input(self, workspace, capsys):
        code = main(["infer", "--ckpt", str(workspace / "nothere"),
                     "--grid", "g.binvox", "--out", "o.seg"])
        assert code == 2
        assert "checkpoint-error:" in capsys.readouterr().err

    def test_outputs_confined_to_out_dir(self, workspace):
        # inputs are untouched by training: the dataset directory contents
        # are byte-identical before and after
        data_dir = workspace / "data"
        snapshot = {p.name: p.read_bytes() for p in (data_dir / "shapes").iterdir()}
        ckpt2 = str(workspace / "ckpt2")
        cfg = workspace / "run.cfg"
        assert main(["train", "--config", str(cfg),
                     "--data", str(data_dir / "manifest.txt"), "--out", ckpt2]) == 0
        after = {p.name: p.read_bytes() for p in (data_dir / "shapes").iterdir()}
        assert snapshot == after
