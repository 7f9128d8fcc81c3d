import json

import numpy as np
import pytest

from bisplat import cli, data
from bisplat.desk import DESK_SCENE
from bisplat.model import profile_config
from bisplat.train import load_checkpoint


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "scene.txt").write_text(DESK_SCENE)
    assert cli.main(["synth", "--scene", str(root / "scene.txt"), "--out", str(root / "ds"),
                     "--train", "6", "--test", "3", "--seed", "1"]) == 0
    assert cli.main(["train", "--data", str(root / "ds"), "--out", str(root / "m.ckpt"), "--profile", "desk",
                     "--n-primitives", "30", "--steps", "2", "--log", str(root / "log.jsonl")]) == 0
    return root


def test_synth_counts_and_summary(workdir, capsys, tmp_path):
    assert len(list((workdir / "ds" / "spectra").iterdir())) == 9
    assert cli.main(["synth", "--scene", str(workdir / "scene.txt"), "--out", str(tmp_path / "d"),
                     "--train", "64", "--test", "16"]) == 0
    out = capsys.readouterr().out
    assert "80 samples" in out and "wavelength" in out
    assert len(list((tmp_path / "d" / "spectra").iterdir())) == 80


def test_synth_missing_scene(capsys, tmp_path):
    assert cli.main(["synth", "--scene", str(tmp_path / "missing.txt"), "--out", str(tmp_path / "o")]) == 1
    assert "missing.txt" in capsys.readouterr().err


def test_synth_deterministic(workdir, tmp_path):
    cli.main(["synth", "--scene", str(workdir / "scene.txt"), "--out", str(tmp_path / "again"),
              "--train", "6", "--test", "3", "--seed", "1"])
    for name in ("positions.csv", "split.csv", "spectra/4.f32"):
        assert (tmp_path / "again" / name).read_bytes() == (workdir / "ds" / name).read_bytes()


def test_train_writes_loadable_checkpoint(workdir):
    st = load_checkpoint(workdir / "m.ckpt")
    assert st.step == 2 and st.model.cfg.n_primitives == 30
    recs = [json.loads(l) for l in (workdir / "log.jsonl").read_text().splitlines()]
    assert [r["step"] for r in recs] == [1, 2] and all("wall_time" in r for r in recs)


def test_train_bypass_and_resume(workdir, tmp_path):
    ck = tmp_path / "b.ckpt"
    assert cli.main(["train", "--data", str(workdir / "ds"), "--out", str(ck), "--profile", "desk",
                     "--n-primitives", "30", "--steps", "1", "--bypass", "bst", "--bypass", "delta",
                     "--log", str(tmp_path / "l")]) == 0
    st = load_checkpoint(ck)
    assert st.bypass.bst and st.bypass.delta and not st.bypass.dynamic
    assert cli.main(["train", "--data", str(workdir / "ds"), "--out", str(tmp_path / "c.ckpt"), "--resume", str(ck),
                     "--steps", "2", "--log", str(tmp_path / "l2")]) == 0
    assert load_checkpoint(tmp_path / "c.ckpt").step == 2
    assert cli.main(["train", "--data", str(workdir / "ds"), "--out", str(tmp_path / "d.ckpt"), "--resume", str(ck),
                     "--profile", "plus", "--log", str(tmp_path / "l3")]) == 1


def test_plus_profile():
    cfg = profile_config("plus")
    assert cfg.n_primitives == 2000
    assert (cfg.head.depth, cfg.head.width) == (12, 256)
    assert (cfg.encoder.n_layers, cfg.encoder.ffn_width, cfg.encoder.width) == (6, 512, 256)


def test_eval_reports(workdir, capsys):
    assert cli.main(["eval", "--data", str(workdir / "ds"), "--ckpt", str(workdir / "m.ckpt"),
                     "--cdf", str(workdir / "cdf.csv"), "--metrics", str(workdir / "m.jsonl")]) == 0
    out = capsys.readouterr().out
    assert "median_ssim" in out and "mean_ssim" in out
    rows = (workdir / "cdf.csv").read_text().splitlines()
    assert rows[0] == "id,ssim,cdf" and len(rows) == 4
    vals = [float(r.split(",")[1]) for r in rows[1:]]
    assert vals == sorted(vals)
    recs = [json.loads(l) for l in (workdir / "m.jsonl").read_text().splitlines()]
    assert len(recs) == 3 and set(recs[0]) == {"id", "ssim", "l1"}


def test_eval_profile_mismatch_and_missing(workdir, tmp_path):
    assert cli.main(["eval", "--data", str(workdir / "ds"), "--ckpt", str(workdir / "m.ckpt"),
                     "--profile", "plus"]) == 1
    assert cli.main(["eval", "--data", str(workdir / "ds"), "--ckpt", str(tmp_path / "none.ckpt")]) == 1
    assert cli.main(["eval", "--data", str(tmp_path), "--ckpt", str(workdir / "m.ckpt")]) == 1


def test_render_round_trip(workdir):
    out = workdir / "r.pgm"
    assert cli.main(["render", "--ckpt", str(workdir / "m.ckpt"), "--tx", "0.1,-0.2,0.3", "--out", str(out),
                     "--raw", str(workdir / "r.f32"), "--tile-dump", str(workdir / "tiles.txt")]) == 0
    img = data.read_pgm(out)
    raw = data.read_f32(workdir / "r.f32")
    assert img.shape == raw.shape == (360, 90)
    assert np.abs(img - np.clip(raw, 0, 1)).max() <= 0.5 / 255 + 1e-6
    assert (workdir / "tiles.txt").read_text().startswith("# tiles")
    assert cli.main(["render", "--ckpt", str(workdir / "m.ckpt"), "--tx", "1,2", "--out", str(out)]) == 1


def test_verify_bilinear(capsys):
    assert cli.main(["verify", "--suite", "bilinear"]) == 0
    out = capsys.readouterr().out
    assert "partition of unity" in out and "FAIL" not in out


def test_unknown_suite_and_subcommand():
    with pytest.raises(SystemExit) as exc:
        cli.main(["verify", "--suite", "everything"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit):
        cli.main(["fly"])


@pytest.mark.parametrize("cmd", ["synth", "train", "eval", "render", "verify"])
def test_help_lists_defaults(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main([cmd, "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    parser = cli.build_parser()
    sub = parser._subparsers._group_actions[0].choices[cmd]
    for action in sub._actions:
        if action.option_strings and action.dest != "help":
            assert action.option_strings[-1] in out
            if not action.required:
                assert "default" in (action.help or ""), action.dest


def test_config_file_unknown_key(workdir, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("train.speed=3\n")
    assert cli.main(["train", "--data", str(workdir / "ds"), "--out", str(tmp_path / "x"), "--config", str(cfg)]) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_exit_code(workdir, tmp_path, capsys):
    cfg = tmp_path / "explode.cfg"
    cfg.write_text("train.lr_opacity=1e30\ntrain.lr_shape=1e30\ntrain.lr_networks=1e30\n")
    code = cli.main(["train", "--data", str(workdir / "ds"), "--out", str(tmp_path / "e.ckpt"), "--config", str(cfg),
                     "--profile", "desk", "--n-primitives", "20", "--steps", "5", "--log", str(tmp_path / "l")])
    assert code == 2
    err = capsys.readouterr().err
    assert "diagnostics" in err and (tmp_path / "e.ckpt.diag.npz").exists()
