import csv

import numpy as np
import pytest

from turbrestore.cli import main
from turbrestore.imageio import load_image, read_flow
from turbrestore.simulate import read_manifest, test_card
from turbrestore.imageio import save_image
from turbrestore.temporal import temporal_filter

FAST_RESTORE = ["--kernel-size", "5", "--deconv-iters", "2", "--reg-iters", "5"]


@pytest.fixture(scope="module")
def simdir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim") / "run"
    assert main(["simulate", "--input", "testcard:32", "--out", str(out), "--frames", "3", "--seed", "7",
                 "--blur-sigma", "0.8", "--warp-amplitude", "1", "--noise-sigma", "0.005"]) == 0
    return out


def test_simulate_layout(simdir):
    names = sorted(p.name for p in simdir.iterdir())
    assert names == ["clean.png", "frame_0000.png", "frame_0001.png", "frame_0002.png", "kernel.pgm",
                     "manifest.txt", "warp_0000.flo", "warp_0001.flo", "warp_0002.flo"]
    m = read_manifest(simdir / "manifest.txt")
    assert m["seed"] == "7" and m["frames"] == "3" and m["command"] == "simulate"
    assert read_flow(simdir / "warp_0000.flo").shape == (2, 32, 32)


def test_simulate_repeat_is_identical(simdir, tmp_path):
    out = tmp_path / "again"
    main(["simulate", "--input", "testcard:32", "--out", str(out), "--frames", "3", "--seed", "7",
          "--blur-sigma", "0.8", "--warp-amplitude", "1", "--noise-sigma", "0.005"])
    for p in simdir.iterdir():
        if p.name != "manifest.txt":
            assert (out / p.name).read_bytes() == p.read_bytes(), p.name


def test_missing_input_is_usage_error(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path)]) == 2
    assert "usage" in capsys.readouterr().err


def test_unreadable_input_is_runtime_error(tmp_path, capsys):
    assert main(["simulate", "--input", str(tmp_path / "nope.png"), "--out", str(tmp_path / "o")]) == 1
    assert capsys.readouterr().err


@pytest.mark.parametrize("mode", ["median", "mean"])
def test_tfilter_matches_library(simdir, tmp_path, mode):
    out = tmp_path / "f.png"
    assert main(["tfilter", "--frames", str(simdir), "--mode", mode, "--out", str(out)]) == 0
    frames = [load_image(simdir / f"frame_{n:04d}.png") for n in range(3)]
    lib = tmp_path / "lib.png"
    save_image(temporal_filter(frames, mode), lib)
    assert out.read_bytes() == lib.read_bytes()


def test_tfilter_empty_dir(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert main(["tfilter", "--frames", str(tmp_path / "empty"), "--out", str(tmp_path / "x.png")]) == 2
    assert "no frames found" in capsys.readouterr().err


def test_deconv_defaults_and_trace(tmp_path, capsys):
    src = tmp_path / "in.png"
    save_image(test_card(24), src)
    out = tmp_path / "out.png"
    assert main(["deconv", "--input", str(src), "--out", str(out), "--kernel-size", "3", "--iters", "2"]) == 0
    assert "energy=" in capsys.readouterr().out
    m = read_manifest(tmp_path / "out_manifest.txt")
    assert float(m["arg.alpha1"]) == 1e-5 and float(m["arg.alpha2"]) == 1e-3
    assert (tmp_path / "out_kernel.pgm").is_file()
    with open(tmp_path / "out_energy.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iteration", "energy"]
    its = [int(r[0]) for r in rows[1:]]
    assert its == list(range(len(its))) and len(its) >= 2


@pytest.mark.parametrize("value", ["0", "-1"])
def test_deconv_rejects_nonpositive_alpha(tmp_path, value):
    assert main(["deconv", "--input", "x.png", "--out", str(tmp_path / "o.png"), "--alpha1", value]) == 2


def test_register_same_image(simdir, tmp_path, capsys):
    ref = str(simdir / "clean.png")
    out = tmp_path / "w.png"
    assert main(["register", "--moving", ref, "--reference", ref, "--out-warped", str(out),
                 "--out-map", str(tmp_path / "m.flo")]) == 0
    text = capsys.readouterr().out
    assert "energy=0.0" in text
    assert out.read_bytes() == (simdir / "clean.png").read_bytes()
    assert not read_flow(tmp_path / "m.flo").any()


def test_register_box_warning(simdir, tmp_path, capsys):
    # two frames share the blur, so identity is not a local minimum of the discrete energy
    code = main(["register", "--moving", str(simdir / "frame_0000.png"), "--reference", str(simdir / "frame_0001.png"),
                 "--out-warped", str(tmp_path / "w.png"), "--alpha", "0.5", "--reg-iters", "2"])
    assert code == 0
    err = capsys.readouterr().err
    assert "warning" in err and "alpha" in err


def test_register_no_decrease_exit_code(simdir, tmp_path, capsys):
    # the frame is blurrier than the clean image and any sub-pixel resample blurs further
    code = main(["register", "--moving", str(simdir / "frame_0000.png"), "--reference", str(simdir / "clean.png"),
                 "--out-warped", str(tmp_path / "w.png")])
    assert code == 1
    assert "RegistrationError" in capsys.readouterr().err


def test_register_defaults():
    from turbrestore.cli import build_parser
    a = build_parser().parse_args(["register", "--moving", "a", "--reference", "b", "--out-warped", "c"])
    assert (a.alpha, a.gamma) == (0.01, 0.7)
    r = build_parser().parse_args(["restore", "--frames", "d", "--pipeline", "frd", "--out", "o"])
    assert (r.iterations, r.alpha1, r.alpha2, r.alpha, r.gamma) == (1, 2e-2, 1.0, 0.01, 0.7)


@pytest.mark.parametrize("pipeline, count", [("frd", 1), ("dfr", 3)])
def test_restore_outputs(simdir, tmp_path, pipeline, count):
    out = tmp_path / pipeline
    assert main(["restore", "--frames", str(simdir), "--pipeline", pipeline, "--out", str(out), "-K", "2",
                 "--threads", "1"] + FAST_RESTORE) == 0
    m = read_manifest(out / "manifest.txt")
    assert m["deconvolutions"] == str(count)
    assert m["references"] == "3" and m["dropped_frames"] == ""
    for k in range(3):
        assert (out / f"reference_{k:02d}.png").is_file()
    with open(out / "registration_energies.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iteration", "frame", "file", "energy"] and len(rows) == 1 + 2 * 3
    assert load_image(out / "restored.png").shape == (32, 32)


def test_score(simdir, tmp_path, capsys):
    assert main(["score", "--restored", str(simdir / "clean.png"), "--truth-dir", str(simdir)]) == 0
    assert capsys.readouterr().out == "psnr_db=inf\n"
    csv_path = tmp_path / "s.csv"
    assert main(["score", "--restored", str(simdir / "frame_0000.png"), "--truth-dir", str(simdir),
                 "--map", str(simdir / "warp_0000.flo"), "--kernel", str(simdir / "kernel.pgm"),
                 "--csv", str(csv_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [ln.split("=")[0] for ln in lines] == ["psnr_db", "mean_endpoint_error_px", "kernel_correlation"]
    assert lines[1] == "mean_endpoint_error_px=0.000000"
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and rows[0]["restored"].endswith("frame_0000.png")


def test_score_missing_truth(tmp_path, simdir, capsys):
    assert main(["score", "--restored", str(simdir / "clean.png"), "--truth-dir", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "clean.png" in err and "manifest.txt" in err


def test_config_file_precedence(tmp_path):
    conf = tmp_path / "c.txt"
    conf.write_text("seed=5\nframes=2\ninput=testcard:16\nwarp-amplitude=0.5\n")
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", str(conf), "--out", str(out1)]) == 0
    m = read_manifest(out1 / "manifest.txt")
    assert (m["seed"], m["frames"], m["warp_amplitude"]) == ("5", "2", "0.5")
    assert main(["simulate", "--config", str(conf), "--out", str(out2), "--seed", "9"]) == 0
    assert read_manifest(out2 / "manifest.txt")["seed"] == "9"


def test_config_unknown_key(tmp_path):
    conf = tmp_path / "c.txt"
    conf.write_text("bogus=1\n")
    assert main(["simulate", "--config", str(conf), "--input", "testcard:16", "--out", str(tmp_path / "o")]) == 2


def test_inputs_not_mutated(simdir, tmp_path):
    before = {p.name: p.read_bytes() for p in simdir.iterdir()}
    main(["tfilter", "--frames", str(simdir), "--out", str(tmp_path / "t.png")])
    main(["score", "--restored", str(simdir / "frame_0001.png"), "--truth-dir", str(simdir)])
    assert {p.name: p.read_bytes() for p in simdir.iterdir()} == before
