import os
import subprocess
import sys

import numpy as np
import pytest

from r2i.cli import main
from r2i.config import dump_defaults
from r2i.imageio import read_image, write_image

TINY = """\
kind = {kind}
stages = 2
iterations = 6
batch_size = 2
width = 0.0625
dataset = synthetic:2
checkpoint_every = 3
inpaint_k = 2
"""


def _train(tmp, name, kind="decoding", extra=(), stages=2):
    conf = tmp / f"{name}.cfg"
    conf.write_text(TINY.format(kind=kind).replace("stages = 2", f"stages = {stages}"))
    out = tmp / name
    code = main(["--deterministic", "train", "--config", str(conf), "--out", str(out), *extra])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    models = {k: _train(tmp, k, k) for k in ("decoding", "full", "ir2i", "inpaint")}
    for k in ("decoding", "full"):
        models[k + "4"] = _train(tmp, k + "4", k, stages=4)
    images = tmp / "images"
    images.mkdir()
    rng = np.random.default_rng(0)
    for i in range(2):
        write_image(str(images / f"im{i}.ppm"), rng.integers(0, 256, (64, 64, 3), dtype=np.uint8))
    return tmp, models, images


def _weights(models, kind):
    return str(models[kind] / "model_final.r2iw")


class TestTrain:
    def test_outputs(self, workspace, capsys):
        tmp, models, _ = workspace
        names = sorted(os.listdir(models["decoding"]))
        assert names == ["loss.csv", "model_000003.r2iw", "model_000006.r2iw", "model_final.r2iw"]

    def test_deterministic_runs_identical(self, workspace):
        tmp, models, _ = workspace
        again = _train(tmp, "again")
        a = (models["decoding"] / "model_final.r2iw").read_bytes()
        assert (again / "model_final.r2iw").read_bytes() == a
        assert (again / "loss.csv").read_text() == (models["decoding"] / "loss.csv").read_text()

    def test_echoes_settings(self, tmp_path, capsys):
        _train(tmp_path, "echo")
        out = capsys.readouterr().out
        assert out.startswith("[train]\n") and "kind = decoding" in out and "iterations = 6" in out

    def test_missing_dataset(self, tmp_path, capsys):
        conf = tmp_path / "bad.cfg"
        conf.write_text(f"iterations = 2\ndataset = {tmp_path / 'nowhere'}\n")
        assert main(["train", "--config", str(conf), "--out", str(tmp_path)]) == 2
        assert "nowhere" in capsys.readouterr().err

    def test_bad_config_line(self, tmp_path, capsys):
        conf = tmp_path / "bad.cfg"
        conf.write_text("iterations = 2\nwhat = 3\n")
        assert main(["train", "--config", str(conf)]) == 2
        assert "bad.cfg:2:" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "none.cfg")]) == 2

    def test_diverged(self, tmp_path, capsys):
        conf = tmp_path / "nan.cfg"
        conf.write_text(TINY.format(kind="decoding") + "lr = nan\n")
        assert main(["train", "--config", str(conf), "--out", str(tmp_path)]) == 1


class TestCodec:
    @pytest.mark.parametrize("kind", ["decoding", "full", "ir2i"])
    def test_encode_decode(self, workspace, kind, capsys):
        tmp, models, images = workspace
        stream, out = tmp / f"{kind}.r2i", tmp / f"{kind}.ppm"
        img = str(images / "im0.ppm")
        assert main(["encode", _weights(models, kind), img, str(stream)]) == 0
        assert len(stream.read_bytes()) == 21 + 2 * 4 * 16  # 4 patches, 16-byte codes
        assert "0.2500 bpp" in capsys.readouterr().out
        assert main(["decode", _weights(models, kind), str(stream), str(out)]) == 0
        assert read_image(str(out)).shape == (64, 64, 3)

    def test_prefix_decode_and_threads(self, workspace):
        tmp, models, images = workspace
        w = _weights(models, "decoding")
        stream = tmp / "p.r2i"
        main(["encode", w, str(images / "im1.ppm"), str(stream)])
        data = stream.read_bytes()
        prefix = tmp / "prefix.r2i"
        prefix.write_bytes(data[:21 + 4 * 16])
        assert main(["decode", w, str(prefix), str(tmp / "a.ppm")]) == 0
        assert main(["--threads", "2", "decode", w, str(stream), str(tmp / "b.ppm"), "--stage", "1"]) == 0
        np.testing.assert_array_equal(read_image(str(tmp / "a.ppm")), read_image(str(tmp / "b.ppm")))

    def test_integrity_exit(self, workspace, capsys):
        tmp, models, images = workspace
        stream = tmp / "i.r2i"
        main(["encode", _weights(models, "decoding"), str(images / "im0.ppm"), str(stream)])
        assert main(["decode", _weights(models, "full"), str(stream), str(tmp / "x.ppm")]) == 3
        assert "integrity" in capsys.readouterr().err

    def test_corrupt_exit(self, workspace):
        tmp, models, images = workspace
        w = _weights(models, "decoding")
        stream = tmp / "c.r2i"
        main(["encode", w, str(images / "im0.ppm"), str(stream)])
        cut = tmp / "cut.r2i"
        cut.write_bytes(stream.read_bytes()[:21 + 10])
        assert main(["decode", w, str(cut), str(tmp / "x.ppm")]) == 4
        cut.write_bytes(b"junk")
        assert main(["decode", w, str(cut), str(tmp / "x.ppm")]) == 4
        bad = tmp / "bad.r2iw"
        bad.write_bytes(b"R2IW\x01")
        assert main(["encode", str(bad), str(images / "im0.ppm"), str(stream)]) == 4

    def test_missing_image(self, workspace, capsys):
        tmp, models, _ = workspace
        assert main(["encode", _weights(models, "decoding"), str(tmp / "none.ppm"), str(tmp / "o")]) == 2


class TestEval:
    def test_sweep_and_baseline(self, workspace, capsys):
        tmp, models, images = workspace
        csv = tmp / "rd.csv"
        assert main(["eval", _weights(models, "full4"), str(images), "--out", str(csv)]) == 0
        assert csv.read_text().splitlines()[0] == "bpp,msssim,msssim_db"
        assert len(csv.read_text().splitlines()) == 5
        assert main(["eval", _weights(models, "decoding4"), str(images), "--baseline", str(csv),
                     "--out", str(tmp / "rd2.csv")]) == 0
        assert "BD-rate savings vs baseline" in capsys.readouterr().out
        assert main(["eval", _weights(models, "decoding4"), str(images), "--baseline",
                     _weights(models, "full4"), "--out", str(tmp / "rd3.csv")]) == 0
        assert (tmp / "rd2.csv").read_text() == (tmp / "rd3.csv").read_text()

    def test_baseline_too_short(self, workspace, capsys):
        tmp, models, images = workspace
        assert main(["eval", _weights(models, "full"), str(images), "--baseline",
                     _weights(models, "decoding"), "--out", str(tmp / "rd4.csv")]) == 2
        assert "at least 4 points" in capsys.readouterr().err

    def test_empty_folder(self, tmp_path, workspace):
        _, models, _ = workspace
        assert main(["eval", _weights(models, "full"), str(tmp_path)]) == 2


class TestInpaint:
    @pytest.mark.parametrize("kind", ["inpaint", "ir2i"])
    def test_side_by_side(self, workspace, kind, capsys):
        tmp, models, images = workspace
        out = tmp / f"side_{kind}.ppm"
        assert main(["inpaint", _weights(models, kind), str(images / "im0.ppm"), str(out)]) == 0
        assert read_image(str(out)).shape == (64, 128, 3)
        assert "mean SSIM" in capsys.readouterr().out

    def test_rejects_plain_codec(self, workspace):
        tmp, models, images = workspace
        assert main(["inpaint", _weights(models, "full"), str(images / "im0.ppm"), str(tmp / "o.ppm")]) == 2


class TestMisc:
    def test_dump_defaults(self, capsys):
        assert main(["--dump-defaults"]) == 0
        assert capsys.readouterr().out == dump_defaults()

    def test_no_command(self, capsys):
        assert main([]) == 2

    def test_bad_flag(self):
        with pytest.raises(SystemExit) as info:
            main(["paramcount"])
        assert info.value.code == 2

    def test_paramcount_reference(self, capsys):
        assert main(["paramcount", "--kind", "decoding"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[-1].startswith("reference ") and "%" in lines[-1]
        assert int(lines[-2]) > 0

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "r2i", "paramcount", "--kind", "full",
                              "--stages", "1", "--width", "0.125"], capture_output=True, text=True)
        assert res.returncode == 0 and "[paramcount]" in res.stdout
