import numpy as np
import pytest

from r2i import config as cfg
from r2i.errors import CorruptStreamError, InvalidArgument
from r2i.imageio import (decode_ppm, encode_ppm, list_images, read_image, to_pixels, to_unit,
                         write_image)
from r2i.models import build_inpainting_net, build_model
from r2i.training import TrainConfig
from r2i.weights import (deserialize_weights, load_weights, parse_weights, save_weights,
                         serialize_weights, weights_digest)


@pytest.fixture
def pixels():
    return np.random.default_rng(0).integers(0, 256, (20, 30, 3), dtype=np.uint8)


class TestImages:
    def test_unit_round_trip(self, pixels):
        u = to_unit(pixels)
        assert u.shape == (3, 20, 30) and u.dtype == np.float32
        assert u.min() >= -1 and u.max() <= 1
        np.testing.assert_array_equal(to_pixels(u), pixels)

    def test_to_pixels_clamps(self):
        px = to_pixels(np.array([[[-3.0, 3.0]]] * 3))
        assert px[0, 0].tolist() == [0, 0, 0] and px[0, 1].tolist() == [255, 255, 255]

    def test_ppm_round_trip(self, pixels, tmp_path):
        np.testing.assert_array_equal(decode_ppm(encode_ppm(pixels)), pixels)
        path = str(tmp_path / "a.ppm")
        write_image(path, pixels)
        np.testing.assert_array_equal(read_image(path), pixels)

    def test_ppm_comments(self, pixels):
        data = encode_ppm(pixels).replace(b"P6\n", b"P6\n# made by hand\n", 1)
        np.testing.assert_array_equal(decode_ppm(data), pixels)

    def test_png_round_trip(self, pixels, tmp_path):
        pytest.importorskip("PIL")
        path = str(tmp_path / "a.png")
        write_image(path, pixels)
        np.testing.assert_array_equal(read_image(path), pixels)

    @pytest.mark.parametrize("data", [b"P3\n1 1\n255\n\x00\x00\x00", b"P6\n1 1\n65535\n" + bytes(6),
                                      b"P6\n2 2\n255\n" + bytes(5), b"P6\n2"])
    def test_bad_ppm(self, data):
        with pytest.raises(InvalidArgument):
            decode_ppm(data)

    def test_list_images(self, pixels, tmp_path):
        for name in ("b.ppm", "a.PNG", "notes.txt"):
            (tmp_path / name).write_bytes(b"")
        assert [p.rsplit("/", 1)[1] for p in list_images(str(tmp_path))] == ["a.PNG", "b.ppm"]
        with pytest.raises(InvalidArgument):
            list_images(str(tmp_path / "missing"))


class TestWeights:
    @pytest.mark.parametrize("make", [
        lambda: build_model("full", 2, seed=3, width=0.125),
        lambda: build_model("ir2i", 2, seed=3, width=0.125, inpaint_k=2),
        lambda: build_inpainting_net(seed=3, k=2),
    ])
    def test_bit_exact_round_trip(self, make, tmp_path):
        model = make()
        data = serialize_weights(model)
        back = deserialize_weights(data)
        assert serialize_weights(back) == data
        path = str(tmp_path / "m.r2iw")
        digest = save_weights(model, path)
        loaded, d2 = load_weights(path)
        assert digest == d2 == weights_digest(model) and len(digest) == 8
        assert serialize_weights(loaded) == data

    def test_digest_tracks_values(self):
        m = build_model("decoding", 1, seed=0, width=0.125)
        d = weights_digest(m)
        m.params["s1/conv_1/weight"].data[0, 0, 0, 0] += 1e-3
        assert weights_digest(m) != d

    def test_header_fields(self):
        h, arrays = parse_weights(serialize_weights(build_model("residual", 2, seed=7, width=0.125)))
        assert h["kind"] == "residual" and h["stages"] == 2 and h["seed"] == 7
        assert all(a.dtype == np.float32 for a in arrays.values())

    @pytest.mark.parametrize("mutate", [
        lambda d: b"XXXX" + d[4:],
        lambda d: d[:4] + b"\x09" + d[5:],
        lambda d: d[:5] + b"\xee" + d[6:],
        lambda d: d[:-1],
        lambda d: d + b"\x00",
        lambda d: d[:30],
    ])
    def test_corrupt(self, mutate):
        data = serialize_weights(build_model("decoding", 1, seed=0, width=0.125))
        with pytest.raises(CorruptStreamError):
            parse_weights(mutate(data))


class TestConfig:
    def test_parse_and_build(self):
        text = "kind = full\n# comment\n[train]\niterations = 50\nlr_drops = 10, 30\n[codec]\nthreads = 2\n"
        parsed = cfg.parse(text)
        tc = cfg.train_config(parsed)
        assert tc.kind == "full" and tc.iterations == 50 and tc.lr_drops == (10, 30)
        assert cfg.section_values(parsed, "codec", cfg.CODEC_DEFAULTS)["threads"] == 2

    @pytest.mark.parametrize("text,line", [
        ("kind = full\n[bogus]\n", 2),
        ("\n\nnot a setting\n", 3),
        ("iterations = 5\nspeed = 3\n", 2),
        ("seed = 1\nseed = 2\n", 2),
        ("[train\n", 1),
    ])
    def test_parse_errors_name_line(self, text, line):
        with pytest.raises(cfg.ConfigError) as info:
            cfg.parse(text, "x.cfg")
        assert info.value.line == line and f"x.cfg:{line}:" in str(info.value)

    def test_bad_value_names_line(self):
        parsed = cfg.parse("kind = full\niterations = many\n")
        with pytest.raises(cfg.ConfigError) as info:
            cfg.train_config(parsed)
        assert info.value.line == 2

    def test_invalid_combination(self):
        with pytest.raises(cfg.ConfigError):
            cfg.train_config(cfg.parse("iterations = 10\nlr_drops = 20\n"))

    def test_overrides(self):
        tc = cfg.train_config(cfg.parse("seed = 1\n"), seed=5, out_dir=None)
        assert tc.seed == 5

    def test_dump_defaults_round_trip(self):
        parsed = cfg.parse(cfg.dump_defaults())
        assert cfg.train_config(parsed) == TrainConfig()
        assert cfg.section_values(parsed, "codec", cfg.CODEC_DEFAULTS) == cfg.CODEC_DEFAULTS
        assert cfg.section_values(parsed, "eval", cfg.EVAL_DEFAULTS) == cfg.EVAL_DEFAULTS

    def test_missing_file(self, tmp_path):
        with pytest.raises(cfg.ConfigError):
            cfg.load(str(tmp_path / "none.cfg"))
