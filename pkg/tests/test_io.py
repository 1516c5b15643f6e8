import numpy as np
import pytest
from PIL import Image

from rival.errors import ConfigParseError, FormatError, InvalidInputError
from rival.io import (
    PixelCodec,
    RunConfig,
    atomic_write_text,
    decode_latent,
    encode_latent,
    load_image,
    load_mask,
    parse_config,
    parse_config_text,
    save_image,
)
from rival.latent import seeded_rng
from rival.pipeline import RivalConfig


class TestConfig:
    def test_defaults(self):
        cfg = parse_config_text("")
        assert cfg == RunConfig()
        assert cfg.rival() == RivalConfig()
        assert cfg.schedule().inference_steps == 50

    def test_values_and_comments(self):
        cfg = parse_config_text("# run\nm = 3.5\n\nt_align = 20  # fuse earlier\nattention_fusion = false\n")
        assert cfg.m == 3.5 and cfg.t_align == 20 and cfg.attention_fusion is False

    def test_overrides_win(self):
        cfg = parse_config_text("seed = 3\n", {"seed": "9"})
        assert cfg.seed == 9

    def test_unknown_key(self):
        with pytest.raises(ConfigParseError, match="line 2: unknown key 'mm'"):
            parse_config_text("m = 2\nmm = 3\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigParseError, match="line 3: duplicate key"):
            parse_config_text("m = 2\n\nm = 3\n")

    def test_bad_value(self):
        with pytest.raises(ConfigParseError, match="line 1"):
            parse_config_text("t_align = thirty\n")
        with pytest.raises(ConfigParseError, match="line 1"):
            parse_config_text("init_mode = sideways\n")
        with pytest.raises(ConfigParseError, match="line 1"):
            parse_config_text("not a pair\n")

    def test_range_violation_names_line(self):
        with pytest.raises(ConfigParseError) as info:
            parse_config_text("seed = 1\nt_align = 60\n")
        assert str(info.value) == "line 2: t_align = 60 violates 0 <= t_align <= T = 50"
        assert info.value.line == 2

    def test_range_checked_against_configured_T(self):
        with pytest.raises(ConfigParseError, match="T = 20"):
            parse_config_text("inference_steps = 20\nt_early = 30\n")

    def test_text_round_trip(self):
        cfg = parse_config_text("m = 2.25\ndenoiser.mu0 = 0.1,0.2,0.3\nnoise_alignment = no\n")
        assert parse_config_text(cfg.to_text()) == cfg

    def test_file(self, tmp_path):
        (tmp_path / "run.cfg").write_text("m = 1\n")
        assert parse_config(tmp_path / "run.cfg").m == 1.0
        with pytest.raises(InvalidInputError):
            parse_config(tmp_path / "missing.cfg")


class TestImages:
    def test_round_trip(self, tmp_path):
        img = seeded_rng(0).integers(0, 256, (5, 7, 3)).astype(np.uint8)
        save_image(img, tmp_path / "a.png")
        assert np.array_equal(load_image(tmp_path / "a.png"), img)

    def test_rejects_grayscale(self, tmp_path):
        Image.fromarray(np.zeros((4, 4), np.uint8), mode="L").save(tmp_path / "g.png")
        with pytest.raises(FormatError, match="mode"):
            load_image(tmp_path / "g.png")

    def test_corrupt_header(self, tmp_path):
        (tmp_path / "bad.png").write_bytes(b"\x89PNG\r\n\x1a\nthis is not a png")
        with pytest.raises(FormatError):
            load_image(tmp_path / "bad.png")

    def test_not_png(self, tmp_path):
        Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(tmp_path / "x.bmp")
        with pytest.raises(FormatError, match="PNG"):
            load_image(tmp_path / "x.bmp")

    def test_save_rejects_float(self, tmp_path):
        with pytest.raises(FormatError):
            save_image(np.zeros((2, 2, 3)), tmp_path / "f.png")

    def test_mask_any_channel(self, tmp_path):
        m = np.zeros((4, 4, 3), np.uint8)
        m[0, 0, 2] = 1
        m[3, 3] = 255
        save_image(m, tmp_path / "m.png")
        mask = load_mask(tmp_path / "m.png")
        assert mask.dtype == bool and mask.sum() == 2 and mask[0, 0] and mask[3, 3]

    def test_atomic_write_replaces(self, tmp_path):
        atomic_write_text(tmp_path / "f.txt", "one")
        atomic_write_text(tmp_path / "f.txt", "two")
        assert (tmp_path / "f.txt").read_text() == "two"
        assert [p.name for p in tmp_path.iterdir()] == ["f.txt"]


class TestCodec:
    def test_endpoints(self):
        raster = np.array([[[0, 255, 128]]], np.uint8)
        x = encode_latent(raster)
        assert x.shape == (3, 1, 1)
        assert x[0, 0, 0] == -1.0 and x[1, 0, 0] == 1.0
        assert x[2, 0, 0] == pytest.approx(128 / 127.5 - 1)

    def test_round_trip_all_levels(self):
        raster = np.repeat(np.arange(256, dtype=np.uint8)[None, :, None], 3, axis=2)
        assert np.array_equal(decode_latent(encode_latent(raster)), raster)

    def test_decode_clamps(self):
        out = decode_latent(np.array([[[-3.0, 2.0, 0.0]]] * 3))
        assert out[0].tolist() == [[0, 0, 0], [255, 255, 255], [128, 128, 128]]

    def test_channel_mismatch(self):
        from rival.errors import ConfigurationError

        with pytest.raises(ConfigurationError):
            PixelCodec(3).encode(np.zeros((2, 2, 4), np.uint8))
