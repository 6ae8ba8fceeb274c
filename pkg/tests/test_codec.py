import numpy as np
import pytest

from r2i.codec import (BYTES_PER_CODE, HEADER_SIZE, ReconCanvas, StreamHeader, _wavefronts,
                       assemble_context, decode_image, encode_image, from_patches, pack_bits,
                       pad_image, payload_bytes, read_header, stream_bpp, to_patches, unpack_bits)
from r2i.data import context_window
from r2i.errors import CorruptStreamError, IntegrityError, InvalidArgument
from r2i.imageio import to_unit
from r2i.models import KINDS, build_inpainting_net, build_model
from r2i.weights import weights_digest


@pytest.fixture(scope="module")
def models():
    out = {k: build_model(k, 3, seed=11, width=0.125) for k in KINDS}
    out["ir2i"] = build_model("ir2i", 3, seed=11, width=0.125, inpaint_k=2)
    return out


class TestBits:
    def test_all_ones(self):
        assert pack_bits(np.ones(8)) == b"\xff"

    def test_alternating(self):
        assert pack_bits([1, -1, 1, -1, 1, -1, 1, -1]) == b"\xaa"

    def test_msb_first(self):
        assert pack_bits([1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, 1]) == b"\x80\x01"

    def test_round_trip_random(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            code = rng.choice([-1.0, 1.0], size=(8, 4, 4)).astype(np.float32)
            data = pack_bits(code)
            assert len(data) == BYTES_PER_CODE
            np.testing.assert_array_equal(unpack_bits(data, code.shape), code)

    def test_rejects_non_binary(self):
        with pytest.raises(InvalidArgument):
            pack_bits([1, 0, -1, 1, 1, 1, 1, 1])

    def test_short_data(self):
        with pytest.raises(CorruptStreamError):
            unpack_bits(b"\x00", (16,))


class TestGeometry:
    def test_pad_and_crop(self):
        img = np.random.default_rng(1).uniform(-1, 1, (3, 33, 33)).astype(np.float32)
        padded, size = pad_image(img)
        assert padded.shape == (3, 64, 64) and size == (33, 33)
        np.testing.assert_array_equal(padded[:, :33, :33], img)
        np.testing.assert_array_equal(padded[:, 40, :33], img[:, 32])  # edge replication
        np.testing.assert_array_equal(padded[:, :33, 63], img[:, :, 32])

    def test_patches_inverse(self):
        img = np.arange(3 * 64 * 96, dtype=np.float32).reshape(3, 64, 96)
        p = to_patches(img)
        assert p.shape == (6, 3, 32, 32)
        np.testing.assert_array_equal(p[4], img[:, 32:, 32:64])  # raster order
        np.testing.assert_array_equal(from_patches(p, 2, 3), img)

    def test_wavefronts(self):
        fronts = _wavefronts(3, 4)
        flat = [rc for f in fronts for rc in f]
        assert sorted(flat) == [(r, c) for r in range(3) for c in range(4)]
        when = {rc: k for k, f in enumerate(fronts) for rc in f}
        for (r, c), k in when.items():
            for dr, dc in ((-1, -1), (-1, 0), (0, -1)):
                if r + dr >= 0 and c + dc >= 0:
                    assert when[(r + dr, c + dc)] < k

    def test_context_needs_neighbours(self):
        canvas = ReconCanvas(2, 2)
        with pytest.raises(InvalidArgument):
            assemble_context(canvas, 1, 1)
        assemble_context(canvas, 0, 0)

    def test_context_matches_training_rule(self):
        img = np.random.default_rng(2).uniform(-1, 1, (3, 64, 96)).astype(np.float32)
        canvas = ReconCanvas(2, 3)
        for r in range(2):
            for c in range(3):
                canvas.put(r, c, img[:, r * 32:(r + 1) * 32, c * 32:(c + 1) * 32])
        ctx = assemble_context(canvas, 1, 2)
        np.testing.assert_array_equal(ctx[0], context_window(img, 32, 64))
        assert not ctx[0, :, 32:, 32:].any()


class TestHeader:
    def test_round_trip(self):
        h = StreamHeader(768, 512, 8, "decoding", b"abcdefgh", False)
        data = h.pack()
        assert len(data) == HEADER_SIZE == 21
        assert StreamHeader.unpack(data) == h
        assert h.grid == (16, 24) and h.n_patches == 384

    @pytest.mark.parametrize("offset,value", [(0, ord("X")), (4, 9), (9, 16), (11, 99)])
    def test_malformed(self, offset, value):
        data = bytearray(StreamHeader(64, 64, 2, "full", bytes(8), False).pack())
        data[offset] = value
        with pytest.raises(CorruptStreamError):
            StreamHeader.unpack(bytes(data))

    def test_short(self):
        with pytest.raises(CorruptStreamError):
            StreamHeader.unpack(b"R2IC")


class TestRate:
    def test_exact_bpp(self):
        for s in range(1, 9):
            h = StreamHeader(96, 64, 8, "decoding", bytes(8), False)
            assert stream_bpp(h, s) == 0.125 * s

    def test_kodak_payload(self):
        assert payload_bytes(16 * 24, 8, False) == 49152

    def test_inpaint_first_unit_holds_two_stages(self):
        assert payload_bytes(10, 1, True) == payload_bytes(10, 2, True) == 320
        assert payload_bytes(10, 3, True) == 480

    def test_kodak_sized_stream(self):
        model = build_model("decoding", 8, seed=0, width=0.0625)
        img = np.random.default_rng(3).integers(0, 256, (512, 768, 3), dtype=np.uint8)
        res = encode_image(model, img)
        assert len(res.stream) - HEADER_SIZE == 49152
        assert stream_bpp(res.header, 8) == 1.0


class TestRoundTrip:
    @pytest.mark.parametrize("kind", KINDS)
    def test_every_stage_exact(self, kind, models, small_images):
        model = models[kind]
        img = small_images[0]
        enc = encode_image(model, img)
        n = enc.header.n_patches
        assert len(enc.stream) == HEADER_SIZE + 3 * n * BYTES_PER_CODE
        for s in (1, 2, 3):
            prefix = enc.stream[:HEADER_SIZE + s * n * BYTES_PER_CODE]
            dec = decode_image(model, prefix, s)
            assert len(dec.recon) == s
            for k in range(s):
                np.testing.assert_array_equal(dec.recon[k], enc.recon[k])
            np.testing.assert_array_equal(dec.pixels(), enc.pixels(s))
            with pytest.raises(CorruptStreamError):
                decode_image(model, prefix[:-1], s)

    def test_odd_size(self, models):
        img = np.random.default_rng(4).integers(0, 256, (45, 70, 3), dtype=np.uint8)
        enc = encode_image(models["decoding"], img)
        assert enc.header.grid == (2, 3) and enc.pixels().shape == (45, 70, 3)
        np.testing.assert_array_equal(decode_image(models["decoding"], enc.stream).pixels(), enc.pixels())

    def test_deterministic(self, models, small_images):
        a = encode_image(models["full"], small_images[1]).stream
        b = encode_image(models["full"], small_images[1]).stream
        assert a == b

    def test_threads_and_chunks_agree(self, models, small_images):
        m = models["prediction"]
        a = encode_image(m, small_images[2])
        b = encode_image(m, small_images[2], threads=3)
        assert a.stream == b.stream
        np.testing.assert_array_equal(decode_image(m, a.stream, threads=3).recon[-1], a.recon[-1])

    def test_float_input(self, models, small_images):
        m = models["residual"]
        assert encode_image(m, small_images[0]).stream == encode_image(m, to_unit(small_images[0])).stream

    def test_stage_range(self, models, small_images):
        with pytest.raises(InvalidArgument):
            encode_image(models["full"], small_images[0], stages=4)
        enc = encode_image(models["full"], small_images[0], stages=2)
        assert read_header(enc.stream).stages == 2
        with pytest.raises(InvalidArgument):
            decode_image(models["full"], enc.stream, 3)

    def test_rejects_inpainting_net(self, small_images):
        with pytest.raises(InvalidArgument):
            encode_image(build_inpainting_net(k=2), small_images[0])


class TestInpaintStreams:
    def test_round_trip_and_contexts(self, models, small_images):
        m = models["ir2i"]
        img = small_images[0]
        enc = encode_image(m, img)
        n = enc.header.n_patches
        assert enc.header.inpaint and len(enc.stream) == HEADER_SIZE + 3 * n * BYTES_PER_CODE
        for s in (2, 3):
            dec = decode_image(m, enc.stream[:HEADER_SIZE + s * n * BYTES_PER_CODE], s)
            for k in range(s):
                np.testing.assert_array_equal(dec.recon[k], enc.recon[k])
            np.testing.assert_array_equal(dec.contexts, enc.contexts)
            np.testing.assert_array_equal(dec.inpaint, enc.inpaint)
        assert enc.contexts.shape == (n, 3, 64, 64)
        assert not enc.contexts[:, :, 32:, 32:].any()

    def test_stage_one_reads_first_unit(self, models, small_images):
        m = models["ir2i"]
        enc = encode_image(m, small_images[1])
        unit = enc.header.n_patches * BYTES_PER_CODE
        dec = decode_image(m, enc.stream[:HEADER_SIZE + 2 * unit], 1)
        np.testing.assert_array_equal(dec.recon[0], enc.recon[0])
        with pytest.raises(CorruptStreamError):
            decode_image(m, enc.stream[:HEADER_SIZE + unit], 1)

    def test_wavefront_threads_bit_identical(self, models, small_images):
        m = models["ir2i"]
        a = encode_image(m, small_images[2])
        b = encode_image(m, small_images[2], threads=3)
        assert a.stream == b.stream
        np.testing.assert_array_equal(a.contexts, b.contexts)
        c = decode_image(m, a.stream, threads=3)
        np.testing.assert_array_equal(c.contexts, a.contexts)
        np.testing.assert_array_equal(c.recon[-1], a.recon[-1])

    def test_needs_two_stages(self, models, small_images):
        with pytest.raises(InvalidArgument):
            encode_image(models["ir2i"], small_images[0], stages=1)


class TestIntegrity:
    def test_digest_mismatch(self, models, small_images):
        enc = encode_image(models["decoding"], small_images[0])
        other = build_model("decoding", 3, seed=12, width=0.125)
        with pytest.raises(IntegrityError):
            decode_image(other, enc.stream)

    def test_kind_mismatch(self, models, small_images):
        enc = encode_image(models["decoding"], small_images[0])
        with pytest.raises(IntegrityError):
            decode_image(models["full"], enc.stream)
        with pytest.raises(IntegrityError):
            decode_image(models["ir2i"], enc.stream)

    def test_more_stages_than_model(self, models, small_images):
        enc = encode_image(models["decoding"], small_images[0])
        short = build_model("decoding", 2, seed=11, width=0.125)
        with pytest.raises(IntegrityError):
            decode_image(short, enc.stream, 2, digest=weights_digest(models["decoding"]))

    def test_explicit_digest(self, models, small_images):
        enc = encode_image(models["decoding"], small_images[0], digest=b"12345678")
        assert read_header(enc.stream).digest == b"12345678"
        decode_image(models["decoding"], enc.stream, digest=b"12345678")
        with pytest.raises(IntegrityError):
            decode_image(models["decoding"], enc.stream)
