import struct

import numpy as np
import pytest

from salnet.errors import (
    CheckpointFormatError,
    FixationValidationError,
    IncompatibleCheckpointError,
    InvalidArgumentError,
    ParseError,
    TruncatedFileError,
)
from salnet.io import (
    DatasetManifest,
    ManifestEntry,
    load_checkpoint,
    load_fixations,
    load_gt_map,
    load_image,
    load_manifest,
    read_pgm,
    read_ppm,
    save_checkpoint,
    write_pgm,
    write_ppm,
)
from salnet.layers import Network
from salnet.metrics import FixationSet


def ppm_bytes(h, w, fill=255):
    return b"P6\n%d %d\n255\n" % (w, h) + bytes([fill]) * (h * w * 3)


def pgm_bytes(h, w, fill):
    return b"P5\n%d %d\n255\n" % (w, h) + bytes([fill]) * (h * w)


# --- images ---------------------------------------------------------------


def test_white_ppm(tmp_path):
    (tmp_path / "w.ppm").write_bytes(ppm_bytes(96, 96))
    x = load_image(tmp_path / "w.ppm")
    assert x.shape == (1, 3, 96, 96) and np.all(x == 1.0)


def test_large_ppm_is_resized(tmp_path):
    (tmp_path / "big.ppm").write_bytes(ppm_bytes(192, 192, 51))
    x = load_image(tmp_path / "big.ppm", channel_means=(0.1, 0.2, 0.0))
    assert x.shape == (1, 3, 96, 96)
    np.testing.assert_allclose(x[0, 0], 0.2 - 0.1, atol=1e-15)
    np.testing.assert_allclose(x[0, 1], 0.0, atol=1e-15)


def test_ppm_channel_order(tmp_path):
    img = np.zeros((2, 3, 3))
    img[..., 0] = 1.0
    img[1, 2] = (0.0, 0.0, 1.0)
    write_ppm(tmp_path / "c.ppm", img)
    back = read_ppm(tmp_path / "c.ppm")
    np.testing.assert_array_equal(back, img)


def test_header_comments_are_skipped(tmp_path):
    data = b"P5\n# a comment\n2 1\n# another\n255\n" + bytes([0, 255])
    (tmp_path / "c.pgm").write_bytes(data)
    assert read_pgm(tmp_path / "c.pgm").tolist() == [[0.0, 1.0]]


def test_bad_magic_names_offset(tmp_path):
    (tmp_path / "bad.ppm").write_bytes(b"P3\n1 1\n255\n" + bytes(3))
    with pytest.raises(ParseError, match="offset 0"):
        load_image(tmp_path / "bad.ppm")


@pytest.mark.parametrize(
    "data", [b"P6\n", b"P6\nx 1\n255\n", b"P6\n1 1 65535\n", b"P6\n0 4\n255\n", b"P61 1 255\n"]
)
def test_malformed_headers(tmp_path, data):
    (tmp_path / "m.ppm").write_bytes(data)
    with pytest.raises(ParseError):
        read_ppm(tmp_path / "m.ppm")


def test_truncated_payload(tmp_path):
    (tmp_path / "t.ppm").write_bytes(ppm_bytes(4, 4)[:-5])
    with pytest.raises(TruncatedFileError):
        load_image(tmp_path / "t.ppm")
    with pytest.raises(OSError):
        read_ppm(tmp_path / "t.ppm")


@pytest.mark.parametrize("fill,value", [(255, 1.0), (0, 0.0), (128, 128 / 255)])
def test_gt_map_scaling(tmp_path, fill, value):
    (tmp_path / "g.pgm").write_bytes(pgm_bytes(10, 12, fill))
    m = load_gt_map(tmp_path / "g.pgm", 10, 12)
    assert m.shape == (10, 12)
    np.testing.assert_allclose(m, value, rtol=0, atol=1e-15)
    assert load_gt_map(tmp_path / "g.pgm", 48, 48).shape == (48, 48)


def test_pgm_roundtrip_with_half_up_rounding(tmp_path):
    m = np.array([[0.0, 0.5 / 255, 1.5 / 255, 1.0, 2.0, -1.0]])
    write_pgm(tmp_path / "r.pgm", m)
    raw = (tmp_path / "r.pgm").read_bytes()
    assert raw.startswith(b"P5\n6 1\n255\n")
    assert list(raw[-6:]) == [0, 1, 2, 255, 255, 0]


# --- fixations --------------------------------------------------------------


def test_fixations(tmp_path):
    p = tmp_path / "f.txt"
    p.write_text("0,0\n5,7\n")
    fix = load_fixations(p, (10, 10))
    assert len(fix) == 2 and fix.points.tolist() == [[0, 0], [5, 7]]
    p.write_text("12,0\n")
    with pytest.raises(FixationValidationError):
        load_fixations(p, (10, 10))
    p.write_text("")
    assert len(load_fixations(p, (10, 10))) == 0
    p.write_text("1,1\n2,x\n")
    with pytest.raises(ParseError, match=":2:"):
        load_fixations(p, (10, 10))
    p.write_text("1,1,1\n")
    with pytest.raises(ParseError, match=":1:"):
        load_fixations(p, (10, 10))


# --- manifest ----------------------------------------------------------------


def _touch_sample(root, stem):
    (root / f"{stem}.ppm").write_bytes(ppm_bytes(4, 6))
    (root / f"{stem}.pgm").write_bytes(pgm_bytes(4, 6, 10))
    (root / f"{stem}.fix").write_text("1,1\n")


def test_manifest_roundtrip(tmp_path):
    for s in ("a", "b"):
        _touch_sample(tmp_path, s)
    text = "# comment\n\na.ppm\ta.pgm\ta.fix\t4\t6\nb.ppm\tb.pgm\tb.fix\t4\t6\ttest\n"
    (tmp_path / "m.tsv").write_text(text)
    man = load_manifest(tmp_path / "m.tsv")
    assert [e.split for e in man.entries] == ["train", "test"]
    assert man.entries[0].image == tmp_path / "a.ppm" and man.entries[0].frame == (4, 6)
    assert man.select("test")[0].gt_map == tmp_path / "b.pgm"
    man.write(tmp_path / "copy.tsv")
    assert load_manifest(tmp_path / "copy.tsv").entries == man.entries


@pytest.mark.parametrize(
    "line,exc",
    [
        ("a.ppm\ta.pgm\ta.fix\t4\n", ParseError),
        ("a.ppm\ta.pgm\ta.fix\tfour\t6\n", ParseError),
        ("a.ppm\ta.pgm\ta.fix\t0\t6\n", ParseError),
        ("a.ppm\ta.pgm\ta.fix\t4\t6\tholdout\n", ParseError),
        ("a.ppm\tmissing.pgm\ta.fix\t4\t6\n", InvalidArgumentError),
    ],
)
def test_manifest_errors(tmp_path, line, exc):
    _touch_sample(tmp_path, "a")
    (tmp_path / "m.tsv").write_text(line)
    with pytest.raises(exc, match="m.tsv:1"):
        load_manifest(tmp_path / "m.tsv")


# --- checkpoints ----------------------------------------------------------------


@pytest.fixture(scope="module")
def net():
    return Network.initialize(11)


def test_checkpoint_roundtrip_bit_exact(tmp_path, net):
    path = tmp_path / "n.ckpt"
    save_checkpoint(net, path, config={"seed": 11, "epochs": 3}, channel_means=(0.1, 0.2, 0.3))
    ck = load_checkpoint(path)
    assert ck.version == 1 and ck.config == {"seed": 11, "epochs": 3}
    assert ck.channel_means.tolist() == [0.1, 0.2, 0.3]
    for name, arr in net.blocks().items():
        assert ck.network.blocks()[name].tobytes() == arr.tobytes()
    save_checkpoint(ck.network, tmp_path / "again.ckpt", config=ck.config, channel_means=ck.channel_means)
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_layout(tmp_path):
    small = Network.initialize(0, maxout_weighted=False)
    path = tmp_path / "s.ckpt"
    save_checkpoint(small, path)
    raw = path.read_bytes()
    assert raw[:4] == b"JNET" and struct.unpack("<I", raw[4:8])[0] == 1
    n_means = struct.unpack("<I", raw[8:12])[0]
    pos = 12 + 8 * n_means
    cfg_len = struct.unpack("<I", raw[pos:pos + 4])[0]
    pos += 4 + cfg_len
    assert struct.unpack("<I", raw[pos:pos + 4])[0] == 8
    pos += 4
    name_len = struct.unpack("<I", raw[pos:pos + 4])[0]
    assert raw[pos + 4:pos + 4 + name_len] == b"conv1.weights"
    pos += 4 + name_len
    assert struct.unpack("<4I", raw[pos:pos + 16]) == (32, 3, 5, 5)
    first = struct.unpack("<d", raw[pos + 16:pos + 24])[0]
    assert first == small.conv1.weights[0, 0, 0, 0]
    assert load_checkpoint(path).network.fc2 is None


def test_truncated_checkpoint(tmp_path, net):
    path = tmp_path / "n.ckpt"
    save_checkpoint(net, path)
    raw = path.read_bytes()
    for cut in (0, 3, 10, 200, len(raw) // 2, len(raw) - 1):
        path.write_bytes(raw[:cut])
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)


def test_checkpoint_bad_magic_and_version(tmp_path, net):
    path = tmp_path / "n.ckpt"
    save_checkpoint(net, path)
    raw = bytearray(path.read_bytes())
    path.write_bytes(b"XNET" + bytes(raw[4:]))
    with pytest.raises(CheckpointFormatError, match="magic"):
        load_checkpoint(path)
    raw[4:8] = struct.pack("<I", 9)
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointFormatError, match="version"):
        load_checkpoint(path)
    path.write_bytes(bytes(raw[:4]) + struct.pack("<I", 1) + bytes(raw[8:]) + b"x")
    with pytest.raises(CheckpointFormatError, match="trailing"):
        load_checkpoint(path)


def _write_raw_checkpoint(path, blocks):
    parts = [b"JNET", struct.pack("<I", 1), struct.pack("<I", 0), struct.pack("<I", 2), b"{}",
             struct.pack("<I", len(blocks))]
    for name, arr in blocks.items():
        shape = (1,) * (4 - arr.ndim) + arr.shape
        parts += [struct.pack("<I", len(name)), name.encode(), struct.pack("<4I", *shape), arr.astype("<f8").tobytes()]
    path.write_bytes(b"".join(parts))


def test_incompatible_fc1_shape(tmp_path, net):
    blocks = dict(net.blocks())
    blocks["fc1.weights"] = np.zeros((4608, 6399))
    _write_raw_checkpoint(tmp_path / "bad.ckpt", blocks)
    with pytest.raises(IncompatibleCheckpointError):
        load_checkpoint(tmp_path / "bad.ckpt")


def test_incompatible_missing_block(tmp_path, net):
    blocks = dict(net.blocks())
    del blocks["conv2.bias"]
    _write_raw_checkpoint(tmp_path / "bad.ckpt", blocks)
    with pytest.raises(IncompatibleCheckpointError):
        load_checkpoint(tmp_path / "bad.ckpt")
    _write_raw_checkpoint(tmp_path / "bad.ckpt", {"conv9.weights": np.zeros(3)})
    with pytest.raises(IncompatibleCheckpointError):
        load_checkpoint(tmp_path / "bad.ckpt")


def test_manifest_entry_frame():
    e = ManifestEntry("a", "b", "c", 3, 4)
    assert e.frame == (3, 4) and e.split == "train"
    assert DatasetManifest(".", [e]).select("train") == [e]
