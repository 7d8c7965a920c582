import numpy as np
import pytest
from hypothesis import given, settings
from numpy.testing import assert_array_equal

from omniloc import io
from omniloc.geometry import RigidTransform, random_rotation

from strategies import seeds


def test_pfm_roundtrip_and_orientation(tmp_path):
    d = np.arange(12, dtype=np.float32).reshape(3, 4)
    io.write_pfm(tmp_path / "d.pfm", d)
    raw = (tmp_path / "d.pfm").read_bytes()
    assert raw.startswith(b"Pf\n4 3\n-1.0\n")
    # first stored row is the bottom image row
    assert np.frombuffer(raw[-48:-32], "<f4").tolist() == [8, 9, 10, 11]
    assert_array_equal(io.read_pfm(tmp_path / "d.pfm"), d)


def test_pfm_big_endian(tmp_path):
    d = np.array([[1.5, -2.0]], dtype=">f4")
    (tmp_path / "b.pfm").write_bytes(b"Pf\n2 1\n1.0\n" + d.tobytes())
    assert_array_equal(io.read_pfm(tmp_path / "b.pfm"), [[1.5, -2.0]])


def test_pfm_rejects_color(tmp_path):
    (tmp_path / "c.pfm").write_bytes(b"PF\n1 1\n-1\n" + bytes(12))
    with pytest.raises(io.FormatError):
        io.read_pfm(tmp_path / "c.pfm")


@given(seeds)
@settings(max_examples=20)
def test_pose_file_roundtrip(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    poses = {f"f{i}": RigidTransform(random_rotation(rng), rng.normal(size=3)) for i in range(5)}
    p = tmp_path_factory.mktemp("poses") / "p.txt"
    io.write_poses(p, poses)
    back = io.read_poses(p)
    assert sorted(back) == sorted(poses)
    for k in poses:
        assert np.abs(back[k].rotation - poses[k].rotation).max() < 1e-10
        assert np.abs(back[k].translation - poses[k].translation).max() < 1e-10


def test_pose_file_errors(tmp_path):
    p = tmp_path / "p.txt"
    p.write_text("a 0 0 0 1 0 0 0\na 1 1 1 1 0 0 0\n")
    with pytest.raises(io.FormatError, match="duplicate frame id 'a'"):
        io.read_poses(p)
    p.write_text("# header\n\na 0 0 0 1 0 0\n")
    with pytest.raises(io.FormatError, match=":3:"):
        io.read_poses(p)


def test_match_file_roundtrip(tmp_path):
    m = np.array([[1.25, 2.5, 100.0, 50.0], [3.0, 4.0, 5.0, 6.0]])
    io.write_matches(tmp_path / "m.txt", "q1", "r7", "pinhole", m)
    header, back = io.read_matches(tmp_path / "m.txt")
    assert header == {"query": "q1", "ref": "r7", "model": "pinhole"}
    assert_array_equal(back, m)


def test_match_file_needs_header(tmp_path):
    (tmp_path / "m.txt").write_text("1 2 3 4\n")
    with pytest.raises(io.FormatError, match="query"):
        io.read_matches(tmp_path / "m.txt")


@pytest.mark.parametrize("binary", [False, True])
def test_cloud_roundtrip(tmp_path, binary):
    P = np.random.default_rng(0).normal(size=(17, 3)).astype(np.float32).astype(float)
    io.write_cloud(tmp_path / "c", P, binary=binary)
    assert ((tmp_path / "c").read_bytes()[:4] == b"OLPC") == binary
    assert_array_equal(io.read_cloud(tmp_path / "c"), P)


def test_cloud_binary_size_check(tmp_path):
    io.write_cloud(tmp_path / "c", np.zeros((3, 3)), binary=True)
    (tmp_path / "c").write_bytes((tmp_path / "c").read_bytes()[:-1])
    with pytest.raises(io.FormatError):
        io.read_cloud(tmp_path / "c")


def test_image_and_mask_paths(tmp_path):
    img = np.random.default_rng(0).integers(0, 255, (6, 8, 3), dtype=np.uint8)
    io.save_image(tmp_path / "a.png", img)
    assert_array_equal(io.load_image(tmp_path / "a.png"), img)
    mask = np.zeros((6, 8), bool)
    mask[2:4] = True
    io.save_image(io.mask_path(tmp_path / "a.png"), mask)
    assert io.mask_path(tmp_path / "a.png").name == "a.mask.png"
    assert_array_equal(io.load_image(tmp_path / "a.mask.png") > 0, mask)
