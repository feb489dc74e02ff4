import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emstagcn.data import (
    AugmentParams, Dataset, FormatError, ParseError, SkeletonSequence, StreamKind, SynthSpec, TopologyError,
    augment, build_topology, center_crop, center_on_joint, chain_topology, dataset_read, dataset_write,
    derive_bone_stream, derive_length_stream, derive_motion_stream, derive_stream, pad_repeat,
    parse_ntu_skeleton, rotation_matrix, synth_generate,
)


def seq_of(points, label=None):
    """[T, N, 3] joint positions for one body -> SkeletonSequence [3, T, N, 1]."""
    arr = np.asarray(points, dtype=np.float64)
    return SkeletonSequence(np.transpose(arr, (2, 0, 1))[..., None], label=label, id="s")


# -- topology ----------------------------------------------------------------


def test_builtin_topologies():
    ntu = build_topology("ntu25")
    assert ntu.num_joints == 25 and len(ntu.edges) == 24
    kin = build_topology("kinetics18")
    assert kin.num_joints == 18 and len(kin.edges) == 17
    chain = build_topology("custom", edges=[(0, 1), (1, 2)], center=0, num_joints=3)
    assert chain.edges == ((0, 1), (1, 2))


@pytest.mark.parametrize("name", ["ntu25", "kinetics18", "chain7"])
def test_topology_invariants(name):
    topo = build_topology(name)
    distal = [d for _, d in topo.edges]
    assert sorted(distal) == sorted(set(range(topo.num_joints)) - {topo.center_joint})
    # undirected BFS from the center, independent of the stored orientation
    nbrs = {j: set() for j in range(topo.num_joints)}
    for a, b in topo.edges:
        nbrs[a].add(b)
        nbrs[b].add(a)
    hops, frontier = {topo.center_joint: 0}, [topo.center_joint]
    while frontier:
        frontier = [n for j in frontier for n in nbrs[j] if n not in hops and not hops.update({n: hops[j] + 1})]
    assert len(hops) == topo.num_joints
    for p, d in topo.edges:
        assert hops[p] + 1 == hops[d]
    assert topo.hop_distance().tolist() == [hops[j] for j in range(topo.num_joints)]


def test_ntu_center_is_spine_middle_and_kinetics_is_neck():
    # joint 2 (1-based) in the NTU listing is the middle of the spine, joint 1 in OpenPose is the neck
    assert build_topology("ntu25").center_joint == 1
    assert build_topology("kinetics18").center_joint == 1


def test_topology_errors():
    with pytest.raises(TopologyError):
        build_topology("custom", edges=[(0, 1), (1, 2), (2, 0)], center=0, num_joints=3)
    with pytest.raises(TopologyError):
        build_topology("custom", edges=[(0, 1), (2, 3), (0, 1)], center=0, num_joints=4)
    with pytest.raises(TopologyError):
        build_topology("custom", edges=[(0, 5)], center=0, num_joints=2)


# -- NTU parser --------------------------------------------------------------


def ntu_text(frames):
    """frames: list of lists of (body_id, joints[25, 3], tracking_state)."""
    lines = [str(len(frames))]
    for bodies in frames:
        lines.append(str(len(bodies)))
        for body_id, joints, state in bodies:
            lines.append(f"{body_id} 0 1 1 1 1 0 0.1 0.2 2")
            lines.append("25")
            for x, y, z in joints:
                lines.append(f"{x} {y} {z} 0.1 0.2 300 200 100 0.5 0.5 0.5 {state}")
    return "\n".join(lines) + "\n"


def test_parse_zero_file():
    seq = parse_ntu_skeleton(ntu_text([[("72057594037931101", np.zeros((25, 3)), 2)]]))
    assert seq.shape == (3, 1, 25, 2)
    assert not seq.data.any()


def test_parse_moving_joint():
    j0, j1 = np.zeros((25, 3)), np.zeros((25, 3))
    j1[0] = (1, 0, 0)
    seq = parse_ntu_skeleton(ntu_text([[("a", j0, 2)], [("a", j1, 2)]]))
    assert seq.data[0, 1, 0, 0] == 1.0
    assert seq.data[:, 0].sum() == 0


def test_parse_keeps_two_most_confident_bodies():
    poses = {bid: np.full((25, 3), v) for bid, v in (("a", 1.0), ("b", 2.0), ("c", 3.0))}
    text = ntu_text([[("a", poses["a"], 1), ("b", poses["b"], 2), ("c", poses["c"], 0)]])
    seq = parse_ntu_skeleton(text)
    assert seq.shape[3] == 2
    assert np.all(seq.data[..., 0] == 2.0) and np.all(seq.data[..., 1] == 1.0)


def test_parse_tracks_bodies_by_id_across_frames():
    a, b = np.full((25, 3), 1.0), np.full((25, 3), 5.0)
    # body order in the file flips between frames; slots must follow ids
    seq = parse_ntu_skeleton(ntu_text([[("a", a, 2), ("b", b, 1)], [("b", b, 1), ("a", a, 2)]]))
    assert np.all(seq.data[..., 0] == 1.0) and np.all(seq.data[..., 1] == 5.0)


def test_parse_errors_carry_line_numbers():
    good = ntu_text([[("a", np.zeros((25, 3)), 2)]])
    lines = good.splitlines()
    with pytest.raises(ParseError, match="line"):
        parse_ntu_skeleton("\n".join(lines[:10]))
    bad = lines.copy()
    bad[3] = "24"
    with pytest.raises(ParseError, match="line 4"):
        parse_ntu_skeleton("\n".join(bad))
    bad = lines.copy()
    bad[6] = "0 0 zz 0 0 0 0 0 0 0 0 2"
    with pytest.raises(ParseError, match="line 7"):
        parse_ntu_skeleton("\n".join(bad))


# -- streams -----------------------------------------------------------------


CHAIN3 = chain_topology(3)


def test_bone_stream_examples():
    seq = seq_of([[(0, 0, 0), (1, 0, 0), (1, 1, 0)]])
    bones = derive_bone_stream(seq, CHAIN3).data[:, 0, :, 0].T
    assert np.array_equal(bones, [[0, 0, 0], [1, 0, 0], [0, 1, 0]])
    same = seq_of([[(2, 3, 4)] * 3])
    assert not derive_bone_stream(same, CHAIN3).data.any()
    moved = seq.replace(seq.data + 5.0)
    assert np.array_equal(derive_bone_stream(moved, CHAIN3).data, derive_bone_stream(seq, CHAIN3).data)


def test_bone_stream_rejects_joint_mismatch():
    with pytest.raises(ValueError):
        derive_bone_stream(seq_of([[(0, 0, 0)] * 4]), CHAIN3)


def test_motion_stream_examples():
    seq = seq_of([[(0, 0, 0)], [(1, 2, 3)]])
    m = derive_motion_stream(seq).data[:, :, 0, 0].T
    assert np.array_equal(m, [[1, 2, 3], [0, 0, 0]])
    assert not derive_motion_stream(seq_of([[(1, 1, 1)]] * 4)).data.any()
    assert not derive_motion_stream(seq_of([[(7, 8, 9)]])).data.any()


def test_motion_sums_to_displacement(rng):
    data = rng.integers(-50, 50, size=(3, 6, 3, 1)).astype(float)
    m = derive_motion_stream(SkeletonSequence(data)).data
    assert np.array_equal(m[:, :-1].sum(axis=1), data[:, -1] - data[:, 0])


def test_length_stream_examples():
    seq = seq_of([[(0, 0, 0), (3, 4, 0), (3, 4, 0)]])
    bl = derive_length_stream(seq, CHAIN3, "bone")
    assert bl.shape[0] == 1 and bl.data[0, 0, 1, 0] == 5.0
    jl = derive_length_stream(seq, CHAIN3, "joint")
    assert jl.data[0, 0, 0, 0] == 0.0 and jl.data[0, 0, 2, 0] == 5.0
    assert not derive_length_stream(seq_of([[(0, 0, 0)] * 3]), CHAIN3, "bone").data.any()


def test_stream_channels():
    seq = seq_of([[(0, 0, 0), (1, 0, 0), (1, 1, 0)]])
    for kind in StreamKind:
        assert derive_stream(seq, CHAIN3, kind).shape[0] == kind.channels
    assert StreamKind.JOINT_LENGTH.channels == 1 and StreamKind.BONE_MOTION.channels == 3


def test_center_on_joint_moves_first_frame_center_to_origin(rng):
    topo = chain_topology(4)
    data = rng.normal(size=(3, 5, 4, 2))
    data[..., 1] = 0.0  # absent second body stays zero
    out = center_on_joint(SkeletonSequence(data), topo).data
    assert np.allclose(out[:, 0, topo.center_joint, 0], 0.0)
    assert not out[..., 1].any()


# -- padding, cropping, augmentation ----------------------------------------


def test_pad_repeat_examples():
    seq = SkeletonSequence(np.arange(2.0).reshape(1, 2, 1, 1))
    assert pad_repeat(seq, 5).data.reshape(-1).tolist() == [0, 1, 0, 1, 0]
    assert pad_repeat(seq, 2) == seq
    long = SkeletonSequence(np.ones((3, 300, 2, 1)))
    assert pad_repeat(long, 300) == long
    with pytest.raises(ValueError):
        pad_repeat(seq, 0)


def test_center_crop_and_errors():
    seq = SkeletonSequence(np.arange(7.0).reshape(1, 7, 1, 1))
    assert center_crop(seq, 3).data.reshape(-1).tolist() == [2, 3, 4]
    with pytest.raises(ValueError):
        center_crop(seq, 8)
    with pytest.raises(ValueError):
        augment(seq_of(np.zeros((3, 2, 3))), np.random.default_rng(0), AugmentParams(0, 0, crop_len=4))


def test_null_augmentation_is_identity(rng):
    seq = SkeletonSequence(rng.normal(size=(3, 6, 4, 2)))
    out = augment(seq, np.random.default_rng(3), AugmentParams(0.0, 0.0, crop_len=6))
    assert out.data.tobytes() == seq.data.tobytes()


def test_translation_only_leaves_bones_unchanged(rng):
    topo = chain_topology(4)
    seq = SkeletonSequence(rng.integers(-8, 8, size=(3, 5, 4, 1)).astype(float))
    out = augment(seq, np.random.default_rng(5), AugmentParams(0.0, 0.5, crop_len=5))
    assert not np.array_equal(out.data, seq.data)
    np.testing.assert_allclose(derive_bone_stream(out, topo).data, derive_bone_stream(seq, topo).data, atol=1e-12)


def test_rotation_preserves_lengths(rng):
    topo = chain_topology(5)
    seq = SkeletonSequence(rng.normal(size=(3, 8, 5, 2)))
    out = augment(seq, np.random.default_rng(11), AugmentParams(30.0, 0.2, crop_len=6))
    assert out.shape == (3, 6, 5, 2)
    # lengths of the cropped window must match some window of the original
    before = derive_length_stream(seq, topo, "bone").data
    after = derive_length_stream(out, topo, "bone").data
    assert any(np.max(np.abs(after - before[:, s: s + 6])) < 1e-9 for s in range(3))
    r = rotation_matrix(np.deg2rad([10, -20, 30]))
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-15)
    assert np.linalg.det(r) == pytest.approx(1.0)


def test_augmentation_keeps_absent_bodies_zero(rng):
    data = rng.normal(size=(3, 6, 4, 2))
    data[..., 1] = 0
    out = augment(SkeletonSequence(data), np.random.default_rng(2), AugmentParams(10, 0.1, crop_len=4))
    assert not out.data[..., 1].any()


def test_augment_is_deterministic(rng):
    seq = SkeletonSequence(rng.normal(size=(3, 9, 4, 1)))
    a = augment(seq, np.random.default_rng(99), AugmentParams(10, 0.1, 5))
    b = augment(seq, np.random.default_rng(99), AugmentParams(10, 0.1, 5))
    assert a.data.tobytes() == b.data.tobytes()


# -- synthetic corpus --------------------------------------------------------


def test_synth_counting_contract():
    ds = synth_generate(SynthSpec(4, 16, 11, 32, 0.01), 42)
    assert len(ds) == 64
    assert np.array_equal(np.bincount(ds.labels()), [16] * 4)
    assert ds.samples[0].shape == (3, 32, 11, 1)


def test_synth_is_deterministic():
    a = synth_generate(SynthSpec(3, 4, 7, 16, 0.0), 5)
    b = synth_generate(SynthSpec(3, 4, 7, 16, 0.0), 5)
    assert all(x == y for x, y in zip(a.samples, b.samples))


def logistic_regression(x, y, steps=500, lr=0.5, l2=1e-3):
    """Plain batch gradient descent on the logistic loss."""
    mu, sd = x.mean(0), x.std(0) + 1e-8
    xs = np.hstack([(x - mu) / sd, np.ones((len(x), 1))])
    w = np.zeros(xs.shape[1])
    for _ in range(steps):
        p = 1.0 / (1.0 + np.exp(-xs @ w))
        w -= lr * (xs.T @ (p - y) / len(y) + l2 * w)
    return lambda z: (np.hstack([(z - mu) / sd, np.ones((len(z), 1))]) @ w > 0).astype(int)


def test_linear_baseline_separates_first_two_classes():
    spec = SynthSpec(4, 16, 11, 32, 0.01)
    train = [s for s in synth_generate(spec, 42).samples if s.label in (0, 1)]
    test = [s for s in synth_generate(spec, 4242).samples if s.label in (0, 1)]
    predict = logistic_regression(np.stack([s.data.ravel() for s in train]), np.array([s.label for s in train]))
    acc = np.mean(predict(np.stack([s.data.ravel() for s in test])) == np.array([s.label for s in test]))
    assert acc >= 0.9


# -- dataset format ----------------------------------------------------------


def test_dataset_round_trip(tmp_path):
    ds = synth_generate(SynthSpec(3, 3, 6, 10, 0.01, num_bodies=2), 1)
    dataset_write(ds, tmp_path / "d")
    back = dataset_read(tmp_path / "d")
    assert back.topology == ds.topology and back.class_names == ds.class_names
    assert all(a == b and a.label == b.label and a.id == b.id for a, b in zip(ds.samples, back.samples))


def test_empty_dataset_round_trip(tmp_path):
    ds = Dataset([], chain_topology(3), ["a", "b"])
    dataset_write(ds, tmp_path / "e")
    manifest = json.loads((tmp_path / "e" / "manifest.json").read_text())
    assert manifest["samples"] == []
    assert len(dataset_read(tmp_path / "e")) == 0


def test_sample_file_layout(tmp_path):
    data = np.arange(24, dtype=np.float32).reshape(2, 3, 2, 2).astype(np.float64)
    ds = Dataset([SkeletonSequence(data[:1].repeat(3, 0), label=0, id="x")], chain_topology(2), ["a"])
    dataset_write(ds, tmp_path / "d")
    row = json.loads((tmp_path / "d" / "manifest.json").read_text())["samples"][0]
    raw = (tmp_path / "d" / row["file"]).read_bytes()
    assert raw[:4] == b"SKL1"
    assert np.frombuffer(raw[4:20], "<u4").tolist() == [3, 3, 2, 2]
    assert np.array_equal(np.frombuffer(raw[20:], "<f4").reshape(3, 3, 2, 2), ds.samples[0].data)


@pytest.mark.parametrize("offset", [0, 1, 2, 3, 4, 8, 12, 16])
def test_corrupt_header_is_a_format_error(tmp_path, offset):
    ds = synth_generate(SynthSpec(2, 1, 4, 4, 0.01), 0)
    dataset_write(ds, tmp_path / "d")
    path = tmp_path / "d" / json.loads((tmp_path / "d" / "manifest.json").read_text())["samples"][0]["file"]
    raw = bytearray(path.read_bytes())
    raw[offset] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        dataset_read(tmp_path / "d")


def test_truncated_and_missing_files(tmp_path):
    ds = synth_generate(SynthSpec(2, 1, 4, 4, 0.01), 0)
    dataset_write(ds, tmp_path / "d")
    path = next((tmp_path / "d").glob("*.skl"))
    path.write_bytes(path.read_bytes()[:10])
    with pytest.raises(FormatError):
        dataset_read(tmp_path / "d")
    with pytest.raises(FileNotFoundError):
        dataset_read(tmp_path / "nowhere")


def test_writer_refuses_values_not_representable_in_float32(tmp_path):
    ds = Dataset([SkeletonSequence(np.full((3, 1, 2, 1), 0.1))], chain_topology(2))
    with pytest.raises(ValueError):
        dataset_write(ds, tmp_path / "d")


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.integers(1, 6), st.integers(0, 2**31))
def test_pad_then_crop_front_recovers_sequence(t, extra, seed):
    data = np.random.default_rng(seed).normal(size=(3, t, 2, 1))
    seq = SkeletonSequence(data)
    padded = pad_repeat(seq, t + extra)
    assert padded.data[:, :t].tobytes() == data.tobytes()
