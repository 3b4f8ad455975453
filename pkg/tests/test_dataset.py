import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icebreaker.dataset import (
    FRAME_LEVEL,
    VIDEO_LEVEL,
    DatasetSplit,
    FeatureSet,
    RelevanceTable,
    SynthConfig,
    dump_features,
    dump_relevance,
    dump_split,
    generate_synthetic,
    load_dataset,
    load_features,
    load_relevance,
    parse_features,
    parse_relevance,
    parse_split,
    save_dataset,
    save_features,
)
from icebreaker.errors import ConfigError, DataError, FormatError


def test_single_video_level_entry_round_trip(tmp_path):
    fs = FeatureSet(VIDEO_LEVEL, 2, {"a": [1.0, 2.0]})
    path = tmp_path / "f.iceb"
    save_features(fs, path)
    back = load_features(path)
    assert back.kind == VIDEO_LEVEL and back.dim == 2
    assert list(back.entries) == ["a"]
    np.testing.assert_array_equal(back["a"], [1.0, 2.0])


def test_header_layout_is_little_endian():
    data = dump_features(FeatureSet(FRAME_LEVEL, 3, {"xy": np.ones((2, 3))}))
    assert data[:4] == b"ICEB"
    version, kind, count, dim = struct.unpack("<HBII", data[4:15])
    assert (version, kind, count, dim) == (1, 1, 1, 3)
    id_len, = struct.unpack("<H", data[15:17])
    assert data[17:17 + id_len] == b"xy"
    frames, = struct.unpack("<I", data[19:23])
    assert frames == 2
    assert np.frombuffer(data[23:], "<f4").tolist() == [1.0] * 6


def test_empty_file_is_valid():
    fs = parse_features(dump_features(FeatureSet(VIDEO_LEVEL, 4, {})))
    assert len(fs) == 0 and fs.dim == 4


def test_truncated_record_is_format_error():
    data = dump_features(FeatureSet(VIDEO_LEVEL, 3, {"a": [1, 2, 3], "b": [4, 5, 6]}))
    for cut in (5, 20, len(data) - 1):
        with pytest.raises(FormatError):
            parse_features(data[:cut])


def test_bad_magic_and_version():
    data = bytearray(dump_features(FeatureSet(VIDEO_LEVEL, 1, {"a": [1.0]})))
    with pytest.raises(FormatError):
        parse_features(b"XXXX" + bytes(data[4:]))
    data[4] = 9
    with pytest.raises(FormatError):
        parse_features(bytes(data))


def test_dim_mismatch_within_file():
    # header claims dim 3, the record carries only 2 floats
    good = dump_features(FeatureSet(VIDEO_LEVEL, 2, {"a": [1.0, 2.0]}))
    bad = good[:11] + struct.pack("<I", 3) + good[15:]
    with pytest.raises(FormatError):
        parse_features(bad)


def test_non_finite_component_is_data_error():
    data = bytearray(dump_features(FeatureSet(VIDEO_LEVEL, 2, {"a": [1.0, 2.0]})))
    data[-4:] = struct.pack("<f", float("nan"))
    with pytest.raises(DataError):
        parse_features(bytes(data))
    with pytest.raises(DataError):
        FeatureSet(VIDEO_LEVEL, 1, {"a": [np.inf]})


def test_invalid_ids_and_shapes():
    with pytest.raises(DataError):
        FeatureSet(VIDEO_LEVEL, 1, {"a b": [1.0]})
    with pytest.raises(DataError):
        FeatureSet(VIDEO_LEVEL, 1, {"a\tb": [1.0]})
    with pytest.raises(DataError):
        FeatureSet(VIDEO_LEVEL, 2, {"a": [1.0]})
    with pytest.raises(DataError):
        FeatureSet(FRAME_LEVEL, 2, {"a": np.zeros((0, 2))})


ids = st.text(alphabet=st.characters(blacklist_categories=("Zs", "Zl", "Zp", "Cc", "Cs"),
                                     blacklist_characters=","), min_size=1, max_size=8)
finite32 = st.floats(allow_nan=False, allow_infinity=False, width=32)


@st.composite
def feature_sets(draw):
    kind = draw(st.sampled_from([VIDEO_LEVEL, FRAME_LEVEL]))
    dim = draw(st.integers(1, 5))
    names = draw(st.lists(ids, max_size=5, unique=True))
    entries = {}
    for n in names:
        t = draw(st.integers(1, 4))
        shape = (dim,) if kind == VIDEO_LEVEL else (t, dim)
        vals = draw(st.lists(finite32, min_size=int(np.prod(shape)), max_size=int(np.prod(shape))))
        entries[n] = np.array(vals, dtype=np.float32).reshape(shape)
    return FeatureSet(kind, dim, entries)


@settings(max_examples=60, deadline=None)
@given(feature_sets())
def test_feature_round_trip_is_bit_exact(fs):
    data = dump_features(fs)
    back = parse_features(data)
    assert dump_features(back) == data
    assert list(back.entries) == list(fs.entries)
    for k in fs.entries:
        assert back[k].tobytes() == fs[k].tobytes()


def test_relevance_parse_examples():
    assert parse_relevance("q1\tc1,c2\n").rows == {"q1": ("c1", "c2")}
    with pytest.raises(DataError):
        parse_relevance("q1\tq1\n")
    with pytest.raises(FormatError):
        parse_relevance("q1\tc1\nq1\tc2\n")
    with pytest.raises(FormatError):
        parse_relevance("q1 c1\n")


def test_relevance_preserves_order(tmp_path):
    rel = RelevanceTable({"z": ["b", "a"], "a": ["z", "c"], "m": []})
    text = dump_relevance(rel)
    assert text == "z\tb,a\na\tz,c\nm\t\n"
    back = parse_relevance(text)
    assert list(back.rows) == ["z", "a", "m"]
    assert back["z"] == ("b", "a")


def test_relevance_universe_check():
    rel = RelevanceTable({"q": ["a", "b"]})
    rel.check_universe({"q", "a", "b"})
    with pytest.raises(DataError):
        rel.check_universe({"q", "a"})


def test_split_format():
    split = DatasetSplit(frozenset({"b", "a"}), frozenset({"c"}), frozenset())
    text = dump_split(split)
    assert text == "train:a,b\nval:c\ntest:\n"
    assert parse_split(text) == split
    with pytest.raises(FormatError):
        parse_split("train:a\nval:a\ntest:\n")
    with pytest.raises(FormatError):
        parse_split("train:a\nval:b\n")


def _cfg(**kw):
    base = dict(n_videos=12, n_clusters=3, video_dim=6, frame_dim=5, max_frames=4,
                relevant_per_query=2, cluster_noise_sigma=0.1, seed=11)
    base.update(kw)
    return SynthConfig(**base)


def test_generator_unique_peer():
    _, videos, rel, split = generate_synthetic(_cfg(n_videos=4, n_clusters=2, relevant_per_query=1))
    ids = videos.ids()
    # round robin: v0,v2 in cluster 0; v1,v3 in cluster 1
    assert rel.rows == {ids[0]: (ids[2],), ids[1]: (ids[3],), ids[2]: (ids[0],), ids[3]: (ids[1],)}
    assert split.covers(rel)


def test_generator_is_deterministic(tmp_path):
    cfg = _cfg()
    a, b = tmp_path / "a", tmp_path / "b"
    save_dataset(a, *generate_synthetic(cfg))
    save_dataset(b, *generate_synthetic(cfg))
    for name in ("frames.iceb", "videos.iceb", "relevance.tsv", "split.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    other = tmp_path / "c"
    save_dataset(other, *generate_synthetic(_cfg(seed=12)))
    assert (a / "videos.iceb").read_bytes() != (other / "videos.iceb").read_bytes()


def test_zero_noise_same_cluster_vectors_equal():
    frames, videos, rel, _ = generate_synthetic(_cfg(cluster_noise_sigma=0.0))
    ids = videos.ids()
    for i in range(3, len(ids)):
        np.testing.assert_array_equal(videos[ids[i]], videos[ids[i - 3]])
        np.testing.assert_array_equal(frames[ids[i]][0], frames[ids[i - 3]][0])
    # all same-cluster distances tie, so lists are lexicographic
    assert rel[ids[0]] == (ids[3], ids[6])


def test_generator_shapes_and_split():
    frames, videos, rel, split = generate_synthetic(_cfg(n_videos=20, split_fractions=(0.5, 0.25, 0.25)))
    assert videos.dim == 6 and frames.dim == 5
    assert all(1 <= frames[v].shape[0] <= 4 for v in frames.ids())
    assert (len(split.train), len(split.validation), len(split.test)) == (10, 5, 5)
    assert split.covers(rel)
    for q, cands in rel.rows.items():
        assert len(cands) == 2 and q not in cands


def test_generator_config_errors():
    with pytest.raises(ConfigError):
        generate_synthetic(_cfg(n_videos=3, n_clusters=4))
    with pytest.raises(ConfigError):
        generate_synthetic(_cfg(n_videos=6, n_clusters=3, relevant_per_query=2))
    with pytest.raises(ConfigError):
        generate_synthetic(_cfg(split_fractions=(0.5, 0.5, 0.5)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 4))
def test_small_noise_clusters_are_separated(seed, dim):
    """With sigma=0.01 and centroids >1 apart, within-cluster < between-cluster distance."""
    _, videos, _, _ = generate_synthetic(SynthConfig(
        n_videos=10, n_clusters=2, video_dim=dim, frame_dim=2, max_frames=2, relevant_per_query=1,
        cluster_noise_sigma=0.01, seed=seed))
    X = videos.matrix(videos.ids())
    cl = np.arange(10) % 2
    D = np.sqrt(((X[:, None] - X[None]) ** 2).sum(-1))
    same = cl[:, None] == cl[None]
    off = ~np.eye(10, dtype=bool)
    assert D[same & off].max() < D[~same].min()


def test_load_dataset_round_trip(tmp_path):
    parts = generate_synthetic(_cfg())
    save_dataset(tmp_path, *parts)
    ds = load_dataset(tmp_path)
    assert ds.relevance == parts[2] and ds.split == parts[3]
    assert dump_features(ds.videos) == dump_features(parts[1])


def test_relevance_file_round_trip(tmp_path):
    _, _, rel, _ = generate_synthetic(_cfg())
    p = tmp_path / "r.tsv"
    p.write_text(dump_relevance(rel))
    assert load_relevance(p) == rel
