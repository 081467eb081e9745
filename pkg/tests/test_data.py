import numpy as np
import pytest

from dsdg import data
from dsdg.errors import ManifestError, PairingError, ValidationError


def _touch_image(path, size=16):
    rng = np.random.default_rng(0)
    data.save_image(rng.uniform(0, 1, (3, size, size)).astype(np.float32), path)


def _touch_depth(path):
    grid = data.toy_live_depth()
    data.save_depth(grid, path)


def _write_manifest_text(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class TestLoadManifest:
    def test_four_line_manifest(self, tmp_path):
        for name in ("a.png", "b.png", "c.png", "d.png"):
            _touch_image(tmp_path / name)
        _touch_depth(tmp_path / "a.txt")
        _touch_depth(tmp_path / "b.txt")
        _write_manifest_text(
            tmp_path / "m.tsv",
            [
                "a.png\tlive\tid0\t-\ta.txt",
                "b.png\tlive\tid1\t-\tb.txt",
                "c.png\tspoof\tid0\tprint\t-",
                "d.png\tspoof\tid1\treplay\t-",
            ],
        )
        records = data.load_manifest(tmp_path / "m.tsv")
        assert len(records) == 4
        assert [r.label for r in records] == ["live", "live", "spoof", "spoof"]
        assert records[0].spoof_type is None
        assert records[2].spoof_type == "print"
        assert records[0].depth_path == tmp_path / "a.txt"

    def test_live_with_spoof_type_rejected(self, tmp_path):
        _touch_image(tmp_path / "a.png")
        _write_manifest_text(tmp_path / "m.tsv", ["a.png\tlive\tid0\tprint\t-"])
        with pytest.raises(ManifestError, match="line 1"):
            data.load_manifest(tmp_path / "m.tsv")

    def test_missing_depth_file_rejected(self, tmp_path):
        _touch_image(tmp_path / "a.png")
        _write_manifest_text(tmp_path / "m.tsv", ["a.png\tlive\tid0\t-\tmissing.txt"])
        with pytest.raises(ManifestError, match="depth file not found"):
            data.load_manifest(tmp_path / "m.tsv")

    def test_missing_image_rejected(self, tmp_path):
        _write_manifest_text(tmp_path / "m.tsv", ["nope.png\tlive\tid0\t-\t-"])
        with pytest.raises(ManifestError, match="image file not found"):
            data.load_manifest(tmp_path / "m.tsv")

    def test_spoof_without_type_rejected(self, tmp_path):
        _touch_image(tmp_path / "a.png")
        _write_manifest_text(tmp_path / "m.tsv", ["a.png\tspoof\tid0\t-\t-"])
        with pytest.raises(ManifestError, match="spoof_type"):
            data.load_manifest(tmp_path / "m.tsv")

    def test_wrong_field_count_names_line(self, tmp_path):
        _write_manifest_text(tmp_path / "m.tsv", ["a.png\tlive\tid0"])
        with pytest.raises(ManifestError, match="line 1"):
            data.load_manifest(tmp_path / "m.tsv")

    def test_round_trip(self, tmp_path):
        for name in ("a.png", "b.png"):
            _touch_image(tmp_path / name)
        _touch_depth(tmp_path / "a.txt")
        records = [
            data.SampleRecord(tmp_path / "a.png", "live", "id0", None, tmp_path / "a.txt"),
            data.SampleRecord(tmp_path / "b.png", "spoof", "id0", "print", None),
        ]
        data.write_manifest(records, tmp_path / "m.tsv")
        assert data.load_manifest(tmp_path / "m.tsv") == records


def _records_on_disk(tmp_path, spec):
    """spec: list of (label, identity, spoof_type). Creates files and records."""
    records = []
    _touch_depth(tmp_path / "d.txt")
    for i, (label, ident, stype) in enumerate(spec):
        img = tmp_path / f"s{i}.png"
        _touch_image(img)
        records.append(
            data.SampleRecord(
                img, label, ident, stype, tmp_path / "d.txt" if label == "live" else None
            )
        )
    return records


class TestBuildPairs:
    def test_one_live_two_spoof_shares_live(self, tmp_path):
        records = _records_on_disk(
            tmp_path, [("live", "id0", None), ("spoof", "id0", "print"), ("spoof", "id0", "replay")]
        )
        pairs = data.build_pairs(records)
        assert len(pairs) == 2
        assert np.array_equal(pairs[0].live, pairs[1].live)
        assert pairs[0].identity_id == pairs[1].identity_id == "id0"

    def test_unknown_identity_rejected(self, tmp_path):
        records = _records_on_disk(tmp_path, [("live", "id0", None), ("spoof", "id9", "print")])
        with pytest.raises(PairingError, match="id9"):
            data.build_pairs(records)

    def test_counting_twenty_identities(self, tmp_path):
        spec = []
        for ident in range(20):
            spec.append(("live", f"id{ident}", None))
            for k in range(4):
                spec.append(("spoof", f"id{ident}", f"type{k}"))
        records = _records_on_disk(tmp_path, spec)
        pairs = data.build_pairs(records)
        # counting oracle: one pair per spoof record
        assert len(pairs) == sum(1 for label, _, _ in spec if label == "spoof") == 80

    def test_identity_match_invariant(self, tmp_path):
        spec = [("live", "a", None), ("live", "b", None), ("spoof", "b", "x"), ("spoof", "a", "x")]
        records = _records_on_disk(tmp_path, spec)
        by_identity = {r.identity_id: r for r in records if r.label == "live"}
        for pair in data.build_pairs(records):
            expected = data.load_image(by_identity[pair.identity_id].image_path)
            assert np.array_equal(pair.live, expected)

    def test_positional_pairing_mode(self, tmp_path):
        spec = [("live", "a", None), ("spoof", "x", "t"), ("spoof", "y", "t"), ("spoof", "z", "t")]
        records = _records_on_disk(tmp_path, spec)
        pairs = data.build_pairs(records, pairing="none")
        assert len(pairs) == 3
        live = data.load_image(records[0].image_path)
        assert all(np.array_equal(p.live, live) for p in pairs)

    def test_spoof_depth_always_zero(self, tmp_path):
        records = _records_on_disk(tmp_path, [("live", "a", None), ("spoof", "a", "t")])
        (pair,) = data.build_pairs(records)
        assert not pair.spoof_depth.any()
        assert pair.live_depth.max() > 0


class TestSynthToyDataset:
    def test_deterministic(self):
        a = data.synth_toy_dataset(2, ["print", "replay"], 256, seed=7)
        b = data.synth_toy_dataset(2, ["print", "replay"], 256, seed=7)
        assert len(a) == len(b) == 4
        for x, y in zip(a, b):
            assert np.array_equal(x.live, y.live)
            assert np.array_equal(x.spoof, y.spoof)
            assert np.array_equal(x.live_depth, y.live_depth)

    def test_zero_identities_rejected(self):
        with pytest.raises(ValidationError):
            data.synth_toy_dataset(0, ["print"], 32, seed=0)

    def test_counting(self):
        pairs = data.synth_toy_dataset(8, ["a", "b", "c", "d"], 32, seed=0)
        assert len(pairs) == 32

    def test_bad_image_size_rejected(self):
        with pytest.raises(ValidationError, match="divisible"):
            data.synth_toy_dataset(1, ["a"], 100, seed=0)

    def test_invariants(self):
        pairs = data.synth_toy_dataset(2, ["a", "b"], 32, seed=0)
        for p in pairs:
            assert p.live.shape == p.spoof.shape == (3, 32, 32)
            assert 0.0 <= p.live.min() and p.live.max() <= 1.0
            assert 0.0 <= p.spoof.min() and p.spoof.max() <= 1.0
            assert not p.spoof_depth.any()
            assert p.live_depth.max() <= 1.0 and p.live_depth.max() > 0
            assert not np.array_equal(p.live, p.spoof)

    def test_spoof_types_visibly_distinct(self):
        pairs = data.synth_toy_dataset(1, ["a", "b"], 32, seed=0)
        assert not np.array_equal(pairs[0].spoof, pairs[1].spoof)


class TestDepthFiles:
    def test_text_round_trip(self, tmp_path):
        grid = data.toy_live_depth()
        data.save_depth(grid, tmp_path / "d.txt")
        loaded = data.load_depth(tmp_path / "d.txt")
        assert np.allclose(loaded, grid, atol=1e-7)

    def test_grayscale_round_trip(self, tmp_path):
        grid = data.toy_live_depth()
        data.save_depth(grid, tmp_path / "d.png")
        loaded = data.load_depth(tmp_path / "d.png")
        assert np.allclose(loaded, grid, atol=1.0 / 255.0)

    def test_wrong_shape_rejected(self, tmp_path):
        np.savetxt(tmp_path / "d.txt", np.zeros((8, 8)))
        with pytest.raises(ValidationError, match="32x32"):
            data.load_depth(tmp_path / "d.txt")

    def test_out_of_range_rejected(self, tmp_path):
        np.savetxt(tmp_path / "d.txt", np.full((32, 32), 1.5))
        with pytest.raises(ValidationError, match=r"\[0, 1\]"):
            data.load_depth(tmp_path / "d.txt")


def test_write_corpus_round_trips(tmp_path):
    pairs = data.synth_toy_dataset(2, ["print"], 32, seed=3)
    manifest = data.write_corpus(pairs, tmp_path)
    records = data.load_manifest(manifest)
    assert len(records) == 4
    rebuilt = data.build_pairs(records)
    assert len(rebuilt) == 2
    # PNG quantization only
    assert np.allclose(rebuilt[0].live, pairs[0].live, atol=1.0 / 255.0)


def test_spoof_type_index_collapses_unknown():
    records = [
        data.SampleRecord("a", "spoof", "i", "unknown"),
        data.SampleRecord("b", "spoof", "i", "unknown"),
        data.SampleRecord("c", "spoof", "i", "print"),
        data.SampleRecord("d", "live", "i", None),
    ]
    index = data.spoof_type_index(records)
    assert index == {"print": 0, "unknown": 1}
