import numpy as np
import pytest

from waterformer import physics
from waterformer.data import (DatasetManifest, ManifestEntry, PairedDataset,
                              PairedSample, augment, build_synthetic_corpus,
                              collate, decode_image, encode_image, epoch_order,
                              generate_clean_images, list_images, load_manifest,
                              load_pair, resize, save_manifest, to_image,
                              to_tensor)
from waterformer.errors import ConfigurationError, IngestionError


class _IdentityRng:
    def random(self):
        return 1.0

    def integers(self, lo, hi):
        return 0


@pytest.fixture
def corpus(tmp_path):
    generate_clean_images(tmp_path / "clean", 10, size=32, seed=3)
    return build_synthetic_corpus(tmp_path / "clean", tmp_path / "corpus",
                                  ["I", "3"], (0.2, 1.5), 10, seed=7)


class TestCodecs:
    def test_normalization_endpoints(self, tmp_path):
        img = np.zeros((4, 4, 3))
        img[0, 0] = 1.0
        path = tmp_path / "x.png"
        encode_image(img, path)
        back = decode_image(path)
        assert back[0, 0, 0] == 1.0 and back[1, 1, 0] == 0.0

    def test_decode_missing_file(self, tmp_path):
        with pytest.raises(IngestionError, match="missing.png"):
            decode_image(tmp_path / "missing.png")

    def test_decode_corrupt_file(self, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"not a png at all")
        with pytest.raises(IngestionError):
            decode_image(bad)


class TestResize:
    def test_identity_at_target_size(self, rng):
        img = rng.uniform(0, 1, (32, 32, 3))
        out = resize(img, (32, 32))
        assert np.abs(out - img).max() <= 1e-7

    def test_shape_contract(self, rng):
        img = rng.uniform(0, 1, (96, 72, 3))
        assert resize(img, (64, 64)).shape == (64, 64, 3)

    def test_unknown_interpolation(self, rng):
        with pytest.raises(ConfigurationError):
            resize(rng.uniform(0, 1, (8, 8, 3)), (4, 4), "bicubic")


class TestAugment:
    def _sample(self, rng):
        return PairedSample(degraded=rng.uniform(0, 1, (8, 8, 3)),
                            reference=rng.uniform(0, 1, (8, 8, 3)), id="s")

    def test_identity_draws(self, rng):
        sample = self._sample(rng)
        out = augment(sample, _IdentityRng())
        assert np.array_equal(out.degraded, sample.degraded)
        assert np.array_equal(out.reference, sample.reference)

    def test_deterministic_given_seed(self, rng):
        sample = self._sample(rng)
        a = augment(sample, np.random.default_rng(5))
        b = augment(sample, np.random.default_rng(5))
        assert np.array_equal(a.degraded, b.degraded)
        assert np.array_equal(a.reference, b.reference)

    def test_same_transform_on_both_images(self, rng):
        degraded = np.zeros((8, 8, 3))
        reference = np.zeros((8, 8, 3))
        degraded[2, 5] = 1.0  # marker pixel
        reference[2, 5] = 1.0
        sample = PairedSample(degraded, reference, "m")
        out = augment(sample, np.random.default_rng(11))
        d_pos = np.argwhere(out.degraded[..., 0] == 1.0)
        r_pos = np.argwhere(out.reference[..., 0] == 1.0)
        assert np.array_equal(d_pos, r_pos)

    def test_value_multiset_preserved(self, rng):
        sample = self._sample(rng)
        out = augment(sample, np.random.default_rng(2))
        assert np.array_equal(np.sort(out.degraded, axis=None),
                              np.sort(sample.degraded, axis=None))


class TestEpochOrder:
    def test_pure_function(self):
        a = epoch_order(32, 4, 9)
        b = epoch_order(32, 4, 9)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, epoch_order(32, 5, 9))

    def test_is_permutation(self):
        order = epoch_order(17, 0, 0)
        assert sorted(order.tolist()) == list(range(17))


class TestManifest:
    def test_save_load_round_trip(self, tmp_path):
        entries = [ManifestEntry("d/a.png", "r/a.png", "train"),
                   ManifestEntry("d/b.png", "r/b.png", "test")]
        manifest = DatasetManifest(root=tmp_path, entries=entries, seed=4)
        save_manifest(manifest, tmp_path / "m.txt")
        back = load_manifest(tmp_path / "m.txt")
        assert back.seed == 4
        assert [(e.degraded, e.reference, e.split) for e in back.entries] == \
               [(e.degraded, e.reference, e.split) for e in entries]

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("a.png,b.png,banana\n")
        with pytest.raises(IngestionError):
            load_manifest(path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(IngestionError):
            load_manifest(tmp_path / "nope.txt")


class TestSyntheticCorpus:
    def test_counting_contract(self, corpus):
        # 10 clean images x 2 types
        assert len(corpus.entries) == 20
        assert len(corpus.split("train")) == 16
        assert len(corpus.split("val")) == 2
        assert len(corpus.split("test")) == 2

    def test_splits_disjoint_by_id(self, corpus):
        ids = {}
        for entry in corpus.entries:
            assert entry.id not in ids
            ids[entry.id] = entry.split

    def test_identical_seed_identical_manifest(self, tmp_path):
        generate_clean_images(tmp_path / "clean", 4, size=16, seed=0)
        m1 = build_synthetic_corpus(tmp_path / "clean", tmp_path / "c1",
                                    ["I"], (0.5, 1.0), 4, seed=5)
        m2 = build_synthetic_corpus(tmp_path / "clean", tmp_path / "c2",
                                    ["I"], (0.5, 1.0), 4, seed=5)
        assert (tmp_path / "c1" / "manifest.txt").read_text() == \
               (tmp_path / "c2" / "manifest.txt").read_text()

    def test_pairs_satisfy_physics_round_trip(self, corpus):
        # Depth range keeps T >= 0.1; sidecar floats invert to 1e-6.
        for entry in corpus.entries[:6]:
            sidecar = np.load(corpus.root / "params" / f"{entry.id}.npz")
            assert sidecar["transmission"].min() >= 0.1
            params = physics.DegradationParams(
                background=sidecar["background"],
                transmission=sidecar["transmission"])
            recovered = physics.recover_analytic(sidecar["degraded"], params)
            assert np.abs(recovered - sidecar["reference"]).max() <= 1e-6

    def test_unknown_type_rejected(self, tmp_path):
        generate_clean_images(tmp_path / "clean", 2, size=16, seed=0)
        with pytest.raises(ConfigurationError):
            build_synthetic_corpus(tmp_path / "clean", tmp_path / "c",
                                   ["IV"], (0.5, 1.0), 2, seed=0)

    def test_empty_clean_dir(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(IngestionError):
            build_synthetic_corpus(tmp_path / "empty", tmp_path / "c",
                                   ["I"], (0.5, 1.0), 2, seed=0)


class TestDatasetAndTensors:
    def test_load_pair_resizes(self, corpus):
        sample = load_pair(corpus.entries[0], corpus.root, size=16)
        assert sample.degraded.shape == (16, 16, 3)
        assert sample.reference.shape == (16, 16, 3)

    def test_paired_dataset(self, corpus):
        ds = PairedDataset(corpus, "train", size=16)
        assert len(ds) == 16
        assert ds[0].degraded.shape == (16, 16, 3)

    def test_tensor_round_trip(self, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        back = to_image(to_tensor(img, dtype=None))
        assert np.abs(back - img).max() <= 1e-12

    def test_collate_shapes(self, corpus):
        ds = PairedDataset(corpus, "train", size=16)
        degraded, reference = collate(ds.samples[:3])
        assert degraded.shape == (3, 3, 16, 16)
        assert reference.shape == (3, 3, 16, 16)

    def test_list_images_rejects_empty(self, tmp_path):
        (tmp_path / "none").mkdir()
        with pytest.raises(IngestionError):
            list_images(tmp_path / "none")
