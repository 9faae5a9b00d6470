import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from amhop.data import (
    CorpusError,
    CorpusMeta,
    SyntheticSpec,
    generate_synthetic,
    load_corpus,
    load_meta,
    make_folds,
    manifest_hash,
    synthetic_meta,
    write_corpus,
)
from amhop.probes import best_single_modality_accuracy, probe_accuracy


def small_spec(**overrides):
    base = dict(
        n_samples=60,
        min_len=2,
        max_len=4,
        audio_dim=6,
        video_dim=5,
        vocab_size=16,
        n_classes=4,
        noise=0.2,
        rule="xor3",
        seed=3,
    )
    base.update(overrides)
    return SyntheticSpec(**base)


class TestCorpusIO:
    def test_round_trip_reproduces_tensors(self, tmp_path):
        spec = small_spec(n_samples=8)
        samples = generate_synthetic(spec)
        manifest = write_corpus(str(tmp_path), samples, synthetic_meta(spec))
        loaded = load_corpus(manifest)
        assert len(loaded) == len(samples)
        for orig, back in zip(samples, loaded):
            assert back.id == orig.id
            assert back.label == orig.label
            assert np.array_equal(back.audio.features, orig.audio.features)
            assert np.array_equal(back.video.features, orig.video.features)
            assert np.array_equal(back.text.features, orig.text.features)
            assert back.audio.length == orig.audio.length

    def test_two_sample_toy_manifest(self, tmp_path):
        spec = small_spec(n_samples=2)
        samples = generate_synthetic(spec)
        manifest = write_corpus(str(tmp_path), samples, synthetic_meta(spec))
        loaded = load_corpus(manifest)
        assert [s.id for s in loaded] == ["syn-00000", "syn-00001"]
        for s in loaded:
            assert s.audio.length == s.audio.features.shape[0]

    def test_meta_sidecar_written_and_loaded(self, tmp_path):
        spec = small_spec(n_samples=2)
        manifest = write_corpus(str(tmp_path), generate_synthetic(spec), synthetic_meta(spec))
        meta = load_meta(manifest)
        assert meta is not None
        assert meta.audio_dim == spec.audio_dim
        assert meta.labels == tuple(f"class_{c}" for c in range(4))

    def test_wrong_audio_dim_names_sample_and_expected(self, tmp_path):
        spec = small_spec(n_samples=2)
        samples = generate_synthetic(spec)
        manifest = write_corpus(str(tmp_path), samples, synthetic_meta(spec))
        meta = load_meta(manifest)
        meta.audio_dim = 120
        with pytest.raises(CorpusError) as err:
            load_corpus(manifest, meta)
        message = str(err.value)
        assert "syn-00000" in message and "120" in message and "audio" in message

    def test_missing_file_names_sample(self, tmp_path):
        spec = small_spec(n_samples=2)
        samples = generate_synthetic(spec)
        manifest = write_corpus(str(tmp_path), samples, synthetic_meta(spec))
        os.remove(os.path.join(tmp_path, "features", "syn-00001.video.csv"))
        with pytest.raises(CorpusError, match="syn-00001"):
            load_corpus(manifest)

    def test_unknown_label_rejected(self, tmp_path):
        spec = small_spec(n_samples=2)
        samples = generate_synthetic(spec)
        manifest = write_corpus(str(tmp_path), samples, synthetic_meta(spec))
        text = open(manifest, encoding="utf-8").read().replace("class_", "klass_")
        open(manifest, "w", encoding="utf-8").write(text)
        with pytest.raises(CorpusError, match="unknown label"):
            load_corpus(manifest)

    def test_bad_header_rejected(self, tmp_path):
        path = os.path.join(tmp_path, "manifest.tsv")
        open(path, "w").write("id\tlabel\n")
        with pytest.raises(CorpusError, match="header"):
            load_corpus(path)

    def test_token_out_of_meta_vocab_rejected(self, tmp_path):
        spec = small_spec(n_samples=1)
        samples = generate_synthetic(spec)
        manifest = write_corpus(str(tmp_path), samples, synthetic_meta(spec))
        meta = load_meta(manifest)
        meta.vocab_size = 2
        with pytest.raises(CorpusError, match="vocabulary"):
            load_corpus(manifest, meta)

    def test_manifest_hash_stable(self, tmp_path):
        spec = small_spec(n_samples=3)
        manifest = write_corpus(str(tmp_path), generate_synthetic(spec), synthetic_meta(spec))
        assert manifest_hash(manifest) == manifest_hash(manifest)
        assert len(manifest_hash(manifest)) == 64


class TestFolds:
    def test_ten_ids_ten_folds_singletons(self):
        ids = [f"u{i}" for i in range(10)]
        folds = make_folds(ids, n_folds=10, seed=1)
        test_sets = [f.test_ids for f in folds]
        assert all(len(t) == 1 for t in test_sets)
        assert sorted(i for t in test_sets for i in t) == sorted(ids)

    def test_same_seed_identical(self):
        ids = [f"u{i}" for i in range(37)]
        a = make_folds(ids, n_folds=5, seed=9)
        b = make_folds(ids, n_folds=5, seed=9)
        assert [f.test_ids for f in a] == [f.test_ids for f in b]
        assert [f.train_ids for f in a] == [f.train_ids for f in b]

    def test_corpus_size_7487_gives_748_or_749(self):
        ids = [f"u{i}" for i in range(7487)]
        folds = make_folds(ids, n_folds=10, seed=0)
        sizes = sorted(len(f.test_ids) for f in folds)
        assert set(sizes) == {748, 749}
        covered = sorted(i for f in folds for i in f.test_ids)
        assert covered == sorted(ids)

    def test_split_structure_8_1_1(self):
        ids = [f"u{i}" for i in range(40)]
        folds = make_folds(ids, n_folds=10, seed=2)
        for fold in folds:
            assert len(fold.test_ids) == 4
            assert len(fold.dev_ids) == 4
            assert len(fold.train_ids) == 32
            combined = fold.train_ids + fold.dev_ids + fold.test_ids
            assert sorted(combined) == sorted(ids)

    @settings(max_examples=30, deadline=None)
    @given(
        st.integers(min_value=3, max_value=8),
        st.integers(min_value=0, max_value=50),
        st.integers(min_value=0, max_value=2**31 - 1),
    )
    def test_partition_property(self, n_folds, extra, seed):
        ids = [f"u{i}" for i in range(n_folds + extra)]
        folds = make_folds(ids, n_folds=n_folds, seed=seed)
        for fold in folds:
            combined = fold.train_ids + fold.dev_ids + fold.test_ids
            assert sorted(combined) == sorted(ids)
        covered = sorted(i for f in folds for i in f.test_ids)
        assert covered == sorted(ids)
        sizes = {len(f.test_ids) for f in folds}
        assert max(sizes) - min(sizes) <= 1

    def test_too_few_ids_rejected(self):
        with pytest.raises(ValueError):
            make_folds(["a", "b"], n_folds=3)

    def test_too_few_folds_rejected(self):
        with pytest.raises(ValueError):
            make_folds([f"u{i}" for i in range(10)], n_folds=2)

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            make_folds(["a", "a", "b", "c"], n_folds=3)


class TestSynthetic:
    def test_bit_reproducible(self):
        a = generate_synthetic(small_spec())
        b = generate_synthetic(small_spec())
        for s, t in zip(a, b):
            assert np.array_equal(s.audio.features, t.audio.features)
            assert np.array_equal(s.text.features, t.text.features)
            assert np.array_equal(s.video.features, t.video.features)
            assert s.label == t.label

    def test_zero_noise_copy_is_noiseless(self):
        spec = small_spec(rule="copy", noise=0.0, n_samples=20)
        samples = generate_synthetic(spec)
        rng = np.random.default_rng(spec.seed)
        protos = rng.normal(size=(spec.n_classes, spec.audio_dim))
        for s in samples:
            for row in s.audio.features:
                assert_allclose(row, protos[s.label], atol=1e-12)

    def test_copy_rule_single_modality_probe_strong(self):
        spec = small_spec(rule="copy", n_samples=300, seed=5)
        samples = generate_synthetic(spec)
        train, test = samples[:200], samples[200:]
        for modality in ("audio", "text", "video"):
            acc = probe_accuracy(train, test, (modality,), spec.vocab_size)
            assert acc > 0.95, f"{modality} probe only reached {acc}"

    def test_xor3_single_and_pair_probes_near_chance(self):
        spec = small_spec(rule="xor3", n_samples=800, seed=6)
        samples = generate_synthetic(spec)
        train, test = samples[:600], samples[600:]
        chance = 1.0 / spec.n_classes
        _, best_single = best_single_modality_accuracy(train, test, spec.vocab_size)
        assert best_single <= chance + 0.10
        for pair in (("audio", "text"), ("text", "video"), ("audio", "video")):
            acc = probe_accuracy(train, test, pair, spec.vocab_size)
            assert acc <= chance + 0.10, f"{pair} probe reached {acc}"

    def test_xor3_labels_roughly_balanced(self):
        samples = generate_synthetic(small_spec(n_samples=400, seed=7))
        counts = np.bincount([s.label for s in samples], minlength=4)
        assert counts.min() > 50

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            small_spec(rule="parity9")
        with pytest.raises(ValueError):
            small_spec(min_len=5, max_len=4)
        with pytest.raises(ValueError):
            small_spec(vocab_size=4)
        with pytest.raises(ValueError):
            small_spec(noise=-0.1)

    def test_lengths_within_declared_range(self):
        spec = small_spec(min_len=2, max_len=5, n_samples=50)
        for s in generate_synthetic(spec):
            for seq in (s.audio, s.text, s.video):
                assert 2 <= seq.length <= 5
