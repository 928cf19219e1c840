"""Compressed index: k-means, residual codec, inverted lists, staged search."""

import numpy as np
import pytest

from lateir.compressed import (
    Codebook,
    ResidualCode,
    ResidualCodec,
    compress,
    decompress,
    default_centroid_count,
    load_compressed,
    pack_codes,
    save_compressed,
    search_compressed,
    train_codebook,
    unpack_codes,
)
from lateir.errors import BadCentroidId, DimMismatch, InsufficientTokens
from lateir.exact import build_exact, search_exact
from lateir.scoring import maxsim
from conftest import (
    family_corpus,
    family_queries,
    random_store,
    store_from_matrices,
    unit_rows,
)


class TestPacking:
    def test_round_trip_all_patterns(self, rng):
        for dim in (1, 3, 4, 5, 8, 13, 64):
            codes = rng.integers(0, 4, size=(40, dim)).astype(np.uint8)
            packed = pack_codes(codes)
            assert packed.shape == (40, (dim + 3) // 4)
            np.testing.assert_array_equal(unpack_codes(packed, dim), codes)

    def test_exhaustive_single_byte(self):
        quads = np.array([[a, b, c, d] for a in range(4) for b in range(4)
                          for c in range(4) for d in range(4)], dtype=np.uint8)
        np.testing.assert_array_equal(unpack_codes(pack_codes(quads), 4), quads)

    def test_packed_length(self):
        codes = np.zeros((2, 10), dtype=np.uint8)
        assert pack_codes(codes).shape[1] == 3  # ceil(10 / 4)


class TestDefaultCentroidCount:
    def test_power_of_two(self):
        for total in (10, 1000, 320_000, 5_000_000):
            k = default_centroid_count(total)
            assert k & (k - 1) == 0
            assert k >= 16 * total**0.5 * 0.999

    def test_examples(self):
        assert default_centroid_count(320_000) == 16384  # 16*sqrt = 9051 -> next pow2
        assert default_centroid_count(1024) == 512  # 16*32 = 512, already a power of two


class TestTrainCodebook:
    def test_antipodal_clusters(self, rng):
        mean = unit_rows(rng, 1, 16)[0]
        a = mean + 0.05 * rng.standard_normal((40, 16))
        b = -mean + 0.05 * rng.standard_normal((40, 16))
        store = store_from_matrices({"a": a, "b": b})
        codebook = train_codebook(store, k=2, iterations=8, seed=3)
        for row in codebook.centroids.astype(np.float64):
            angle = np.arccos(np.clip(abs(np.dot(row, mean)), -1, 1))
            assert angle < 0.05

    def test_k_equals_tokens_zero_distortion(self, rng):
        tokens = unit_rows(rng, 12, 8)
        store = store_from_matrices({"d": tokens})
        codebook = train_codebook(store, k=12, iterations=4, seed=0)
        sims = tokens @ codebook.centroids.T.astype(np.float64)
        np.testing.assert_allclose(sims.max(axis=1), 1.0, atol=1e-5)

    def test_deterministic(self, rng):
        store = random_store(rng, 30, 8, min_tokens=4, max_tokens=10)
        a = train_codebook(store, k=16, iterations=5, seed=7)
        b = train_codebook(store, k=16, iterations=5, seed=7)
        np.testing.assert_array_equal(a.centroids, b.centroids)

    def test_seed_changes_output(self, rng):
        store = random_store(rng, 30, 8, min_tokens=4, max_tokens=10)
        a = train_codebook(store, k=16, iterations=2, seed=1)
        b = train_codebook(store, k=16, iterations=2, seed=2)
        assert not np.array_equal(a.centroids, b.centroids)

    def test_insufficient_tokens(self, rng):
        store = store_from_matrices({"d": unit_rows(rng, 5, 8)})
        with pytest.raises(InsufficientTokens):
            train_codebook(store, k=6)

    def test_centroids_unit(self, rng):
        store = random_store(rng, 50, 16, min_tokens=2, max_tokens=8)
        codebook = train_codebook(store, k=32, iterations=3, seed=0)
        norms = np.linalg.norm(codebook.centroids.astype(np.float64), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-3)


class TestCompress:
    def test_conservation(self, rng):
        store = random_store(rng, 40, 16, min_tokens=2, max_tokens=20)
        codebook = train_codebook(store, k=16, iterations=3, seed=0)
        index = compress(store, codebook)
        assert index.total_tokens == store.total_tokens
        assert list(index.token_counts()) == [m.shape[0] for m in store.entries.values()]

    def test_inverted_lists_partition_tokens(self, rng):
        store = random_store(rng, 25, 8, min_tokens=1, max_tokens=9)
        codebook = train_codebook(store, k=8, iterations=3, seed=1)
        index = compress(store, codebook)
        pairs = set()
        for c in range(codebook.k):
            lo, hi = index.ivf_offsets[c], index.ivf_offsets[c + 1]
            for doc, pos in zip(index.ivf_docs[lo:hi], index.ivf_positions[lo:hi]):
                pairs.add((int(doc), int(pos)))
        assert int(index.ivf_offsets[-1]) == store.total_tokens
        expected = {
            (i, p)
            for i, m in enumerate(store.entries.values())
            for p in range(m.shape[0])
        }
        assert pairs == expected

    def test_ivf_membership_is_nearest_centroid(self, rng):
        store = random_store(rng, 10, 8, min_tokens=2, max_tokens=6)
        codebook = train_codebook(store, k=4, iterations=3, seed=0)
        index = compress(store, codebook)
        for c in range(codebook.k):
            lo, hi = index.ivf_offsets[c], index.ivf_offsets[c + 1]
            for doc, pos in zip(index.ivf_docs[lo:hi], index.ivf_positions[lo:hi]):
                t = int(index.offsets[doc]) + int(pos)
                assert int(index.centroid_ids[t]) == c

    def test_token_equal_to_centroid(self, rng):
        # residual is zero, so reconstruction differs from the centroid only
        # by the per-dimension representative offsets
        base = unit_rows(rng, 6, 8)
        store = store_from_matrices({"d": base})
        codebook = train_codebook(store, k=6, iterations=6, seed=0)
        index = compress(store, codebook)
        tokens = store.entries["d"].astype(np.float64)
        for pos in range(6):
            t = int(index.centroid_ids[pos])
            centroid = codebook.centroids[t].astype(np.float64)
            if not np.allclose(tokens[pos], centroid, atol=1e-6):
                continue
            codes = unpack_codes(index.packed_codes[pos : pos + 1], 8)[0]
            rep = index.codec.values[np.arange(8), codes].astype(np.float64)
            raw = centroid + rep
            recon = raw / np.linalg.norm(raw)
            got = decompress(
                ResidualCode(t, index.packed_codes[pos].tobytes()),
                codebook,
                index.codec,
            )
            max_offset = np.abs(index.codec.values).max()
            assert np.abs(got.astype(np.float64) - centroid).max() <= 2 * max_offset + 1e-6
            np.testing.assert_allclose(got.astype(np.float64), recon, atol=1e-6)

    def test_round_trip_error_within_bucket_width(self, rng):
        store = random_store(rng, 60, 8, min_tokens=2, max_tokens=16)
        codebook = train_codebook(store, k=16, iterations=4, seed=0)
        index = compress(store, codebook)
        tokens = np.vstack([m.astype(np.float32) for m in store.entries.values()])
        assign = index.centroid_ids.astype(np.int64)
        residuals = tokens - codebook.centroids[assign]
        codes = unpack_codes(index.packed_codes, 8)
        reps = index.codec.values[np.arange(8)[None, :], codes]
        err = np.abs(residuals - reps)
        lo = residuals.min(axis=0)
        hi = residuals.max(axis=0)
        for d in range(8):
            edges = np.concatenate(([lo[d]], index.codec.cutoffs[d], [hi[d]]))
            widths = np.diff(edges)
            allowed = widths[codes[:, d]]
            assert np.all(err[:, d] <= allowed + 1e-6)

    def test_dim_mismatch(self, rng):
        store = random_store(rng, 10, 8)
        other = random_store(rng, 10, 16)
        codebook = train_codebook(other, k=4, iterations=2, seed=0)
        with pytest.raises(DimMismatch):
            compress(store, codebook)

    def test_reconstruction_cosine(self, rng):
        # threshold fixed from an oracle run on this clustered configuration
        store, _ = family_corpus(rng, 300, 16, 32)
        k = default_centroid_count(store.total_tokens)
        while k > store.total_tokens:
            k //= 2
        codebook = train_codebook(store, k=k, iterations=4, seed=0)
        index = compress(store, codebook)
        tokens = np.vstack([m.astype(np.float64) for m in store.entries.values()])
        codes = unpack_codes(index.packed_codes, 32)
        recon = (
            codebook.centroids[index.centroid_ids.astype(np.int64)]
            + index.codec.values[np.arange(32)[None, :], codes]
        ).astype(np.float64)
        recon /= np.linalg.norm(recon, axis=1, keepdims=True)
        cosines = np.einsum("ij,ij->i", tokens / np.linalg.norm(tokens, axis=1, keepdims=True), recon)
        assert cosines.mean() >= 0.85


class TestDecompress:
    def test_bad_centroid_id(self, rng):
        store = random_store(rng, 10, 8)
        codebook = train_codebook(store, k=4, iterations=2, seed=0)
        index = compress(store, codebook)
        with pytest.raises(BadCentroidId):
            decompress(ResidualCode(4, bytes(2)), codebook, index.codec)
        with pytest.raises(BadCentroidId):
            decompress(ResidualCode(-1, bytes(2)), codebook, index.codec)

    def test_zero_representatives_give_centroid(self, rng):
        centroids = unit_rows(rng, 4, 8).astype(np.float32)
        codebook = Codebook(centroids=centroids, seed=0)
        codec = ResidualCodec(
            cutoffs=np.zeros((8, 3), np.float32), values=np.zeros((8, 4), np.float32)
        )
        got = decompress(ResidualCode(2, bytes(2)), codebook, codec)
        np.testing.assert_allclose(got, centroids[2], atol=1e-6)

    def test_decompress_unit_norm(self, rng):
        store = random_store(rng, 20, 8)
        codebook = train_codebook(store, k=8, iterations=3, seed=0)
        index = compress(store, codebook)
        vec = decompress(
            ResidualCode(int(index.centroid_ids[0]), index.packed_codes[0].tobytes()),
            codebook,
            index.codec,
        )
        assert np.linalg.norm(vec.astype(np.float64)) == pytest.approx(1.0, abs=1e-3)


class TestSearch:
    def _built(self, rng, n_docs=120, dim=16, tokens=8, k=32):
        store, identities = family_corpus(rng, n_docs, tokens, dim, family_size=10)
        if k is None:
            k = default_centroid_count(store.total_tokens)
            while k > store.total_tokens:
                k //= 2
        codebook = train_codebook(store, k=k, iterations=4, seed=0)
        return store, compress(store, codebook), identities

    def test_exhaustive_limit_equals_exact_over_decompressed(self, rng):
        store, index, _ = self._built(rng)
        dim = store.dim
        # oracle: exact search over a store of publicly decompressed vectors
        recon_entries = {}
        for i, doc_id in enumerate(index.doc_ids):
            rows = []
            for pos in range(int(index.offsets[i + 1] - index.offsets[i])):
                t = int(index.offsets[i]) + pos
                rows.append(
                    decompress(
                        ResidualCode(int(index.centroid_ids[t]), index.packed_codes[t].tobytes()),
                        index.codebook,
                        index.codec,
                    )
                )
            recon_entries[doc_id] = np.vstack(rows)
        for _ in range(5):
            q = unit_rows(rng, 4, dim)
            got = search_compressed(
                index, q, k=index.n_docs, nprobe=index.codebook.k, candidate_cap=index.n_docs
            )
            oracle = sorted(
                ((d, maxsim(q, m)) for d, m in recon_entries.items()),
                key=lambda e: (-e[1], e[0]),
            )
            assert got.doc_ids() == [d for d, _ in oracle]
            np.testing.assert_allclose(
                [s for _, s in got.entries], [s for _, s in oracle], atol=1e-9
            )

    def test_separation_preserved(self, rng):
        # corpus with one verbatim match and orthogonal distractors
        dim = 16
        q = np.eye(dim)[:3]
        matrices = {"match": np.vstack([q, np.eye(dim)[3:5]])}
        for i in range(dim - 5):
            matrices[f"other{i}"] = np.eye(dim)[5 + i : 6 + i]
        store = store_from_matrices(matrices)
        codebook = train_codebook(store, k=8, iterations=4, seed=0)
        index = compress(store, codebook)
        got = search_compressed(index, q, k=1, nprobe=4, candidate_cap=16)
        exact = search_exact(build_exact(store, "float32"), q, k=1)
        assert got.entries[0][0] == "match"
        assert got.entries[0][0] == exact.entries[0][0]

    def test_overlap_improves_with_nprobe(self, rng):
        store, index, identities = self._built(rng, n_docs=400, tokens=16, k=None)
        exact_index = build_exact(store, "float32")
        queries = family_queries(rng, identities, 20, 16)
        overlaps = []
        for nprobe in (1, 4, index.codebook.k):
            total = 0.0
            for q in queries.values():
                approx = set(search_compressed(index, q, 10, nprobe=nprobe,
                                               candidate_cap=400).doc_ids())
                exact = set(search_exact(exact_index, q, 10).doc_ids())
                total += len(approx & exact) / 10
            overlaps.append(total / len(queries))
        assert overlaps[2] >= overlaps[0]
        assert overlaps[2] >= 0.9

    def test_candidate_cap_respected(self, rng):
        store, index, _ = self._built(rng)
        q = unit_rows(rng, 4, store.dim)
        got = search_compressed(index, q, k=5, nprobe=index.codebook.k, candidate_cap=5)
        assert len(got) == 5

    def test_parameter_validation(self, rng):
        store, index, _ = self._built(rng, n_docs=20)
        q = unit_rows(rng, 2, store.dim)
        with pytest.raises(ValueError):
            search_compressed(index, q, k=0)
        with pytest.raises(ValueError):
            search_compressed(index, q, k=5, candidate_cap=4)
        with pytest.raises(DimMismatch):
            search_compressed(index, unit_rows(rng, 2, store.dim * 2), k=1)

    def test_deterministic(self, rng):
        store, index, _ = self._built(rng, n_docs=50)
        q = unit_rows(rng, 3, store.dim)
        first = search_compressed(index, q, k=10)
        for _ in range(3):
            assert search_compressed(index, q, k=10).entries == first.entries


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path, rng):
        store = random_store(rng, 30, 12, min_tokens=2, max_tokens=9)
        codebook = train_codebook(store, k=8, iterations=3, seed=5)
        index = compress(store, codebook)
        save_compressed(index, tmp_path / "idx")
        back = load_compressed(tmp_path / "idx")
        np.testing.assert_array_equal(back.codebook.centroids, index.codebook.centroids)
        np.testing.assert_array_equal(back.codec.cutoffs, index.codec.cutoffs)
        np.testing.assert_array_equal(back.codec.values, index.codec.values)
        assert back.doc_ids == index.doc_ids
        np.testing.assert_array_equal(back.offsets, index.offsets)
        np.testing.assert_array_equal(back.centroid_ids, index.centroid_ids)
        np.testing.assert_array_equal(back.packed_codes, index.packed_codes)
        np.testing.assert_array_equal(back.ivf_offsets, index.ivf_offsets)
        np.testing.assert_array_equal(back.ivf_docs, index.ivf_docs)
        np.testing.assert_array_equal(back.ivf_positions, index.ivf_positions)
        q = unit_rows(rng, 3, 12)
        assert (
            search_compressed(back, q, k=10).entries
            == search_compressed(index, q, k=10).entries
        )

    def test_identical_bytes_across_builds(self, tmp_path, rng):
        store = random_store(rng, 30, 12, min_tokens=2, max_tokens=9)
        for name in ("one", "two"):
            codebook = train_codebook(store, k=8, iterations=3, seed=5)
            save_compressed(compress(store, codebook), tmp_path / name)
        for filename in ("codebook.bin", "residuals.bin", "ivf.bin", "meta.json"):
            assert (tmp_path / "one" / filename).read_bytes() == (
                tmp_path / "two" / filename
            ).read_bytes(), filename
