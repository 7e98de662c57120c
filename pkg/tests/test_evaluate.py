"""Intrinsic evaluation: pooling, correlation report, pair sets, hypothesis battery."""

import itertools

import numpy as np
import pytest

from gesturerep import evaluate
from gesturerep.evaluate import (
    build_pair_sets,
    form_feature_correlation,
    hypothesis_battery,
    pool_by_gesture,
    score_pair_set,
)
from gesturerep.pose import FORM_FEATURES, GestureRecord, IntegrityError, PairAnnotation


def _record(gid, spk, dlg, ref):
    return GestureRecord(gid, spk, dlg, ref, 0, 5)


def _annotation(pid, a, b, count):
    flags = {f: 1 if i < count else 0 for i, f in enumerate(FORM_FEATURES)}
    return PairAnnotation(pid, a, b, flags)


class TestPooling:
    def test_single_window_identity(self):
        emb = np.array([[1.0, 2.0], [5.0, 6.0]])
        records = {"a": _record("a", "s", "d", "r"), "b": _record("b", "s", "d", "r")}
        table = pool_by_gesture(emb, ["a", "b"], records)
        assert np.array_equal(table["a"], [1.0, 2.0])

    def test_duplicate_windows_mean_idempotent(self):
        emb = np.array([[2.0, 4.0], [2.0, 4.0], [8.0, 0.0]])
        records = {"a": _record("a", "s", "d", "r"), "b": _record("b", "s", "d", "r")}
        table = pool_by_gesture(emb, ["a", "a", "b"], records)
        assert np.array_equal(table["a"], [2.0, 4.0])
        assert np.array_equal(table["b"], [8.0, 0.0])

    def test_zero_window_gesture_excluded_with_warning(self, caplog):
        import logging

        emb = np.array([[1.0, 1.0]])
        records = {"a": _record("a", "s", "d", "r"), "ghost": _record("ghost", "s", "d", "r")}
        with caplog.at_level(logging.WARNING):
            table = pool_by_gesture(emb, ["a"], records)
        assert "ghost" not in table
        assert any("zero sampled windows" in r.message for r in caplog.records)

    def test_layer_dims_contract(self, micro_dataset):
        from conftest import micro_train_config
        from gesturerep.trainer import ModelBundle, build_config_dict

        cfg = micro_train_config()
        config = build_config_dict(cfg, micro_dataset)
        config["encoder_output_dim"] = 256
        config["projection_dim"] = 128
        bundle = ModelBundle.from_config(config)
        params = bundle.init_params(0)
        x = micro_dataset.normalized()[:3]
        assert bundle.embed_windows(params, x, layer="projection").shape == (3, 128)
        assert bundle.embed_windows(params, x, layer="encoder").shape == (3, 256)


class TestFormFeatureCorrelation:
    def test_monotone_fixture_gives_rho_one(self):
        # disjoint pairs whose cosine similarity rises with shared count
        embeddings = {}
        annotations = []
        for k in range(6):
            theta = (5 - k) * np.pi / 12  # angle shrinks as count grows
            embeddings[f"a{k}"] = np.array([1.0, 0.0])
            embeddings[f"b{k}"] = np.array([np.cos(theta), np.sin(theta)])
            annotations.append(_annotation(f"p{k}", f"a{k}", f"b{k}", k))
        report = form_feature_correlation(embeddings, annotations)
        assert report.spearman_rho == pytest.approx(1.0)

    def test_missing_embedding_rejected(self):
        annotations = [_annotation("p0", "a", "missing", 3)]
        with pytest.raises(IntegrityError, match="missing"):
            form_feature_correlation({"a": np.ones(4)}, annotations)

    def test_rho_invariant_to_common_rescaling(self):
        rng = np.random.default_rng(0)
        embeddings = {f"g{i}": rng.normal(size=8) for i in range(40)}
        annotations = [_annotation(f"p{i}", f"g{2 * i}", f"g{2 * i + 1}", i % 6)
                       for i in range(20)]
        r1 = form_feature_correlation(embeddings, annotations)
        scaled = {k: 17.0 * v for k, v in embeddings.items()}
        r2 = form_feature_correlation(scaled, annotations)
        assert r1.spearman_rho == pytest.approx(r2.spearman_rho, abs=1e-12)

    def test_shuffled_embeddings_monte_carlo_null(self):
        # a true null yields p < 0.05 for ~1 seed in 20, so demand >= 17 clean
        rng = np.random.default_rng(42)
        n_pairs = 419
        gids = [f"g{i}" for i in range(2 * n_pairs)]
        counts = rng.integers(0, 6, size=n_pairs)
        annotations = [
            PairAnnotation(f"p{i}", gids[2 * i], gids[2 * i + 1],
                           {f: int(j < counts[i]) for j, f in enumerate(FORM_FEATURES)})
            for i in range(n_pairs)
        ]
        clean = 0
        max_abs_rho = 0.0
        for trial in range(20):
            trial_rng = np.random.default_rng([7, trial])
            embeddings = {g: trial_rng.normal(size=16) for g in gids}
            report = form_feature_correlation(embeddings, annotations)
            max_abs_rho = max(max_abs_rho, abs(report.spearman_rho))
            clean += report.spearman_p > 0.05
        assert max_abs_rho < 0.2
        assert clean >= 17

    def test_welch_family_bonferroni(self):
        rng = np.random.default_rng(1)
        embeddings = {}
        annotations = []
        for i in range(60):
            embeddings[f"a{i}"] = rng.normal(size=6)
            embeddings[f"b{i}"] = rng.normal(size=6)
            annotations.append(_annotation(f"p{i}", f"a{i}", f"b{i}", i % 6))
        report = form_feature_correlation(embeddings, annotations)
        assert len(report.tests) == 3  # 5 vs 0, 5 vs 1, 5 vs 2
        for t in report.tests:
            assert t["p_adjusted"] == pytest.approx(min(1.0, 3 * t["p"]))


def _bruteforce_classify(records):
    sets = {c: [] for c in evaluate.WITHIN_CONDITIONS + evaluate.CROSS_CONDITIONS}
    for a, b in itertools.combinations(records, 2):
        same_ref = a.referent_id == b.referent_id
        if a.dialogue_id == b.dialogue_id:
            if a.speaker_id == b.speaker_id:
                key = "same-ref-same-spk" if same_ref else "diff-ref-same-spk"
            else:
                key = "same-ref-diff-spk" if same_ref else "diff-ref-diff-spk"
        else:
            key = ("same-ref-diff-spk-diff-dlg" if same_ref
                   else "diff-ref-diff-spk-diff-dlg")
        sets[key].append(frozenset((a.gesture_id, b.gesture_id)))
    return sets


def _random_records(rng, n):
    records = []
    speaker_dlg = {}
    for i in range(n):
        dlg = f"d{rng.integers(0, 3)}"
        spk = f"{dlg}_s{rng.integers(0, 2)}"
        speaker_dlg[spk] = dlg
        records.append(GestureRecord(f"g{i}", spk, dlg, f"r{rng.integers(0, 4)}", 0, 5))
    return records


class TestPairSets:
    def test_two_speaker_example(self):
        records = [_record("a1", "A", "d", "r1"), _record("a2", "A", "d", "r1"),
                   _record("b1", "B", "d", "r1"), _record("b2", "B", "d", "r1")]
        sets = {s.condition: s for s in build_pair_sets(records)}
        assert len(sets["same-ref-same-spk"].pairs) == 2
        assert len(sets["same-ref-diff-spk"].pairs) == 4
        assert len(sets["diff-ref-same-spk"].pairs) == 0

    def test_single_gesture_all_empty(self):
        sets = build_pair_sets([_record("a", "A", "d", "r")], scope="cross-dialogue")
        assert all(len(s.pairs) == 0 for s in sets)

    def test_partition_against_bruteforce(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            records = _random_records(rng, int(rng.integers(2, 50)))
            sets = build_pair_sets(records, scope="cross-dialogue")
            expected = _bruteforce_classify(records)
            for s in sets:
                got = {frozenset(p) for p in s.pairs}
                assert got == set(expected[s.condition]), s.condition

    def test_partition_covers_all_pairs(self):
        rng = np.random.default_rng(3)
        records = _random_records(rng, 40)
        sets = build_pair_sets(records, scope="cross-dialogue")
        total = sum(len(s.pairs) for s in sets)
        assert total == 40 * 39 // 2
        all_pairs = {frozenset(p) for s in sets for p in s.pairs}
        assert len(all_pairs) == total  # disjoint

    def test_order_invariance(self):
        rng = np.random.default_rng(4)
        records = _random_records(rng, 30)
        a = build_pair_sets(records, scope="cross-dialogue")
        b = build_pair_sets(list(reversed(records)), scope="cross-dialogue")
        for sa, sb in zip(a, b):
            assert {frozenset(p) for p in sa.pairs} == {frozenset(p) for p in sb.pairs}

    def test_seeded_downsampling_cap(self):
        rng = np.random.default_rng(5)
        records = _random_records(rng, 40)
        a = build_pair_sets(records, scope="cross-dialogue", cap=10, seed=3)
        b = build_pair_sets(records, scope="cross-dialogue", cap=10, seed=3)
        for sa, sb in zip(a, b):
            assert len(sa.pairs) <= 10
            assert sa.pairs == sb.pairs


class TestHypothesisBattery:
    def _clustered_embeddings(self, records, rng, referent_pull=4.0, speaker_pull=1.0,
                              dialogue_pull=0.5):
        refs = {r.referent_id for r in records}
        spks = {r.speaker_id for r in records}
        dlgs = {r.dialogue_id for r in records}
        ref_c = {r: rng.normal(size=12) * referent_pull for r in refs}
        spk_c = {s: rng.normal(size=12) * speaker_pull for s in spks}
        dlg_c = {d: rng.normal(size=12) * dialogue_pull for d in dlgs}
        return {
            r.gesture_id: ref_c[r.referent_id] + spk_c[r.speaker_id]
            + dlg_c[r.dialogue_id] + rng.normal(size=12) * 0.5
            for r in records
        }

    def _grid_records(self, n_dialogues=4, referents=4, per=4):
        records = []
        i = 0
        for d in range(n_dialogues):
            for s in range(2):
                for r in range(referents):
                    for _ in range(per):
                        records.append(GestureRecord(f"g{i}", f"d{d}_s{s}", f"d{d}",
                                                     f"r{r}", 0, 5))
                        i += 1
        return records

    def test_planted_clusters_confirm_h1(self):
        rng = np.random.default_rng(6)
        records = self._grid_records()
        embeddings = self._clustered_embeddings(records, rng)
        sets = build_pair_sets(records, scope="cross-dialogue")
        report = hypothesis_battery(embeddings, sets)
        assert report.verdicts["H1a"] is True
        assert report.verdicts["H1b"] is True

    def test_identical_embeddings_flagged_degenerate(self):
        records = self._grid_records(n_dialogues=2, referents=2, per=2)
        embeddings = {r.gesture_id: np.ones(6) for r in records}
        sets = build_pair_sets(records, scope="cross-dialogue")
        report = hypothesis_battery(embeddings, sets)
        assert report.degenerate  # zero-variance groups reported
        assert all(v is None for v in report.verdicts.values())

    def test_json_schema(self):
        rng = np.random.default_rng(8)
        records = self._grid_records()
        embeddings = self._clustered_embeddings(records, rng)
        sets = build_pair_sets(records, scope="cross-dialogue")
        doc = hypothesis_battery(embeddings, sets).to_json_dict()
        assert set(doc) == {"alpha", "sets", "tests", "verdicts", "degenerate_sets"}
        assert {s["condition"] for s in doc["sets"]} == set(
            evaluate.WITHIN_CONDITIONS + evaluate.CROSS_CONDITIONS
            + ("diff-spk-within-dlg", "diff-spk-cross-dlg"))
        assert set(doc["verdicts"]) == {"H1a", "H1b", "H2", "H3"}

    def test_score_pair_set_is_cosine(self):
        embeddings = {"a": np.array([1.0, 0.0]), "b": np.array([1.0, 1.0])}
        ps = evaluate.PairSet("x", [("a", "b")])
        scored = score_pair_set(ps, embeddings)
        assert scored.scores[0] == pytest.approx(1 / np.sqrt(2))
