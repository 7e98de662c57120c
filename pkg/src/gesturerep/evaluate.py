"""Intrinsic evaluation: form-feature correlation and dialogue hypotheses.

Gesture-level embeddings are the mean of the gesture's window embeddings.
The correlation analysis relates pairwise cosine similarity to the number
of shared form features (Spearman), with Welch tests comparing the
5-shared group against the 0/1/2-shared groups under Bonferroni.

The hypothesis battery classifies every unordered gesture pair by
(same referent?, same speaker?, same dialogue?) and tests:
    H1a  same speaker:      same-referent pairs more similar than different-referent
    H1b  different speaker: same-referent pairs more similar than different-referent
    H2   same referent:     same-speaker pairs more similar than different-speaker
    H3   different speaker: within-dialogue pairs more similar than cross-dialogue
H1a/H1b/H2 verdicts require the mean ordering plus a Bonferroni-adjusted
Welch p < alpha within their 4-set comparison family (6 pairwise tests per
family). H3 is one planned comparison on the pooled different-speaker
sets (within- vs cross-dialogue); the referent-balanced design keeps the
pool compositions comparable, and the per-referent-kind cross-dialogue
tests are still reported in full.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import stats
from .pose import GestureRecord, IntegrityError, PairAnnotation
from .trainer import Checkpoint, GestureDataset, ModelBundle

log = logging.getLogger(__name__)

WITHIN_CONDITIONS = (
    "same-ref-same-spk",
    "same-ref-diff-spk",
    "diff-ref-same-spk",
    "diff-ref-diff-spk",
)
CROSS_CONDITIONS = (
    "same-ref-diff-spk-diff-dlg",
    "diff-ref-diff-spk-diff-dlg",
)


@dataclass
class PairSet:
    condition: str
    pairs: list[tuple[str, str]]
    scores: np.ndarray | None = None

    @property
    def mean(self) -> float | None:
        return float(self.scores.mean()) if self.scores is not None and len(self.scores) else None


# ---------------------------------------------------------------------------
# embeddings

def embed_gestures(checkpoint: Checkpoint, dataset: GestureDataset,
                   layer: str = "projection") -> dict[str, np.ndarray]:
    """One embedding per gesture id: mean over its window embeddings."""
    bundle = ModelBundle.from_config(checkpoint.config)
    window_emb = bundle.embed_windows(checkpoint.params, dataset.normalized(), layer)
    return pool_by_gesture(window_emb, dataset.window_gestures, dataset.records)


def pool_by_gesture(window_embeddings: np.ndarray, window_gestures: list[str],
                    records: dict[str, GestureRecord]) -> dict[str, np.ndarray]:
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    for emb, gid in zip(window_embeddings, window_gestures):
        if gid in sums:
            sums[gid] = sums[gid] + emb
            counts[gid] += 1
        else:
            sums[gid] = emb.copy()
            counts[gid] = 1
    missing = [gid for gid in records if gid not in sums]
    if missing:
        log.warning("excluding %d gesture(s) with zero sampled windows", len(missing))
    return {gid: sums[gid] / counts[gid] for gid in sums}


def _unit_rows(table: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    out = {}
    for gid, v in table.items():
        n = np.linalg.norm(v)
        out[gid] = v / n if n > 0 else v
    return out


# ---------------------------------------------------------------------------
# form-feature correlation

@dataclass
class SimilarityReport:
    spearman_rho: float
    spearman_p: float
    group_scores: dict[int, list[float]]
    group_means: dict[int, float]
    tests: list[dict]
    pair_rows: list[dict] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "spearman_rho": self.spearman_rho,
            "spearman_p": self.spearman_p,
            "group_means": {str(k): v for k, v in sorted(self.group_means.items())},
            "group_sizes": {str(k): len(v) for k, v in sorted(self.group_scores.items())},
            "tests": self.tests,
        }


def form_feature_correlation(embeddings: dict[str, np.ndarray],
                             annotations: list[PairAnnotation]) -> SimilarityReport:
    missing = sorted({g for p in annotations for g in (p.gesture_id_a, p.gesture_id_b)
                      if g not in embeddings})
    if missing:
        raise IntegrityError(f"no embedding for annotated gesture(s): {missing[:10]}"
                             + ("..." if len(missing) > 10 else ""))
    unit = _unit_rows(embeddings)
    sims = []
    counts = []
    rows = []
    group_scores: dict[int, list[float]] = {k: [] for k in range(6)}
    for p in annotations:
        s = float(np.dot(unit[p.gesture_id_a], unit[p.gesture_id_b]))
        sims.append(s)
        counts.append(p.shared_count)
        group_scores[p.shared_count].append(s)
        rows.append({"pair_id": p.pair_id, "gesture_a": p.gesture_id_a,
                     "gesture_b": p.gesture_id_b, "shared_count": p.shared_count,
                     "similarity": s})
    rho, p_value = stats.spearman(sims, counts)
    group_means = {k: float(np.mean(v)) for k, v in group_scores.items() if v}

    tests = []
    raw_p = []
    comparisons = [(5, low) for low in (0, 1, 2)
                   if len(group_scores[low]) >= 2 and len(group_scores[5]) >= 2]
    for hi, lo in comparisons:
        r = stats.welch_t_test(group_scores[hi], group_scores[lo])
        tests.append({"groups": [hi, lo], "t": r.statistic, "p": r.p_value,
                      "n_a": r.n_a, "n_b": r.n_b})
        raw_p.append(r.p_value)
    if raw_p:
        for t, adj in zip(tests, stats.bonferroni(raw_p)):
            t["p_adjusted"] = adj
    return SimilarityReport(rho, p_value, group_scores, group_means, tests, rows)


# ---------------------------------------------------------------------------
# pair sets

def build_pair_sets(records: list[GestureRecord], scope: str = "within-dialogue",
                    cap: int | None = None, seed: int = 0) -> list[PairSet]:
    """Classify every unordered gesture pair into the six condition sets.

    `within-dialogue` returns the four same-dialogue sets; `cross-dialogue`
    additionally returns the two different-dialogue sets. `cap` takes a
    seeded subsample per set (off by default).
    """
    if scope not in ("within-dialogue", "cross-dialogue"):
        raise ValueError(f"unknown scope {scope!r}")
    gids = [r.gesture_id for r in records]
    spk = _factorize([r.speaker_id for r in records])
    dlg = _factorize([r.dialogue_id for r in records])
    ref = _factorize([r.referent_id for r in records])
    i_idx, j_idx = np.triu_indices(len(records), k=1)
    same_spk = spk[i_idx] == spk[j_idx]
    same_dlg = dlg[i_idx] == dlg[j_idx]
    same_ref = ref[i_idx] == ref[j_idx]

    masks = {
        "same-ref-same-spk": same_dlg & same_spk & same_ref,
        "same-ref-diff-spk": same_dlg & ~same_spk & same_ref,
        "diff-ref-same-spk": same_dlg & same_spk & ~same_ref,
        "diff-ref-diff-spk": same_dlg & ~same_spk & ~same_ref,
    }
    if scope == "cross-dialogue":
        masks["same-ref-diff-spk-diff-dlg"] = ~same_dlg & same_ref
        masks["diff-ref-diff-spk-diff-dlg"] = ~same_dlg & ~same_ref

    rng = np.random.default_rng([seed, 6])
    sets = []
    for condition, mask in masks.items():
        ii, jj = i_idx[mask], j_idx[mask]
        if cap is not None and len(ii) > cap:
            pick = rng.choice(len(ii), size=cap, replace=False)
            ii, jj = ii[pick], jj[pick]
        sets.append(PairSet(condition, [(gids[a], gids[b]) for a, b in zip(ii, jj)]))
    return sets


def _factorize(values: list[str]) -> np.ndarray:
    codes: dict[str, int] = {}
    return np.array([codes.setdefault(v, len(codes)) for v in values])


def score_pair_set(pair_set: PairSet, embeddings: dict[str, np.ndarray]) -> PairSet:
    unit = _unit_rows(embeddings)
    scores = np.array([float(np.dot(unit[a], unit[b])) for a, b in pair_set.pairs])
    return PairSet(pair_set.condition, pair_set.pairs, scores)


# ---------------------------------------------------------------------------
# hypothesis battery

_FAMILY_WITHIN = WITHIN_CONDITIONS
_FAMILY_CROSS = ("same-ref-diff-spk", "diff-ref-diff-spk") + CROSS_CONDITIONS

_VERDICT_COMPARISONS = {
    "H1a": ("same-ref-same-spk", "diff-ref-same-spk"),
    "H1b": ("same-ref-diff-spk", "diff-ref-diff-spk"),
    "H2": ("same-ref-same-spk", "same-ref-diff-spk"),
}
# H3 pools all different-speaker pairs on each side; the referent-balanced
# corpus design keeps the same-referent fraction identical across the pools
_H3_POOLS = {
    "diff-spk-within-dlg": ("same-ref-diff-spk", "diff-ref-diff-spk"),
    "diff-spk-cross-dlg": ("same-ref-diff-spk-diff-dlg", "diff-ref-diff-spk-diff-dlg"),
}


@dataclass
class HypothesisReport:
    sets: dict[str, PairSet]
    tests: list[dict]
    verdicts: dict[str, bool | None]  # None = not evaluable
    alpha: float
    degenerate: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "sets": [
                {"condition": c, "n": len(s.pairs), "mean": s.mean}
                for c, s in self.sets.items()
            ],
            "tests": self.tests,
            "verdicts": self.verdicts,
            "degenerate_sets": self.degenerate,
        }


def _family_tests(sets: dict[str, PairSet], family: tuple[str, ...], family_name: str,
                  degenerate: list[str]) -> list[dict]:
    present = [c for c in family if c in sets and sets[c].scores is not None and len(sets[c].scores) >= 2]
    tests = []
    raw_p = []
    for i in range(len(present)):
        for j in range(i + 1, len(present)):
            a, b = present[i], present[j]
            try:
                r = stats.welch_t_test(sets[a].scores, sets[b].scores)
                tests.append({"family": family_name, "groups": [a, b], "t": r.statistic,
                              "p": r.p_value, "n_a": r.n_a, "n_b": r.n_b})
                raw_p.append(r.p_value)
            except stats.DegenerateDataError:
                for cond in (a, b):
                    if float(np.var(sets[cond].scores)) == 0.0 and cond not in degenerate:
                        degenerate.append(cond)
                tests.append({"family": family_name, "groups": [a, b], "t": None,
                              "p": None, "degenerate": True})
    adjusted = stats.bonferroni(raw_p) if raw_p else []
    it = iter(adjusted)
    for t in tests:
        if t.get("p") is not None:
            t["p_adjusted"] = next(it)
    return tests


def _lookup(tests: list[dict], a: str, b: str) -> dict | None:
    for t in tests:
        if set(t["groups"]) == {a, b}:
            return t
    return None


def hypothesis_battery(embeddings: dict[str, np.ndarray], pair_sets: list[PairSet],
                       alpha: float = 0.05) -> HypothesisReport:
    sets = {s.condition: (s if s.scores is not None else score_pair_set(s, embeddings))
            for s in pair_sets}
    degenerate = [c for c, s in sets.items()
                  if len(s.pairs) >= 2 and float(np.var(s.scores)) == 0.0]
    tests = _family_tests(sets, _FAMILY_WITHIN, "within-dialogue", degenerate)
    has_cross = all(c in sets for c in CROSS_CONDITIONS)
    if has_cross:
        tests += _family_tests(sets, _FAMILY_CROSS, "cross-dialogue", degenerate)
        for name, members in _H3_POOLS.items():
            pooled = np.concatenate([sets[m].scores for m in members])
            pairs = [p for m in members for p in sets[m].pairs]
            sets[name] = PairSet(name, pairs, pooled)
            if len(pairs) >= 2 and float(np.var(pooled)) == 0.0:
                degenerate.append(name)
        # H3 is one planned comparison, so it carries no multiplicity penalty
        tests += _family_tests(sets, tuple(_H3_POOLS), "h3-pooled", degenerate)

    def verdict(a: str, b: str) -> bool | None:
        if a not in sets or b not in sets or not len(sets[a].pairs) or not len(sets[b].pairs):
            return None
        if a in degenerate or b in degenerate:
            return None
        t = _lookup(tests, a, b)
        if t is None or t.get("p_adjusted") is None:
            return None
        return bool(sets[a].mean > sets[b].mean and t["p_adjusted"] < alpha)

    verdicts: dict[str, bool | None] = {
        name: verdict(a, b) for name, (a, b) in _VERDICT_COMPARISONS.items()
    }
    if has_cross:
        verdicts["H3"] = verdict("diff-spk-within-dlg", "diff-spk-cross-dlg")
    return HypothesisReport(sets, tests, verdicts, alpha, degenerate)
