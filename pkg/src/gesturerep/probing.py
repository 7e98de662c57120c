"""Diagnostic probing of frozen gesture representations.

A probe maps each gesture of an annotated pair through a shared linear
layer (encoder_dim -> 32) with ReLU, concatenates the two projections and
applies a final linear layer with sigmoid to predict whether the pair
shares one binary form feature. Probes train full-batch with Adam on
binary cross-entropy; each epoch re-randomizes the slot order of the pair
so neither input position specializes.

The experiment trains one probe per (feature, representation, seed),
compares trained-model AUC lists against the random-baseline lists with a
Mann-Whitney U test per feature and applies Benjamini-Hochberg across the
five features. Seeded runs are independent, so they could run in parallel;
here they run serially (one-core target).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from . import stats
from .diffcore import Tensor
from .pose import IntegrityError, PairAnnotation, FORM_FEATURES
from .trainer import Adam, GestureDataset, ModelBundle
from .evaluate import pool_by_gesture


class SplitError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProbeConfig:
    width: int = 32
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 5e-4
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seeds: int = 100
    alpha: float = 0.05
    shared_weights: bool = True
    select: str = "best_val"  # or "final"
    max_split_retries: int = 25

    def __post_init__(self):
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        if self.width <= 0:
            raise ValueError("probe width must be positive")
        if self.select not in ("best_val", "final"):
            raise ValueError("select must be 'best_val' or 'final'")


@dataclass
class ProbeResult:
    feature: str
    representation: str  # "trained" | "random-baseline"
    auc_values: list[float]
    test: stats.TestResult | None = None
    p_adjusted: float | None = None
    significant: bool | None = None

    @property
    def auc_mean(self) -> float:
        return float(np.mean(self.auc_values))

    def to_json_dict(self) -> dict:
        return {
            "feature": self.feature,
            "representation": self.representation,
            "auc_mean": self.auc_mean,
            "auc_values": self.auc_values,
            "u_statistic": self.test.statistic if self.test else None,
            "p": self.test.p_value if self.test else None,
            "p_adjusted": self.p_adjusted,
            "significant": self.significant,
        }


# ---------------------------------------------------------------------------
# probe model

def probe_init(dim: int, cfg: ProbeConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    limit = np.sqrt(6.0 / dim)
    params = {
        "probe.w_a": rng.uniform(-limit, limit, size=(dim, cfg.width)),
        "probe.b_a": np.zeros(cfg.width),
        "probe.out_w": rng.uniform(-np.sqrt(6.0 / (2 * cfg.width)), np.sqrt(6.0 / (2 * cfg.width)),
                                   size=(2 * cfg.width, 1)),
        "probe.out_b": np.zeros(1),
    }
    if not cfg.shared_weights:
        params["probe.w_b"] = rng.uniform(-limit, limit, size=(dim, cfg.width))
        params["probe.b_b"] = np.zeros(cfg.width)
    return params


def probe_logits(params: dict[str, Tensor], emb_a: Tensor, emb_b: Tensor) -> Tensor:
    if emb_a.ndim != 2 or emb_a.shape != emb_b.shape:
        raise dc.ShapeError(f"probe inputs must be matching (N, dim), got {emb_a.shape} vs {emb_b.shape}")
    if emb_a.shape[1] != params["probe.w_a"].shape[0]:
        raise dc.ShapeError(f"probe expects dim {params['probe.w_a'].shape[0]}, got {emb_a.shape[1]}")
    wa, ba = params["probe.w_a"], params["probe.b_a"]
    wb = params.get("probe.w_b", wa)
    bb = params.get("probe.b_b", ba)
    ha = dc.relu(dc.add(dc.matmul(emb_a, wa), ba))
    hb = dc.relu(dc.add(dc.matmul(emb_b, wb), bb))
    joint = dc.concat([ha, hb], axis=1)
    return dc.reshape(dc.add(dc.matmul(joint, params["probe.out_w"]), params["probe.out_b"]),
                      (emb_a.shape[0],))


def probe_forward(params: dict[str, Tensor], emb_a: Tensor, emb_b: Tensor) -> Tensor:
    """Pair similarity probability in (0, 1)."""
    return dc.sigmoid(probe_logits(params, emb_a, emb_b))


def bce_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    # softplus(z) - y*z == -y log sigmoid(z) - (1-y) log(1 - sigmoid(z))
    return dc.mean(dc.add(dc.softplus(logits), dc.mul(logits, -np.asarray(labels, dtype=float))))


# ---------------------------------------------------------------------------
# training one probe

def _three_way_split(n: int, fractions, labels: np.ndarray, seed_chain: list[int],
                     max_retries: int):
    for retry in range(max_retries):
        rng = np.random.default_rng(seed_chain + [retry])
        perm = rng.permutation(n)
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        train = perm[:n_train]
        val = perm[n_train : n_train + n_val]
        test = perm[n_train + n_val :]
        ok = all(len(np.unique(labels[part])) == 2 for part in (train, val, test))
        if ok:
            if retry:
                import logging

                logging.getLogger(__name__).info("probe split retried %d time(s)", retry)
            return train, val, test
    raise SplitError(f"could not find a split with both classes in {max_retries} tries")


def train_probe(emb_a: np.ndarray, emb_b: np.ndarray, labels: np.ndarray,
                cfg: ProbeConfig, seed: int | list[int]) -> float:
    """Train one probe; returns test ROC-AUC of the selected epoch."""
    emb_a = np.asarray(emb_a, dtype=float)
    emb_b = np.asarray(emb_b, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n = len(labels)
    seed_chain = [seed] if isinstance(seed, int) else list(seed)
    train, val, test = _three_way_split(n, cfg.split_fractions, labels, seed_chain + [7],
                                        cfg.max_split_retries)
    rng = np.random.default_rng(seed_chain + [8])
    params_nd = probe_init(emb_a.shape[1], cfg, rng)
    params = {k: Tensor(v, requires_grad=True) for k, v in params_nd.items()}
    optimizer = Adam(params, cfg.learning_rate)

    def frozen():
        return {k: Tensor(p.values.copy()) for k, p in params.items()}

    def auc_on(indices, snapshot) -> float:
        logits = probe_logits(snapshot, Tensor(emb_a[indices]), Tensor(emb_b[indices]))
        return stats.roc_auc(logits.values, labels[indices])

    best_val = -np.inf
    best_snapshot = frozen()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        swap = rng.random(len(train)) < 0.5  # re-randomize slot order each epoch
        a = np.where(swap[:, None], emb_b[train], emb_a[train])[order]
        b = np.where(swap[:, None], emb_a[train], emb_b[train])[order]
        y = labels[train][order]
        for i in range(0, len(order), cfg.batch_size):
            sl = slice(i, i + cfg.batch_size)
            dc.zero_grad(params)
            loss = bce_loss(probe_logits(params, Tensor(a[sl]), Tensor(b[sl])), y[sl])
            dc.backward(loss)
            optimizer.step()
        if cfg.select == "best_val":
            v = auc_on(val, params)
            if v > best_val:
                best_val = v
                best_snapshot = frozen()
    chosen = best_snapshot if cfg.select == "best_val" else params
    return auc_on(test, chosen)


# ---------------------------------------------------------------------------
# experiment loop

def _pair_arrays(annotations: list[PairAnnotation], table: dict[str, np.ndarray]):
    missing = sorted({g for p in annotations for g in (p.gesture_id_a, p.gesture_id_b)
                      if g not in table})
    if missing:
        raise IntegrityError(f"embedding table missing gesture(s): {missing[:10]}"
                             + ("..." if len(missing) > 10 else ""))
    a = np.stack([table[p.gesture_id_a] for p in annotations])
    b = np.stack([table[p.gesture_id_b] for p in annotations])
    return a, b


def run_probe_experiment(annotations: list[PairAnnotation],
                         trained: dict[str, np.ndarray],
                         baseline: dict[str, np.ndarray],
                         cfg: ProbeConfig = ProbeConfig(),
                         base_seed: int = 0,
                         features: tuple[str, ...] = FORM_FEATURES,
                         label_override: dict[str, np.ndarray] | None = None) -> list[ProbeResult]:
    """5 features x 2 representations x cfg.seeds probe trainings + significance."""
    tables = {"trained": _pair_arrays(annotations, trained),
              "random-baseline": _pair_arrays(annotations, baseline)}
    results: list[ProbeResult] = []
    raw_p: list[float] = []
    per_feature: list[tuple[ProbeResult, ProbeResult]] = []
    for f_idx, feature in enumerate(features):
        if label_override and feature in label_override:
            labels = np.asarray(label_override[feature], dtype=int)
        else:
            labels = np.array([p.features[feature] for p in annotations], dtype=int)
        rep_results = {}
        for rep in ("trained", "random-baseline"):
            a, b = tables[rep]
            # paired design: both representations see the same split/init seeds
            aucs = [train_probe(a, b, labels, cfg, [base_seed, f_idx, run])
                    for run in range(cfg.seeds)]
            rep_results[rep] = ProbeResult(feature, rep, [float(x) for x in aucs])
        test = stats.mann_whitney_u(rep_results["trained"].auc_values,
                                    rep_results["random-baseline"].auc_values)
        rep_results["trained"].test = test
        rep_results["random-baseline"].test = test
        raw_p.append(test.p_value)
        per_feature.append((rep_results["trained"], rep_results["random-baseline"]))
        results.extend(rep_results.values())

    adjusted = stats.benjamini_hochberg(raw_p)
    for (tr, bl), adj in zip(per_feature, adjusted):
        significant = bool(adj < cfg.alpha and tr.auc_mean > bl.auc_mean)
        for r in (tr, bl):
            r.p_adjusted = adj
            r.significant = significant
    return results


def random_baseline_embeddings(config: dict, dataset: GestureDataset,
                               seed: int = 0) -> dict[str, np.ndarray]:
    """Encoder-layer embeddings from a frozen randomly initialized encoder."""
    cfg = dict(config)
    cfg["speech_layers"] = None  # gesture tower only
    bundle = ModelBundle.from_config(cfg)
    params = bundle.init_params(seed)
    window_emb = bundle.embed_windows(params, dataset.normalized(), layer="encoder")
    return pool_by_gesture(window_emb, dataset.window_gestures, dataset.records)
