"""Diagnostic probing: which form features are linearly decodable?

Consumes the corpus and checkpoint left by 04_train_and_evaluate.py,
probes trained-encoder embeddings against a random-init baseline per
feature, and tests the AUC differences (Mann-Whitney, Benjamini-Hochberg
across the five features). About two minutes on one core.

    python demos/04_train_and_evaluate.py   # first
    python demos/05_probing.py
"""

import os
import sys

from gesturerep import evaluate, probing, trainer
from gesturerep.pose import load_pair_annotations

OUT = os.path.join(os.path.dirname(__file__), "..", "demo_output")
CORPUS = os.path.join(OUT, "corpus")
CHECKPOINT = os.path.join(OUT, "checkpoint.gckp")

if not os.path.exists(CHECKPOINT):
    sys.exit("no demo checkpoint found; run demos/04_train_and_evaluate.py first")

dataset = trainer.GestureDataset.from_corpus(CORPUS)
annotations = load_pair_annotations(os.path.join(CORPUS, "pairs.csv"),
                                    list(dataset.records.values()))
checkpoint = trainer.load_checkpoint(CHECKPOINT)

trained = evaluate.embed_gestures(checkpoint, dataset, layer="encoder")
baseline = probing.random_baseline_embeddings(checkpoint.config, dataset, seed=1001)

cfg = probing.ProbeConfig(seeds=20)  # the full protocol defaults to 100 seeded runs
print(f"probing {len(annotations)} pairs x 5 features x 2 representations "
      f"x {cfg.seeds} seeds...")
results = probing.run_probe_experiment(annotations, trained, baseline, cfg, base_seed=1)

print(f"\n{'feature':>12}  {'trained':>8}  {'baseline':>8}  {'adj p':>9}  significant")
for r in results:
    if r.representation == "trained":
        partner = next(x for x in results
                       if x.feature == r.feature and x.representation != "trained")
        print(f"{r.feature:>12}  {r.auc_mean:8.3f}  {partner.auc_mean:8.3f}  "
              f"{r.p_adjusted:9.4f}  {r.significant}")
