"""Train the combined-objective model at desk scale and evaluate it.

Uses the default synthetic corpus (512 gestures) and the desk profile
(batch 32, 30 epochs, narrow encoder), the same regime the acceptance
suite validates. Takes roughly five minutes on one CPU core and leaves
its corpus + checkpoint in ./demo_output for 05_probing.py to reuse.

    python demos/04_train_and_evaluate.py
"""

import os

from gesturerep import evaluate, probing, synthgen, trainer
from gesturerep.pose import load_pair_annotations
from gesturerep.towers import GestureEncoderConfig

OUT = os.path.join(os.path.dirname(__file__), "..", "demo_output")
CORPUS = os.path.join(OUT, "corpus")
CHECKPOINT = os.path.join(OUT, "checkpoint.gckp")

synthgen.generate(synthgen.SynthConfig(seed=1), CORPUS)
dataset = trainer.GestureDataset.from_corpus(CORPUS)
annotations = load_pair_annotations(os.path.join(CORPUS, "pairs.csv"),
                                    list(dataset.records.values()))
print(f"corpus: {len(dataset.records)} gestures, {len(dataset)} windows, "
      f"{len(annotations)} annotated pairs")

train_cfg = trainer.TrainConfig(
    mode="combined", batch_size=32, max_epochs=30, seed=1,
    encoder=GestureEncoderConfig(channels=(8, 16, 32, 64), temporal_kernel=5,
                                 temporal_strides=(1, 2, 1, 2)),
    speech_hidden_dim=64,
)
print("training (about five minutes on one core)...")
checkpoint = trainer.fit(dataset, train_cfg,
                         metrics_path=os.path.join(OUT, "metrics.jsonl"))
trainer.save_checkpoint(CHECKPOINT, checkpoint)
print(f"loss {checkpoint.train_history[0]:.3f} -> {checkpoint.train_history[-1]:.3f} "
      f"(best val epoch {checkpoint.epoch}); checkpoint saved to {CHECKPOINT}")

trained = evaluate.embed_gestures(checkpoint, dataset, layer="projection")
baseline = probing.random_baseline_embeddings(checkpoint.config, dataset, seed=1001)

rep_t = evaluate.form_feature_correlation(trained, annotations)
rep_b = evaluate.form_feature_correlation(baseline, annotations)
print("\nform-feature correlation (cosine similarity vs shared count):")
print(f"  trained:          rho = {rep_t.spearman_rho:+.3f} (p = {rep_t.spearman_p:.2e})")
print(f"  random baseline:  rho = {rep_b.spearman_rho:+.3f} (p = {rep_b.spearman_p:.2e})")
print("  mean similarity per shared count:",
      {k: round(v, 3) for k, v in sorted(rep_t.group_means.items())})

sets = evaluate.build_pair_sets(list(dataset.records.values()), scope="cross-dialogue")
battery = evaluate.hypothesis_battery(trained, sets)
print("\nhypothesis battery (referent / speaker / dialogue structure):")
for c, s in battery.sets.items():
    print(f"  {c:>34}: n={len(s.pairs):>6}  mean={s.mean:+.3f}")
print("verdicts:", battery.verdicts)
