"""Command-line entry point: synth | train | embed | eval-form | eval-dialogue | probe | grad-check.

Configuration is a flat `key = value` text file (dots namespace the keys,
`#` starts a comment) merged as: built-in defaults -> profile overrides ->
config file -> command-line flags. Unknown keys or flags are hard usage
errors. All randomness flows from --seed; omitting it draws an entropy
seed and logs it. Reports are machine-readable JSON written atomically;
human-readable tables go to stderr.

The 27-joint keypoint ordering consumed by `synth`/`train` is: body 0-6
(nose, neck, left/right shoulder, left/right elbow, torso), left hand 7-16
(wrist then digits), right hand 17-26.
"""

from __future__ import annotations

import argparse
import json
import os
import secrets
import sys

import numpy as np

from . import diffcore as dc
from . import objectives, probing, synthgen
from .augment import AugmentationKind
from .evaluate import (
    build_pair_sets,
    embed_gestures,
    form_feature_correlation,
    hypothesis_battery,
)
from .pose import atomic_write_text, load_pair_annotations, load_gesture_records
from .towers import (
    GestureEncoder,
    GestureEncoderConfig,
    ProjectionHead,
    ProjectionHeadConfig,
    SpeechHead,
    SpeechHeadConfig,
)
from .trainer import (
    GestureDataset,
    TrainConfig,
    fit,
    load_checkpoint,
    save_checkpoint,
)


class UsageError(ValueError):
    pass


def _int_list(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v != ""]


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


# key -> (parser, default)
CONFIG_KEYS: dict[str, tuple] = {
    "train.mode": (str, "combined"),
    "train.lr": (float, 0.001),
    "train.batch_size": (int, 128),
    "train.max_epochs": (int, 200),
    "train.temperature": (float, 0.1),
    "train.val_fraction": (float, 0.1),
    "encoder.channels": (_int_list, [32, 64, 128, 256]),
    "encoder.temporal_kernel": (int, 9),
    "encoder.temporal_strides": (_int_list, [1, 2, 1, 2]),
    "encoder.output_dim": (int, 256),
    "encoder.min_frames": (int, 4),
    "speech.hidden_dim": (int, 256),
    "speech.output_dim": (int, 128),
    "augment.kinds": (_str_list, ["mirror", "scale", "random_move", "jitter", "shear"]),
    "augment.probability": (float, 0.5),
    "augment.seed": (int, 0),
    "corpus.fps": (int, 25),
    "corpus.window_seconds": (float, 1.0),
    "corpus.offset_frames": (int, 2),
    "corpus.min_overlap": (float, 0.5),
    "synth.dialogues": (int, 8),
    "synth.speakers": (int, 2),
    "synth.referents": (int, 16),
    "synth.gestures_per_speaker": (int, 32),
    "synth.feature_scale": (float, 16.0),
    "synth.referent_scale": (float, 6.0),
    "synth.speaker_scale": (float, 9.5),
    "synth.dialogue_scale": (float, 9.0),
    "synth.noise_scale": (float, 3.0),
    "synth.frame_noise": (float, 1.0),
    "synth.flip_probability": (float, 0.45),
    "synth.speech_layers": (int, 4),
    "synth.speech_rate": (int, 25),
    "synth.speech_dim": (int, 16),
    "probe.width": (int, 32),
    "probe.epochs": (int, 50),
    "probe.lr": (float, 5e-4),
    "probe.seeds": (int, 100),
    "probe.alpha": (float, 0.05),
    "eval.downsample_cap": (int, 0),
    "eval.cross_dialogue": (_bool, True),
}

PROFILES = {
    "paper": {},
    "desk": {
        "train.batch_size": 32,
        "train.max_epochs": 30,
        "encoder.channels": [8, 16, 32, 64],
        "encoder.temporal_kernel": 5,
        "speech.hidden_dim": 64,
        "probe.seeds": 20,
    },
}


def parse_config_file(path) -> dict:
    values = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in CONFIG_KEYS:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            parser, _default = CONFIG_KEYS[key]
            try:
                values[key] = parser(value.strip())
            except (ValueError, TypeError) as e:
                raise UsageError(f"{path}:{lineno}: bad value for {key}: {e}") from e
    return values


def resolve_config(args) -> dict:
    cfg = {k: default for k, (_p, default) in CONFIG_KEYS.items()}
    cfg.update(PROFILES[args.profile])
    if args.config:
        cfg.update(parse_config_file(args.config))
    if getattr(args, "mode", None):
        cfg["train.mode"] = args.mode
    return cfg


def resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    seed = secrets.randbits(31)
    print(f"[gesturerep] no --seed given; using entropy seed {seed}", file=sys.stderr)
    return seed


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    kinds = tuple(AugmentationKind(k) for k in cfg["augment.kinds"])
    return TrainConfig(
        mode=cfg["train.mode"],
        learning_rate=cfg["train.lr"],
        batch_size=cfg["train.batch_size"],
        max_epochs=cfg["train.max_epochs"],
        temperature=cfg["train.temperature"],
        validation_fraction=cfg["train.val_fraction"],
        seed=seed,
        encoder=GestureEncoderConfig(
            channels=tuple(cfg["encoder.channels"]),
            temporal_kernel=cfg["encoder.temporal_kernel"],
            temporal_strides=tuple(cfg["encoder.temporal_strides"]),
            output_dim=cfg["encoder.output_dim"],
            min_frames=cfg["encoder.min_frames"],
        ),
        speech_hidden_dim=cfg["speech.hidden_dim"],
        speech_output_dim=cfg["speech.output_dim"],
        augment_kinds=kinds,
        augment_probability=cfg["augment.probability"],
    )


def _load_dataset(cfg: dict, data_dir) -> GestureDataset:
    return GestureDataset.from_corpus(
        data_dir,
        fps=None if os.path.exists(os.path.join(data_dir, "meta.json")) else cfg["corpus.fps"],
        window_seconds=cfg["corpus.window_seconds"],
        offset_frames=cfg["corpus.offset_frames"],
        min_overlap=cfg["corpus.min_overlap"],
    )


# ---------------------------------------------------------------------------
# embedding table CSV

def write_embedding_table(path, table: dict[str, np.ndarray]) -> None:
    gids = sorted(table)
    dim = len(next(iter(table.values())))
    lines = ["gesture_id," + ",".join(f"dim_{i}" for i in range(dim))]
    for gid in gids:
        lines.append(gid + "," + ",".join(repr(float(v)) for v in table[gid]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_embedding_table(path) -> dict[str, np.ndarray]:
    import csv

    table = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if not header or header[0] != "gesture_id":
            raise UsageError(f"{path}: not an embedding table")
        for row in reader:
            table[row[0]] = np.array([float(v) for v in row[1:]])
    return table


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    cfg = resolve_config(args)
    seed = resolve_seed(args)
    sc = synthgen.SynthConfig(
        n_dialogues=cfg["synth.dialogues"],
        speakers_per_dialogue=cfg["synth.speakers"],
        referents=cfg["synth.referents"],
        gestures_per_speaker=cfg["synth.gestures_per_speaker"],
        fps=cfg["corpus.fps"],
        window_seconds=cfg["corpus.window_seconds"],
        speech_layers=cfg["synth.speech_layers"],
        speech_rate=cfg["synth.speech_rate"],
        speech_dim=cfg["synth.speech_dim"],
        feature_scale=cfg["synth.feature_scale"],
        referent_scale=cfg["synth.referent_scale"],
        speaker_scale=cfg["synth.speaker_scale"],
        dialogue_scale=cfg["synth.dialogue_scale"],
        gesture_noise_scale=cfg["synth.noise_scale"],
        frame_noise_scale=cfg["synth.frame_noise"],
        feature_flip_probability=cfg["synth.flip_probability"],
        seed=seed,
    )
    corpus = synthgen.generate(sc, args.out)
    print(f"[synth] wrote {len(corpus.records)} gestures, {len(corpus.pairs)} annotated pairs "
          f"to {args.out}", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    seed = resolve_seed(args)
    dataset = _load_dataset(cfg, args.data)
    tc = _train_config(cfg, seed)
    os.makedirs(args.out, exist_ok=True)
    ckpt = fit(dataset, tc, metrics_path=os.path.join(args.out, "metrics.jsonl"))
    save_checkpoint(os.path.join(args.out, "checkpoint.gckp"), ckpt)
    print(f"[train] best epoch {ckpt.epoch}, val loss "
          f"{ckpt.val_history[ckpt.epoch] if ckpt.val_history else float('nan'):.4f}; "
          f"checkpoint in {args.out}", file=sys.stderr)
    return 0


def cmd_embed(args) -> int:
    cfg = resolve_config(args)
    dataset = _load_dataset(cfg, args.data)
    ckpt = load_checkpoint(args.checkpoint)
    table = embed_gestures(ckpt, dataset, layer=args.layer)
    write_embedding_table(args.out, table)
    print(f"[embed] {len(table)} gesture embeddings ({args.layer} layer) -> {args.out}",
          file=sys.stderr)
    return 0


def _similarity_histogram(report) -> str:
    lines = ["shared  n      mean   histogram"]
    for k in range(6):
        scores = report.group_scores.get(k, [])
        if not scores:
            lines.append(f"{k:>6}  {0:>5}      -")
            continue
        mean = float(np.mean(scores))
        bar = "#" * max(1, int(round(40 * (mean + 1) / 2)))
        lines.append(f"{k:>6}  {len(scores):>5}  {mean:+.3f}  {bar}")
    return "\n".join(lines)


def cmd_eval_form(args) -> int:
    cfg = resolve_config(args)
    records = load_gesture_records(os.path.join(args.data, "records.csv"))
    annotations = load_pair_annotations(os.path.join(args.data, "pairs.csv"), records)
    table = read_embedding_table(args.embeddings)
    report = form_feature_correlation(table, annotations)
    atomic_write_text(args.out, json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n")
    csv_path = os.path.splitext(args.out)[0] + "_pairs.csv"
    lines = ["pair_id,gesture_a,gesture_b,shared_count,similarity"]
    for r in report.pair_rows:
        lines.append(f"{r['pair_id']},{r['gesture_a']},{r['gesture_b']},"
                     f"{r['shared_count']},{repr(r['similarity'])}")
    atomic_write_text(csv_path, "\n".join(lines) + "\n")
    print(_similarity_histogram(report), file=sys.stderr)
    print(f"[eval-form] rho={report.spearman_rho:.4f} p={report.spearman_p:.3g} -> {args.out}",
          file=sys.stderr)
    return 0


def cmd_eval_dialogue(args) -> int:
    cfg = resolve_config(args)
    records = load_gesture_records(os.path.join(args.data, "records.csv"))
    table = read_embedding_table(args.embeddings)
    scope = "cross-dialogue" if cfg["eval.cross_dialogue"] else "within-dialogue"
    cap = cfg["eval.downsample_cap"] or None
    seed = resolve_seed(args)
    sets = build_pair_sets(records, scope=scope, cap=cap, seed=seed)
    report = hypothesis_battery(table, sets)
    atomic_write_text(args.out, json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n")
    for c, s in report.sets.items():
        mean = f"{s.mean:+.3f}" if s.mean is not None else "    -"
        print(f"{c:>34}  n={len(s.pairs):>7}  mean={mean}", file=sys.stderr)
    print(f"[eval-dialogue] verdicts {report.verdicts} -> {args.out}", file=sys.stderr)
    return 0


def cmd_probe(args) -> int:
    cfg = resolve_config(args)
    seed = resolve_seed(args)
    dataset = _load_dataset(cfg, args.data)
    records = list(dataset.records.values())
    annotations = load_pair_annotations(os.path.join(args.data, "pairs.csv"), records)
    ckpt = load_checkpoint(args.checkpoint)
    trained = embed_gestures(ckpt, dataset, layer="encoder")
    baseline = probing.random_baseline_embeddings(ckpt.config, dataset, seed=seed + 1)
    pc = probing.ProbeConfig(
        width=cfg["probe.width"],
        epochs=cfg["probe.epochs"],
        learning_rate=cfg["probe.lr"],
        seeds=cfg["probe.seeds"],
        alpha=cfg["probe.alpha"],
    )
    results = probing.run_probe_experiment(annotations, trained, baseline, pc, base_seed=seed)
    atomic_write_text(args.out, json.dumps([r.to_json_dict() for r in results],
                                           sort_keys=True, indent=2) + "\n")
    csv_path = os.path.splitext(args.out)[0] + "_aucs.csv"
    lines = ["feature,representation,seed_index,auc"]
    for r in results:
        for i, auc in enumerate(r.auc_values):
            lines.append(f"{r.feature},{r.representation},{i},{repr(auc)}")
    atomic_write_text(csv_path, "\n".join(lines) + "\n")
    for r in results:
        if r.representation == "trained":
            print(f"{r.feature:>12}: trained {r.auc_mean:.3f} adj_p={r.p_adjusted:.4g} "
                  f"significant={r.significant}", file=sys.stderr)
    print(f"[probe] -> {args.out}", file=sys.stderr)
    return 0


def _gradcheck_models():
    enc_cfg = GestureEncoderConfig(channels=(2, 3), temporal_kernel=3, temporal_strides=(1, 2),
                                   output_dim=6, min_frames=4)
    encoder = GestureEncoder(enc_cfg)
    proj_g = ProjectionHead(ProjectionHeadConfig(6, 5), "proj_g")
    sp_cfg = SpeechHeadConfig(layer_count=2, feature_dim=4, hidden_dim=5, output_dim=6)
    speech = SpeechHead(sp_cfg)
    proj_s = ProjectionHead(ProjectionHeadConfig(6, 5), "proj_s")
    return encoder, proj_g, speech, proj_s, sp_cfg


def gradient_check_battery(epsilon: float = 1e-5, seed: int = 1234) -> dict[str, float]:
    """Finite-difference checks of each loss on raw embeddings and through both towers."""
    rng = np.random.default_rng(seed)
    loss_cfg = objectives.LossConfig(0.1)
    out: dict[str, float] = {}
    for n_b in (2, 3, 4):
        views = rng.standard_normal((2 * n_b, 6))
        out[f"unimodal_raw_n{n_b}"] = dc.check_gradients(
            lambda x: objectives.unimodal_nt_xent(x, loss_cfg), views, epsilon)
        pair = {"x": rng.standard_normal((n_b, 6)), "y": rng.standard_normal((n_b, 6))}
        out[f"multimodal_raw_n{n_b}"] = dc.check_gradients(
            lambda p: objectives.multimodal_info_nce(p["x"], p["y"], loss_cfg),
            pair, epsilon)

    encoder, proj_g, speech, proj_s, sp_cfg = _gradcheck_models()
    margin = 10.0 * epsilon
    for n_b in (2, 3, 4):
        for attempt in range(64):
            prng = np.random.default_rng([seed, n_b, attempt])
            params_nd = encoder.init_params(prng)
            params_nd.update(proj_g.init_params(prng))
            params_nd.update(speech.init_params(prng))
            params_nd.update(proj_s.init_params(prng))
            # break symmetry of zero biases so preactivations spread out
            for k, v in params_nd.items():
                if v.ndim <= 1:
                    params_nd[k] = v + prng.uniform(0.05, 0.15, size=v.shape)
            v1 = prng.standard_normal((n_b, 3, 8, 27))
            v2 = prng.standard_normal((n_b, 3, 8, 27))
            sfeat = prng.standard_normal((n_b, sp_cfg.layer_count, 5, sp_cfg.feature_dim))

            def uni(params):
                za = proj_g.forward(params, encoder.forward(params, dc.Tensor(v1)))
                zb = proj_g.forward(params, encoder.forward(params, dc.Tensor(v2)))
                return objectives.unimodal_nt_xent(dc.concat([za, zb], axis=0), loss_cfg)

            def mm(params):
                zg = proj_g.forward(params, encoder.forward(params, dc.Tensor(v1)))
                zs = proj_s.forward(params, speech.forward(params, dc.Tensor(sfeat)))
                return objectives.multimodal_info_nce(zg, zs, loss_cfg)

            def both(params):
                return objectives.combined_loss(uni(params), mm(params))

            wrapped = {k: dc.Tensor(v) for k, v in params_nd.items()}
            if dc.relu_kink_margin(both(wrapped)) > margin:
                break  # point is safely differentiable; FD is trustworthy here
        out[f"unimodal_towers_n{n_b}"] = dc.check_gradients(uni, params_nd, epsilon)
        out[f"multimodal_towers_n{n_b}"] = dc.check_gradients(mm, params_nd, epsilon)
        out[f"combined_towers_n{n_b}"] = dc.check_gradients(both, params_nd, epsilon)
    return out


def cmd_grad_check(args) -> int:
    results = gradient_check_battery()
    worst = max(results.values())
    payload = {"max_relative_errors": results, "worst": worst, "threshold": 1e-4,
               "passed": bool(worst < 1e-4)}
    text = json.dumps(payload, sort_keys=True, indent=2)
    if args.out:
        atomic_write_text(args.out, text + "\n")
    print(text)
    for name, err in sorted(results.items()):
        print(f"{name:>24}: {err:.3e}", file=sys.stderr)
    return 0 if worst < 1e-4 else 1


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gesturerep",
        description="Contrastive gesture representation learning and intrinsic evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="flat key = value config file")
        p.add_argument("--seed", type=int, default=None, help="global random seed")
        p.add_argument("--profile", choices=sorted(PROFILES), default="paper")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--out", required=True, help="output corpus directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train an encoder with a contrastive objective")
    common(p)
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--mode", choices=["unimodal", "multimodal", "combined"], default=None)
    p.add_argument("--out", required=True, help="output directory (checkpoint + metrics)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="export a gesture embedding table")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--layer", choices=["projection", "encoder"], default="projection")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("eval-form", help="correlate similarity with shared form features")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True, help="output JSON path")
    p.set_defaults(func=cmd_eval_form)

    p = sub.add_parser("eval-dialogue", help="referent/speaker/dialogue hypothesis battery")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True, help="output JSON path")
    p.set_defaults(func=cmd_eval_dialogue)

    p = sub.add_parser("probe", help="diagnostic probing against a random baseline")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output JSON path")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("grad-check", help="finite-difference checks for losses and towers")
    common(p)
    p.add_argument("--out", default=None, help="optional JSON report path")
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
