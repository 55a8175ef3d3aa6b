"""Command-line front end.

Every command exits 0 on success and nonzero with a single line on stderr of
the form ``<error-category>: <message>`` on failure. Commands that write
files also write a resolved-config snapshot next to their outputs; training
runs live under a run directory named by timestamp and seed.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import adapters as adapters_mod
from . import dataio, evaluation, training
from .config import load_config, save_config_snapshot
from .errors import LitettsError


def _add_seed(parser):
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="litetts",
        description="Lightweight GAN TTS with adapter fine-tuning and objective evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-backbone", help="pre-train generator and discriminators")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--steps", type=int, default=None, help="override training.backbone_steps")
    p.add_argument("--run-dir", default=None, help="explicit run directory (default: runs/...)")
    p.add_argument("--runs-root", default="runs")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    _add_seed(p)

    p = sub.add_parser("finetune", help="adapt a backbone to a new language or speaker")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--task", choices=("language", "speaker"), required=True)
    p.add_argument("--mode", choices=("full", "adapters"), required=True)
    p.add_argument("--plan", choices=adapters_mod.PLAN_VARIANTS, default="paper_default")
    p.add_argument("--epochs", type=int, default=None, help="override training.finetune_epochs")
    p.add_argument("--run-dir", default=None)
    p.add_argument("--runs-root", default="runs")
    _add_seed(p)

    p = sub.add_parser("synthesize", help="synthesize a waveform from phoneme symbols")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text-phonemes", required=True, help="space-separated phoneme symbols")
    p.add_argument("--speaker", required=True)
    p.add_argument("--language", required=True)
    p.add_argument("--out", required=True, help="output WAV path")
    _add_seed(p)

    p = sub.add_parser("count-params", help="parameter accounting for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--plan", choices=adapters_mod.PLAN_VARIANTS, default=None,
                   help="inject this plan before counting (backbone checkpoints only)")

    p = sub.add_parser("evaluate", help="synthesize a manifest and score it")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--metrics", required=True, help="comma-separated, e.g. secs,psr")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--recognizer", default=None, help="recognizer checkpoint for psr")
    p.add_argument("--external-scorer", action="append", default=[],
                   metavar="NAME=COMMAND", help="external metric command template")
    _add_seed(p)

    p = sub.add_parser("validate-mushra", help="check PSR rankings against MUSHRA pairs")
    p.add_argument("--pairs", required=True, help="tab-separated pair file")
    p.add_argument("--recognizer", required=True)
    p.add_argument("--out", required=True, help="report JSON path")

    p = sub.add_parser("train-recognizer", help="train the CTC phoneme recognizer")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="recognizer checkpoint path")
    p.add_argument("--epochs", type=int, default=30)
    _add_seed(p)

    return parser


def _resolved_config(args, config):
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def _make_run_dir(args, config, prefix):
    if args.run_dir:
        run_dir = Path(args.run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
    else:
        run_dir = training.make_run_dir(args.runs_root, config.seed, prefix=prefix)
    save_config_snapshot(config, run_dir / "resolved_config.yaml")
    return run_dir


def _cmd_train_backbone(args):
    config = _resolved_config(args, load_config(args.config))
    manifest = dataio.load_manifest(args.manifest, config.audio)
    dataset = dataio.UtteranceDataset(manifest, config.audio)
    run_dir = _make_run_dir(args, config, "backbone")
    path = training.train_backbone(config, dataset, run_dir, steps=args.steps,
                                   resume=args.resume)
    print(path)
    return 0


def _cmd_finetune(args):
    loaded = training.load_checkpoint(args.checkpoint)
    config = _resolved_config(args, loaded.config)
    manifest = dataio.load_manifest(args.manifest, config.audio)
    settings = training.FinetuneSettings(
        task=args.task, mode=args.mode, plan_variant=args.plan,
        epochs=args.epochs or 0, seed=config.seed if args.seed is not None else 0,
    )
    run_dir = _make_run_dir(args, config, f"finetune-{args.task}-{args.mode}")
    path = training.finetune(args.checkpoint, manifest, settings, run_dir)
    print(path)
    return 0


def _cmd_synthesize(args):
    loaded = training.load_checkpoint(args.checkpoint)
    config = _resolved_config(args, loaded.config)
    waveform = training.synthesize(
        loaded, args.text_phonemes.split(), args.speaker, args.language, seed=config.seed
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dataio.write_wav(out, waveform, config.audio.sample_rate)
    save_config_snapshot(config, out.with_suffix(".resolved_config.yaml"))
    print(out)
    return 0


def _cmd_count_params(args):
    loaded = training.load_checkpoint(args.checkpoint)
    generator = loaded.generator
    if args.plan is not None:
        if loaded.plan is not None:
            raise LitettsError("checkpoint already contains adapters; omit --plan",
                               category="adapter-plan-invalid")
        plan = adapters_mod.build_placement_plan(generator, "both", args.plan,
                                                 loaded.config.adapters)
        adapters_mod.inject(generator, plan)
    counts = adapters_mod.count_parameters(generator, adapters_mod.FreezeSpec())
    acoustic = adapters_mod.injected_parameter_count(generator, "acoustic")
    vocoder = adapters_mod.injected_parameter_count(generator, "vocoder")
    print(f"frozen\t{counts.frozen}")
    print(f"trainable\t{counts.trainable}")
    print(f"ratio\t{counts.ratio:.6f}")
    print(f"adapter_params_acoustic\t{acoustic}")
    print(f"adapter_params_vocoder\t{vocoder}")
    print(f"adapter_params_total\t{acoustic + vocoder}")
    return 0


def _cmd_evaluate(args):
    loaded = training.load_checkpoint(args.checkpoint)
    config = _resolved_config(args, loaded.config)
    training.seed_everything(config.seed)
    manifest = dataio.load_manifest(args.manifest, config.audio)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    recognizer = evaluation.load_recognizer(args.recognizer) if args.recognizer else None
    scorers = {}
    for item in args.external_scorer:
        name, _, command = item.partition("=")
        if not command:
            raise LitettsError(f"--external-scorer expects NAME=COMMAND, got {item!r}",
                               category="config-invalid")
        scorers[name] = evaluation.ExternalScorer(name, command)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report = evaluation.evaluate_checkpoint(
        loaded, manifest, metrics, out.parent, recognizer=recognizer,
        external_scorers=scorers,
    )
    with open(out, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    save_config_snapshot(config, out.with_suffix(".resolved_config.yaml"))
    print(out)
    return 0


def _cmd_validate_mushra(args):
    recognizer = evaluation.load_recognizer(args.recognizer)
    pairs = evaluation.load_mushra_pairs(args.pairs, recognizer.audio_config)
    result = evaluation.validate_against_mushra(pairs, recognizer)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        json.dump({
            "accuracy": result.accuracy,
            "evaluated": result.evaluated,
            "successes": result.successes,
            "skipped": [list(s) for s in result.skipped],
            "pairs": result.per_pair,
        }, f, indent=2, sort_keys=True)
    print(f"accuracy\t{result.accuracy:.4f}")
    if result.skipped:
        print(f"skipped\t{len(result.skipped)}", file=sys.stderr)
    return 0


def _cmd_train_recognizer(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    training.seed_everything(config.seed)
    manifest = dataio.load_manifest(args.manifest, config.audio)
    corpus = [
        (dataio.read_wav(e.audio_path, expected_rate=config.audio.sample_rate), e.phonemes)
        for e in manifest.entries
    ]
    recognizer = evaluation.ConvCtcRecognizer(config.audio, manifest.phoneme_vocab.symbols)
    evaluation.ctc_train(recognizer, corpus, epochs=args.epochs, seed=config.seed)
    out = evaluation.save_recognizer(args.out, recognizer)
    save_config_snapshot(config, out.with_suffix(".resolved_config.yaml"))
    print(out)
    return 0


_COMMANDS = {
    "train-backbone": _cmd_train_backbone,
    "finetune": _cmd_finetune,
    "synthesize": _cmd_synthesize,
    "count-params": _cmd_count_params,
    "evaluate": _cmd_evaluate,
    "validate-mushra": _cmd_validate_mushra,
    "train-recognizer": _cmd_train_recognizer,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except LitettsError as e:
        print(f"{e.category}: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # anything unexpected still yields a category line
        print(f"internal-error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
