"""Command-line harness.

Subcommands: prepare, synth-data, train, transfer, evaluate, decode,
lm-train, introspect. Model/frontend/decoder/training settings come from an
INI config file (see config.py); any key can be overridden with repeated
--set section.key=value flags, and the decoder settings additionally have
dedicated flags. Report paths write CSV plus PNG figures (--no-figures to
skip the figures).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import introspect, lm, net, plots, synth, training
from .decode import DecoderConfig, beam_search_decode, greedy_decode
from .frontend import extract_features, filter_dataset, load_audio, load_manifest, save_manifest
from .transfer import load_checkpoint


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convasr",
        description="Convolutional CTC speech recognizer with transfer training",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument(
            "--set", dest="overrides", action="append", default=[],
            metavar="SECTION.KEY=VALUE", help="override a config key",
        )

    p = sub.add_parser("prepare", help="filter a dataset manifest")
    add_config_args(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="filtered manifest path")
    p.add_argument("--report", help="JSON report path (default <out>.report.json)")

    p = sub.add_parser("synth-data", help="generate a synthetic tone-language dataset")
    p.add_argument("--language", choices=["alpha", "beta"], required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--words-min", type=int, default=2)
    p.add_argument("--words-max", type=int, default=4)
    p.add_argument("--grapheme-s", type=float, default=0.12)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--min-duration-s", type=float, default=0.0)

    p = sub.add_parser("train", help="train a model from scratch")
    add_config_args(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("transfer", help="adapt a checkpoint to a new dataset")
    add_config_args(p)
    p.add_argument("--base-checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--k", type=int, required=True, help="number of frozen lower layers")
    p.add_argument("--reinit", action="store_true",
                   help="reinitialize the trainable layers instead of retaining them")
    p.add_argument("--new-labels", default="",
                   help="graphemes to append to the alphabet, e.g. 'äöüß'")
    p.add_argument("--no-figures", action="store_true")

    def add_decoder_args(p):
        p.add_argument("--lm", help="ARPA language model path")
        p.add_argument("--beam-width", type=int)
        p.add_argument("--w-lm", type=float)
        p.add_argument("--w-valid-word", type=float)

    p = sub.add_parser("evaluate", help="score a checkpoint on a manifest")
    add_config_args(p)
    add_decoder_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("decode", help="decode audio files to transcripts")
    add_config_args(p)
    add_decoder_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--greedy", action="store_true", help="greedy instead of beam search")
    p.add_argument("audio", nargs="+", help="WAV files")

    p = sub.add_parser("lm-train", help="train an n-gram LM, write ARPA")
    p.add_argument("--manifest", help="take sentences from manifest transcripts")
    p.add_argument("--text", help="plain text file, one sentence per line")
    p.add_argument("--order", type=int, default=4)
    p.add_argument("--add-k", type=float, default=0.01)
    p.add_argument("--out", required=True, help="output ARPA path")

    p = sub.add_parser("introspect", help="weight histograms, diffs, filters")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--other", help="second checkpoint for difference analysis")
    p.add_argument("--layer", type=int, default=1,
                   help="1-based layer for filter export (default: input layer)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")
    return parser


def _decoder_config(app, args) -> DecoderConfig:
    model = lm.load_arpa(args.lm) if args.lm else None
    return DecoderConfig(
        beam_width=args.beam_width or app.decoder_beam_width,
        w_lm=args.w_lm if args.w_lm is not None else app.decoder_w_lm,
        w_valid_word=(
            args.w_valid_word if args.w_valid_word is not None
            else app.decoder_w_valid_word
        ),
        lm=model,
    )


def cmd_prepare(args) -> int:
    app = config_mod.load_config(args.config, args.overrides)
    entries = load_manifest(args.manifest)
    kept, report = filter_dataset(
        entries, app.frontend, base_dir=Path(args.manifest).parent
    )
    save_manifest(kept, args.out)
    report_path = args.report or f"{args.out}.report.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report.as_dict(), fh, indent=2)
    print(
        f"kept {report.kept} of {len(entries)} utterances "
        f"(too long: {report.too_long}, empty transcript: "
        f"{report.empty_transcript}, unreadable: {report.unreadable})"
    )
    return 0


def cmd_synth_data(args) -> int:
    manifest = synth.generate_dataset(
        args.language, args.out, args.count, seed=args.seed,
        words_range=(args.words_min, args.words_max),
        grapheme_s=args.grapheme_s, noise=args.noise,
        min_duration_s=args.min_duration_s,
    )
    print(f"wrote {args.count} utterances, manifest at {manifest}")
    return 0


def cmd_train(args) -> int:
    app = config_mod.load_config(args.config, args.overrides)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "loss_log.csv"
    result = training.run_train(
        args.manifest, app.alphabet, app.model, app.frontend, app.training,
        log_path=log_path, checkpoint_dir=out / "checkpoints",
    )
    print(
        f"trained {result.steps} steps, final batch loss "
        f"{result.losses[-1]:.4f}, skipped {result.skipped_infeasible} "
        f"infeasible samples"
    )
    if not args.no_figures:
        rows = training.read_loss_log(log_path)
        plots.render_loss_curves({"train": rows}, out / "loss_curve.png")
    return 0


def cmd_transfer(args) -> int:
    app = config_mod.load_config(args.config, args.overrides)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "loss_log.csv"
    result = training.run_transfer(
        args.base_checkpoint, args.k, args.reinit, tuple(args.new_labels),
        args.manifest, app.frontend, app.training,
        log_path=log_path, checkpoint_dir=out / "checkpoints",
    )
    print(
        f"transfer ({'reinit' if args.reinit else 'retained'}, k={args.k}) "
        f"ran {result.steps} steps, final batch loss {result.losses[-1]:.4f}"
    )
    if not args.no_figures:
        rows = training.read_loss_log(log_path)
        plots.render_loss_curves({"transfer": rows}, out / "loss_curve.png")
    return 0


def cmd_evaluate(args) -> int:
    app = config_mod.load_config(args.config, args.overrides)
    dec_cfg = _decoder_config(app, args)
    loaded = load_checkpoint(args.checkpoint)
    params = loaded.params
    samples, skipped = training.load_samples(
        args.manifest, app.frontend, params.alphabet
    )
    rows, summary = training.evaluate_model(
        params, samples, dec_cfg, batch_size=app.training.batch_size
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    training.write_eval_report(rows, out / "report.csv")
    g, b = summary["greedy"], summary["beam"]
    summary_obj = {
        "count": summary["count"],
        "skipped": len(skipped),
        "mean_loss": summary["mean_loss"],
        "greedy": {"ler": g.mean_ler, "wer": g.mean_wer,
                   "pooled_ler": g.pooled_ler, "pooled_wer": g.pooled_wer},
        "beam": {"ler": b.mean_ler, "wer": b.mean_wer,
                 "pooled_ler": b.pooled_ler, "pooled_wer": b.pooled_wer},
    }
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary_obj, fh, indent=2)
    print(
        f"{summary['count']} utterances | greedy LER {g.mean_ler:.2%} "
        f"WER {g.mean_wer:.2%} | beam LER {b.mean_ler:.2%} WER {b.mean_wer:.2%}"
    )
    if not args.no_figures:
        plots.render_eval_scores(summary, out / "eval_scores.png")
    return 0


def cmd_decode(args) -> int:
    app = config_mod.load_config(args.config, args.overrides)
    dec_cfg = _decoder_config(app, args)
    params = load_checkpoint(args.checkpoint).params
    for path in args.audio:
        w = load_audio(path)
        feats = extract_features(w, app.frontend)
        result = net.forward(params, feats.frames[None])
        lp = result.log_probs[0, : int(result.out_lengths[0])].astype(np.float64)
        if args.greedy:
            text = greedy_decode(lp, params.alphabet)
        else:
            text, _ = beam_search_decode(lp, params.alphabet, dec_cfg)
        print(f"{path}\t{text}")
    return 0


def cmd_lm_train(args) -> int:
    if bool(args.manifest) == bool(args.text):
        print("lm-train needs exactly one of --manifest or --text", file=sys.stderr)
        return 2
    if args.manifest:
        sentences = [e.text.split() for e in load_manifest(args.manifest)]
    else:
        with open(args.text, encoding="utf-8") as fh:
            sentences = [line.split() for line in fh if line.strip()]
    model = lm.train_ngram(sentences, args.order, add_k=args.add_k)
    lm.save_arpa(model, args.out)
    print(
        f"trained order-{args.order} model on {len(sentences)} sentences, "
        f"vocab {len(model.vocab)}, wrote {args.out}"
    )
    return 0


def cmd_introspect(args) -> int:
    params = load_checkpoint(args.checkpoint).params
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hists = []
    for i in range(params.config.num_layers):
        edges, fractions = introspect.weight_histogram(params, i)
        hists.append((i, edges, fractions))
    introspect.histogram_to_csv(hists, out / "weight_histograms.csv")
    layer = args.layer - 1
    if not 0 <= layer < params.config.num_layers:
        print(f"layer {args.layer} out of range", file=sys.stderr)
        return 2
    grids = introspect.export_filters(params, layer)
    introspect.filters_to_csv(grids, out / f"filters_layer{args.layer}.csv", layer)
    if not args.no_figures:
        plots.render_weight_histograms(hists, out / "weight_histograms.png")
        plots.render_filter_grid(
            grids, out / f"filters_layer{args.layer}.png",
            title=f"layer {args.layer} filters",
        )
    if args.other:
        other = load_checkpoint(args.other).params
        diffs = introspect.weight_diff(params, other)
        with open(out / "weight_diff.csv", "w", encoding="utf-8") as fh:
            fh.write("layer,max_abs,mean_abs,skipped\n")
            for d in diffs:
                fh.write(f"{d.layer + 1},{d.max_abs:.9g},{d.mean_abs:.9g},{int(d.skipped)}\n")
        diff_grids = introspect.export_filters(params, layer, other=other)
        introspect.filters_to_csv(
            diff_grids, out / f"filter_diff_layer{args.layer}.csv", layer
        )
        if not args.no_figures:
            plots.render_diff_histograms(diffs, out / "weight_diff.png")
            plots.render_filter_grid(
                diff_grids, out / f"filter_diff_layer{args.layer}.png",
                title=f"layer {args.layer} filter differences",
            )
    print(f"introspection artifacts written to {out}")
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "synth-data": cmd_synth_data,
    "train": cmd_train,
    "transfer": cmd_transfer,
    "evaluate": cmd_evaluate,
    "decode": cmd_decode,
    "lm-train": cmd_lm_train,
    "introspect": cmd_introspect,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
