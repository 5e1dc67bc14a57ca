"""``crisis-triage`` command line.

Exit codes: 0 success, 1 validation failure (bad corpus or config, or an unreadable
input file), 2 runtime error (backend, training, evaluation), 64 usage error.
Every artifact-writing command also writes a provenance record (config
fingerprint, seed, library versions; no timestamps): ``provenance.json``
inside output directories, ``<file>.provenance.json`` beside single files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Optional, Sequence

from . import __version__
from .annotation import AnnotationError
from .augmentation import ChunkConfig, chunk_corpus
from .config import ConfigError, RunConfig, load_config
from .corpus import (
    LONG_SPARSE_SPEC,
    CorpusError,
    SignalSpec,
    corpus_stats,
    generate_synthetic_corpus,
    parse_corpus,
    serialize_corpus,
)
from .enrichment import HttpAnnotatorBackend, NullAnnotator, annotate_call, render_enriched
from .evaluation import (
    ABLATIONS,
    EvalReport,
    EvaluationError,
    environment_info,
    fingerprint,
    chunk_seed,
    reasoning_for_chunk,
    run_ablations,
    run_cv,
)
from .io import atomic_write_text, canonical_json, write_json
from .llm_client import BackendError, ChatCompletionsClient, HttpTextGenBackend
from .modeling import ReferenceBackend, make_example, train, training_accuracy
from .inference import predict_calls
from .reasoning import ReasoningError, generate_reasoning_backend, generate_reasoning_template

log = logging.getLogger("crisistriage")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2, 64
PROVENANCE_SCHEMA = "crisistriage.provenance"

SIGNALS = {
    "mixed": SignalSpec(),
    "lexical": SignalSpec(mode="lexical"),
    "cue": SignalSpec(mode="cue"),
    "long-sparse": LONG_SPARSE_SPEC,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit 2, which we reserve for runtime errors
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# --- helpers ----------------------------------------------------------------


def _run_config(args: argparse.Namespace, **overrides: Any) -> RunConfig:
    flags = {
        "corpus": getattr(args, "corpus", None),
        "seed": getattr(args, "seed", None),
        "output_dir": getattr(args, "out_dir", None),
    }
    flags.update(overrides)
    return load_config(getattr(args, "config", None), flags)


def _provenance(target: Path, command: str, cfg: dict[str, Any], seed: Optional[int], outputs: Sequence[str]) -> None:
    """``<dir>/provenance.json`` for directory outputs, ``<file>.provenance.json`` for single files."""
    path = target / "provenance.json" if target.is_dir() else target.with_name(target.name + ".provenance.json")
    write_json(
        path,
        {
            "schema": PROVENANCE_SCHEMA,
            "schema_version": 1,
            "command": command,
            "config": cfg,
            "config_fingerprint": fingerprint(cfg),
            "seed": seed,
            "versions": environment_info(),
            "outputs": sorted(outputs),
        },
    )


def _text_client(cfg: RunConfig) -> ChatCompletionsClient:
    tb = cfg.text_backend
    return ChatCompletionsClient(
        model=tb.model, timeout=tb.timeout, max_retries=tb.max_retries, backoff_s=tb.backoff_s, temperature=tb.temperature
    )


def _load_corpus(path: Optional[str]):
    if not path:
        raise ConfigError("no corpus given (positional argument or 'corpus' in the config)")
    return parse_corpus(path)


def _jsonl(rows: Sequence[dict]) -> str:
    return "".join(canonical_json(r, indent=None) for r in rows)


# --- commands ---------------------------------------------------------------


def cmd_validate(args) -> int:
    calls = parse_corpus(args.corpus)
    print(canonical_json(corpus_stats(calls).to_dict()), end="")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SIGNALS[args.signal]
    if args.signal_rate is not None:
        spec = replace(spec, signal_rate=args.signal_rate)
    calls = generate_synthetic_corpus(args.seed, args.n, spec)
    out = Path(args.out)
    atomic_write_text(out, serialize_corpus(calls))
    cfg = {"seed": args.seed, "n": args.n, "signal": args.signal, "spec": spec.to_dict()}
    _provenance(out, "synth", cfg, args.seed, [out.name])
    print(f"wrote {len(calls)} calls to {out}")
    return EXIT_OK


def cmd_enrich(args) -> int:
    cfg = _run_config(args)
    calls = _load_corpus(cfg.corpus)
    if args.backend == "http":
        a = cfg.annotator
        backend = HttpAnnotatorBackend(
            _text_client(cfg), audio_uri_template=a.audio_uri_template, speakers=a.speakers, max_in_flight=a.max_in_flight
        )
    else:
        backend = NullAnnotator()
    enriched = [annotate_call(c, backend) for c in calls]
    out = Path(args.out)
    atomic_write_text(out, serialize_corpus(enriched))
    outputs = [out.name]
    if args.transcripts:
        tdir = Path(args.transcripts)
        for call in enriched:
            atomic_write_text(tdir / f"{call.call_id}.txt", render_enriched(call, True) + "\n")
        outputs.append(tdir.name)
    _provenance(out, "enrich", {"backend": args.backend, "annotator": cfg.to_dict()["annotator"]}, None, outputs)
    print(f"enriched {len(enriched)} calls -> {out}")
    return EXIT_OK


def cmd_augment(args) -> int:
    calls = parse_corpus(args.corpus)
    try:
        ccfg = ChunkConfig(args.duration, args.min_tail)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    chunks = chunk_corpus(calls, ccfg)
    out = Path(args.out)
    atomic_write_text(out, serialize_corpus([ch.to_call() for ch in chunks]))
    cfg = {"target_duration_s": ccfg.target_duration_s, "min_tail_fraction": ccfg.min_tail_fraction}
    _provenance(out, "augment", cfg, None, [out.name])
    print(f"{len(calls)} calls -> {len(chunks)} chunks -> {out}")
    return EXIT_OK


def cmd_reason(args) -> int:
    cfg = _run_config(args, reasoning_mode=args.mode)
    calls = _load_corpus(cfg.corpus)
    pipe = cfg.pipeline()
    text_backend = HttpTextGenBackend(_text_client(cfg)) if cfg.reasoning_mode == "backend" else None
    rows = []
    for call in calls:
        text = render_enriched(call, cfg.include_annotations)
        seed = chunk_seed(call.call_id, cfg.seed)
        if text_backend is None:
            target = generate_reasoning_template(text, call.label, pipe.taf, seed)
        else:
            target = generate_reasoning_backend(
                text, call.label, pipe.taf, text_backend, max_attempts=cfg.text_backend.max_attempts, seed=seed
            )
        rows.append({"call_id": call.call_id, "label": call.label, "text": target.text,
                     "assessment": target.assessment.to_dict(), **target.provenance()})
    out = Path(args.out)
    atomic_write_text(out, _jsonl(rows))
    _provenance(out, "reason", cfg.to_dict(), cfg.seed, [out.name])
    fallbacks = sum(r["fallback"] for r in rows)
    print(f"{len(rows)} rationales -> {out} ({fallbacks} template fallbacks)")
    return EXIT_OK


def _training_set(cfg: RunConfig, calls):
    pipe = cfg.pipeline()
    text_backend = HttpTextGenBackend(_text_client(cfg)) if pipe.reasoning_mode == "backend" else None
    chunks = chunk_corpus(calls, pipe.chunk, augment=pipe.use_augmentation)
    examples = [
        make_example(ch, reasoning_for_chunk(ch, pipe, text_backend), pipe.include_annotations) for ch in chunks
    ]
    return pipe, examples


def cmd_train(args) -> int:
    cfg = _run_config(args)
    calls = _load_corpus(cfg.corpus)
    pipe, examples = _training_set(cfg, calls)
    backend = ReferenceBackend(**pipe.backend)
    result = train(examples, backend, replace(pipe.train, seed=pipe.train.seed + 1000 * pipe.seed))
    out = Path(args.out)
    model_path = out / "model.json"
    backend.save(model_path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "l_cls", "l_gen", "total"])
    for i, e in enumerate(result.epoch_losses):
        w.writerow([i, repr(e.l_cls), repr(e.l_gen), repr(e.total)])
    atomic_write_text(out / "training_curve.csv", buf.getvalue())
    summary = {
        "epochs_run": len(result.epoch_losses),
        "stopped_early": result.stopped_early,
        "n_examples": len(examples),
        "train_accuracy": training_accuracy(backend, examples),
        "final_losses": vars(result.epoch_losses[-1]),
    }
    write_json(out / "train_summary.json", summary)
    _provenance(out, "train", pipe.to_dict(), pipe.seed, ["model.json", "training_curve.csv", "train_summary.json"])
    print(f"trained on {len(examples)} chunks for {summary['epochs_run']} epochs -> {model_path}")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _run_config(args)
    calls = _load_corpus(cfg.corpus)
    backend = ReferenceBackend.load(args.model)
    pipe = cfg.pipeline()
    chunks = chunk_corpus(calls, pipe.chunk, augment=pipe.use_augmentation)
    preds, per_call = predict_calls(backend, chunks, pipe.include_annotations, pipe.aggregation)
    truth = {c.call_id: c.label for c in calls}
    out = Path(args.out)
    atomic_write_text(out / "chunk_predictions.jsonl", _jsonl([p.to_dict() for p in preds]))
    call_rows = [{**row, "true": truth[cid]} for cid, row in per_call.items()]
    atomic_write_text(out / "call_predictions.jsonl", _jsonl(call_rows))
    _provenance(out, "predict", {**pipe.to_dict(), "model": str(args.model)}, pipe.seed,
                ["chunk_predictions.jsonl", "call_predictions.jsonl"])
    print(f"{len(preds)} chunk predictions, {len(per_call)} calls -> {out}")
    return EXIT_OK


def _summary_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["Configuration", "Accuracy", "MacroF1"], lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.summary_row())
    return buf.getvalue()


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in name.lower()).strip("_") or "report"


def _write_reports(out: Path, reports: Sequence[EvalReport]) -> list[str]:
    names = []
    for r in reports:
        fname = f"report_{_slug(r.name)}.json"
        write_json(out / fname, r.to_dict())
        names.append(fname)
    atomic_write_text(out / "summary.csv", _summary_csv(reports))
    return names + ["summary.csv"]


def cmd_evaluate(args) -> int:
    overrides = {
        "k": args.k,
        "use_augmentation": False if args.no_augmentation else None,
        "include_annotations": False if args.no_annotations else None,
        "use_auxiliary_loss": False if args.no_auxiliary_loss else None,
    }
    cfg = _run_config(args, **overrides)
    calls = _load_corpus(cfg.corpus)
    pipe = cfg.pipeline()
    text_backend = HttpTextGenBackend(_text_client(cfg)) if pipe.reasoning_mode == "backend" else None
    if args.ablations:
        reports = run_ablations(calls, pipe, list(ABLATIONS), text_backend=text_backend)
    else:
        reports = [run_cv(calls, pipe, text_backend=text_backend)]
    out = Path(cfg.output_dir)
    outputs = _write_reports(out, reports)
    _provenance(out, "evaluate", pipe.to_dict(), pipe.seed, outputs)
    sys.stdout.write(_summary_csv(reports))
    return EXIT_OK


def cmd_baseline(args) -> int:
    from .baselines.cv import run_acoustic_cv, run_zeroshot_cv
    from .baselines.svm import SvmConfig

    cfg = _run_config(args, k=args.k)
    calls = _load_corpus(cfg.corpus)
    out = Path(cfg.output_dir)
    if args.kind == "acoustic":
        features = _acoustic_features(cfg, calls, args)
        s = cfg.svm
        svm_cfg = SvmConfig(c=s.c, gamma=s.gamma, class_weight=s.class_weight, tolerance=s.tolerance,
                            max_passes=s.max_passes)
        report = run_acoustic_cv(calls, features, svm_cfg, k=cfg.k, seed=cfg.seed)
    else:
        backend = HttpTextGenBackend(_text_client(cfg))
        report = run_zeroshot_cv(calls, backend, cfg.taf, k=cfg.k, seed=cfg.seed,
                                 include_annotations=cfg.include_annotations,
                                 max_attempts=cfg.text_backend.max_attempts)
    outputs = _write_reports(out, [report])
    _provenance(out, f"baseline {args.kind}", report.config, cfg.seed, outputs)
    sys.stdout.write(_summary_csv([report]))
    return EXIT_OK


def _acoustic_features(cfg: RunConfig, calls, args):
    from .baselines import acoustic

    ac = cfg.acoustic
    features_csv = args.features_csv or ac.features_csv
    if features_csv:
        return acoustic.read_feature_csv(features_csv)
    if args.synthetic_audio or ac.synthetic_audio:
        return {
            c.call_id: acoustic.call_features(
                acoustic.synth_call_audio(c, ac.sample_rate, ac.time_scale, cfg.seed), ac.sample_rate, c, ac.time_scale
            )
            for c in calls
        }
    audio_dir = args.audio_dir or ac.audio_dir
    if not audio_dir:
        raise ConfigError("acoustic baseline needs --features-csv, --audio-dir or --synthetic-audio")
    feats = {}
    for c in calls:
        wav = Path(audio_dir) / f"{c.call_id}.wav"
        if not wav.exists():
            raise ConfigError(f"missing audio file {wav}")
        samples, sr = acoustic.read_wav(wav)
        feats[c.call_id] = acoustic.call_features(samples, sr, c)
    return feats


def cmd_report(args) -> int:
    from .plotting import plot_confusion, plot_macro_f1

    reports = []
    for path in args.reports:
        try:
            reports.append(EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8"))))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"{path}: not a readable evaluation report ({exc})") from None
    out = Path(args.out_dir)
    atomic_write_text(out / "summary.csv", _summary_csv(reports))
    outputs = ["summary.csv", "macro_f1.png"]
    for r in reports:
        name = f"confusion_{_slug(r.name)}.png"
        plot_confusion(r, out / name)
        outputs.append(name)
    plot_macro_f1(reports, out / "macro_f1.png")
    cfg = {"reports": [r.fingerprint for r in reports]}
    _provenance(out, "report", cfg, None, outputs)
    sys.stdout.write(_summary_csv(reports))
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="crisis-triage", description="Crisis-level triage of hotline calls.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("validate", help="check a corpus file and print its statistics")
    s.add_argument("corpus")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("synth", help="write a seeded synthetic corpus")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n", type=int, default=60)
    s.add_argument("--signal", choices=sorted(SIGNALS), default="mixed")
    s.add_argument("--signal-rate", type=float, default=None, help="override the planted-signal rate")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    def common(sp, corpus_positional=True):
        if corpus_positional:
            sp.add_argument("corpus", nargs="?", default=None, help="corpus JSONL (overrides the config)")
        sp.add_argument("--config", default=None, help="run configuration JSON")
        sp.add_argument("--seed", type=int, default=None)

    s = sub.add_parser("enrich", help="add paralinguistic annotations to a corpus")
    common(s)
    s.add_argument("--backend", choices=["null", "http"], default="null")
    s.add_argument("--out", required=True)
    s.add_argument("--transcripts", default=None, help="also write rendered transcripts to this directory")
    s.set_defaults(func=cmd_enrich)

    s = sub.add_parser("augment", help="split calls into fixed-duration chunks")
    s.add_argument("corpus")
    s.add_argument("--duration", type=float, default=400.0, help="target chunk span in seconds")
    s.add_argument("--min-tail", type=float, default=0.25, help="merge a final chunk shorter than this fraction")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("reason", help="write TAF rationales for every call")
    common(s)
    s.add_argument("--mode", choices=["template", "backend"], default="template")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reason)

    s = sub.add_parser("train", help="train the reference backend on a whole corpus")
    common(s)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="chunk and call predictions from a saved model")
    common(s)
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="k-fold cross-validation of the pipeline")
    common(s)
    s.add_argument("--out-dir", default=None)
    s.add_argument("--k", type=int, default=None)
    s.add_argument("--ablations", action="store_true", help="also run every ablation row")
    s.add_argument("--no-augmentation", action="store_true")
    s.add_argument("--no-annotations", action="store_true")
    s.add_argument("--no-auxiliary-loss", action="store_true")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("baseline", help="cross-validated acoustic or zero-shot baseline")
    s.add_argument("kind", choices=["acoustic", "zeroshot"])
    common(s)
    s.add_argument("--out-dir", default=None)
    s.add_argument("--k", type=int, default=None)
    s.add_argument("--features-csv", default=None)
    s.add_argument("--audio-dir", default=None)
    s.add_argument("--synthetic-audio", action="store_true", help="render tone audio from the transcript timing")
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("report", help="summary CSV and figures from evaluation reports")
    s.add_argument("reports", nargs="+")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CorpusError, ConfigError, AnnotationError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (BackendError, ReasoningError, EvaluationError, RuntimeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
