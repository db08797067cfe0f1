"""Operator command line: curate, index, search, validate, chat, serve, eval.

Exit codes: 0 success, 2 usage/input problem, 3 corrupt data,
4 backend unavailable. Every reporting subcommand takes
--output {text_table,line_delimited} for machine-readable output.
With BACKEND_MODE=stub (the default) every subcommand runs offline.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import config as config_mod
from . import curation, dialogue, metrics, prompting, retrieval, schema
from .backends import BackendUnavailable

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CORRUPT = 3
EXIT_BACKEND = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agriassist",
        description="Retrieval-augmented agricultural advisory engine",
    )
    parser.add_argument("--config", help="YAML config file", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curate", help="run the curation pipeline over raw documents")
    p.add_argument("--input", required=True, help="line-delimited raw documents")
    p.add_argument("--out-dir", required=True, help="directory for passages/reports")
    p.add_argument("--min-words", type=int, default=None)
    p.add_argument("--max-whitespace-ratio", type=float, default=None)
    p.add_argument("--ngram-n", type=int, default=None)
    p.add_argument("--max-ngram-repetition-ratio", type=float, default=None)
    p.add_argument("--max-numeric-ratio", type=float, default=None)
    p.add_argument("--boilerplate", action="append", default=[],
                   help="literal line pattern to drop (repeatable)")
    p.add_argument("--target-words", type=int, default=None,
                   help="passage split target")
    p.add_argument("--output", choices=["text_table", "line_delimited"],
                   default="text_table")

    p = sub.add_parser("index", help="build a vector index from curated passages")
    p.add_argument("--passages", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true", help="overwrite existing output")
    p.add_argument("--embedder", choices=["stub", "http"], default="stub")
    p.add_argument("--embedder-url", default="", help="endpoint for --embedder http")

    p = sub.add_parser("search", help="query an index")
    p.add_argument("--index", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("-k", type=int, default=1)
    p.add_argument("--output", choices=["text_table", "line_delimited"],
                   default="text_table")

    p = sub.add_parser("validate", help="validate a registry file")
    p.add_argument("--registry", default=None, help="defaults to the shipped registry")

    p = sub.add_parser("chat", help="interactive terminal chat (stub-friendly)")
    p.add_argument("--script", default=None,
                   help="file of user lines to replay instead of stdin")
    p.add_argument("--index", default=None, help="optional index file for retrieval")
    p.add_argument("--language", default=None, choices=["en", "hi"])

    p = sub.add_parser("serve", help="run the HTTP service until interrupted")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--journal", default=None)
    p.add_argument("--index", default=None)

    p = sub.add_parser("eval", help="compute metrics from a session journal")
    p.add_argument("--journal", required=True)
    p.add_argument("--annotations", default=None)
    p.add_argument("--output", choices=["text_table", "line_delimited"],
                   default="text_table")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "curate": cmd_curate,
        "index": cmd_index_build,
        "search": cmd_search,
        "validate": cmd_validate,
        "chat": cmd_chat,
        "serve": cmd_serve,
        "eval": cmd_eval,
    }[args.command]
    try:
        return handler(args)
    except BackendUnavailable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


def _filter_config(args) -> curation.FilterConfig:
    defaults = curation.FilterConfig()
    return curation.FilterConfig(
        min_word_count=args.min_words or defaults.min_word_count,
        max_whitespace_ratio=(
            args.max_whitespace_ratio
            if args.max_whitespace_ratio is not None
            else defaults.max_whitespace_ratio
        ),
        ngram_n=args.ngram_n or defaults.ngram_n,
        max_ngram_repetition_ratio=(
            args.max_ngram_repetition_ratio
            if args.max_ngram_repetition_ratio is not None
            else defaults.max_ngram_repetition_ratio
        ),
        max_numeric_ratio=(
            args.max_numeric_ratio
            if args.max_numeric_ratio is not None
            else defaults.max_numeric_ratio
        ),
        boilerplate_patterns=tuple(args.boilerplate),
        passage_target_words=args.target_words or defaults.passage_target_words,
    )


def cmd_curate(args) -> int:
    input_path = Path(args.input)
    if not input_path.exists():
        print(f"error: input file {input_path} does not exist", file=sys.stderr)
        return EXIT_INPUT
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = _filter_config(args)
    try:
        passages, reports = curation.run_pipeline(curation.load_raw_docs(input_path), cfg)
    except curation.IoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    curation.write_passages(passages, out_dir / "passages.jsonl")
    curation.write_reports(reports, out_dir / "reports.jsonl")
    summary = curation.summarize(reports, passages_out=len(passages))
    ratio = summary.retention_ratio
    if args.output == "line_delimited":
        print(
            json.dumps(
                {
                    "docs_in": summary.docs_in,
                    "docs_retained": summary.docs_retained,
                    "passages_out": summary.passages_out,
                    "retention_ratio": ratio,
                    "filter_triggers": summary.filter_triggers,
                }
            )
        )
    else:
        print(f"documents in:      {summary.docs_in}")
        print(f"documents kept:    {summary.docs_retained}")
        print(f"passages written:  {summary.passages_out}")
        print(f"retention ratio:   {'n/a' if ratio is None else f'{ratio:.4f}'}")
        for name, count in sorted(summary.filter_triggers.items()):
            print(f"  dropped by {name}: {count}")
    return EXIT_OK


def cmd_index_build(args) -> int:
    passages_path = Path(args.passages)
    if not passages_path.exists():
        print(f"error: passages file {passages_path} does not exist", file=sys.stderr)
        return EXIT_INPUT
    out_path = Path(args.out)
    if out_path.exists() and not args.force:
        print(f"error: {out_path} exists; pass --force to overwrite", file=sys.stderr)
        return EXIT_INPUT
    if args.embedder == "http":
        if not args.embedder_url:
            print("error: --embedder http requires --embedder-url", file=sys.stderr)
            return EXIT_INPUT
        embedder: retrieval.Embedder = retrieval.HttpEmbedder(args.embedder_url)
    else:
        embedder = retrieval.HashingEmbedder()
    try:
        passages = list(curation.read_passages(passages_path))
    except (curation.IoError, ValueError, KeyError) as exc:
        print(f"error: cannot read passages: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        index = retrieval.build_index(passages, embedder)
    except retrieval.DuplicateId as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except retrieval.EmbedderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    retrieval.save_index(index, out_path)
    print(f"indexed {len(index)} passages into {out_path}")
    return EXIT_OK


def cmd_search(args) -> int:
    index_path = Path(args.index)
    if not index_path.exists():
        print(f"error: index file {index_path} does not exist", file=sys.stderr)
        return EXIT_INPUT
    try:
        index = retrieval.load_index(index_path)
    except (retrieval.FormatError, retrieval.ChecksumError) as exc:
        print(f"error: corrupt index: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    embedder = retrieval.HashingEmbedder()
    results = retrieval.search(index, embedder.embed(args.query), args.k)
    for r in results:
        if args.output == "line_delimited":
            print(json.dumps({"passage_id": r.passage_id, "score": r.score,
                              "text": r.text}, ensure_ascii=False))
        else:
            preview = r.text if len(r.text) <= 100 else r.text[:97] + "..."
            print(f"{r.passage_id}\t{r.score:.4f}\t{preview}")
    return EXIT_OK


def cmd_validate(args) -> int:
    path = args.registry or schema.default_registry_path()
    if not Path(path).exists():
        print(f"error: registry file {path} does not exist", file=sys.stderr)
        return EXIT_INPUT
    try:
        registry = schema.load_registry(path)
    except schema.ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except schema.ValidationError as exc:
        for violation in exc.violations:
            print(f"violation: {violation}")
        return EXIT_CORRUPT
    intents = sum(len(c.intents) for c in registry.crops.values())
    print(f"registry ok: {len(registry.crops)} crops, {intents} intents")
    return EXIT_OK


def _chat_deps(args) -> dialogue.Deps:
    app_config = config_mod.load_app_config(args.config, index_path=args.index)
    return config_mod.build_deps(app_config)


def cmd_chat(args) -> int:
    try:
        deps = _chat_deps(args)
    except (schema.ParseError, schema.ValidationError, prompting.TemplateError,
            config_mod.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    state = dialogue.new_session("local", language=args.language)

    def exchange(text: str) -> None:
        nonlocal state
        print(f"you> {text}")
        state, output = dialogue.step(state, text, deps)
        print(f"bot> {output.reply_text}")
        filled = "; ".join(f"{k}={v}" for k, v in state.slots.items() if v)
        summary = f"     [phase={output.phase_after}"
        if output.pending_slot:
            summary += f" | pending={output.pending_slot}"
        if filled:
            summary += f" | filled: {filled}"
        summary += "]"
        print(summary)

    if args.script:
        script_path = Path(args.script)
        if not script_path.exists():
            print(f"error: script file {script_path} does not exist", file=sys.stderr)
            return EXIT_INPUT
        for line in script_path.read_text("utf-8").splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            exchange(line)
        return EXIT_OK

    print("agriassist chat (type /quit to exit)")
    while True:
        try:
            line = input("you> ")
        except (EOFError, KeyboardInterrupt):
            print()
            return EXIT_OK
        if line.strip() == "/quit":
            return EXIT_OK
        if not line.strip():
            continue
        print(f"you> {line}")
        exchange(line)


def cmd_serve(args) -> int:
    import uvicorn

    from .service import SessionStore, create_app

    try:
        app_config = config_mod.load_app_config(
            args.config, port=args.port, journal_path=args.journal, index_path=args.index
        )
        deps = config_mod.build_deps(app_config)
    except (schema.ParseError, schema.ValidationError, prompting.TemplateError,
            config_mod.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    store = SessionStore(app_config.journal_path)
    app = create_app(
        deps,
        store,
        backend_mode=os.environ.get("BACKEND_MODE", "stub"),
        cors_origins=app_config.cors_origins,
        template_path=app_config.template_path,
    )
    uvicorn.run(app, host="0.0.0.0", port=app_config.port)
    return EXIT_OK


def cmd_eval(args) -> int:
    journal_path = Path(args.journal)
    if not journal_path.exists():
        print(f"error: journal file {journal_path} does not exist", file=sys.stderr)
        return EXIT_INPUT
    if args.annotations and not Path(args.annotations).exists():
        print(f"error: annotations file {args.annotations} does not exist", file=sys.stderr)
        return EXIT_INPUT
    try:
        report = metrics.compute_metrics_from_path(journal_path, args.annotations)
    except metrics.JournalCorrupt as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except metrics.AnnotationsCorrupt as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    sys.stdout.buffer.write(metrics.render_report(report, args.output))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
