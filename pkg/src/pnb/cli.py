"""Command-line entry point: ``pnb {stats,split,render,run,score,errors,report}``.

Exit codes: 0 success, 1 evaluation-level failure (cache miss, endpoint
failure, predictions for unknown documents), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from pnb.config import RunConfig, file_digest
from pnb.corpus import (
    ENTITY_TYPES,
    Document,
    EntityType,
    Span,
    SplitAssignment,
    corpus_stats,
    dump_json,
    load_corpus,
    split_corpus,
)
from pnb.erroranalysis import CATEGORIES, ErrorTable, classify_prepared, error_table
from pnb.errors import (
    AuthMissing,
    CacheMissInReplayMode,
    ConfigError,
    CorpusError,
    DocMismatch,
    EndpointError,
    PnbError,
    SchemaError,
)
from pnb.evaluation import (
    MatchRegime,
    MatchReport,
    RegimeScores,
    load_stopwords,
    prepare,
    render_table,
    score_prepared,
    score_strings,
)
from pnb.grounding import GroundingPolicy, NormalizedText, Prediction, ground
from pnb.llmclient import ChatBackend, ChatClient, LlmRequest, ResponseCache, complete, parse_response
from pnb.prompting import FewShotExample, PromptSpec, Setting, render_prompt
from pnb.selection import SimilarityIndex, load_embeddings, select_random

log = logging.getLogger("pnb")

EXIT_OK, EXIT_EVAL, EXIT_USAGE = 0, 1, 2

# Tests swap this to point live runs at a stub backend.
ClientFactory = Callable[[RunConfig], ChatBackend]


def default_client_factory(cfg: RunConfig) -> ChatBackend:
    return ChatClient(url=cfg.endpoint)


# ---------------------------------------------------------------------------
# Shared loading


@dataclass
class Workspace:
    cfg: RunConfig
    docs: list[Document]
    split: SplitAssignment

    @property
    def by_id(self) -> dict[str, Document]:
        return {d.doc_id: d for d in self.docs}

    def train_docs(self) -> list[Document]:
        by_id = self.by_id
        return [by_id[i] for i in sorted(self.split.train)]

    def eval_docs(self) -> list[Document]:
        by_id = self.by_id
        ids = sorted(self.split.test)
        if self.cfg.max_docs is not None:
            ids = ids[: self.cfg.max_docs]
        return [by_id[i] for i in ids]

    def corpus_digest(self) -> str:
        h = hashlib.sha256()
        for d in self.docs:
            h.update(d.doc_id.encode())
            h.update(b"\0")
            h.update(d.text.encode("utf-8"))
            h.update(b"\0")
            for e in d.entities:
                h.update(f"{e.etype.value}:{[(f.start, f.end) for f in e.fragments]}\n".encode())
        return h.hexdigest()

    def fingerprint(self) -> str:
        return self.cfg.fingerprint({"corpus_sha256": self.corpus_digest()})


def load_docs(cfg: RunConfig) -> list[Document]:
    if not cfg.corpus:
        raise ConfigError("no corpus given (use --corpus or the 'corpus' config key)")
    return load_corpus(cfg.corpus, cfg.label_map)


def load_workspace(cfg: RunConfig) -> Workspace:
    docs = load_docs(cfg)
    if cfg.split_file:
        split = SplitAssignment.from_dict(json.loads(Path(cfg.split_file).read_text(encoding="utf-8")))
        unknown = (set(split.train) | set(split.validation) | set(split.test)) - {d.doc_id for d in docs}
        if unknown:
            raise ConfigError(f"split file names unknown documents, e.g. {sorted(unknown)[0]!r}")
    else:
        split = split_corpus(docs, cfg.seed)
    return Workspace(cfg, docs, split)


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def write_jsonl(path: Path, records: Sequence[dict]) -> None:
    write_text(path, "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in records))


# ---------------------------------------------------------------------------
# Prompt construction shared by ``render`` and ``run``


class ExamplePicker:
    def __init__(self, ws: Workspace):
        self.ws = ws
        self.train = ws.train_docs()
        self._index: SimilarityIndex | None = None

    def pick(self, test_doc: Document) -> Document | None:
        cfg = self.ws.cfg
        if cfg.setting_enum is Setting.Zero:
            return None
        if cfg.selection == "random":
            return select_random(self.train, cfg.seed, test_doc.doc_id)
        if self._index is None:
            emb = load_embeddings(cfg.embeddings) if cfg.embeddings else None
            self._index = SimilarityIndex(self.train, emb)
        try:
            return self._index.select(test_doc, cfg.seed)
        except KeyError as exc:
            raise ConfigError(f"embeddings file: {exc.args[0]}") from exc


def build_spec(cfg: RunConfig, doc: Document, etype: EntityType, example: Document | None) -> PromptSpec:
    return PromptSpec(
        setting=cfg.setting_enum,
        format=cfg.format_enum,
        etype=etype,
        definition=cfg.definition(etype),
        input_text=doc.text,
        example=FewShotExample.from_document(example, etype) if example is not None else None,
    )


# ---------------------------------------------------------------------------
# Predictions files


def read_predictions(path: str | Path, docs: Sequence[Document], policy: GroundingPolicy) -> list[Prediction]:
    """Load a predictions JSON-lines file; records without offsets are grounded here."""
    by_id = {d.doc_id: d for d in docs}
    preds: list[Prediction] = []
    pending: dict[tuple[str, EntityType], list[tuple[int, str]]] = {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"predictions file not found: {p}")
    with open(p, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", lineno) from exc
            if not isinstance(rec, dict):
                raise SchemaError("record must be a JSON object", lineno)
            doc_id, etype_raw, extracted = rec.get("doc_id"), rec.get("etype"), rec.get("extracted")
            if not isinstance(doc_id, str) or not isinstance(extracted, str):
                raise SchemaError("'doc_id' and 'extracted' must be strings", lineno)
            try:
                etype = EntityType.parse(etype_raw)
            except ValueError as exc:
                raise SchemaError(str(exc), lineno) from exc
            start, end = rec.get("start"), rec.get("end")
            if (start is None) != (end is None):
                raise SchemaError("'start' and 'end' must be given together", lineno)
            if doc_id not in by_id:
                raise DocMismatch(f"line {lineno}: unknown document {doc_id!r}")
            if start is None:
                preds.append(None)  # placeholder, filled by grounding below
                pending.setdefault((doc_id, etype), []).append((len(preds) - 1, extracted))
                continue
            if not isinstance(start, int) or not isinstance(end, int) or isinstance(start, bool):
                raise SchemaError("'start'/'end' must be integers", lineno)
            if not (0 <= start < end <= len(by_id[doc_id].text)):
                raise SchemaError(f"span [{start}, {end}) outside document {doc_id!r}", lineno)
            preds.append(Prediction(doc_id, etype, extracted, Span(start, end)))
    for (doc_id, etype), items in pending.items():
        grounded = ground([s for _, s in items], by_id[doc_id], etype, policy)
        for (slot, _), pred in zip(items, grounded):
            preds[slot] = pred
    return preds


def _provenance(ws: Workspace, predictions: Path) -> dict:
    manifest = predictions.parent / "manifest.json"
    cache_digest = None
    if manifest.is_file():
        cache_digest = json.loads(manifest.read_text(encoding="utf-8")).get("cache_digest")
    return {
        "config_fingerprint": ws.fingerprint(),
        "cache_digest": cache_digest,
        "predictions_sha256": file_digest(predictions),
        "n_documents": len(ws.eval_docs()),
    }


def _provenance_md(prov: dict) -> str:
    return (
        f"- config fingerprint: `{prov['config_fingerprint']}`\n"
        f"- cache digest: `{prov['cache_digest'] or 'n/a'}`\n"
        f"- predictions sha256: `{prov['predictions_sha256']}`\n"
        f"- documents scored: {prov['n_documents']}\n"
    )


# ---------------------------------------------------------------------------
# Subcommands


def cmd_stats(cfg: RunConfig, args: argparse.Namespace) -> int:
    stats = corpus_stats(load_docs(cfg))
    out = Path(args.out or cfg.run_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(stats.to_dict(), out / "stats.json")
    write_text(out / "histogram.csv", stats.histogram_csv())
    print(json.dumps(stats.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_split(cfg: RunConfig, args: argparse.Namespace) -> int:
    split = split_corpus(load_docs(cfg), cfg.seed)
    out = Path(args.out) if args.out else Path(cfg.run_dir) / "split.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_json(split.to_dict(), out)
    print(f"train={len(split.train)} validation={len(split.validation)} test={len(split.test)} -> {out}")
    return EXIT_OK


def cmd_render(cfg: RunConfig, args: argparse.Namespace) -> int:
    ws = load_workspace(cfg)
    by_id = ws.by_id
    if args.doc_id not in by_id:
        raise ConfigError(f"unknown document {args.doc_id!r}")
    doc = by_id[args.doc_id]
    etype = EntityType.parse(args.etype)
    example = ExamplePicker(ws).pick(doc)
    prompt = render_prompt(build_spec(cfg, doc, etype, example), cfg.template_overrides())
    sys.stdout.write(prompt.text + "\n")
    return EXIT_OK


def cmd_run(cfg: RunConfig, args: argparse.Namespace, client_factory: ClientFactory = default_client_factory) -> int:
    ws = load_workspace(cfg)
    picker = ExamplePicker(ws)
    templates = cfg.template_overrides()
    live = cfg.mode == "live"
    cache = ResponseCache(cfg.cache or Path(cfg.run_dir) / "cache.jsonl")
    client = client_factory(cfg) if live else None
    policy = GroundingPolicy(cfg.whole_token, cfg.longest_first)

    jobs: list[tuple[Document, EntityType, Document | None, LlmRequest]] = []
    for doc in ws.eval_docs():
        example = picker.pick(doc)
        for etype in ENTITY_TYPES:
            prompt = render_prompt(build_spec(cfg, doc, etype, example), templates)
            jobs.append((doc, etype, example, LlmRequest(cfg.model_id, cfg.temperature, prompt)))

    with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
        responses = list(pool.map(lambda job: complete(job[3], cache, live, client), jobs))

    preds: list[Prediction] = []
    response_records = []
    norms: dict[str, NormalizedText] = {}
    for (doc, etype, example, req), resp in zip(jobs, responses):
        parsed = parse_response(resp.raw_text)
        norm = norms.setdefault(doc.doc_id, NormalizedText(doc.text))
        preds.extend(ground(parsed.items, doc, etype, policy, _norm=norm))
        response_records.append({
            "doc_id": doc.doc_id,
            "etype": etype.value,
            "example_doc_id": example.doc_id if example else None,
            "request_key": req.request_key,
            "token_estimate": req.prompt.token_estimate,
            "raw_text": resp.raw_text,
            "parsed": parsed.items,
            "unstructured": parsed.unstructured,
        })

    out = Path(cfg.run_dir)
    write_jsonl(out / "predictions.jsonl", [p.to_record() for p in preds])
    write_jsonl(out / "responses.jsonl", response_records)
    manifest = {
        "config_fingerprint": ws.fingerprint(),
        "cache_digest": cache.digest(),
        "model_id": cfg.model_id,
        "setting": cfg.setting,
        "format": cfg.format,
        "selection": cfg.selection if cfg.setting == "few" else None,
        "seed": cfg.seed,
        "n_documents": len(ws.eval_docs()),
        "n_requests": len(jobs),
        "n_predictions": len(preds),
        "n_grounded": sum(p.grounded for p in preds),
        "doc_ids": [d.doc_id for d in ws.eval_docs()],
        "prompt_tokens_estimate": sum(j[3].prompt.token_estimate for j in jobs),
    }
    dump_json(manifest, out / "manifest.json")
    print(f"{len(jobs)} requests, {len(preds)} predictions ({manifest['n_grounded']} grounded) -> {out}")
    return EXIT_OK


def _predictions_path(cfg: RunConfig, args: argparse.Namespace) -> Path:
    return Path(args.predictions) if args.predictions else Path(cfg.run_dir) / "predictions.jsonl"


def cmd_score(cfg: RunConfig, args: argparse.Namespace) -> int:
    ws = load_workspace(cfg)
    docs = ws.eval_docs()
    pred_path = _predictions_path(cfg, args)
    preds = read_predictions(pred_path, docs, GroundingPolicy(cfg.whole_token, cfg.longest_first))
    stopwords = load_stopwords(cfg.stopwords)
    out = Path(args.out) if args.out else pred_path.parent
    prov = _provenance(ws, pred_path)

    if cfg.match_level == "string":
        scores = score_strings(preds, docs, stopwords)
        dump_json({"provenance": prov, "match_level": "string", "string": scores.to_dict()}, out / "score_string.json")
        write_text(out / "score_string.md", "# String-level scores\n\n" + _provenance_md(prov) + "\n" + _string_table(scores))
        sys.stdout.write(_string_table(scores))
        return EXIT_OK

    prepared = prepare(preds, docs, stopwords)
    report = MatchReport(
        exact=RegimeScores(score_prepared(prepared, MatchRegime.Exact)),
        relaxed=RegimeScores(score_prepared(prepared, MatchRegime.Relaxed)),
    )
    dump_json({"provenance": prov, "match_level": "span", **report.to_dict()}, out / "score.json")
    write_text(out / "score.md", "# Span-level scores\n\n" + _provenance_md(prov) + "\n" + report.to_markdown())
    sys.stdout.write(report.to_markdown())
    return EXIT_OK


def _string_table(scores: RegimeScores) -> str:
    rows = []
    for label, c in [(t.display, scores.per_type[t]) for t in ENTITY_TYPES] + [("Overall", scores.overall)]:
        rows.append([label, f"{c.precision:.3f}", f"{c.recall:.3f}", f"{c.f1:.3f}"])
    return render_table(["Entity", "String P", "String R", "String F1"], rows)


def cmd_errors(cfg: RunConfig, args: argparse.Namespace) -> int:
    ws = load_workspace(cfg)
    docs = ws.eval_docs()
    pred_path = _predictions_path(cfg, args)
    preds = read_predictions(pred_path, docs, GroundingPolicy(cfg.whole_token, cfg.longest_first))
    records = classify_prepared(prepare(preds, docs, load_stopwords(cfg.stopwords)))
    table = error_table(records)
    out = Path(args.out) if args.out else pred_path.parent
    prov = _provenance(ws, pred_path)
    write_jsonl(out / "errors.jsonl", [r.to_record() for r in records])
    dump_json({"provenance": prov, "table": table.to_dict()}, out / "error_table.json")
    write_text(out / "error_table.csv", table.to_csv())
    write_text(out / "error_table.md", "# Error analysis (exact match)\n\n" + _provenance_md(prov) + "\n" + table.to_markdown())
    sys.stdout.write(table.to_markdown())
    return EXIT_OK


def cmd_report(cfg: RunConfig, args: argparse.Namespace) -> int:
    sections = ["# Benchmark report\n"]
    perf_rows = []
    for run in args.runs:
        run_dir = Path(run)
        score_file = run_dir / "score.json"
        if not score_file.is_file():
            raise ConfigError(f"{run_dir}: no score.json (run `pnb score` first)")
        score = json.loads(score_file.read_text(encoding="utf-8"))
        manifest_file = run_dir / "manifest.json"
        manifest = json.loads(manifest_file.read_text(encoding="utf-8")) if manifest_file.is_file() else {}
        label = _run_label(run_dir, manifest)
        for key in [t.value for t in ENTITY_TYPES] + ["Overall"]:
            ex, rx = score["exact"][key], score["relaxed"][key]
            entity = EntityType(key).display if key != "Overall" else "Overall"
            perf_rows.append([label, entity, *(f"{ex[m]:.3f}" for m in ("precision", "recall", "f1")),
                              *(f"{rx[m]:.3f}" for m in ("precision", "recall", "f1"))])
        sections.append(f"## {label}\n\n" + _provenance_md(score["provenance"]))

    sections.append("## Performance by entity type\n\n" + render_table(
        ["Run", "Entity", "Exact P", "Exact R", "Exact F1", "Relaxed P", "Relaxed R", "Relaxed F1"], perf_rows))

    for run in args.runs:
        run_dir = Path(run)
        err_file = run_dir / "error_table.json"
        if not err_file.is_file():
            continue
        raw = json.loads(err_file.read_text(encoding="utf-8"))["table"]
        table = ErrorTable({t: tuple(raw[t.value][c.value]["count"] for c in CATEGORIES) for t in ENTITY_TYPES})
        manifest_file = run_dir / "manifest.json"
        manifest = json.loads(manifest_file.read_text(encoding="utf-8")) if manifest_file.is_file() else {}
        sections.append(f"## Error analysis: {_run_label(run_dir, manifest)}\n\n" + table.to_markdown())

    text = "\n".join(sections)
    out = Path(args.out) if args.out else Path(cfg.run_dir) / "report.md"
    write_text(out, text)
    sys.stdout.write(text)
    return EXIT_OK


def _run_label(run_dir: Path, manifest: dict) -> str:
    if not manifest:
        return run_dir.name
    label = f"{manifest.get('setting', '?')}-shot {manifest.get('format', '?')}"
    if manifest.get("selection"):
        label += f" + {manifest['selection']} example"
    return label


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run configuration")
    common.add_argument("--corpus", help="directory of paired .txt/.ann files")
    common.add_argument("--seed", type=int, help="split and sampling seed")
    common.add_argument("--split-file", dest="split_file", help="use this split.json instead of splitting")
    common.add_argument("--run-dir", dest="run_dir", help="output directory for this run")
    common.add_argument("--max-docs", dest="max_docs", type=int, help="only use the first N test documents")
    common.add_argument("--stopwords", help="stop-word list overriding the bundled one")
    common.add_argument("-v", "--verbose", action="store_true")

    prompt = argparse.ArgumentParser(add_help=False)
    prompt.add_argument("--setting", choices=["zero", "few"])
    prompt.add_argument("--format", choices=["simple", "structured"])
    prompt.add_argument("--selection", choices=["random", "similar"])
    prompt.add_argument("--embeddings", help="doc_id<TAB>v1,v2,... file for similarity selection")

    parser = argparse.ArgumentParser(prog="pnb", description="Rare-disease phenotype extraction benchmark.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", parents=[common], help="corpus statistics")
    p.add_argument("--out", help="output directory (default: run dir)")

    p = sub.add_parser("split", parents=[common], help="write an 8:1:1 split")
    p.add_argument("--out", help="output file (default: <run dir>/split.json)")

    p = sub.add_parser("render", parents=[common, prompt], help="print one rendered prompt")
    p.add_argument("--doc-id", dest="doc_id", required=True)
    p.add_argument("--etype", required=True, help="RareDisease, Disease, Sign or Symptom")

    p = sub.add_parser("run", parents=[common, prompt], help="query the model for every test document")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--live", dest="mode", action="store_const", const="live")
    mode.add_argument("--replay", dest="mode", action="store_const", const="replay")
    p.add_argument("--model", dest="model_id")
    p.add_argument("--temperature", type=float)
    p.add_argument("--endpoint")
    p.add_argument("--cache", help="response cache (JSON lines)")
    p.add_argument("--max-in-flight", dest="max_in_flight", type=int)

    for name, helptext in (("score", "precision/recall/F1 tables"), ("errors", "five-way error analysis")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--predictions", help="predictions JSON lines (default: <run dir>/predictions.jsonl)")
        p.add_argument("--out", help="output directory (default: next to the predictions)")
        if name == "score":
            p.add_argument("--match-level", dest="match_level", choices=["span", "string"])

    p = sub.add_parser("report", parents=[common], help="combine scored runs into one Markdown report")
    p.add_argument("runs", nargs="+", help="run directories containing score.json")
    p.add_argument("--out", help="output file (default: <run dir>/report.md)")
    return parser


_CONFIG_KEYS = ("corpus", "seed", "split_file", "run_dir", "max_docs", "stopwords", "setting", "format",
                "selection", "embeddings", "mode", "model_id", "temperature", "endpoint", "cache",
                "max_in_flight", "match_level")

COMMANDS = {
    "stats": cmd_stats,
    "split": cmd_split,
    "render": cmd_render,
    "score": cmd_score,
    "errors": cmd_errors,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None, client_factory: ClientFactory = default_client_factory) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        overrides = {k: getattr(args, k, None) for k in _CONFIG_KEYS}
        cfg = RunConfig.load(args.config, **overrides)
        if args.command == "run":
            return cmd_run(cfg, args, client_factory)
        return COMMANDS[args.command](cfg, args)
    except (CacheMissInReplayMode, EndpointError, DocMismatch) as exc:
        print(f"pnb: error: {exc}", file=sys.stderr)
        return EXIT_EVAL
    except (ConfigError, CorpusError, SchemaError, AuthMissing) as exc:
        print(f"pnb: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PnbError as exc:
        print(f"pnb: error: {exc}", file=sys.stderr)
        return EXIT_EVAL


if __name__ == "__main__":
    sys.exit(main())
