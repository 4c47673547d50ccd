"""argmine command line.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 runtime failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

from argmine.argument_graph import validate_graph
from argmine.augmentation import (
    export_review_csv,
    load_synthetic,
    run_augmentation,
    save_synthetic,
    to_stance_examples,
)
from argmine.config import RunConfig, load_config
from argmine.corpus_io import (
    Corpus,
    corpus_stats,
    load_corpus,
    load_pe_corpus,
    parse_microtext,
    pe_stats,
    render_pe_stats_table,
    render_stats_table,
)
from argmine.dataset_builder import (
    Scenario,
    assemble_scenario,
    extract_relation_examples,
    extract_stance_examples,
    label_histogram,
    load_bundle,
    make_splits,
    save_bundle,
)
from argmine.errors import ArgMineError, ConfigError, CorpusError, DatasetError
from argmine.evaluation import (
    MetricsReport,
    case_report,
    evaluate_model,
    render_case_report,
    render_results_table,
    write_reports,
)
from argmine.model_trainer import (
    TASKS,
    TrainedModel,
    build_model,
    load_model,
    predict_relation_batch,
    predict_stance_batch,
    save_model,
    train,
)
from argmine.pe_mapping import convert_pe_corpus
from argmine.utils import digest, file_digest

logger = logging.getLogger(__name__)

STAGES = ("augment", "build", "train", "eval", "report")


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# Run directory and manifest
# --------------------------------------------------------------------------

def _dir_digest(directory: Optional[Path], pattern: str = "*.xml") -> Optional[str]:
    if directory is None:
        return None
    return digest({p.name: file_digest(p) for p in sorted(Path(directory).glob(pattern))})


def _artifact_digests(run_dir: Path, stage_dir: Path) -> Dict[str, str]:
    return {str(p.relative_to(run_dir)): file_digest(p) for p in sorted(stage_dir.rglob("*")) if p.is_file()}


class Run:
    """One run directory: out/<run-id>/{bundle,checkpoint,reports,manifest.json}."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dir = cfg.run_dir
        self.manifest_path = self.dir / "manifest.json"
        self.corpora = {"en": _dir_digest(cfg.en_dir), "fa": _dir_digest(cfg.fa_dir)}
        self.manifest = self._load_manifest()
        self._en: Optional[Corpus] = None
        self._fa: Optional[Corpus] = None

    def _load_manifest(self) -> dict:
        fresh = {"run_id": self.cfg.run_id, "config_digest": self.cfg.digest(),
                 "config": self.cfg.model_dump(mode="json"), "corpora": self.corpora, "stages": {}}
        if not self.manifest_path.exists():
            return fresh
        manifest = json.loads(self.manifest_path.read_text(encoding="utf-8"))
        if manifest.get("corpora") != self.corpora:
            logger.warning("Corpus contents changed since the last run; every stage will be redone")
            return fresh
        return manifest

    def write_manifest(self):
        self.dir.mkdir(parents=True, exist_ok=True)
        self.manifest_path.write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def path(self, name: str) -> Path:
        return self.dir / name

    def done(self, stage: str) -> bool:
        record = self.manifest["stages"].get(stage)
        return bool(record) and all((self.dir / rel).exists() for rel in record["artifacts"])

    def run_stage(self, stage: str, outputs: Path, fn: Callable[[], None], force: bool = True) -> bool:
        """Run one stage unless it already completed; returns True if it ran."""
        if not force and self.done(stage):
            logger.info("Stage %s already completed; skipped", stage)
            print(f"[skip] {stage}")
            return False
        print(f"[run] {stage}")
        try:
            fn()
        except ArgMineError as e:
            e.details["stage"] = stage
            logger.error("Stage %s failed: %s", stage, e)
            raise
        self.manifest["stages"][stage] = {"artifacts": _artifact_digests(self.dir, outputs)}
        self.write_manifest()
        return True

    @property
    def en(self) -> Corpus:
        if self._en is None:
            if self.cfg.en_dir is None:
                raise ConfigError("MISSING_PATH", "en_dir is required")
            self._en = load_corpus(self.cfg.en_dir, "en", strict=self.cfg.strict)
        return self._en

    @property
    def fa(self) -> Optional[Corpus]:
        if self._fa is None and self.cfg.fa_dir is not None:
            self._fa = load_corpus(self.cfg.fa_dir, "fa", strict=self.cfg.strict)
        return self._fa

    def model_name(self) -> str:
        if self.cfg.scenario == Scenario.LLM_AUG:
            return f"{Scenario.LLM_AUG.value}:{self.cfg.augmentation.generator.name}"
        return self.cfg.scenario.value

    def heads(self) -> Dict[str, List[str]]:
        """Checkpoint sub-directory -> tasks it serves."""
        if self.cfg.separate_heads_runs:
            return {task: [task] for task in TASKS}
        return {"joint": list(TASKS)}

    def load_models(self) -> Dict[str, TrainedModel]:
        models = {}
        for name, tasks in self.heads().items():
            path = self.path("checkpoint") / name
            if not path.exists():
                raise DatasetError("MISSING_ARTIFACT", f"no checkpoint at {path}; run the train stage first")
            model = load_model(path, expected=self.cfg.classifier)
            for task in tasks:
                models[task] = model
        return models


# --------------------------------------------------------------------------
# Pipeline stages
# --------------------------------------------------------------------------

def stage_augment(run: Run):
    cfg = run.cfg
    splits = make_splits(run.en.doc_ids(), cfg.ratios, cfg.seed_for("splits"))
    train_docs = [g for g in run.en.documents if splits.assignment[g.doc_id] == "train"]
    examples = [x for g in train_docs for x in extract_stance_examples(g)]
    counts = label_histogram(examples)
    topics = sorted({g.topic_id.replace("_", " ") for g in train_docs if g.topic_id})
    spec = cfg.augmentation.generator.model_copy(update={"seed": cfg.seed_for("generator")})
    result = run_augmentation(counts, spec, T=cfg.augmentation.target_per_class,
                              existing_texts=[x.text for x in examples], topic_hints=topics,
                              batch_size=cfg.augmentation.batch_size, max_calls=cfg.augmentation.max_calls,
                              progress=sys.stderr.isatty())
    out = run.path("augment")
    save_synthetic(result.accepted, out / "synthetic.jsonl")
    export_review_csv(result.rejected, out / "rejected.csv")
    (out / "run.json").write_text(result.model_copy(update={"accepted": [], "rejected": []}).model_dump_json(indent=2),
                                  encoding="utf-8")
    print(f"accepted {len(result.accepted)} synthetic ADUs, rejected {len(result.rejected)}, "
          f"{result.generator_calls} generator calls")


def stage_build(run: Run):
    synth = None
    if run.cfg.scenario == Scenario.LLM_AUG:
        path = run.path("augment") / "synthetic.jsonl"
        if not path.exists():
            raise DatasetError("MISSING_SYNTH", f"{path} not found; run the augment stage first")
        synth = to_stance_examples(load_synthetic(path))
    bundle = assemble_scenario(run.cfg.scenario_config(), run.en, run.fa, synth)
    save_bundle(bundle, run.path("bundle"))
    print(json.dumps(bundle.manifest.sizes, sort_keys=True))


def _vocab_texts(bundle) -> List[str]:
    texts = [e.text for e in bundle.stance_train]
    texts += [t for e in bundle.relation_train for t in (e.text_a, e.text_b)]
    return texts


def stage_train(run: Run):
    cfg = run.cfg
    bundle_dir = run.path("bundle")
    if not (bundle_dir / "manifest.json").exists():
        raise DatasetError("MISSING_ARTIFACT", f"no bundle at {bundle_dir}; run the build stage first")
    bundle = load_bundle(bundle_dir)
    tcfg = cfg.training.model_copy(update={"seed": cfg.seed_for("train"), "progress": sys.stderr.isatty()})
    for name, tasks in run.heads().items():
        model = build_model(cfg.classifier, _vocab_texts(bundle), seed=cfg.seed_for("model"), device=tcfg.device)
        trained = train(model, bundle, tcfg, tasks=tasks)
        save_model(trained, run.path("checkpoint") / name)
        best = trained.history[trained.best_epoch]
        print(f"{name}: best epoch {trained.best_epoch}, eval_loss {best.eval_loss:.4f} "
              f"(initial {trained.initial_eval_loss:.4f})")


def stage_eval(run: Run):
    bundle = load_bundle(run.path("bundle"))
    models = run.load_models()
    model_name = run.model_name()
    records = []
    for task in TASKS:
        for language in bundle.manifest.test_languages:
            try:
                report = evaluate_model(models[task], bundle, "test", task, language=language)
            except ArgMineError as e:
                if e.code != "EMPTY_SPLIT":
                    raise
                logger.warning("No %s test examples for %s", task, language)
                continue
            records.append({"task": task, "model": model_name, "eval_set": language.upper(),
                            "report": report.model_dump(mode="json")})
    out = run.path("reports")
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(records, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _case_reports(run: Run, models: Dict[str, TrainedModel]) -> Dict[str, str]:
    rendered = {}
    for corpus in (run.en, run.fa):
        if corpus is None:
            continue
        for doc_id in run.cfg.case_docs:
            if doc_id not in corpus.doc_ids():
                continue
            g = corpus.get(doc_id)
            stance = predict_stance_batch(models["stance"], [x.text for x in extract_stance_examples(g)])
            relation = predict_relation_batch(models["relation"],
                                              [(x.text_a, x.text_b) for x in extract_relation_examples(g)])
            report = case_report(g, {run.model_name(): [p.label for p in stance]},
                                 {run.model_name(): [p.label for p in relation]})
            rendered[f"case_{doc_id}_{corpus.language}.txt"] = render_case_report(report)
    return rendered


def _reports_by_task(records: List[dict], source: str = "") -> Dict[str, Dict[Tuple[str, str], MetricsReport]]:
    by_task: Dict[str, Dict[Tuple[str, str], MetricsReport]] = {task: {} for task in TASKS}
    for r in records:
        key = (r["model"], r["eval_set"])
        if key in by_task[r["task"]]:
            logger.warning("Duplicate %s row for %s on %s in %s; first one kept", r["task"], *key, source)
            continue
        by_task[r["task"]][key] = MetricsReport.model_validate(r["report"])
    return by_task


def _write_task_tables(by_task: Dict[str, Dict[Tuple[str, str], MetricsReport]], directory: Path, suffix: str):
    for task, reports in by_task.items():
        if not reports:
            continue
        write_reports(reports, directory, stem=f"{task}_{suffix}")
        print(f"{task}:")
        print(render_results_table(reports))


def stage_report(run: Run):
    path = run.path("reports") / "metrics.json"
    if not path.exists():
        raise DatasetError("MISSING_ARTIFACT", f"{path} not found; run the eval stage first")
    records = json.loads(path.read_text(encoding="utf-8"))
    _write_task_tables(_reports_by_task(records, str(path)), run.path("reports"), "results")
    if run.cfg.case_docs:
        for name, text in _case_reports(run, run.load_models()).items():
            (run.path("reports") / name).write_text(text, encoding="utf-8")
            print(text)


STAGE_FUNCS = {
    "augment": (stage_augment, "augment"),
    "build": (stage_build, "bundle"),
    "train": (stage_train, "checkpoint"),
    "eval": (stage_eval, "reports"),
    "report": (stage_report, "reports"),
}


def _run_stage(run: Run, stage: str, force: bool = True) -> bool:
    fn, outputs = STAGE_FUNCS[stage]
    return run.run_stage(stage, run.path(outputs), lambda: fn(run), force=force)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_stats(cfg: RunConfig, args) -> int:
    if cfg.en_dir is None:
        raise ConfigError("MISSING_PATH", "stats needs --en-dir")
    columns = {"en": corpus_stats(load_corpus(cfg.en_dir, "en", strict=cfg.strict))}
    if cfg.fa_dir is None:
        logger.warning("No Persian corpus configured; printing the English column only")
    else:
        columns["fa"] = corpus_stats(load_corpus(cfg.fa_dir, "fa", strict=cfg.strict))
    print(render_stats_table(columns))
    if cfg.pe_dir is not None:
        print()
        print(render_pe_stats_table(pe_stats(load_pe_corpus(cfg.pe_dir))))
    return 0


def cmd_validate(cfg: RunConfig, args) -> int:
    dirs = {"en": cfg.en_dir, "fa": cfg.fa_dir}
    if not any(dirs.values()):
        raise ConfigError("MISSING_PATH", "validate needs --en-dir and/or --fa-dir")
    n_docs = n_violations = 0
    for language, directory in dirs.items():
        if directory is None:
            continue
        files = sorted(Path(directory).glob("*.xml"))
        if not files:
            logger.warning("No Microtext files found in %s", directory)
        for path in files:
            n_docs += 1
            try:
                report = validate_graph(parse_microtext(path.read_bytes(), language, strict=False))
            except CorpusError as e:
                n_violations += 1
                print(f"{path.name}: {e.code} {e}")
                continue
            for v in report.violations:
                n_violations += 1
                print(f"{path.name}: {v.code} {v.offending_id}")
            for w in report.warnings:
                logger.warning("%s: %s %s", path.name, w.code, w.offending_id)
    print(f"{n_docs} documents, {n_violations} violations")
    return 0 if n_violations == 0 else 2


def cmd_convert_pe(cfg: RunConfig, args) -> int:
    if cfg.pe_dir is None:
        raise ConfigError("MISSING_PATH", "convert-pe needs --pe-dir")
    out = Path(args.out) if args.out else cfg.output_dir / "pe_microtext"
    traces = convert_pe_corpus(load_pe_corpus(cfg.pe_dir), out, strict=cfg.strict)
    dropped = sum(len(t.dropped) for t in traces)
    print(f"converted {len(traces)} essays into {out} ({dropped} components dropped)")
    return 0


def cmd_compare(cfg: RunConfig, args) -> int:
    """Merge the metrics of several runs into one comparison table per task."""
    if args.runs:
        run_dirs = [Path(d) for d in args.runs]
    else:
        run_dirs = sorted(p for p in cfg.output_dir.glob("*") if (p / "reports" / "metrics.json").is_file())
    records = []
    for run_dir in run_dirs:
        path = run_dir / "reports" / "metrics.json"
        if not path.is_file():
            raise DatasetError("MISSING_ARTIFACT", f"{path} not found; run the eval stage of {run_dir} first")
        records.extend(json.loads(path.read_text(encoding="utf-8")))
    if not records:
        raise DatasetError("MISSING_ARTIFACT", f"no evaluated runs under {cfg.output_dir}")
    out = Path(args.out) if args.out else cfg.output_dir / "comparison"
    _write_task_tables(_reports_by_task(records), out, "comparison")
    print(f"compared {len(run_dirs)} runs into {out}")
    return 0


def _stage_command(stage: str):
    def command(cfg: RunConfig, args) -> int:
        if stage == "augment" and cfg.scenario != Scenario.LLM_AUG:
            raise ConfigError("WRONG_SCENARIO", "augment only applies to scenario llm_aug")
        run = Run(cfg)
        _run_stage(run, stage)
        print(f"run directory: {run.dir}")
        return 0
    return command


def cmd_pipeline(cfg: RunConfig, args) -> int:
    run = Run(cfg)
    run.write_manifest()
    stages = [s for s in STAGES if s != "augment" or cfg.scenario == Scenario.LLM_AUG]
    ran = False
    for stage in stages:
        # once a stage reruns, everything downstream is stale
        ran = _run_stage(run, stage, force=args.force or ran) or ran
    print(f"run directory: {run.dir}")
    return 0


COMMANDS = {
    "stats": (cmd_stats, "Corpus statistics, one column per language"),
    "validate": (cmd_validate, "Check every document against the graph invariants"),
    "convert-pe": (cmd_convert_pe, "Convert Persuasive-Essays annotations to Microtext XML"),
    "build": (_stage_command("build"), "Assemble the scenario's dataset bundle"),
    "augment": (_stage_command("augment"), "Generate synthetic ADUs to balance the stance classes"),
    "train": (_stage_command("train"), "Train the two-head classifier on the bundle"),
    "eval": (_stage_command("eval"), "Evaluate the checkpoint on every test language"),
    "report": (_stage_command("report"), "Render results tables and case reports"),
    "pipeline": (cmd_pipeline, "Run every stage, skipping completed ones"),
    "compare": (cmd_compare, "Merge the metrics of several runs into one results table"),
}


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="JSON run configuration")
    common.add_argument("--en-dir", help="English Microtext directory")
    common.add_argument("--fa-dir", help="Persian Microtext directory")
    common.add_argument("--pe-dir", help="Persuasive Essays directory")
    common.add_argument("--scenario", choices=[s.value for s in Scenario])
    common.add_argument("--seed", type=int)
    common.add_argument("--output-dir", help="Parent directory of run directories")
    common.add_argument("--encoder", help="Encoder id, local path, or 'tiny'")
    common.add_argument("--epochs", type=int, help="Maximum training epochs")
    common.add_argument("--separate-heads-runs", action="store_const", const=True,
                        help="Train stance and relation heads as two independent models")
    mode = common.add_mutually_exclusive_group()
    mode.add_argument("--strict", dest="strict", action="store_const", const=True)
    mode.add_argument("--lenient", dest="strict", action="store_const", const=False)
    common.add_argument("--force", action="store_true", help="Redo completed pipeline stages")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = ArgumentParser(prog="argmine", description="Cross-lingual argument mining toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (func, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name == "convert-pe":
            p.add_argument("--out", help="Output directory for converted XML files")
        if name == "compare":
            p.add_argument("--runs", nargs="+", help="Run directories; default is every evaluated run under --output-dir")
            p.add_argument("--out", help="Output directory for the comparison tables")
        p.set_defaults(func=func)
    return parser


def _overrides(args) -> dict:
    return {
        "en_dir": args.en_dir,
        "fa_dir": args.fa_dir,
        "pe_dir": args.pe_dir,
        "scenario": args.scenario,
        "seed": args.seed,
        "output_dir": args.output_dir,
        "strict": args.strict,
        "separate_heads_runs": args.separate_heads_runs,
        "classifier": {"encoder_id": args.encoder},
        "training": {"max_epochs": args.epochs},
    }


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(Path(args.config) if args.config else None, _overrides(args))
        return args.func(cfg, args)
    except ArgMineError as e:
        stage = e.details.get("stage")
        print(f"error{f' in stage {stage}' if stage else ''}: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception("Unexpected failure")
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
