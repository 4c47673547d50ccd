"""Reading and writing argument corpora.

Microtext documents are XML files with <edu>, <adu> and <edge> children under
an <arggraph> root. Persuasive-Essays documents come as brat standoff pairs
(``.ann`` annotations next to the ``.txt`` essay).
"""

import logging
import re
import xml.etree.ElementTree as ET
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from argmine.argument_graph import (
    ADU,
    EDU,
    ArgumentGraph,
    Edge,
    RelationType,
    Stance,
    argumentative_edges,
    validate_graph,
)
from argmine.errors import CorpusError
from argmine.utils import count_words, write_jsonl

logger = logging.getLogger(__name__)

# Microtext short codes and the long names we also accept on input.
EDGE_TYPES = {
    "seg": RelationType.SEGMENT,
    "sup": RelationType.SUPPORT,
    "reb": RelationType.REBUTTAL,
    "und": RelationType.UNDERCUT,
    "exa": RelationType.EXAMPLE,
    **{r.value: r for r in RelationType},
}
EDGE_CODES = {
    RelationType.SEGMENT: "seg",
    RelationType.SUPPORT: "sup",
    RelationType.REBUTTAL: "reb",
    RelationType.UNDERCUT: "und",
    RelationType.EXAMPLE: "exa",
}
# "add" joins an extra premise to a linked argument; its target is an edge.
LINKED_EDGE_TYPE = "add"
ADU_TYPES = {"pro": Stance.PRO, "opp": Stance.CON, "con": Stance.CON}

STATS_ROWS = [
    ("Documents", "documents"),
    ("Sentences", "sentences"),
    ("Words", "words"),
    ("pro", "pro_count"),
    ("con", "con_count"),
    ("pro Words", "pro_words"),
    ("con Words", "con_words"),
]


class FileError(BaseModel):
    """A per-file failure recorded while loading a directory"""
    file: str
    code: str
    message: str


class Corpus(BaseModel):
    language: str = Field(pattern="^(en|fa)$")
    documents: List[ArgumentGraph] = Field(default_factory=list, description="Sorted by doc_id")
    errors: List[FileError] = Field(default_factory=list)
    quarantined: List[dict] = Field(default_factory=list, description="Edges dropped for unknown types")
    warnings: List[dict] = Field(default_factory=list, description="Validation warnings, e.g. ADUs with several outgoing edges")

    def doc_ids(self) -> List[str]:
        return [d.doc_id for d in self.documents]

    def get(self, doc_id: str) -> ArgumentGraph:
        for d in self.documents:
            if d.doc_id == doc_id:
                return d
        raise KeyError(doc_id)

    def __len__(self) -> int:
        return len(self.documents)


class ParallelPair(BaseModel):
    en: ArgumentGraph
    fa: ArgumentGraph


class ParallelCorpus(BaseModel):
    pairs: List[ParallelPair] = Field(default_factory=list)


class StatsTable(BaseModel):
    documents: int = 0
    sentences: int = 0
    words: int = 0
    pro_count: int = 0
    con_count: int = 0
    pro_words: int = 0
    con_words: int = 0


class ComponentKind(str, Enum):
    MAJOR_CLAIM = "MajorClaim"
    CLAIM = "Claim"
    PREMISE = "Premise"


class PEComponent(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    kind: ComponentKind
    span: Tuple[int, int] = Field(description="Character offsets (start, end) into the essay")
    text: str


class PERelation(BaseModel):
    model_config = ConfigDict(frozen=True)

    source_id: str
    target_id: str
    kind: str = Field(pattern="^(support|attack)$")


class PEDocument(BaseModel):
    """A Persuasive-Essays essay with its argument components"""
    essay_id: str = ""
    components: List[PEComponent] = Field(default_factory=list)
    relations: List[PERelation] = Field(default_factory=list)
    claim_stances: Dict[str, str] = Field(default_factory=dict, description="component id -> for/against")
    essay_text: str = Field(default="", description="Full essay text the spans index into")


class PEStatsTable(BaseModel):
    essays: int = 0
    paragraphs: int = 0
    sentences: int = 0
    words: int = 0
    major_claims: int = 0
    claims: int = 0
    premises: int = 0
    major_claim_words: int = 0
    claim_words: int = 0
    premise_words: int = 0
    no_arg_words: int = 0


# --------------------------------------------------------------------------
# Microtext XML
# --------------------------------------------------------------------------

def _required(el: ET.Element, attr: str, doc_id: str) -> str:
    value = el.get(attr)
    if value is None or value == "":
        raise CorpusError("SCHEMA_ERROR", f"<{el.tag}> without {attr!r} in {doc_id}")
    return value


def _resolve_linked(edge_id: str, raw: Dict[str, Tuple[str, str, str]], doc_id: str) -> Tuple[RelationType, str]:
    """Follow `add` chains to the relation and target of the joined edge."""
    seen = set()
    current = edge_id
    while True:
        if current in seen or current not in raw:
            raise CorpusError("SCHEMA_ERROR", f"linked edge {edge_id!r} does not resolve in {doc_id}")
        seen.add(current)
        kind, _, target = raw[current]
        if kind != LINKED_EDGE_TYPE:
            return EDGE_TYPES[kind], target
        current = target


def parse_microtext(xml: bytes, language: str, strict: bool = True,
                    quarantine: Optional[List[dict]] = None) -> ArgumentGraph:
    """Parse one Microtext XML document into an ArgumentGraph.

    In strict mode unknown edge types and invariant breaches raise; in lenient
    mode unknown edge types are dropped and appended to ``quarantine``.
    """
    try:
        root_el = ET.fromstring(xml)
    except ET.ParseError as e:
        raise CorpusError("PARSE_ERROR", str(e)) from e
    if root_el.tag != "arggraph":
        raise CorpusError("SCHEMA_ERROR", f"root element is <{root_el.tag}>, expected <arggraph>")
    doc_id = _required(root_el, "id", "<arggraph>")

    edus = []
    for el in root_el.findall("edu"):
        text = (el.text or "").strip()
        if not text:
            raise CorpusError("SCHEMA_ERROR", f"empty EDU {el.get('id')!r} in {doc_id}")
        edus.append(EDU(id=_required(el, "id", doc_id), text=text))

    adus = []
    for el in root_el.findall("adu"):
        adu_type = _required(el, "type", doc_id)
        if adu_type not in ADU_TYPES:
            raise CorpusError("SCHEMA_ERROR", f"ADU {el.get('id')!r} has unknown stance {adu_type!r} in {doc_id}")
        adus.append(ADU(id=_required(el, "id", doc_id), stance=ADU_TYPES[adu_type]))

    raw: Dict[str, Tuple[str, str, str]] = {}
    order: List[str] = []
    for el in root_el.findall("edge"):
        edge_id = _required(el, "id", doc_id)
        kind = _required(el, "type", doc_id)
        src = _required(el, "src", doc_id)
        trg = _required(el, "trg", doc_id)
        if kind not in EDGE_TYPES and kind != LINKED_EDGE_TYPE:
            if strict:
                raise CorpusError("PARSE_ERROR", f"unknown edge type {kind!r} on {edge_id!r} in {doc_id}")
            logger.warning("Quarantined edge %s of unknown type %r in %s", edge_id, kind, doc_id)
            if quarantine is not None:
                quarantine.append({"doc_id": doc_id, "edge_id": edge_id, "type": kind})
            continue
        raw[edge_id] = (kind, src, trg)
        order.append(edge_id)

    edges = []
    for edge_id in order:
        kind, src, trg = raw[edge_id]
        if kind == LINKED_EDGE_TYPE:
            rel, trg = _resolve_linked(trg, raw, doc_id)
        else:
            rel = EDGE_TYPES[kind]
        edges.append(Edge(id=edge_id, rel=rel, source=src, target=trg))

    try:
        graph = ArgumentGraph(
            doc_id=doc_id,
            language=language,
            edus=edus,
            adus=adus,
            edges=edges,
            topic_id=root_el.get("topic_id"),
            central_stance=root_el.get("stance"),
        )
    except ValidationError as e:
        raise CorpusError("SCHEMA_ERROR", f"{doc_id}: {e}") from e

    if strict:
        report = validate_graph(graph)
        if not report.ok:
            raise CorpusError("VALIDATION_ERROR", f"{doc_id} violates graph invariants",
                              {"violations": [v.model_dump() for v in report.violations]})
    return graph


def serialize_microtext(g: ArgumentGraph) -> bytes:
    """Write a graph back as Microtext XML (short edge codes, pro/opp ADUs)."""
    attrs = {"id": g.doc_id}
    if g.topic_id:
        attrs["topic_id"] = g.topic_id
    if g.central_stance:
        attrs["stance"] = g.central_stance
    root_el = ET.Element("arggraph", attrs)
    for e in g.edus:
        ET.SubElement(root_el, "edu", {"id": e.id}).text = e.text
    for a in g.adus:
        ET.SubElement(root_el, "adu", {"id": a.id, "type": "pro" if a.stance == Stance.PRO else "opp"})
    for e in g.edges:
        ET.SubElement(root_el, "edge", {"id": e.id, "src": e.source, "trg": e.target, "type": EDGE_CODES[e.rel]})
    ET.indent(root_el)
    return ET.tostring(root_el, encoding="utf-8", xml_declaration=True)


def _load_file(path: Path, language: str, strict: bool) -> Tuple[Optional[ArgumentGraph], List[dict], List[dict], Optional[FileError]]:
    quarantine: List[dict] = []
    try:
        graph = parse_microtext(path.read_bytes(), language, strict=strict, quarantine=quarantine)
    except CorpusError as e:
        return None, quarantine, [], FileError(file=path.name, code=e.code, message=str(e))
    except OSError as e:
        return None, quarantine, [], FileError(file=path.name, code="IO_ERROR", message=str(e))
    report = validate_graph(graph)
    if not report.ok:
        return None, quarantine, [], FileError(file=path.name, code="VALIDATION_ERROR",
                                               message=", ".join(sorted(set(report.codes()))))
    warnings = [{"file": path.name, "doc_id": graph.doc_id, "code": w.code, "offending_id": w.offending_id}
                for w in report.warnings]
    return graph, quarantine, warnings, None


def load_corpus(directory, language: str, strict: bool = True, workers: int = 1) -> Corpus:
    """Load every ``*.xml`` file of a directory, ordered by doc_id."""
    directory = Path(directory)
    if not directory.is_dir():
        raise CorpusError("NOT_FOUND", f"{directory} is not a directory")

    files = sorted(directory.glob("*.xml"))
    if not files:
        logger.warning("No Microtext files found in %s", directory)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(lambda p: _load_file(p, language, strict), files))

    documents: Dict[str, ArgumentGraph] = {}
    errors: List[FileError] = []
    quarantined: List[dict] = []
    warnings: List[dict] = []
    for path, (graph, quarantine, flagged, error) in zip(files, results):
        quarantined.extend(quarantine)
        warnings.extend(flagged)
        if error is not None:
            errors.append(error)
        elif graph.doc_id in documents:
            errors.append(FileError(file=path.name, code="DUPLICATE_DOC", message=f"doc_id {graph.doc_id} seen twice"))
        else:
            documents[graph.doc_id] = graph

    if errors and strict:
        raise CorpusError("LOAD_FAILED", "; ".join(f"{e.file}: {e.message}" for e in errors),
                          {"errors": [e.model_dump() for e in errors]})
    for e in errors:
        logger.warning("Skipped %s: %s", e.file, e.message)
    for w in warnings:
        logger.warning("%s: %s %s", w["file"], w["code"], w["offending_id"])

    corpus = Corpus(language=language, documents=[documents[k] for k in sorted(documents)],
                    errors=errors, quarantined=quarantined, warnings=warnings)
    logger.info("Loaded %d %s documents from %s (%d errors)", len(corpus), language, directory, len(errors))
    return corpus


def dump_corpus_jsonl(corpus: Corpus, path) -> str:
    return write_jsonl(Path(path), (g.model_dump(mode="json") for g in corpus.documents))


# --------------------------------------------------------------------------
# Statistics
# --------------------------------------------------------------------------

def corpus_stats(c: Corpus) -> StatsTable:
    stats = StatsTable(documents=len(c.documents))
    for g in c.documents:
        edu_words = {e.id: count_words(e.text) for e in g.edus}
        stats.sentences += len(g.edus)
        stats.words += sum(edu_words.values())
        stance_of = {a.id: a.stance for a in g.adus}
        for a in g.adus:
            if a.stance == Stance.PRO:
                stats.pro_count += 1
            else:
                stats.con_count += 1
        for e in g.edges:
            if e.rel != RelationType.SEGMENT or e.target not in stance_of:
                continue
            if stance_of[e.target] == Stance.PRO:
                stats.pro_words += edu_words.get(e.source, 0)
            else:
                stats.con_words += edu_words.get(e.source, 0)
    return stats


def _render_columns(rows: List[Tuple[str, List[int]]], headers: List[str]) -> str:
    label_width = max(len(label) for label, _ in rows)
    cells = [[f"{v:,}" for v in values] for _, values in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) for i, h in enumerate(headers)]
    lines = [" " * label_width + "  " + "  ".join(h.rjust(w) for h, w in zip(headers, widths))]
    for (label, _), row in zip(rows, cells):
        lines.append(label.ljust(label_width) + "  " + "  ".join(c.rjust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)


def render_stats_table(columns: Dict[str, StatsTable]) -> str:
    """Aligned text table, one column per language, Table-2 row order."""
    headers = [k.upper() for k in columns]
    rows = [(label, [getattr(t, field) for t in columns.values()]) for label, field in STATS_ROWS]
    return _render_columns(rows, headers)


# --------------------------------------------------------------------------
# Parallel corpora
# --------------------------------------------------------------------------

def _structure(g: ArgumentGraph):
    adus = {a.id: a.stance for a in g.adus}
    edges = {e.id: (e.rel, e.source, e.target) for e in argumentative_edges(g)}
    return adus, edges


def _structure_diff(en: ArgumentGraph, fa: ArgumentGraph) -> List[str]:
    en_adus, en_edges = _structure(en)
    fa_adus, fa_edges = _structure(fa)
    diff = sorted(k for k in set(en_adus) | set(fa_adus) if en_adus.get(k) != fa_adus.get(k))
    diff += sorted(k for k in set(en_edges) | set(fa_edges) if en_edges.get(k) != fa_edges.get(k))
    return diff


def pair_parallel(en: Corpus, fa: Corpus) -> ParallelCorpus:
    """Match documents by doc_id and require identical argument structure.

    Arguments are oriented by their language so the call is symmetric.
    """
    if en.language == "fa" and fa.language == "en":
        en, fa = fa, en
    en_ids, fa_ids = set(en.doc_ids()), set(fa.doc_ids())
    unmatched = sorted(en_ids ^ fa_ids)
    if unmatched:
        raise CorpusError("UNMATCHED_DOC", ", ".join(unmatched), {"doc_ids": unmatched})

    pairs = []
    mismatches: Dict[str, List[str]] = {}
    for doc_id in sorted(en_ids):
        en_doc, fa_doc = en.get(doc_id), fa.get(doc_id)
        diff = _structure_diff(en_doc, fa_doc)
        if diff:
            mismatches[doc_id] = diff
        pairs.append(ParallelPair(en=en_doc, fa=fa_doc))
    if mismatches:
        summary = "; ".join(f"{k}: {', '.join(v)}" for k, v in mismatches.items())
        raise CorpusError("STRUCTURE_MISMATCH", summary, {"mismatches": mismatches})
    return ParallelCorpus(pairs=pairs)


# --------------------------------------------------------------------------
# Persuasive Essays (brat standoff)
# --------------------------------------------------------------------------

PE_RELATIONS = {"supports": "support", "support": "support", "attacks": "attack", "attack": "attack"}
PE_STANCES = {"for": "for", "against": "against"}
_sentence_end = re.compile(r"[.!?]+(?=\s|$)")


def parse_pe(ann_text: str, essay_text: str, essay_id: str = "") -> PEDocument:
    """Parse brat standoff annotations of one essay."""
    components: Dict[str, PEComponent] = {}
    relations: List[PERelation] = []
    stances: Dict[str, str] = {}

    for lineno, line in enumerate(ann_text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        ann_id = parts[0]
        fields = parts[1].split() if len(parts) > 1 else []
        if ann_id.startswith("T"):
            if len(fields) < 3:
                raise CorpusError("SCHEMA_ERROR", f"{essay_id}:{lineno}: malformed text-bound line")
            try:
                offsets = [int(x) for x in " ".join(fields[1:]).replace(";", " ").split()]
            except ValueError as e:
                raise CorpusError("OFFSET_ERROR", f"{essay_id}:{lineno}: {e}") from e
            start, end = offsets[0], offsets[-1]
            if not (0 <= start <= end <= len(essay_text)):
                raise CorpusError("OFFSET_ERROR", f"{essay_id}:{lineno}: span {start}-{end} outside essay")
            span_text = essay_text[start:end]
            if len(parts) > 2 and parts[2] != span_text:
                raise CorpusError("OFFSET_ERROR", f"{essay_id}:{lineno}: span text does not match essay")
            try:
                kind = ComponentKind(fields[0])
            except ValueError:
                logger.warning("Ignoring component %s of unknown kind %r in %s", ann_id, fields[0], essay_id)
                continue
            components[ann_id] = PEComponent(id=ann_id, kind=kind, span=(start, end), text=span_text)
        elif ann_id.startswith("R"):
            if len(fields) < 3 or fields[0].lower() not in PE_RELATIONS:
                raise CorpusError("SCHEMA_ERROR", f"{essay_id}:{lineno}: malformed relation line")
            args = dict(f.split(":", 1) for f in fields[1:3])
            relations.append(PERelation(source_id=args.get("Arg1", ""), target_id=args.get("Arg2", ""),
                                        kind=PE_RELATIONS[fields[0].lower()]))
        elif ann_id.startswith("A"):
            if len(fields) >= 3 and fields[0] == "Stance":
                value = fields[2].lower()
                if value not in PE_STANCES:
                    raise CorpusError("SCHEMA_ERROR", f"{essay_id}:{lineno}: unknown stance {fields[2]!r}")
                stances[fields[1]] = PE_STANCES[value]

    for r in relations:
        for endpoint in (r.source_id, r.target_id):
            if endpoint not in components:
                raise CorpusError("DANGLING_RELATION", f"{essay_id}: relation endpoint {endpoint!r} does not exist")
    for c in components.values():
        if c.kind == ComponentKind.CLAIM and c.id not in stances:
            raise CorpusError("MISSING_STANCE", f"{essay_id}: Claim {c.id} has no for/against stance")

    return PEDocument(
        essay_id=essay_id,
        components=list(components.values()),
        relations=relations,
        claim_stances={k: v for k, v in stances.items() if k in components},
        essay_text=essay_text,
    )


def pe_to_ann(doc: PEDocument) -> str:
    """Render a PEDocument back to brat standoff lines."""
    lines = [f"{c.id}\t{c.kind.value} {c.span[0]} {c.span[1]}\t{c.text}" for c in doc.components]
    for i, (cid, stance) in enumerate(doc.claim_stances.items(), 1):
        lines.append(f"A{i}\tStance {cid} {stance.capitalize()}")
    for i, r in enumerate(doc.relations, 1):
        name = "supports" if r.kind == "support" else "attacks"
        lines.append(f"R{i}\t{name} Arg1:{r.source_id} Arg2:{r.target_id}\t")
    return "\n".join(lines) + ("\n" if lines else "")


def load_pe_corpus(directory) -> List[PEDocument]:
    directory = Path(directory)
    if not directory.is_dir():
        raise CorpusError("NOT_FOUND", f"{directory} is not a directory")
    docs = []
    for ann_path in sorted(directory.glob("*.ann")):
        txt_path = ann_path.with_suffix(".txt")
        if not txt_path.exists():
            raise CorpusError("NOT_FOUND", f"{ann_path.name} has no matching .txt file")
        docs.append(parse_pe(ann_path.read_text(encoding="utf-8"), txt_path.read_text(encoding="utf-8"),
                             essay_id=ann_path.stem))
    if not docs:
        logger.warning("No brat annotation files found in %s", directory)
    return docs


def pe_stats(docs: Iterable[PEDocument]) -> PEStatsTable:
    """Persuasive-Essays statistics; essays and paragraphs are both reported."""
    stats = PEStatsTable()
    kind_fields = {
        ComponentKind.MAJOR_CLAIM: ("major_claims", "major_claim_words"),
        ComponentKind.CLAIM: ("claims", "claim_words"),
        ComponentKind.PREMISE: ("premises", "premise_words"),
    }
    for doc in docs:
        stats.essays += 1
        stats.paragraphs += sum(1 for line in doc.essay_text.splitlines() if line.strip())
        stats.sentences += sum(1 for s in _sentence_end.split(doc.essay_text) if s.strip())
        words = count_words(doc.essay_text)
        stats.words += words
        arg_words = 0
        for c in doc.components:
            count_field, words_field = kind_fields[c.kind]
            setattr(stats, count_field, getattr(stats, count_field) + 1)
            n = count_words(c.text)
            setattr(stats, words_field, getattr(stats, words_field) + n)
            arg_words += n
        stats.no_arg_words += max(0, words - arg_words)
    return stats


def render_pe_stats_table(stats: PEStatsTable) -> str:
    rows = [
        ("Essays", [stats.essays]),
        ("Paragraphs", [stats.paragraphs]),
        ("Sentences", [stats.sentences]),
        ("Words", [stats.words]),
        ("MajorClaim", [stats.major_claims]),
        ("Claim", [stats.claims]),
        ("Premise", [stats.premises]),
        ("Major Claims Words", [stats.major_claim_words]),
        ("Claims Words", [stats.claim_words]),
        ("Premise Words", [stats.premise_words]),
        ("NoArg Words", [stats.no_arg_words]),
    ]
    return _render_columns(rows, ["EN"])
