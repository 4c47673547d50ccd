"""Projection of Persuasive-Essays annotations onto the Microtext scheme.

The essay's MajorClaims become one pro root. Claims hang off the root with
their for/against stance turned into pro/con. Premises are then labelled
top-down: a supporting premise inherits the stance of its target, an
attacking premise takes the opposite stance and its edge becomes a rebuttal.
"""

import logging
from collections import deque
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field

from argmine.argument_graph import ADU, EDU, ArgumentGraph, Edge, RelationType, Stance, validate_graph
from argmine.corpus_io import ComponentKind, PEDocument, serialize_microtext
from argmine.errors import MappingError
from argmine.utils import write_jsonl

logger = logging.getLogger(__name__)

ROOT = "__root__"
ROOT_ADU_ID = "a0"


class MappingRule(str, Enum):
    ROOT = "root"
    DIRECT_CHILD = "direct_child"
    INHERIT_SUPPORT = "inherit_support"
    FLIP_ATTACK = "flip_attack"


class MappingStep(BaseModel):
    component_id: str
    assigned_stance: Stance
    rule: MappingRule
    edge_label: Optional[RelationType] = None


class MappingTrace(BaseModel):
    """Top-down record of how each component got its stance"""
    essay_id: str = ""
    steps: List[MappingStep] = Field(default_factory=list)
    dropped: List[dict] = Field(default_factory=list, description="Components left out in lenient mode")
    warnings: List[str] = Field(default_factory=list)


def flip(s: Stance) -> Stance:
    return Stance.CON if s == Stance.PRO else Stance.PRO


def _find_cycle(d: PEDocument) -> Optional[List[str]]:
    graph: Dict[str, List[str]] = {}
    for r in d.relations:
        graph.setdefault(r.source_id, []).append(r.target_id)
    state: Dict[str, int] = {}

    def visit(node: str, path: List[str]) -> Optional[List[str]]:
        state[node] = 1
        for nxt in graph.get(node, []):
            if state.get(nxt) == 1:
                return path + [node, nxt]
            if nxt not in state:
                found = visit(nxt, path + [node])
                if found:
                    return found
        state[node] = 2
        return None

    for node in sorted(graph):
        if node not in state:
            found = visit(node, [])
            if found:
                return found
    return None


def map_pe_to_microtext(d: PEDocument, strict: bool = True) -> Tuple[ArgumentGraph, MappingTrace]:
    """Convert one essay into a single-root Microtext graph plus its trace."""
    trace = MappingTrace(essay_id=d.essay_id)
    kinds = {c.id: c.kind for c in d.components}
    majors = sorted((c for c in d.components if c.kind == ComponentKind.MAJOR_CLAIM), key=lambda c: c.span[0])
    if not majors:
        raise MappingError("NO_MAJOR_CLAIM", f"essay {d.essay_id!r} has no MajorClaim")
    cycle = _find_cycle(d)
    if cycle:
        raise MappingError("CYCLE_DETECTED", " -> ".join(cycle), {"cycle": cycle})

    def node_of(component_id: str) -> str:
        return ROOT if kinds[component_id] == ComponentKind.MAJOR_CLAIM else component_id

    # One outgoing relation per premise: the first in annotation order.
    outgoing = {}
    for r in d.relations:
        if kinds[r.source_id] != ComponentKind.PREMISE:
            logger.debug("Ignoring relation from %s %s", kinds[r.source_id].value, r.source_id)
            continue
        if r.source_id in outgoing:
            message = f"premise {r.source_id} has several outgoing relations; kept the first"
            if message not in trace.warnings:
                trace.warnings.append(message)
                logger.warning("%s: %s", d.essay_id, message)
            continue
        outgoing[r.source_id] = r

    children: Dict[str, List[str]] = {ROOT: [c.id for c in d.components if c.kind == ComponentKind.CLAIM]}
    for r in d.relations:
        if outgoing.get(r.source_id) is r:
            children.setdefault(node_of(r.target_id), []).append(r.source_id)

    stances: Dict[str, Stance] = {ROOT: Stance.PRO}
    parent_edge: Dict[str, RelationType] = {}
    trace.steps.append(MappingStep(component_id="+".join(c.id for c in majors),
                                   assigned_stance=Stance.PRO, rule=MappingRule.ROOT))
    queue = deque([ROOT])
    while queue:
        node = queue.popleft()
        for child in children.get(node, []):
            if child in stances:
                continue
            if kinds[child] == ComponentKind.CLAIM:
                if child not in d.claim_stances:
                    raise MappingError("MISSING_STANCE", f"Claim {child} in {d.essay_id!r} has no stance")
                pro = d.claim_stances[child] == "for"
                stance = Stance.PRO if pro else Stance.CON
                label = RelationType.SUPPORT if pro else RelationType.REBUTTAL
                rule = MappingRule.DIRECT_CHILD
            elif outgoing[child].kind == "support":
                stance, label, rule = stances[node], RelationType.SUPPORT, MappingRule.INHERIT_SUPPORT
            else:
                stance, label, rule = flip(stances[node]), RelationType.REBUTTAL, MappingRule.FLIP_ATTACK
            stances[child] = stance
            parent_edge[child] = label
            trace.steps.append(MappingStep(component_id=child, assigned_stance=stance, rule=rule, edge_label=label))
            queue.append(child)

    for c in d.components:
        if c.kind == ComponentKind.PREMISE and c.id not in stances:
            if strict:
                raise MappingError("UNREACHABLE_COMPONENT", f"premise {c.id} in {d.essay_id!r} has no path to the root",
                                   {"component_id": c.id})
            trace.dropped.append({"component_id": c.id, "reason": "UNREACHABLE_COMPONENT"})
            logger.warning("%s: dropped unreachable premise %s", d.essay_id, c.id)

    graph = _build_graph(d, majors, stances, parent_edge, trace)
    report = validate_graph(graph)
    if not report.ok:
        raise MappingError("VALIDATION_ERROR", f"mapped graph for {d.essay_id!r} is invalid",
                           {"violations": report.codes()})
    return graph, trace


def _build_graph(d: PEDocument, majors, stances: Dict[str, Stance], parent_edge: Dict[str, RelationType],
                 trace: MappingTrace) -> ArgumentGraph:
    by_id = {c.id: c for c in d.components}
    parent_of = {}
    for cid in parent_edge:
        if by_id[cid].kind == ComponentKind.CLAIM:
            parent_of[cid] = ROOT
        else:
            target = next(r.target_id for r in d.relations if r.source_id == cid)
            parent_of[cid] = ROOT if by_id[target].kind == ComponentKind.MAJOR_CLAIM else target

    def adu_id(node: str) -> str:
        return ROOT_ADU_ID if node == ROOT else f"a{node}"

    positioned = [(majors[0].span[0], "e0", " ".join(c.text for c in majors))]
    positioned += [(by_id[cid].span[0], f"e{cid}", by_id[cid].text) for cid in parent_edge]
    edus = [EDU(id=eid, text=text) for _, eid, text in sorted(positioned)]

    mapped = [step.component_id for step in trace.steps[1:]]
    adus = [ADU(id=ROOT_ADU_ID, stance=Stance.PRO)] + [ADU(id=adu_id(cid), stance=stances[cid]) for cid in mapped]
    edges = [Edge(id="s0", rel=RelationType.SEGMENT, source="e0", target=ROOT_ADU_ID)]
    edges += [Edge(id=f"s{i}", rel=RelationType.SEGMENT, source=f"e{cid}", target=adu_id(cid))
              for i, cid in enumerate(mapped, 1)]
    edges += [Edge(id=f"c{i}", rel=parent_edge[cid], source=adu_id(cid), target=adu_id(parent_of[cid]))
              for i, cid in enumerate(mapped, 1)]
    return ArgumentGraph(doc_id=d.essay_id or "pe_essay", language="en", edus=edus, adus=adus, edges=edges)


def convert_pe_corpus(docs: List[PEDocument], out_dir, strict: bool = True) -> List[MappingTrace]:
    """Write one Microtext XML file and one JSONL trace per essay."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    traces = []
    for d in docs:
        graph, trace = map_pe_to_microtext(d, strict=strict)
        (out_dir / f"{graph.doc_id}.xml").write_bytes(serialize_microtext(graph))
        write_jsonl(out_dir / f"{graph.doc_id}.trace.jsonl", (s.model_dump(mode="json") for s in trace.steps))
        traces.append(trace)
    logger.info("Converted %d essays into %s", len(traces), out_dir)
    return traces
