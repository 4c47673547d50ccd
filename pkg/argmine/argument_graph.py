"""In-memory model of Microtext-style argument graphs.

A graph holds EDUs (text segments), ADUs (stance-bearing units) and typed
directed edges. Segment edges attach EDUs to ADUs; support, rebuttal and
example edges connect two ADUs; an undercut edge goes from an ADU to another
edge (it attacks the inference, not a node).
"""

import logging
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from argmine.errors import GraphError

logger = logging.getLogger(__name__)


class Stance(str, Enum):
    PRO = "pro"
    CON = "con"


class RelationType(str, Enum):
    SEGMENT = "segment"
    SUPPORT = "support"
    REBUTTAL = "rebuttal"
    UNDERCUT = "undercut"
    EXAMPLE = "example"


# Relations the relation head predicts, in head-output order.
RELATION_LABELS = [RelationType.SUPPORT, RelationType.REBUTTAL, RelationType.UNDERCUT, RelationType.EXAMPLE]
STANCE_LABELS = [Stance.PRO, Stance.CON]

NODE_RELATIONS = {RelationType.SUPPORT, RelationType.REBUTTAL, RelationType.EXAMPLE}


class EDU(BaseModel):
    """Elementary discourse unit: the finest text segment of a document"""
    model_config = ConfigDict(frozen=True)

    id: str = Field(description="EDU id, unique within the document")
    text: str = Field(min_length=1, description="Segment text as stored in the corpus")


class ADU(BaseModel):
    """Argumentative discourse unit carrying a stance"""
    model_config = ConfigDict(frozen=True)

    id: str = Field(description="ADU id, unique within the document")
    stance: Stance = Field(description="pro (proponent) or con (opponent)")


class Edge(BaseModel):
    """Typed directed link; `target` may name a node or another edge"""
    model_config = ConfigDict(frozen=True)

    id: str
    rel: RelationType
    source: str = Field(description="EDU id for segment edges, ADU id otherwise")
    target: str = Field(description="ADU id, or an edge id for undercuts")


class ArgumentGraph(BaseModel):
    """One Microtext document"""
    model_config = ConfigDict(frozen=True)

    doc_id: str
    language: str = Field(pattern="^(en|fa)$")
    edus: List[EDU] = Field(default_factory=list, description="EDUs in document order")
    adus: List[ADU] = Field(default_factory=list)
    edges: List[Edge] = Field(default_factory=list)
    topic_id: Optional[str] = Field(default=None, description="Topic attribute of the source document")
    central_stance: Optional[str] = Field(default=None, description="Stance attribute of the source document")


class Violation(BaseModel):
    model_config = ConfigDict(frozen=True)

    code: str
    offending_id: str


class ValidationReport(BaseModel):
    ok: bool
    violations: List[Violation] = Field(default_factory=list)
    warnings: List[Violation] = Field(default_factory=list)

    def codes(self) -> List[str]:
        return [v.code for v in self.violations]


def adu(g: ArgumentGraph, adu_id: str) -> ADU:
    for a in g.adus:
        if a.id == adu_id:
            return a
    raise GraphError("NOT_FOUND", f"no ADU {adu_id!r} in {g.doc_id}")


def edge(g: ArgumentGraph, edge_id: str) -> Optional[Edge]:
    for e in g.edges:
        if e.id == edge_id:
            return e
    return None


def argumentative_edges(g: ArgumentGraph) -> List[Edge]:
    """All non-segment edges, in stored order."""
    return [e for e in g.edges if e.rel != RelationType.SEGMENT]


def _kind_index(g: ArgumentGraph) -> Dict[str, str]:
    kinds: Dict[str, str] = {}
    for e in g.edus:
        kinds.setdefault(e.id, "edu")
    for a in g.adus:
        kinds.setdefault(a.id, "adu")
    for e in g.edges:
        kinds.setdefault(e.id, "edge")
    return kinds


def _outgoing(g: ArgumentGraph) -> Dict[str, List[Edge]]:
    out: Dict[str, List[Edge]] = {a.id: [] for a in g.adus}
    for e in argumentative_edges(g):
        if e.source in out:
            out[e.source].append(e)
    return out


def validate_graph(g: ArgumentGraph) -> ValidationReport:
    """Check every graph and edge invariant and report all failures."""
    violations: List[Violation] = []
    warnings: List[Violation] = []

    def fail(code: str, offending_id: str):
        violations.append(Violation(code=code, offending_id=offending_id))

    seen = set()
    for item in [*g.edus, *g.adus, *g.edges]:
        if item.id in seen:
            fail("DUPLICATE_ID", item.id)
        seen.add(item.id)

    kinds = _kind_index(g)
    by_id = {e.id: e for e in g.edges}
    segmented = set()
    for e in g.edges:
        src_kind = kinds.get(e.source)
        trg_kind = kinds.get(e.target)
        if e.source == e.target:
            fail("SELF_LOOP", e.id)
        if src_kind is None or trg_kind is None:
            fail("DANGLING_REF", e.id)
        if e.rel == RelationType.SEGMENT:
            if src_kind == "edu" and trg_kind == "adu":
                segmented.add(e.target)
            elif src_kind is not None and trg_kind is not None:
                fail("BAD_SEGMENT", e.id)
        elif e.rel == RelationType.UNDERCUT:
            if src_kind is not None and src_kind != "adu":
                fail("BAD_ENDPOINT", e.id)
            if trg_kind is not None and (trg_kind != "edge" or by_id[e.target].rel == RelationType.SEGMENT):
                fail("BAD_UNDERCUT_TARGET", e.id)
        else:
            if (src_kind is not None and src_kind != "adu") or (trg_kind is not None and trg_kind != "adu"):
                fail("BAD_ENDPOINT", e.id)

    for a in g.adus:
        if a.id not in segmented:
            fail("MISSING_SEGMENT", a.id)

    outgoing = _outgoing(g)
    roots = [a.id for a in g.adus if not outgoing[a.id]]
    for adu_id, edges in outgoing.items():
        if len(edges) > 1:
            warnings.append(Violation(code="MULTIPLE_OUTGOING", offending_id=adu_id))

    if not roots:
        fail("NO_ROOT", g.doc_id)
    elif len(roots) > 1:
        for r in roots:
            fail("MULTIPLE_ROOTS", r)
    else:
        for a in g.adus:
            if not _reaches(g, a.id, roots[0], outgoing):
                fail("DISCONNECTED", a.id)

    violations.sort(key=lambda v: (v.code, v.offending_id))
    warnings.sort(key=lambda v: (v.code, v.offending_id))
    return ValidationReport(ok=not violations, violations=violations, warnings=warnings)


def _reaches(g: ArgumentGraph, start: str, root_id: str, outgoing: Dict[str, List[Edge]]) -> bool:
    edges = {e.id: e for e in g.edges}
    current = start
    budget = len(g.adus) + len(g.edges) + 1
    while budget > 0:
        if current == root_id:
            return True
        if current in outgoing:
            if not outgoing[current]:
                return False
            current = outgoing[current][0].target
        elif current in edges:
            # an undercut hangs off an edge; continue from that edge's target
            current = edges[current].target
        else:
            return False
        budget -= 1
    return False


def root(g: ArgumentGraph) -> ADU:
    """The unique ADU with no outgoing argumentative edge."""
    report = validate_graph(g)
    if not report.ok:
        raise GraphError("NOT_VALID", f"{g.doc_id} failed validation", {"violations": report.codes()})
    outgoing = _outgoing(g)
    return next(a for a in g.adus if not outgoing[a.id])


def adu_text(g: ArgumentGraph, adu_id: str) -> str:
    """Texts of the ADU's EDUs in document order, joined by one space."""
    linked = {e.source for e in g.edges if e.rel == RelationType.SEGMENT and e.target == adu_id}
    if not linked:
        raise GraphError("NO_SEGMENT", f"ADU {adu_id!r} in {g.doc_id} has no segment edge")
    return " ".join(e.text for e in g.edus if e.id in linked)


def undercut_endpoints(g: ArgumentGraph, e: Edge) -> Tuple[str, str]:
    """Pair an undercutting ADU with the source ADU of the inference it attacks."""
    if e.rel != RelationType.UNDERCUT:
        raise GraphError("BAD_TARGET", f"edge {e.id!r} is {e.rel.value}, not undercut")
    attacked = edge(g, e.target)
    if attacked is None:
        raise GraphError("BAD_TARGET", f"undercut {e.id!r} targets unknown edge {e.target!r}")
    if attacked.rel == RelationType.SEGMENT:
        raise GraphError("BAD_TARGET", f"undercut {e.id!r} targets segment edge {e.target!r}")
    return e.source, attacked.source
