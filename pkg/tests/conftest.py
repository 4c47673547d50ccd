import os
import random
from pathlib import Path

import pytest

from argmine.argument_graph import ADU, EDU, ArgumentGraph, Edge, RelationType, Stance
from argmine.corpus_io import Corpus, parse_microtext, serialize_microtext

FIXTURES = Path(__file__).parent / "fixtures"
MICROTEXT = FIXTURES / "microtext"

PRO_WORDS = ["good", "helpful", "benefit", "fair", "safe", "cheap", "healthy", "useful", "popular", "efficient"]
CON_WORDS = ["bad", "harmful", "risk", "unfair", "dangerous", "costly", "waste", "useless", "broken", "unpopular"]


def synthetic_graph(i: int, language: str = "en") -> ArgumentGraph:
    """Small valid graph whose stance is readable from its vocabulary.

    Even documents end with an example edge, odd ones with an undercut.
    The structure depends only on ``i``, so EN and FA versions pair up.
    """
    rng = random.Random(i)
    prefix = "" if language == "en" else "fa"

    def text(stance: Stance) -> str:
        words = PRO_WORDS if stance == Stance.PRO else CON_WORDS
        return " ".join(prefix + w for w in rng.sample(words, 5)) + f" item{i}"

    last = Stance.PRO if i % 2 == 0 else Stance.CON
    stances = [Stance.PRO, Stance.PRO, Stance.CON, last]
    edus = [EDU(id=f"e{k}", text=text(s)) for k, s in enumerate(stances, 1)]
    adus = [ADU(id=f"a{k}", stance=s) for k, s in enumerate(stances, 1)]
    edges = [Edge(id=f"s{k}", rel=RelationType.SEGMENT, source=f"e{k}", target=f"a{k}") for k in range(1, 5)]
    edges += [
        Edge(id="c1", rel=RelationType.SUPPORT, source="a2", target="a1"),
        Edge(id="c2", rel=RelationType.REBUTTAL, source="a3", target="a1"),
    ]
    if i % 2 == 0:
        edges.append(Edge(id="c3", rel=RelationType.EXAMPLE, source="a4", target="a2"))
    else:
        edges.append(Edge(id="c3", rel=RelationType.UNDERCUT, source="a4", target="c1"))
    return ArgumentGraph(doc_id=f"syn_{i:03d}", language=language, edus=edus, adus=adus, edges=edges,
                         topic_id=f"topic_{i % 4}", central_stance="pro")


def synthetic_corpus(n: int, language: str = "en") -> Corpus:
    return Corpus(language=language, documents=[synthetic_graph(i, language) for i in range(n)])


def write_corpus(corpus: Corpus, directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    for g in corpus.documents:
        (directory / f"{g.doc_id}.xml").write_bytes(serialize_microtext(g))
    return directory


@pytest.fixture
def make_corpus():
    return synthetic_corpus


@pytest.fixture
def corpus_dirs(tmp_path):
    """EN and FA directories holding the same 20 synthetic documents."""
    en = write_corpus(synthetic_corpus(20, "en"), tmp_path / "en")
    fa = write_corpus(synthetic_corpus(20, "fa"), tmp_path / "fa")
    return en, fa


def _fixture_graph(name: str, language: str) -> ArgumentGraph:
    return parse_microtext((MICROTEXT / language / f"{name}.xml").read_bytes(), language)


@pytest.fixture
def case1():
    return _fixture_graph("micro_d14", "en")


@pytest.fixture
def case1_fa():
    return _fixture_graph("micro_d14", "fa")


@pytest.fixture
def case2():
    return _fixture_graph("micro_k015", "en")


@pytest.fixture
def case2_fa():
    return _fixture_graph("micro_k015", "fa")


def _full_corpus_dir(language: str) -> Path:
    env = os.getenv(f"ARGMINE_MICROTEXT_{language.upper()}")
    return Path(env) if env else Path(__file__).parent.parent / "data" / "microtext" / language


@pytest.fixture
def full_corpus_dir():
    """Directory of the complete Microtext corpus for a language; skips when absent."""
    def resolve(language: str) -> Path:
        path = _full_corpus_dir(language)
        if not path.is_dir() or not any(path.glob("*.xml")):
            pytest.skip(f"full {language} Microtext corpus not available at {path}")
        return path
    return resolve
