"""Text generators used to create synthetic ADUs.

Every generator receives the same rendered prompt; only the backend differs.
Live backends (http, openai, crew) read credentials from the environment.
"""

import json
import logging
import random
import re
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional

import requests
from pydantic import BaseModel, Field, ValidationError

from argmine.argument_graph import Stance
from argmine.errors import AugmentationError
from argmine.utils import derive_seed, get_api_key, read_jsonl

logger = logging.getLogger(__name__)

GENERATOR_NAMES = ("replay", "template", "http", "openai", "crew")

RESPONSE_INSTRUCTION = (
    "\nReturn ONLY a JSON object with a single array called \"texts\" containing exactly {n} "
    "different sentences, like this: {{\"texts\": [\"...\", \"...\"]}}"
)


def default_prompt_template() -> str:
    return resources.files("argmine").joinpath("assets/prompt_template.txt").read_text(encoding="utf-8")


class GeneratorSpec(BaseModel):
    """How to reach one text generator"""
    name: str = Field(description="replay, template, http, openai or crew")
    endpoint: Optional[str] = Field(default=None, description="Base URL for http/openai backends")
    prompt_template: str = Field(default_factory=default_prompt_template,
                                 description="Template with {stance} and {topic} slots")
    decoding: Dict[str, Any] = Field(default_factory=dict, description="Backend decoding options")
    fixture: Optional[str] = Field(default=None, description="JSONL of {text, stance} for replay")
    model: Optional[str] = Field(default=None, description="Model name for openai/crew")
    api_key_env: str = Field(default="OPENAI_API_KEY")
    timeout: float = 60.0
    seed: int = 0


class GenerationResponse(BaseModel):
    """Wire format of the http adapter and of LLM JSON answers"""
    texts: List[str] = Field(default_factory=list)


def render_prompt(spec: GeneratorSpec, stance: Stance, topic: str) -> str:
    return spec.prompt_template.format(stance=stance.value, topic=topic)


def parse_generated_texts(raw: str) -> List[str]:
    """Pull the list of texts out of a model answer.

    Tries the strict JSON object first, then the first JSON object embedded in
    the text, then the first bracketed JSON array.
    """
    try:
        return GenerationResponse.model_validate_json(raw).texts
    except ValidationError:
        pass

    json_match = re.search(r'\{[^{}]*\}', raw)
    if json_match:
        try:
            json_dict = json.loads(json_match.group(0))
            if isinstance(json_dict.get("texts"), list):
                return [str(t) for t in json_dict["texts"]]
        except json.JSONDecodeError:
            pass

    array_match = re.search(r'\[.*?\]', raw, re.DOTALL)
    if array_match:
        try:
            items = json.loads(array_match.group(0))
            return [str(t) for t in items]
        except json.JSONDecodeError:
            pass

    logger.warning("Failed to parse generator output: %r", raw[:200])
    return []


class Generator:
    """Base class; subclasses return up to ``n`` raw texts for one prompt."""

    def __init__(self, spec: GeneratorSpec):
        self.spec = spec
        self.calls = 0

    def complete(self, prompt: str, stance: Stance, n: int, topic: str) -> List[str]:
        raise NotImplementedError


class ReplayGenerator(Generator):
    """Replays a recorded JSONL fixture, one cursor per stance."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__(spec)
        if not spec.fixture or not Path(spec.fixture).exists():
            raise AugmentationError("GENERATOR_UNREACHABLE", f"replay fixture {spec.fixture!r} not found")
        self.entries: Dict[Stance, List[str]] = {s: [] for s in Stance}
        for record in read_jsonl(Path(spec.fixture)):
            self.entries[Stance(record["stance"])].append(record["text"])
        self.cursor = {s: 0 for s in Stance}

    def complete(self, prompt: str, stance: Stance, n: int, topic: str) -> List[str]:
        self.calls += 1
        start = self.cursor[stance]
        if n > 0 and start >= len(self.entries[stance]):
            raise AugmentationError("FIXTURE_EXHAUSTED", f"no {stance.value} entries left in {self.spec.fixture}")
        texts = self.entries[stance][start:start + n]
        self.cursor[stance] = start + len(texts)
        return texts


class TemplateGenerator(Generator):
    """Offline generator that fills topics into stance templates."""

    OPENERS = ["Clearly,", "In my view,", "It is obvious that", "We should accept that", "Frankly,",
               "All things considered,", "Most people would agree that", "Experience shows that"]
    PRO = ["{topic} would benefit everyone involved", "{topic} saves money in the long run",
           "{topic} makes daily life noticeably easier", "{topic} is the fairer option for citizens",
           "{topic} has already worked well elsewhere", "{topic} protects people who need it most"]
    CON = ["{topic} would cause more problems than it solves", "{topic} is far too expensive to justify",
           "{topic} ignores the people it affects most", "{topic} has failed wherever it was tried",
           "{topic} restricts personal freedom without good reason", "{topic} distracts from the real issues"]
    CLOSERS = ["", " and that matters", " for the foreseeable future", " according to recent reports"]

    def complete(self, prompt: str, stance: Stance, n: int, topic: str) -> List[str]:
        self.calls += 1
        rng = random.Random(derive_seed(self.spec.seed, f"{stance.value}:{topic}:{self.calls}"))
        bodies = self.PRO if stance == Stance.PRO else self.CON
        subject = topic.replace("_", " ") or "this proposal"
        texts = []
        for _ in range(n):
            body = rng.choice(bodies).format(topic=subject)
            texts.append(f"{rng.choice(self.OPENERS)} {body}{rng.choice(self.CLOSERS)}.")
        return texts


class HttpGenerator(Generator):
    """Plain request/response adapter: POST {prompt, n, decoding} -> {texts}."""

    def complete(self, prompt: str, stance: Stance, n: int, topic: str) -> List[str]:
        if not self.spec.endpoint:
            raise AugmentationError("GENERATOR_UNREACHABLE", "http generator needs an endpoint")
        self.calls += 1
        headers = {}
        api_key = get_api_key(self.spec.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        try:
            response = requests.post(
                self.spec.endpoint,
                json={"prompt": prompt, "n": n, "decoding": self.spec.decoding},
                headers=headers,
                timeout=self.spec.timeout,
            )
            response.raise_for_status()
        except requests.RequestException as e:
            raise AugmentationError("GENERATOR_UNREACHABLE", f"{self.spec.endpoint}: {e}") from e
        try:
            return GenerationResponse.model_validate_json(response.text).texts
        except ValidationError as e:
            raise AugmentationError("GENERATOR_UNREACHABLE", f"malformed response from {self.spec.endpoint}") from e


class OpenAIGenerator(Generator):
    """Chat-completions backend asking for a JSON object answer."""

    def complete(self, prompt: str, stance: Stance, n: int, topic: str) -> List[str]:
        from openai import OpenAI, OpenAIError

        self.calls += 1
        try:
            client = OpenAI(api_key=get_api_key(self.spec.api_key_env), base_url=self.spec.endpoint)
            response = client.chat.completions.create(
                model=self.spec.model or "gpt-4-turbo-preview",
                messages=[
                    {"role": "system", "content": "You write short argumentative sentences and answer in JSON."},
                    {"role": "user", "content": prompt + RESPONSE_INSTRUCTION.format(n=n)},
                ],
                response_format={"type": "json_object"},
                **self.spec.decoding,
            )
        except OpenAIError as e:
            raise AugmentationError("GENERATOR_UNREACHABLE", str(e)) from e
        return parse_generated_texts(response.choices[0].message.content or "")


class CrewGenerator(Generator):
    """A single-agent crew that writes the requested arguments."""

    def complete(self, prompt: str, stance: Stance, n: int, topic: str) -> List[str]:
        from crewai import Agent, Crew, Task
        from langchain_openai import ChatOpenAI

        self.calls += 1
        llm = ChatOpenAI(
            api_key=get_api_key(self.spec.api_key_env),
            base_url=self.spec.endpoint,
            model=self.spec.model or "gpt-4-turbo-preview",
            **self.spec.decoding,
        )
        writer = Agent(
            role="Argument Writer",
            goal=f"Write convincing {stance.value} arguments about {topic}",
            backstory=(
                "You are an experienced debate coach who writes short, self-contained "
                "argumentative sentences for training data."
            ),
            verbose=False,
            llm=llm,
        )
        task = Task(
            description=prompt + RESPONSE_INSTRUCTION.format(n=n),
            expected_output="A JSON object with a 'texts' array of sentences",
            agent=writer,
        )
        try:
            result = Crew(agents=[writer], tasks=[task], verbose=0).kickoff()
        except Exception as e:
            raise AugmentationError("GENERATOR_UNREACHABLE", f"crew run failed: {e}") from e
        return parse_generated_texts(str(result))


GENERATORS = {
    "replay": ReplayGenerator,
    "template": TemplateGenerator,
    "http": HttpGenerator,
    "openai": OpenAIGenerator,
    "crew": CrewGenerator,
}


def make_generator(spec: GeneratorSpec) -> Generator:
    if spec.name not in GENERATORS:
        raise AugmentationError("UNKNOWN_GENERATOR", f"{spec.name!r} is not one of {', '.join(GENERATOR_NAMES)}")
    return GENERATORS[spec.name](spec)
