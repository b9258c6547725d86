"""A rule-based stand-in for the LLM, used to record the scripted fixtures.

It reads the structured request variables rather than the prompt text and
answers from small hand-written tables. Anything outside the tables gets a
plausible but uninformed reply, the way a weak model would behave.
"""

from __future__ import annotations

import json
import re

from ontokg.llm import NOT_FINAL, LlmRequest, StageKind


def _row(s, r, o, st, ot, quals=()):
    return {"subject": s, "relation": r, "object": o, "subject_type": st, "object_type": ot,
            "qualifiers": [{"relation": q, "object": v} for q, v in quals]}


EXTRACTIONS = {
    "Christopher Nolan is a British filmmaker. He was born in London.": [
        _row("Christopher Nolan", "nationality", "United Kingdom", "person", "country"),
        _row("Christopher Nolan", "born in", "London", "person", "city"),
    ],
    "In 2010, Nolan directed the science fiction film Inception.": [
        _row("Nolan", "directed", "Inception", "person", "film", [("point in time", "2010")]),
        _row("Inception", "genre", "science fiction film", "film", "film genre"),
    ],
    "New York City is the most populous city in the United States.": [
        _row("New York City", "country", "United States", "city", "country"),
    ],
    "NYC is located in New York State, on the Atlantic coast.": [
        _row("NYC", "located in", "New York State", "city", "state"),
    ],
    "The Iron Heel is a dystopian novel written by Jack London.": [
        _row("The Iron Heel", "written by", "Jack London", "novel", "person"),
        _row("The Iron Heel", "genre", "dystopian novel", "novel", "literary genre"),
    ],
    "In 1905 Jack London married Charmian London, who later wrote his biography, "
    "The Book of Jack London.": [
        _row("Jack London", "married", "Charmian London", "person", "person",
             [("point in time", "1905")]),
        _row("Charmian London", "wrote", "The Book of Jack London", "person", "book"),
    ],
}

TYPES = {
    "person": "human", "city": "city", "country": "country", "film": "film",
    "film genre": "genre", "literary genre": "genre", "state": "U.S. state",
    "novel": "novel", "book": "literary work",
}

RELATIONS = {
    "nationality": "country of citizenship", "born in": "place of birth",
    "directed": "director", "genre": "genre", "country": "country",
    "located in": "located in the administrative territorial entity",
    "written by": "author", "married": "spouse", "wrote": "author",
}

SYNONYMS = {"nolan": "christopher nolan", "nyc": "new york city"}

DECOMPOSITION = {
    "Who was the spouse of the author of The Iron Heel?": [
        "Who is the author of The Iron Heel?", "Who was the spouse of Jack London?"],
    "Who directed Inception?": ["Who directed Inception?"],
    "Which country is New York City in?": ["Which country is New York City in?"],
}
STUCK = "What does the ruling class in The Iron Heel believe in?"

MENTIONS = {
    "Who is the author of The Iron Heel?": ["The Iron Heel"],
    "Who was the spouse of Jack London?": ["Jack London"],
    "Who directed Inception?": ["Inception"],
    "Which country is New York City in?": ["New York City"],
    STUCK: ["The Iron Heel"],
}

# subquestion -> (anchor entity, property label)
LOOKUPS = {
    "Who is the author of The Iron Heel?": ("The Iron Heel", "author"),
    "Who was the spouse of Jack London?": ("Jack London", "spouse"),
    "Who directed Inception?": ("Inception", "director"),
    "Which country is New York City in?": ("New York City", "country"),
    STUCK: ("The Iron Heel", "genre"),
}

_BULLET = re.compile(r"^- (.*)$", re.M)
_QUALIFIER_TAIL = re.compile(r"( \([^()]*: [^()]*\))+$")


def _bullets(text: str) -> list[str]:
    return _BULLET.findall(text)


def _label(line: str) -> str:
    # "film [Q11424]" / "Christopher Nolan (human)"
    return re.sub(r" [\[(].*$", "", line)


def _history_answers(history: str) -> list[str]:
    if history.strip() == "(none yet)":
        return []
    return [line.rsplit(" -> ", 1)[1] for line in history.splitlines()]


def _extract(v: dict) -> str:
    return json.dumps(EXTRACTIONS.get(v["text"].strip(), []))


def _pick_type(extracted: str, lines: list[str]) -> str:
    want = TYPES.get(extracted.lower(), extracted)
    labels = [_label(line) for line in lines]
    return want if want in labels else labels[0]


def _types(v: dict) -> str:
    return json.dumps({
        "subject_type": _pick_type(v["subject_type"], _bullets(v["subject_candidates"])),
        "object_type": _pick_type(v["object_type"], _bullets(v["object_candidates"])),
    })


def _relation(v: dict) -> str:
    surface = re.match(r"\((.*?), (.*?), (.*)\)$", v["triplet"]).group(2)
    options = []
    for line in _bullets(v["candidates"]):
        m = re.match(r"(.*) \[(P\d+)\] \((forward|inverse)\)", line)
        options.append((m.group(1), m.group(3)))
    want = RELATIONS.get(surface)
    for label, orientation in options:
        if label == want:
            return json.dumps({"relation": label, "orientation": orientation})
    label, orientation = options[0]
    return json.dumps({"relation": label, "orientation": orientation})


def _link(v: dict) -> str:
    mention = v["mention"].lower()
    target = SYNONYMS.get(mention, mention)
    for line in _bullets(v["candidates"]):
        if _label(line).lower() == target:
            return _label(line)
    return "None"


def _qa_link(v: dict) -> str:
    question = v["question"].lower()
    chosen = [_label(line) for line in _bullets(v["candidates"])
              if _label(line).lower() in question]
    return json.dumps([{"entity": c} for c in chosen])


def _subanswer(v: dict) -> str:
    anchor, prop = LOOKUPS.get(v["question"], ("", ""))
    for line in v["facts"].splitlines():
        s, p, o = line.split(" -- ")
        o = _QUALIFIER_TAIL.sub("", o)
        if p == prop and s == anchor:
            return o
        if p == prop and o == anchor:
            return s
    return "unknown"


def _decompose(v: dict) -> str:
    steps = DECOMPOSITION.get(v["question"])
    if steps is None:
        return STUCK
    done = len(_history_answers(v["history"]))
    return steps[min(done, len(steps) - 1)]


def _final(v: dict) -> str:
    steps = DECOMPOSITION.get(v["question"])
    answers = _history_answers(v["history"])
    if steps is None or len(answers) < len(steps):
        return NOT_FINAL
    return answers[-1]


HANDLERS = {
    StageKind.candidate_extraction: _extract,
    StageKind.type_selection: _types,
    StageKind.relation_selection: _relation,
    StageKind.entity_linking: _link,
    StageKind.qa_entity_extraction: lambda v: json.dumps(MENTIONS.get(v["question"], [])),
    StageKind.qa_entity_linking: _qa_link,
    StageKind.qa_subanswer: _subanswer,
    StageKind.qa_decompose: _decompose,
    StageKind.qa_final_check: _final,
}


def respond(request: LlmRequest) -> str:
    return HANDLERS[request.stage](request.variables)
