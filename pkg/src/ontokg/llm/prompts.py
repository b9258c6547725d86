"""Prompt templates, one per pipeline stage.

Templates use ``string.Template`` placeholders (``$name``) so JSON braces in
the instructions need no escaping. ``$examples`` is bound by the gateway from
the built-in in-context examples plus any user-supplied extras.
"""

from __future__ import annotations

from enum import Enum


class StageKind(str, Enum):
    candidate_extraction = "candidate_extraction"
    type_selection = "type_selection"
    relation_selection = "relation_selection"
    entity_linking = "entity_linking"
    qa_entity_extraction = "qa_entity_extraction"
    qa_entity_linking = "qa_entity_linking"
    qa_subanswer = "qa_subanswer"
    qa_decompose = "qa_decompose"
    qa_final_check = "qa_final_check"


NOT_FINAL = "NOT FINAL"
NO_MATCH = "None"

CORRECTION = (
    "\n\nYour previous output was not valid; emit only the requested structure. "
    "(attempt $attempt of $budget)"
)

TEMPLATES: dict[StageKind, str] = {
    StageKind.candidate_extraction: """\
Task: turn the text into facts for a knowledge graph modelled on Wikidata.

Each fact is a triplet (subject, relation, object). Subjects and objects are
named entities or concepts; the relation is a short Wikidata-like predicate.
Context such as a date, a place or a condition goes into qualifiers: each
qualifier has a relation and an object and belongs to exactly one triplet.
Never emit a qualifier as a triplet of its own.

Respond with a JSON list and nothing else. Every element is an object with
the keys "subject", "relation", "object", "qualifiers" (a list of objects
with keys "relation" and "object"), "subject_type" and "object_type" (the
class of the subject and of the object).
$examples
Text: $text
""",
    StageKind.type_selection: """\
A triplet was extracted from the text below. Its subject and object types
were matched against Wikidata classes by semantic similarity.

Pick the single best class for the subject from the subject candidates and
the single best class for the object from the object candidates, given the
triplet and the text. Choose only from the listed candidates.

Respond with a JSON object with keys "subject_type" and "object_type" whose
values are candidate names (or the bracketed ids) exactly as listed.
$examples
Text: $text
Triplet: $triplet
Subject type as extracted: $subject_type
Candidate subject types:
$subject_candidates
Object type as extracted: $object_type
Candidate object types:
$object_candidates
""",
    StageKind.relation_selection: """\
A triplet was extracted from the text below. The candidates are Wikidata
properties that may legally connect the typed subject and object, ranked by
similarity to the extracted relation. Each candidate is shown as the triplet
it would produce; some reverse the subject and object.

Pick the candidate that best states the fact in the text.

Respond with a JSON object with key "relation" (the property name or its
bracketed id exactly as listed) and, when the same property is listed in both
directions, key "orientation" set to "forward" or "inverse".
$examples
Text: $text
Extracted triplet: $triplet
Candidate relations:
$candidates
""",
    StageKind.entity_linking: """\
A triplet was extracted from the text below. The $role name may refer to an
entity already stored in the knowledge graph built from earlier texts.

If one of the candidates denotes the same entity as the $role, answer with
that candidate name copied exactly. If none does, answer with the string
None. Output the name or None only, with no explanation.
$examples
Text: $text
Extracted triplet: $triplet
$role_title to link: $mention
Candidate entities:
$candidates
""",
    StageKind.qa_entity_extraction: """\
List the entities in the question that could help look up its answer in a
knowledge graph: named entities, dates and abstract concepts alike. The
question mentions at least one.

Respond with a JSON list of entity names and nothing else.
$examples
Question: $question
""",
    StageKind.qa_entity_linking: """\
Below is a question and a list of entities found in a knowledge graph. Pick
every entity that is directly or indirectly useful for answering the
question; related events, members or places count.

Respond with a JSON list of objects, each with key "entity" holding a name
copied from the list. Return at least one entity.
$examples
Question: $question
Entities:
$candidates
""",
    StageKind.qa_subanswer: """\
Answer the question using only the knowledge graph facts below. Qualifiers
follow a fact in parentheses. Reply with the answer alone, as short as
possible.
$examples
Facts:
$facts
Question: $question
""",
    StageKind.qa_decompose: """\
Break a multi-hop question into single hops, one at a time.

You get the original question and the hops answered so far. Write the next
one-hop question, substituting answers already obtained so it can be looked
up directly. Reply with the question only.
$examples
Original question: $question
Answered hops:
$history
""",
    StageKind.qa_final_check: """\
Decide whether the answered hops below settle the original question.

If they do, reply with the answer to the original question (not merely the
last hop's answer). If more hops are needed, reply with exactly: NOT FINAL
Reply on a single line with no prefix or explanation.$must_answer
$examples
Original question: $question
Answered hops:
$history
""",
}

MUST_ANSWER = (
    "\nNo further hops are possible: reply with your best final answer and do not "
    "reply NOT FINAL."
)

DEFAULT_EXAMPLES: dict[StageKind, str] = {
    StageKind.candidate_extraction: """
Example text: In 2010, Christopher Nolan directed the science fiction movie Inception.
Example output: [{"subject": "Nolan", "relation": "directed", "object": "Inception",
"qualifiers": [{"relation": "point in time", "object": "2010"}],
"subject_type": "human", "object_type": "film"}]
""",
    StageKind.qa_final_check: """
Example: original question "Who was the spouse of the author of The Iron Heel?";
hops "Who wrote The Iron Heel? -> Jack London" and
"Who was the spouse of Jack London? -> Charmian London"; reply: Charmian London
Example: original question "Which capital is nearest to Nikola Tesla's birthplace?";
hop "Where was Nikola Tesla born? -> Smiljan"; reply: NOT FINAL
""",
}
