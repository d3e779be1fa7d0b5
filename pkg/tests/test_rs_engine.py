from __future__ import annotations

import itertools
import json
import math
import random

import numpy as np
import pytest

from conftest import make_frame, make_instance
from filtergen import random_filter, random_frame

from ordirs.dt_core import decode_rle
from ordirs.errors import ConsistencyError, FilterSyntaxError, InputError, NoRuleError, PlanError
from ordirs.llm import extract_envelope
from ordirs.rs_engine import (
    And,
    Anchor,
    Label,
    Not,
    Sem,
    Spatial,
    decompose_query,
    format_filter,
    parse_filter,
    plan_from_filters,
    retrieve,
    segment_frames,
    synthesize,
)
from ordirs.rs_engine.filters import anchor_depth
from ordirs.rs_engine.plan import ReasoningPlan, Requirement
from ordirs.spatial import PredicateKind, Zone
from ordirs.synth_world import Rule, ScriptedLlm


class SequenceLlm:
    """Returns canned responses in order, recording prompts."""

    identity = "sequence"
    deterministic = True

    def __init__(self, responses):
        self.responses = list(responses)
        self.prompts = []

    def complete(self, prompt, schema_id):
        self.prompts.append(prompt)
        return self.responses.pop(0)


def keyword_llm(*rules):
    return ScriptedLlm([*rules, Rule("sem_judgment", strategy="keywords")])


# -- parsing -----------------------------------------------------------------


def test_parse_example_person_nearest_table():
    node = parse_filter('LABEL("person") AND NEAREST_K(1, ANCHOR(LABEL("operating table")))')
    assert isinstance(node, And)
    label, spatial = node.children
    assert label == Label("person")
    assert spatial.kind is PredicateKind.NEAREST_K and spatial.predicate.k == 1
    assert spatial.anchor == Anchor(Label("operating table"))


def test_parse_not_sem():
    assert parse_filter('NOT SEM("is wearing a mask")') == Not(Sem("is wearing a mask"))


def test_arity_error_points_at_paren():
    text = 'NEAREST_K(ANCHOR(LABEL("x")))'
    with pytest.raises(FilterSyntaxError) as exc:
        parse_filter(text)
    assert exc.value.position == text.index("(")


def test_string_escapes_round_trip():
    node = Sem('says "hi" \\ bye')
    assert parse_filter(format_filter(node)) == node


def test_precedence_and_binds_tighter_than_or():
    node = parse_filter('LABEL("a") OR LABEL("b") AND LABEL("c")')
    assert format_filter(node) == 'LABEL("a") OR LABEL("b") AND LABEL("c")'
    assert isinstance(node.children[1], And)


@pytest.mark.parametrize("seed", range(100))
def test_generated_filters_round_trip(seed):
    node = random_filter(random.Random(seed))
    text = format_filter(node)
    parsed = parse_filter(text)
    assert parsed == node
    assert format_filter(parsed) == text
    assert anchor_depth(parsed) <= 2


MALFORMED = [
    # (text, expected error offset)
    ('NEAREST_K(ANCHOR(LABEL("x")))', 9),
    ("LEFT_OF()", 7),
    ('LEFT_OF(1, ANCHOR(LABEL("x")))', 7),
    ('WITHIN_PX(ANCHOR(LABEL("x")))', 9),
    ("LARGEST_K()", 9),
    ('LARGEST_K(1, ANCHOR(LABEL("x")))', 9),
    ('OVERLAPS(0.5, 0.2, ANCHOR(LABEL("x")))', 8),
    ('LEFT_OF(ANCHOR(LEFT_OF(ANCHOR(LEFT_OF(ANCHOR(LABEL("x")))))))', 38),
    ('NEAREST_K(1, ANCHOR(RIGHT_OF(ANCHOR(ABOVE(ANCHOR(LABEL("y")))))))', 42),
    ('(LABEL("a")', 11),
    ('LABEL("a"))', 10),
    ('((LABEL("a") AND SEM("b"))', 26),
    ('LABEL("a" AND SEM("b")', 10),
    ('LABEL("unterminated)', 6),
    ("LABEL()", 6),
    ('LABEL("a") AND', 14),
    ('WITHIN_PX(-3, ANCHOR(LABEL("x")))', 10),
    ('OVERLAPS(1.5, ANCHOR(LABEL("x")))', 9),
    ('NEAREST_K(0)', 10),
    ('ANCHOR(LABEL("x"))', 0),
]


@pytest.mark.parametrize("text,offset", MALFORMED)
def test_malformed_corpus_positioned(text, offset):
    with pytest.raises(FilterSyntaxError) as exc:
        parse_filter(text)
    assert exc.value.position == offset, str(exc.value)
    assert f"offset {offset}" in str(exc.value)


def test_malformed_corpus_size():
    assert len(MALFORMED) == 20


# -- reasoning ---------------------------------------------------------------

PLAN_2REQ = {
    "requirements": [
        {"id": "r1", "kind": "semantic", "rationale": "a person", "filter": 'LABEL("person")'},
        {"id": "r2", "kind": "spatial", "rationale": "near table", "filter": 'NEAREST_K(1, ANCHOR(LABEL("operating table")))'},
    ]
}


def test_decompose_with_rule_table():
    llm = ScriptedLlm([Rule("plan", match="closest to the operating table", response=PLAN_2REQ)])
    plan = decompose_query("Which person is closest to the operating table?", llm)
    assert plan.k == 2
    assert [r.kind for r in plan.requirements] == ["semantic", "spatial"]
    assert plan.requirements[1].filter_text == 'NEAREST_K(1, ANCHOR(LABEL("operating table")))'
    assert len(plan.transcripts) == 1


def test_decompose_repairs_then_succeeds():
    bad_filter = json.dumps({"requirements": [{"id": "r1", "kind": "semantic", "filter": "LABEL(person)"}]})
    llm = SequenceLlm(["not json at all", bad_filter, json.dumps(PLAN_2REQ)])
    plan = decompose_query("q", llm)
    assert plan.k == 2
    assert len(plan.transcripts) == 3
    assert [t["error"] is None for t in plan.transcripts] == [False, False, True]
    _, payload = extract_envelope(llm.prompts[2])
    assert payload["attempt"] == 3
    assert payload["previous_response"] == bad_filter
    assert "offset" in payload["validation_error"]


def test_decompose_exhaustion_raises_with_transcripts():
    llm = SequenceLlm(["{}", "{}", "{}"])
    with pytest.raises(PlanError) as exc:
        decompose_query("q", llm)
    assert len(exc.value.transcripts) == 3


def test_decompose_rejects_kind_mismatch():
    doc = {"requirements": [{"id": "r1", "kind": "spatial", "filter": 'LABEL("nurse")'}]}
    llm = SequenceLlm([json.dumps(doc)] * 3)
    with pytest.raises(PlanError):
        decompose_query("q", llm)


def test_decompose_empty_query():
    with pytest.raises(InputError):
        decompose_query("  ", SequenceLlm([]))


def test_unmatched_prompt_names_digest():
    llm = ScriptedLlm([])
    with pytest.raises(NoRuleError) as exc:
        decompose_query("anything", llm)
    assert len(exc.value.digest) == 64


# -- retrieval and synthesis ---------------------------------------------------


def test_retrieve_label_and_spatial(simple_frame):
    plan = plan_from_filters("q", [("semantic", 'LABEL("person")'), ("spatial", 'LEFT_OF(ANCHOR(LABEL("operating table")))')])
    r = retrieve(plan, simple_frame, None)
    by_label = {i.instance_id: i.label for i in simple_frame.instances}
    assert [by_label[i] for i in r.final] == ["nurse"]


def test_retrieve_sem_batches_one_call_per_question(simple_frame):
    calls = []

    class Counting(ScriptedLlm):
        def complete(self, prompt, schema_id):
            calls.append(schema_id)
            return super().complete(prompt, schema_id)

    llm = Counting([Rule("sem_judgment", strategy="keywords")])
    plan = plan_from_filters("q", [("semantic", 'SEM("blue gown")'), ("semantic", 'SEM("blue gown") OR LABEL("door")')])
    r = retrieve(plan, simple_frame, llm)
    assert calls == ["sem_judgment"]
    nurse = next(i.instance_id for i in simple_frame.instances if i.label == "nurse")
    assert r.final == frozenset({nurse})
    assert any(t.source == "llm" for t in r.trace)


def test_empty_intersection_sets_flag(simple_frame):
    plan = plan_from_filters("q", [("semantic", 'LABEL("nurse")'), ("semantic", 'LABEL("surgeon")')])
    r = retrieve(plan, simple_frame, None)
    res = synthesize(r.final, simple_frame, r)
    assert res.empty_flag and res.mask.area == 0
    assert res.candidates == {"r1": [1], "r2": [2]} or set(res.candidates) == {"r1", "r2"}


def test_synthesize_unions_masks(simple_frame):
    res = synthesize([0, 1], simple_frame)
    expected = sum(simple_frame.instance(i).mask.area for i in (0, 1))
    assert res.mask.area == expected
    assert not res.empty_flag


def test_synthesize_rejects_unknown_ids(simple_frame):
    with pytest.raises(ConsistencyError):
        synthesize([99], simple_frame)


def test_zone_anchor():
    frame = make_frame([make_instance(0, "nurse", 16, 12, (0, 0, 2, 2)), make_instance(1, "nurse", 16, 12, (12, 8, 14, 10))])
    zone = Zone("corner", ((10, 6), (16, 6), (16, 12), (10, 12)))
    plan = plan_from_filters("q", [("spatial", 'WITHIN_PX(3, ZONE("corner"))')])
    assert retrieve(plan, frame, None, zones={"corner": zone}).final == frozenset({1})


def test_segment_frames_plans_once_and_orders():
    rules = [Rule("plan", match="nurse", response={"requirements": [{"id": "r1", "kind": "semantic", "filter": 'LABEL("nurse")'}]})]
    counting = []

    class Counting(ScriptedLlm):
        def complete(self, prompt, schema_id):
            counting.append(schema_id)
            return super().complete(prompt, schema_id)

    frames = [make_frame([make_instance(0, "nurse", 16, 12, (0, 0, 2, 2))], index=i) for i in (2, 0, 1)]
    results, plan = segment_frames("the nurse", frames, Counting(rules), jobs=3)
    assert counting == ["plan"]
    assert [r.frame_index for r in results] == [0, 1, 2]
    assert all(r.mask.area == 4 for r in results)


def test_segment_frames_records_per_frame_failure():
    plan = plan_from_filters("q", [("semantic", 'SEM("blue")')])
    frames = [make_frame([make_instance(0, "nurse", 16, 12, (0, 0, 2, 2), description="blue")])]
    results, _ = segment_frames("q", frames, ScriptedLlm([]), plan=plan)
    assert results[0].error and "NoRuleError" in results[0].error
    assert results[0].empty_flag


# -- set-algebra properties against an independent per-instance oracle ---------

CATEGORIES = {
    "person": {"person", "patient", "anesthesiologist", "surgeon", "nurse", "staff"},
    "staff": {"staff", "anesthesiologist", "surgeon", "nurse"},
}


def _oracle_centroid(mask):
    ys, xs = np.nonzero(decode_rle(mask))
    return xs.mean() + 0.5, ys.mean() + 0.5


def _oracle_holds(node, inst, frame):
    if isinstance(node, Label):
        return inst.label == node.text or inst.label in CATEGORIES.get(node.text, ())
    if isinstance(node, Sem):
        return set(node.question.split()) <= set(inst.description.split())
    if isinstance(node, Not):
        return not _oracle_holds(node.child, inst, frame)
    if isinstance(node, And):
        return all(_oracle_holds(c, inst, frame) for c in node.children)
    if hasattr(node, "children"):
        return any(_oracle_holds(c, inst, frame) for c in node.children)
    return _oracle_spatial(node, inst, frame)


def _oracle_spatial(node, inst, frame):
    pred, kind = node.predicate, node.kind
    anchors = [] if node.anchor is None else [a for a in frame.instances if _oracle_holds(node.anchor.filter, a, frame)]
    if node.anchor is not None and not anchors:
        return False
    if kind.is_ranking:
        anchor_ids = {a.instance_id for a in anchors}
        pool = [i for i in frame.instances if i.instance_id not in anchor_ids]

        def key(i):
            if kind is PredicateKind.LARGEST_K:
                return (-int(decode_rle(i.mask).sum()), i.instance_id)
            if anchors:
                cx, cy = _oracle_centroid(i.mask)
                d = min(math.dist((cx, cy), _oracle_centroid(a.mask)) for a in anchors)
            else:
                d = i.depth.mean
            return (d if kind is PredicateKind.NEAREST_K else -d, i.instance_id)

        return inst.instance_id in {i.instance_id for i in sorted(pool, key=key)[: pred.k]}
    others = [a for a in anchors if a.instance_id != inst.instance_id]
    if not others:
        return False
    if kind is PredicateKind.NEARER_THAN:
        return inst.depth.mean < np.average([a.depth.mean for a in others], weights=[a.depth.pixel_count for a in others])
    if kind is PredicateKind.FARTHER_THAN:
        return inst.depth.mean > np.average([a.depth.mean for a in others], weights=[a.depth.pixel_count for a in others])
    s = decode_rle(inst.mask).astype(bool)
    if kind is PredicateKind.OVERLAPS:
        ious = []
        for a in others:
            m = decode_rle(a.mask).astype(bool)
            ious.append((s & m).sum() / (s | m).sum())
        return max(ious) > (pred.tau or 0.0)
    sx, sy = _oracle_centroid(inst.mask)
    if kind is PredicateKind.WITHIN_PX:
        return min(math.dist((sx, sy), _oracle_centroid(a.mask)) for a in others) <= pred.radius
    union = np.zeros_like(s)
    for a in others:
        union |= decode_rle(a.mask).astype(bool)
    ys, xs = np.nonzero(union)
    ax, ay = xs.mean() + 0.5, ys.mean() + 0.5
    return {
        PredicateKind.LEFT_OF: sx < ax,
        PredicateKind.RIGHT_OF: sx > ax,
        PredicateKind.ABOVE: sy < ay,
        PredicateKind.BELOW: sy > ay,
    }[kind]


def _random_plan(rng):
    reqs = []
    for i in range(rng.randint(1, 4)):
        node = random_filter(rng, depth=2, zones=False)
        reqs.append(Requirement(f"r{i + 1}", "semantic", "", node))
    return ReasoningPlan("q", tuple(reqs))


SEEDS = range(50)


@pytest.mark.parametrize("seed", SEEDS)
def test_set_algebra_properties(seed):
    rng = random.Random(1000 + seed)
    frame = random_frame(rng)
    plan = _random_plan(rng)
    llm = keyword_llm()
    base = retrieve(plan, frame, llm).final

    # permutation invariance
    for perm in itertools.islice(itertools.permutations(plan.requirements), 6):
        assert retrieve(ReasoningPlan("q", tuple(perm)), frame, llm).final == base

    # duplicate idempotence
    dup = ReasoningPlan("q", plan.requirements + (plan.requirements[0],))
    assert retrieve(dup, frame, llm).final == base

    # monotonicity under an added requirement
    extra = Requirement("rx", "semantic", "", random_filter(rng, depth=2, zones=False))
    grown = retrieve(ReasoningPlan("q", plan.requirements + (extra,)), frame, llm).final
    assert grown <= base

    # soundness and completeness against the oracle
    expected = {
        i.instance_id for i in frame.instances if all(_oracle_holds(r.filter, i, frame) for r in plan.requirements)
    }
    assert base == frozenset(expected)
