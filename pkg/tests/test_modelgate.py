import json

import httpx
import pytest
from hypothesis import given, strategies as st

from conflict_audit import modelgate as mg
from conflict_audit.labels import LABELS

GOOD = '{"label":"V","confidence":0.89,"logits":{"V":0.89,"B":0.05,"E":0.02,"P":0.01,"R":0.02,"S":0.01}}'


# ---- prompts ----

def test_zero_shot_prompt_contents():
    p = mg.build_prompt("Gunmen attacked a village.", mg.StrategyConfig(mg.ZERO_SHOT))
    assert "V = Violence against civilians" in p.user
    assert "Return ONLY valid JSON" in p.user
    assert "Gunmen attacked a village." in p.user
    assert p.system is None
    assert p.messages() == [{"role": "user", "content": p.user}]


@pytest.mark.parametrize("k", [1, 3, 5])
def test_few_shot_demonstration_count_and_order(k):
    p = mg.build_prompt("TARGET", mg.StrategyConfig(mg.FEW_SHOT, k))
    demos = [line for line in p.user.splitlines() if line.startswith("{\"label\"")]
    assert len(demos) == 6 * k
    assert [json.loads(d)["label"] for d in demos] == [lab for lab in LABELS for _ in range(k)]
    assert p.user.rstrip().endswith("Event: TARGET")
    assert p.system.startswith("You are an expert political conflict event analyst.")


def test_explainable_prompt_system_message():
    p = mg.build_prompt("x", mg.StrategyConfig(mg.EXPLAINABLE))
    assert "Always explain your reasoning step-by-step" in p.system
    assert "at most 20 words" in p.user and "exactly three" in p.user
    assert p.messages()[0]["role"] == "system"


def test_prompt_is_pure():
    cfg = mg.StrategyConfig(mg.FEW_SHOT, 2)
    assert mg.build_prompt("e", cfg) == mg.build_prompt("e", cfg)


def test_prompt_braces_in_notes_are_literal():
    assert "{odd}" in mg.build_prompt("an {odd} note", mg.StrategyConfig()).user


@pytest.mark.parametrize("k", [0, 6, -1])
def test_examples_per_category_bounds(k):
    with pytest.raises(mg.ConfigError):
        mg.StrategyConfig(mg.FEW_SHOT, k)


def test_insufficient_pool():
    pool = {lab: () for lab in LABELS}
    with pytest.raises(mg.ConfigError):
        mg.build_prompt("x", mg.StrategyConfig(mg.FEW_SHOT, 1, example_pool=pool))


def test_from_env_defaults_and_overrides():
    cfg = mg.StrategyConfig.from_env(env={"STRATEGY": "few_shot", "NUM_EXAMPLES": "5"})
    assert cfg.kind == mg.FEW_SHOT and cfg.shots == 5
    cfg = mg.StrategyConfig.from_env(kind="explainable", env={"STRATEGY": "few_shot"})
    assert cfg.kind == mg.EXPLAINABLE and cfg.shots == 0
    with pytest.raises(mg.ConfigError):
        mg.StrategyConfig.from_env(env={"NUM_EXAMPLES": "three"})


def test_schema_required_fields():
    assert mg.response_schema(mg.ZERO_SHOT)["required"] == ["label", "confidence"]
    assert "reasoning" in mg.response_schema(mg.EXPLAINABLE)["required"]


# ---- parsing ----

def test_parse_valid_pool_example():
    r = mg.parse_response(GOOD, mg.ZERO_SHOT)
    assert r.label == "V" and r.confidence == 0.89
    assert sum(r.logits.values()) == pytest.approx(1.0)


def test_parse_tolerates_prose():
    r = mg.parse_response("Sure! {not json} here: " + GOOD + " hope this helps {}", mg.FEW_SHOT)
    assert r.label == "V"


def test_parse_renormalizes_within_tolerance():
    raw = '{"label":"B","confidence":0.5,"logits":{"V":0.104,"B":0.5,"E":0.1,"P":0.1,"R":0.1,"S":0.1}}'
    r = mg.parse_response(raw, mg.ZERO_SHOT)
    assert sum(r.logits.values()) == pytest.approx(1.0, abs=1e-12)
    assert r.logits["B"] == pytest.approx(0.5 / 1.004)
    assert "logits_renormalized" in r.flags


@pytest.mark.parametrize("raw,reason", [
    ('{"label":"B","confidence":0.5,"logits":{"V":0.3,"B":0.5,"E":0.1,"P":0.1,"R":0.1,"S":0.1}}', "logits_sum"),
    ('{"label":"X","confidence":0.5}', "invalid_label"),
    ('{"label":"v","confidence":0.5}', "invalid_label"),
    ('{"label":"V","confidence":1.5}', "confidence_out_of_range"),
    ('{"label":"V","confidence":true}', "confidence_out_of_range"),
    ('no json here', "no_json_object"),
    ('{"label":"V","confidence":0.5,"logits":{"V":1.0}}', "logits_incomplete"),
    ('{"label":"V","confidence":0.5,"logits":{"V":1.2,"B":-0.2,"E":0,"P":0,"R":0,"S":0}}',
     "logit_out_of_range"),
])
def test_parse_rejections(raw, reason):
    with pytest.raises(mg.ParseError) as exc:
        mg.parse_response(raw, mg.ZERO_SHOT)
    assert exc.value.reason == reason
    assert exc.value.raw == raw


def test_parse_zero_shot_synthesizes_missing_logits():
    r = mg.parse_response('{"label":"P","confidence":0.75}', mg.ZERO_SHOT)
    assert r.logits["P"] == 0.75 and r.logits["V"] == pytest.approx(0.05)
    assert "logits_synthesized" in r.flags
    with pytest.raises(mg.ParseError):
        mg.parse_response('{"label":"P","confidence":0.75}', mg.FEW_SHOT)


def test_parse_explainable_arity():
    base = json.loads(GOOD)
    ok = dict(base, reasoning=["a", "b", "c"])
    assert mg.parse_response(json.dumps(ok), mg.EXPLAINABLE).rationale == ("a", "b", "c")
    for bad in (["a", "b"], ["a", "b", "c", "d"], None, ["a", 2, "c"]):
        with pytest.raises(mg.ParseError, match="rationale_arity"):
            mg.parse_response(json.dumps(dict(base, reasoning=bad)), mg.EXPLAINABLE)


@given(st.text(max_size=200))
def test_parser_never_accepts_invalid(raw):
    for kind in mg.STRATEGIES:
        try:
            r = mg.parse_response(raw, kind)
        except mg.ParseError:
            continue
        assert r.label in LABELS and 0 <= r.confidence <= 1
        assert abs(sum(r.logits.values()) - 1) <= 0.01


@given(st.sampled_from(LABELS), st.floats(0, 1), st.lists(st.floats(0, 1), min_size=6, max_size=6))
def test_parser_accepted_predictions_satisfy_invariants(label, conf, vals):
    raw = json.dumps({"label": label, "confidence": conf, "logits": dict(zip(LABELS, vals))})
    try:
        r = mg.parse_response(raw, mg.FEW_SHOT)
    except mg.ParseError as exc:
        assert exc.reason == "logits_sum" and abs(sum(vals) - 1) > 0.01
        return
    assert all(0 <= v <= 1 for v in r.logits.values())
    assert sum(r.logits.values()) == pytest.approx(1.0)


# ---- endpoints ----

def test_mock_constant_passthrough():
    ep = mg.make_endpoint("mock:constant=B,confidence=0.9")
    p = mg.classify("e1", "anything", mg.StrategyConfig(), ep, "m")
    assert (p.label, p.confidence) == ("B", 0.9)


def test_mock_is_referentially_transparent():
    ep = mg.MockEndpoint()
    for kind in mg.STRATEGIES:
        cfg = mg.StrategyConfig(kind)
        a = mg.classify("e7", "Soldiers shot and killed two farmers.", cfg, ep, "gemma")
        b = mg.classify("e7", "Soldiers shot and killed two farmers.", cfg, ep, "gemma")
        assert a == b
        if kind == mg.EXPLAINABLE:
            assert a.rationale is not None and len(a.rationale) == 3
            assert all(len(s.split()) <= 20 for s in a.rationale)


def test_mock_rules_take_precedence():
    ep = mg.MockEndpoint(rules={"brutally": "V"}, noise=0, text_sensitivity=0)
    assert ep.decide("m", "e", "Troops brutally clashed")[0] == "V"
    assert ep.decide("m", "e", "Troops clashed")[0] == "B"


def test_mock_bad_constant():
    with pytest.raises(mg.ConfigError):
        mg.make_endpoint("mock:constant=Q")


@pytest.mark.parametrize("desc", ["ftp://x", "mock:colour=red", "mock:noise=abc", ""])
def test_bad_descriptors(desc):
    with pytest.raises(mg.ConfigError):
        mg.make_endpoint(desc)


def test_replay_roundtrip(tmp_path):
    ep = mg.MockEndpoint()
    items = [(f"E{i}", f"Police shot protesters in town {i}") for i in range(12)]
    cfg = mg.StrategyConfig(mg.EXPLAINABLE)
    preds, fails = mg.classify_batch(items, cfg, ep, "llama")
    assert not fails
    path = tmp_path / "preds.jsonl"
    mg.write_predictions(preds, path)
    replay = mg.make_endpoint(f"replay:{path}")
    replay.check()
    again, _ = mg.classify_batch(items, cfg, replay, "llama")
    assert again == preds
    assert mg.read_predictions(path) == preds
    with pytest.raises(mg.EndpointError):
        mg.classify("E99", "unseen", cfg, replay, "llama")


def test_replay_missing_file(tmp_path):
    with pytest.raises(mg.EndpointError):
        mg.ReplayEndpoint(tmp_path / "nope.jsonl").check()


class Scripted:
    def __init__(self, replies):
        self.replies = replies

    def respond(self, request):
        return self.replies[request.event_id]

    def check(self):
        pass


def test_batch_failure_ledger_and_order():
    ep = Scripted({"b": GOOD, "a": '{"label":"X","confidence":0.2}', "c": GOOD})
    preds, fails = mg.classify_batch([("c", "t"), ("a", "t"), ("b", "t")], mg.StrategyConfig(), ep, "m",
                                     parallelism=3)
    assert [p.event_id for p in preds] == ["b", "c"]
    assert [(f.event_id, f.reason) for f in fails] == [("a", "invalid_label")]


def _transport(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_chat_endpoint_wire_format():
    seen = {}

    def handler(req):
        seen["body"] = json.loads(req.content)
        return httpx.Response(200, json={"message": {"role": "assistant", "content": GOOD}})

    ep = mg.ChatEndpoint("http://localhost:11434/api/chat", client=_transport(handler))
    p = mg.classify("e1", "note", mg.StrategyConfig(mg.FEW_SHOT), ep, "gemma3:4b")
    body = seen["body"]
    assert body["model"] == "gemma3:4b"
    assert body["options"]["temperature"] == 0.0
    assert body["stream"] is False
    assert body["format"]["required"] == ["label", "confidence", "logits"]
    assert [m["role"] for m in body["messages"]] == ["system", "user"]
    assert p.label == "V" and p.raw_response == GOOD


def test_chat_endpoint_retries_transport_only():
    calls = {"n": 0}

    def flaky(req):
        calls["n"] += 1
        if calls["n"] < 3:
            raise httpx.ConnectError("refused")
        return httpx.Response(200, json={"message": {"content": GOOD}})

    ep = mg.ChatEndpoint("http://x/api/chat", retries=2, client=_transport(flaky))
    assert mg.classify("e", "n", mg.StrategyConfig(), ep, "m").label == "V"
    assert calls["n"] == 3

    calls["n"] = -10
    ep = mg.ChatEndpoint("http://x/api/chat", retries=2, client=_transport(flaky))
    with pytest.raises(mg.EndpointError):
        mg.classify("e", "n", mg.StrategyConfig(), ep, "m")


def test_chat_endpoint_parse_failure_not_retried():
    calls = {"n": 0}

    def bad(req):
        calls["n"] += 1
        return httpx.Response(200, json={"message": {"content": '{"label":"X","confidence":1}'}})

    ep = mg.ChatEndpoint("http://x/api/chat", client=_transport(bad))
    with pytest.raises(mg.ParseError):
        mg.classify("e", "n", mg.StrategyConfig(), ep, "m")
    assert calls["n"] == 1


def test_chat_endpoint_http_error_and_check():
    ep = mg.ChatEndpoint("http://x/api/chat", client=_transport(lambda r: httpx.Response(500)))
    with pytest.raises(mg.EndpointError):
        mg.classify("e", "n", mg.StrategyConfig(), ep, "m")

    def down(req):
        raise httpx.ConnectError("refused")

    with pytest.raises(mg.EndpointError):
        mg.ChatEndpoint("http://x/api/chat", client=_transport(down)).check()
