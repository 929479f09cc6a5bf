import json

import pytest

from conflict_audit import pipeline as pl
from conflict_audit.corpus import ingest_corpus
from conflict_audit.labels import ACTOR_GROUPS, LABELS
from conflict_audit.modelgate import ConfigError, EndpointError
from conflict_audit.synth import generate_events, write_acled_csv


def cfg_for(tmp_path, **kw):
    base = dict(synthetic=40, seed=3, n_boot=100, n_perm=100, out=str(tmp_path / "out"))
    base.update(kw)
    return pl.RunConfig(**base)


def report_bytes(cfg):
    return pl.report_path(cfg).read_bytes()


def test_synthetic_events_are_valid_and_seeded():
    a = generate_events(50, "Nigeria", seed=1)
    assert a == generate_events(50, "Nigeria", seed=1)
    assert a != generate_events(50, "Nigeria", seed=2)
    assert {r.true_label for r in a} <= set(LABELS) and {r.actor_group for r in a} <= set(ACTOR_GROUPS)
    assert len({r.event_id for r in a}) == 50


def test_synthetic_csv_roundtrip(tmp_path):
    recs = generate_events(30, seed=4)
    write_acled_csv(recs, tmp_path / "x.csv")
    back = ingest_corpus(tmp_path / "x.csv")
    assert [(r.event_id, r.true_label, r.notes, r.actor_group) for r in back.records] == \
        [(r.event_id, r.true_label, r.notes, r.actor_group) for r in recs]


def test_two_runs_byte_identical(tmp_path):
    a, b = cfg_for(tmp_path / "a"), cfg_for(tmp_path / "b")
    pl.run_pipeline(a)
    pl.run_pipeline(b)
    assert report_bytes(a) == report_bytes(b)
    assert a.config_hash() == b.config_hash()


def test_resume_after_calibration_equals_uninterrupted(tmp_path):
    full = cfg_for(tmp_path / "full")
    pl.run_pipeline(full)
    part = cfg_for(tmp_path / "part")
    pl.run_pipeline(part, ["ingest", "infer", "calibrate"])
    assert pl.read_progress(part) == ["ingest", "infer", "calibrate"]
    statuses = pl.run_pipeline(part)
    assert not any(p.endswith("/predictions") for p in statuses)    # completed stages skipped
    assert report_bytes(part) == report_bytes(full)


def test_config_hash_tracks_content_only(tmp_path):
    a = cfg_for(tmp_path)
    assert a.config_hash() == cfg_for(tmp_path / "elsewhere", force=True, parallelism=1).config_hash()
    assert a.config_hash() != cfg_for(tmp_path, seed=4).config_hash()
    assert a.config_hash() != cfg_for(tmp_path, n_boot=101).config_hash()


def test_stage_seeds_distinct():
    cfg = pl.RunConfig(synthetic=1)
    assert len({cfg.stage_seed(s) for s in pl.STAGES}) == len(pl.STAGES)


def test_unreachable_endpoint_fails_before_writes(tmp_path):
    cfg = cfg_for(tmp_path, endpoint="http://127.0.0.1:9")
    with pytest.raises(EndpointError):
        pl.run_pipeline(cfg)
    assert not (tmp_path / "out").exists()


def test_bad_endpoint_descriptor_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        pl.run_pipeline(cfg_for(tmp_path, endpoint="carrier-pigeon"))
    assert not (tmp_path / "out").exists()


def test_stage_without_inputs_is_data_error(tmp_path):
    with pytest.raises(pl.DataError, match="corpus"):
        pl.run_pipeline(cfg_for(tmp_path), ["metrics"])


def test_counterfactuals_only_touch_low_tier(tmp_path):
    cfg = cfg_for(tmp_path, synthetic=80)
    pl.run_pipeline(cfg)
    ctx = pl.Context(cfg, pl.Store(cfg.out))
    amb = ctx.get(pl.POOLED, "ambiguity")
    tiers = amb["tiers"]
    assert set(tiers) == {r.event_id for r in ctx.corpus()}
    assert sum(amb["histogram"].values()) == len(tiers)
    low = {e for e, t in tiers.items() if t == "low"}
    assert low and low != set(tiers)
    assert {o.event_id for o in ctx.outcomes()} <= low
    assert {o.event_id for o in ctx.outcomes("counterfactual_explainable")} <= low
    for m in cfg.models:
        assert {r["event_id"] for r in ctx.get(m, "rfc")["records"]} <= low


def test_explainable_strategy_reuses_outcomes(tmp_path):
    cfg = cfg_for(tmp_path, strategy="explainable", models=("x", "y"))
    pl.run_pipeline(cfg)
    ctx = pl.Context(cfg, pl.Store(cfg.out))
    assert not ctx.has("x", "counterfactual_explainable")
    assert ctx.get("x", "rfc")["source"] == "reused"


def test_single_model_is_ungated(tmp_path):
    cfg = cfg_for(tmp_path, models=("solo",))
    pl.run_pipeline(cfg)
    amb = pl.Context(cfg, pl.Store(cfg.out)).get(pl.POOLED, "ambiguity")
    assert "single_model_ungated" in amb["flags"] and set(amb["tiers"].values()) == {"low"}


def test_icl_view_across_shot_counts(tmp_path):
    for shots in (3, 5):
        pl.run_pipeline(cfg_for(tmp_path, strategy="few_shot", shots=shots),
                        ["ingest", "infer", "legitbias"])
    cfg = cfg_for(tmp_path, strategy="few_shot", shots=5)
    pl.run_pipeline(cfg, ["report"], resume=False)
    report = json.loads(pl.report_path(cfg).read_text())["data"]
    rows = report["pooled"]["icl"]
    assert sorted({(r["model"], r["shots"]) for r in rows}) == [(m, s) for m in cfg.models for s in (3, 5)]


def test_rerun_of_changed_stage_versions_fragment(tmp_path):
    cfg = cfg_for(tmp_path)
    pl.run_pipeline(cfg, ["ingest"])
    other = cfg_for(tmp_path, synthetic=41)
    statuses = pl.run_pipeline(other, ["ingest"])
    assert statuses["Cameroon/zero_shot/_pooled/corpus"] == "versioned"


def test_figures_rendered(tmp_path):
    cfg = cfg_for(tmp_path)
    pl.run_pipeline(cfg)
    figs = sorted(p.name for p in pl.report_path(cfg).parent.joinpath("figures").glob("*.png"))
    assert "delta_lb.png" in figs and "vulnerability.png" in figs
    assert sum(f.startswith("calibration_") for f in figs) == len(cfg.models)


def test_calibrated_ambiguity_changes_confidence_terms(tmp_path):
    raw = cfg_for(tmp_path / "raw")
    tem = cfg_for(tmp_path / "tem", calibrated_ambiguity=True)
    for c in (raw, tem):
        pl.run_pipeline(c, ["ingest", "infer", "calibrate", "ambiguity"])
    a = pl.Context(raw, pl.Store(raw.out)).get(pl.POOLED, "ambiguity")["scores"]
    b = pl.Context(tem, pl.Store(tem.out)).get(pl.POOLED, "ambiguity")["scores"]
    assert a.keys() == b.keys()
    assert all(a[e]["label_entropy"] == b[e]["label_entropy"] for e in a)
    assert any(a[e]["confidence_uncertainty"] != b[e]["confidence_uncertainty"] for e in a)
    assert raw.config_hash() != tem.config_hash()
