"""End-to-end audit pipeline over the fragment store.

Stages run in a fixed order. Each stage reads its inputs from the store and
writes its fragments before the next one starts, so a run can stop anywhere
and resume. A small progress file records which stages finished under which
config hash.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import __version__
from .ambiguity import gate_low_ambiguity, score_corpus, score_event
from .calibrate import DEFAULT_TAUS, calibrate_predictions, temperature_scale
from .corpus import CorpusError, EventRecord, ingest_corpus, stratified_sample
from .counterfact import (NEUTRAL, Lexicon, PerturbationOutcome, flip_profiles, load_lexicon,
                          run_counterfactuals, sensitivity_clusters, vulnerability_matrix, word_level_table)
from .errortrace import rfc_analyze
from .fairness import fairness_report
from .labels import LABELS
from .legitbias import icl_comparison, legitimization_report, LegitCounts, report_from_predictions
from .metrics import disagreement_table, gold_map, length_slice_analysis, score
from .modelgate import (EXPLAINABLE, FEW_SHOT, ConfigError, Endpoint, Prediction, StrategyConfig,
                        classify_batch, make_endpoint)
from .store import POOLED, FragmentKey, Store, StoreError, atomic_write, dumps
from .synth import generate_events

log = logging.getLogger("conflict_audit")

STAGES = ("ingest", "infer", "calibrate", "metrics", "fairness", "legitbias", "ambiguity",
          "perturb", "errortrace", "report")
NEEDS_ENDPOINT = frozenset({"infer", "perturb", "errortrace"})
# Fields that change where or how a run executes but not what it computes.
UNHASHED = frozenset({"out", "force", "parallelism"})


class DataError(RuntimeError):
    """A stage found its inputs missing or unusable."""


@dataclass(frozen=True)
class RunConfig:
    country: str = "Cameroon"
    models: tuple[str, ...] = ("mock-a", "mock-b", "mock-c")
    strategy: str | None = None
    shots: int | None = None
    endpoint: str = "mock"
    seed: int = 0
    n_boot: int = 1000
    n_perm: int = 1000
    taus: tuple[float, ...] = DEFAULT_TAUS
    positive_labels: tuple[str, ...] = ("V",)
    input: str | None = None
    synthetic: int | None = None
    sample: int | None = None
    calibration_split: float | None = None
    lexicon: str | None = None
    calibrated_ambiguity: bool = False
    out: str = "results"
    force: bool = False
    parallelism: int = 4

    def __post_init__(self):
        if not self.models:
            raise ConfigError("at least one model is required")
        if len(set(self.models)) != len(self.models):
            raise ConfigError("duplicate model ids")
        for lab in self.positive_labels:
            if lab not in LABELS:
                raise ConfigError(f"positive label must be one of {LABELS}, got {lab!r}")
        if self.n_boot < 1 or self.n_perm < 1:
            raise ConfigError("n_boot and n_perm must be positive")
        if list(self.taus) != sorted(self.taus):
            raise ConfigError("thresholds must be ascending")
        try:
            for part in (self.country, self.strategy_dir, *self.models):
                FragmentKey(part, "x", "x", "x")
        except StoreError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def strategy_config(self) -> StrategyConfig:
        return StrategyConfig.from_env(self.strategy, self.shots)

    @property
    def strategy_dir(self) -> str:
        cfg = self.strategy_config
        return f"{cfg.kind}_{cfg.shots}" if cfg.kind == FEW_SHOT else cfg.kind

    def hashed_fields(self) -> dict:
        d = {k: v for k, v in dataclasses.asdict(self).items() if k not in UNHASHED}
        cfg = self.strategy_config
        d["strategy"], d["shots"] = cfg.kind, cfg.examples_per_category
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(dumps(jsonable(self.hashed_fields())).encode()).hexdigest()[:16]

    def stage_seed(self, stage: str) -> int:
        ss = np.random.SeedSequence([self.seed, STAGES.index(stage)])
        return int(ss.generate_state(1)[0])


def jsonable(obj: Any) -> Any:
    """Plain JSON types; non-finite floats become None."""
    if hasattr(obj, "to_dict"):
        return jsonable(obj.to_dict())
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return jsonable(dataclasses.asdict(obj))
    if isinstance(obj, Mapping):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (set, frozenset)):
        return sorted(jsonable(v) for v in obj)
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


# ---------------------------------------------------------------- run context

@dataclass
class Context:
    cfg: RunConfig
    store: Store
    endpoint: Endpoint | None = None
    statuses: dict[str, str] = field(default_factory=dict)

    def key(self, model: str, fragment: str) -> FragmentKey:
        return FragmentKey(self.cfg.country, self.cfg.strategy_dir, model, fragment)

    def put(self, model: str, fragment: str, data: Any, lines: bool = False,
            table: Sequence[Mapping] | None = None) -> None:
        key = self.key(model, fragment)
        self.statuses[key.path] = self.store.write(key, jsonable(data), lines, self.cfg.force,
                                                   jsonable(table) if table is not None else None)

    def get(self, model: str, fragment: str) -> Any:
        key = self.key(model, fragment)
        try:
            return self.store.read(key)
        except KeyError:
            raise DataError(f"missing fragment {key.path}; run the producing stage first") from None

    def has(self, model: str, fragment: str) -> bool:
        return self.store.exists(self.key(model, fragment))

    def corpus(self) -> list[EventRecord]:
        out = []
        for d in self.get(POOLED, "corpus"):
            d = dict(d)
            d.pop("notes_length", None)
            d["event_date"] = date.fromisoformat(d["event_date"]) if d["event_date"] else None
            out.append(EventRecord(**d))
        return out

    def predictions(self, model: str) -> list[Prediction]:
        return [Prediction.from_dict(d) for d in self.get(model, "predictions")]

    def all_predictions(self) -> dict[str, list[Prediction]]:
        return {m: self.predictions(m) for m in self.cfg.models}

    def outcomes(self, fragment: str = "counterfactual") -> list[PerturbationOutcome]:
        return [PerturbationOutcome.from_dict(d) for m in self.cfg.models
                for d in self.get(m, fragment)]

    def lexicon(self) -> Lexicon:
        return load_lexicon(self.cfg.lexicon)


# ---------------------------------------------------------------- stages

def stage_ingest(ctx: Context) -> None:
    cfg = ctx.cfg
    notes = []
    if cfg.input is None and not cfg.synthetic:
        raise ConfigError("ingest needs an input corpus or a synthetic event count")
    if cfg.input is not None:
        res = ingest_corpus(cfg.input)
        records = [r for r in res.records if r.country == cfg.country]
        notes += [f"duplicates:{res.n_duplicates}", f"rejected:{res.n_rejected}"]
        notes += [f"reject:{k}:{v}" for k, v in sorted(res.reject_reasons.items())]
    else:
        records = generate_events(cfg.synthetic, cfg.country, cfg.stage_seed("ingest"))
    if not records:
        raise DataError(f"no events for country {cfg.country!r}")
    if cfg.sample is not None:
        if cfg.sample > len(records):
            raise DataError(f"sample of {cfg.sample} exceeds {len(records)} events")
        s = stratified_sample(records, cfg.sample, cfg.stage_seed("ingest"))
        records = sorted(s.records, key=lambda r: r.event_id)
        notes += s.notes
    ctx.put(POOLED, "corpus", [r.to_dict() for r in records], lines=True)
    ctx.put(POOLED, "ingest", {"n_events": len(records), "notes": notes})


def stage_infer(ctx: Context) -> None:
    items = [(r.event_id, r.notes) for r in ctx.corpus()]
    for model in ctx.cfg.models:
        preds, fails = classify_batch(items, ctx.cfg.strategy_config, ctx.endpoint, model, ctx.cfg.parallelism)
        if not preds:
            raise DataError(f"model {model} produced no valid predictions")
        ctx.put(model, "predictions", [p.to_dict() for p in preds], lines=True)
        ctx.put(model, "failures", [dataclasses.asdict(f) for f in fails], lines=True)


def stage_calibrate(ctx: Context) -> None:
    gold = gold_map(ctx.corpus())
    for model in ctx.cfg.models:
        rep = calibrate_predictions(ctx.predictions(model), gold, ctx.cfg.taus, ctx.cfg.calibration_split,
                                    ctx.cfg.stage_seed("calibrate"))
        table = [{"regime": k, **dataclasses.asdict(p)} for k, pts in rep.selective.items() for p in pts]
        ctx.put(model, "calibration", rep, table=table)


def stage_metrics(ctx: Context) -> None:
    corpus = ctx.corpus()
    gold = gold_map(corpus)
    lengths = {r.event_id: r.notes_length for r in corpus}
    by_model = ctx.all_predictions()
    summary = []
    for model, preds in by_model.items():
        rep = score(preds, gold)
        slices = length_slice_analysis(preds, lengths, gold)
        ctx.put(model, "metrics", {"classification": rep, "length_slices": slices},
                table=[{"label": lab, **vars(m)} for lab, m in rep.per_class.items()])
        summary.append({"model": model, "n": rep.n, "accuracy": rep.accuracy, "macro_f1": rep.macro_f1})
    if len(by_model) >= 2:
        rows = disagreement_table(by_model)
        ctx.put(POOLED, "disagreement", rows,
                table=[{"event_id": r.event_id, "majority": r.majority_label, "D": r.D,
                        "max_conf": r.max_conf, "tie": r.tie} for r in rows])
    ctx.put(POOLED, "metrics_summary", summary, table=summary)


def stage_fairness(ctx: Context) -> None:
    corpus = ctx.corpus()
    gold = gold_map(corpus)
    groups = {r.event_id: r.actor_group for r in corpus}
    seed = ctx.cfg.stage_seed("fairness")
    rows = []
    for model in ctx.cfg.models:
        preds = ctx.predictions(model)
        reps = {lab: fairness_report(preds, gold, groups, lab, ctx.cfg.n_boot, ctx.cfg.n_perm, seed)
                for lab in ctx.cfg.positive_labels}
        ctx.put(model, "fairness", reps)
        rows += [{"model": model, "positive_label": lab, "spd": r.spd, "spd_lo": r.spd_ci[0],
                  "spd_hi": r.spd_ci[1], "d_tpr": r.d_tpr, "p_tpr": r.p_tpr, "d_fpr": r.d_fpr,
                  "p_fpr": r.p_fpr, "flags": r.flags} for lab, r in reps.items()]
    ctx.put(POOLED, "fairness_table", rows, table=rows)


def stage_legitbias(ctx: Context) -> None:
    gold = gold_map(ctx.corpus())
    shots = ctx.cfg.strategy_config.shots
    rows = []
    for model in ctx.cfg.models:
        try:
            rep = report_from_predictions(ctx.predictions(model), gold, model, shots)
        except ValueError as exc:
            raise DataError(f"legitimization for {model}: {exc}") from exc
        ctx.put(model, "legitbias", rep)
        rows.append(rep.to_dict())
    ctx.put(POOLED, "legitbias_table", rows, table=rows)


def stage_ambiguity(ctx: Context) -> None:
    notes = {r.event_id: r.notes for r in ctx.corpus()}
    if len(ctx.cfg.models) < 2:
        # Disagreement terms need several models; without them nothing is gated out.
        ctx.put(POOLED, "ambiguity", {"scores": {}, "tiers": {e: "low" for e in sorted(notes)},
                                      "histogram": {"low": len(notes), "medium": 0, "high": 0},
                                      "flags": ["single_model_ungated"]})
        return
    by_model = ctx.all_predictions()
    if ctx.cfg.calibrated_ambiguity:
        scores = _calibrated_scores(ctx, by_model, notes)
    else:
        scores = score_corpus(by_model, notes)
    gate = gate_low_ambiguity(scores)
    missing = sorted(set(notes) - set(scores))
    ctx.put(POOLED, "ambiguity", {"scores": scores, "tiers": gate.tiers, "histogram": gate.histogram,
                                  "flags": [f"unscored:{len(missing)}"] if missing else []},
            table=[{"event_id": e, **s.to_dict()} for e, s in scores.items()])


def _calibrated_scores(ctx: Context, by_model: Mapping[str, list[Prediction]], notes: Mapping[str, str]) -> dict:
    """Scores with each model's temperature-scaled confidence in its predicted label."""
    per_event: dict[str, list[tuple[Prediction, float]]] = {}
    for model in sorted(by_model):
        T = ctx.get(model, "calibration")["temperature"]["T"]
        preds = by_model[model]
        scaled = temperature_scale([p.logits for p in preds], T)
        for row, p in zip(scaled, preds):
            per_event.setdefault(p.event_id, []).append((p, float(row[LABELS.index(p.label)])))
    return {eid: score_event([p for p, _ in items], notes[eid], [c for _, c in items])
            for eid, items in sorted(per_event.items()) if len(items) >= 2}


def low_tier_events(ctx: Context) -> list[tuple[str, str]]:
    tiers = ctx.get(POOLED, "ambiguity")["tiers"]
    return [(r.event_id, r.notes) for r in ctx.corpus() if tiers.get(r.event_id) == "low"]


def _put_outcomes(ctx: Context, fragment: str, outcomes: Sequence[PerturbationOutcome], failures) -> None:
    for model in ctx.cfg.models:
        mine = [o.to_dict() for o in outcomes if o.model == model]
        ctx.put(model, fragment, mine, lines=True)
        ctx.put(model, fragment + "_failures",
                [dataclasses.asdict(f) for f in failures if f.model_id == model], lines=True)


def stage_perturb(ctx: Context) -> None:
    events = low_tier_events(ctx)
    originals = {(m, p.event_id): p for m, ps in ctx.all_predictions().items() for p in ps}
    run = run_counterfactuals(events, ctx.cfg.models, ctx.cfg.strategy_config, ctx.endpoint, ctx.lexicon(),
                              originals, ctx.cfg.parallelism)
    _put_outcomes(ctx, "counterfactual", run.outcomes, run.failures)
    summary: dict[str, Any] = {"n_events": len(events), "n_applied": run.n_applied,
                               "n_not_applicable": run.n_not_applicable, "n_failures": len(run.failures)}
    if any(o.family == NEUTRAL for o in run.outcomes):
        wl = word_level_table(run.outcomes)
        ctx.put(POOLED, "word_level", wl, table=[dataclasses.asdict(r) for r in wl.rows])
    else:
        summary["flags"] = ["no_neutral_baseline"]
    vm = vulnerability_matrix(run.outcomes)
    ctx.put(POOLED, "vulnerability", vm, table=[dataclasses.asdict(r) for r in vm.rows])
    ids, profiles = flip_profiles(run.outcomes)
    if len(ids) >= 2:
        ctx.put(POOLED, "clusters", sensitivity_clusters(ids, profiles, ctx.cfg.stage_seed("perturb")))
    ctx.put(POOLED, "perturb_summary", summary)


def stage_errortrace(ctx: Context) -> None:
    outcomes = ctx.outcomes()
    lexicon = ctx.lexicon()
    note = "reused"
    if ctx.cfg.strategy_config.kind != EXPLAINABLE:
        # Rationales only exist under the explainable strategy: rerun the flipped rewrites with it.
        flipped = [o for o in outcomes if o.flipped]
        eids = {o.event_id for o in flipped}
        sids = {o.spec_id for o in flipped}
        sub = Lexicon(tuple(s for s in lexicon.specs if s.id in sids), lexicon.verbs)
        events = [(e, n) for e, n in low_tier_events(ctx) if e in eids]
        cfg = StrategyConfig(EXPLAINABLE, ctx.cfg.strategy_config.examples_per_category)
        run = run_counterfactuals(events, ctx.cfg.models, cfg, ctx.endpoint, sub,
                                  parallelism=ctx.cfg.parallelism)
        outcomes = run.outcomes
        _put_outcomes(ctx, "counterfactual_explainable", outcomes, run.failures)
        note = "explainable_rerun"
    analysis = rfc_analyze(outcomes, lexicon)
    for model in ctx.cfg.models:
        s = analysis.summaries.get(model)
        ctx.put(model, "rfc", {"summary": s, "source": note,
                               "records": [r for r in analysis.records if r.model == model]})
    rows = [s.to_dict() for s in analysis.summaries.values()]
    ctx.put(POOLED, "rfc_table", rows, table=rows)


def _sibling_legit_reports(ctx: Context) -> list:
    """Legitimization fragments of every strategy directory of this country, for the ICL view."""
    reps = []
    for key in ctx.store.keys():
        if key.country != ctx.cfg.country or key.fragment != "legitbias" or key.model == POOLED:
            continue
        d = ctx.store.read(key)
        counts = LegitCounts(d["n_fl"], d["n_fi"], d["n_v"], d["n_b"])
        reps.append(legitimization_report(counts, d["model"], d["shots"], d["corpus"]))
    return reps


def build_report(ctx: Context) -> dict:
    """The audit report: every analysis fragment plus provenance, without timestamps."""
    cfg = ctx.cfg
    per_model = {}
    for m in cfg.models:
        per_model[m] = {frag: ctx.get(m, frag) for frag in
                        ("metrics", "calibration", "fairness", "legitbias", "rfc") if ctx.has(m, frag)}
    pooled = {frag: ctx.get(POOLED, frag) for frag in
              ("ingest", "metrics_summary", "disagreement", "fairness_table", "legitbias_table", "ambiguity",
               "perturb_summary", "word_level", "vulnerability", "clusters", "rfc_table")
              if ctx.has(POOLED, frag)}
    if "disagreement" in pooled:
        pooled["disagreement"] = pooled["disagreement"][:50]
    icl_source = _sibling_legit_reports(ctx)
    shots_seen = {(r.model, r.shots) for r in icl_source}
    if len(shots_seen) > len({m for m, _ in shots_seen}):
        try:
            pooled["icl"] = jsonable(icl_comparison(icl_source))
        except ValueError as exc:
            pooled["icl_skipped"] = str(exc)
    return jsonable({
        "provenance": {"config_hash": cfg.config_hash(), "config": cfg.hashed_fields(),
                       "version": __version__, "seed": cfg.seed,
                       "stage_seeds": {s: cfg.stage_seed(s) for s in STAGES}},
        "models": per_model,
        "pooled": pooled,
    })


def stage_report(ctx: Context) -> None:
    from . import figures

    report = build_report(ctx)
    ctx.put(POOLED, "report", report)
    fig_dir = ctx.store.root / ctx.cfg.country / ctx.cfg.strategy_dir / POOLED / "figures"
    figures.render_all(report, fig_dir)


STAGE_FUNCS: dict[str, Callable[[Context], None]] = {
    "ingest": stage_ingest, "infer": stage_infer, "calibrate": stage_calibrate, "metrics": stage_metrics,
    "fairness": stage_fairness, "legitbias": stage_legitbias, "ambiguity": stage_ambiguity,
    "perturb": stage_perturb, "errortrace": stage_errortrace, "report": stage_report,
}


# ---------------------------------------------------------------- driver

def progress_path(cfg: RunConfig) -> Path:
    return Path(cfg.out) / cfg.country / cfg.strategy_dir / "_progress.json"


def read_progress(cfg: RunConfig) -> list[str]:
    p = progress_path(cfg)
    if not p.exists():
        return []
    d = json.loads(p.read_text())
    return list(d.get("completed", [])) if d.get("config_hash") == cfg.config_hash() else []


def _write_progress(cfg: RunConfig, done: list[str]) -> None:
    atomic_write(progress_path(cfg), dumps({"config_hash": cfg.config_hash(), "completed": done}))


def _run_log(cfg: RunConfig, msg: str) -> None:
    path = Path(cfg.out) / "run.log"
    path.parent.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    with path.open("a", encoding="utf-8") as fh:
        fh.write(f"{stamp} {cfg.config_hash()} {msg}\n")


def run_pipeline(cfg: RunConfig, stages: Sequence[str] | None = None, resume: bool = True,
                 endpoint: Endpoint | None = None) -> dict[str, str]:
    """Run ``stages`` (default: all) in pipeline order and return per-fragment write statuses.

    With ``resume`` stages already completed under the same config hash are
    skipped. The endpoint is built and checked before anything is written.
    """
    stages = list(STAGES) if stages is None else [s for s in STAGES if s in set(stages)]
    unknown = set(stages) - set(STAGES)
    if unknown:
        raise ConfigError(f"unknown stages {sorted(unknown)}")
    done = read_progress(cfg) if resume else []
    todo = [s for s in stages if not (resume and s in done and not cfg.force)]
    if endpoint is None and NEEDS_ENDPOINT & set(todo):
        endpoint = make_endpoint(cfg.endpoint)
    if endpoint is not None:
        endpoint.check()
    ctx = Context(cfg, Store(cfg.out), endpoint)
    for stage in todo:
        log.info("stage %s", stage)
        _run_log(cfg, f"start {stage}")
        try:
            STAGE_FUNCS[stage](ctx)
        except (DataError, StoreError, CorpusError, ConfigError):
            _run_log(cfg, f"failed {stage}")
            raise
        except ValueError as exc:
            _run_log(cfg, f"failed {stage}")
            raise DataError(f"{stage}: {exc}") from exc
        done = [s for s in STAGES if s in set(done) | {stage}]
        _write_progress(cfg, done)
        _run_log(cfg, f"done {stage}")
    return ctx.statuses


def report_path(cfg: RunConfig) -> Path:
    return Path(cfg.out) / cfg.country / cfg.strategy_dir / POOLED / "report.json"
