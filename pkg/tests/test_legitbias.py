import pytest
from hypothesis import given, strategies as st

from conflict_audit.legitbias import (LegitCounts, count_legitimization_errors, icl_comparison,
                                      legitimization_report, report_from_predictions)
from conflict_audit.stats import two_prop_z

from conftest import make_pred
from published import CAMEROON, LEGIT_CAMEROON, LEGIT_CAMEROON_3SHOT, LEGIT_CAMEROON_5SHOT, LEGIT_NIGERIA, NIGERIA


def test_count_example():
    gold = {"a": "V", "b": "V", "c": "B", "d": "B"}
    preds = [make_pred(e, lab) for e, lab in zip("abcd", "BVVB")]
    assert count_legitimization_errors(preds, gold) == LegitCounts(1, 1, 2, 2)


def test_count_ignores_other_confusions():
    gold = {"a": "V", "b": "B", "c": "R", "d": "V"}
    preds = [make_pred("a", "E"), make_pred("b", "S"), make_pred("c", "V"), make_pred("d", "V")]
    assert count_legitimization_errors(preds, gold) == LegitCounts(0, 0, 2, 1)


def test_gemma_cameroon_rate():
    r = legitimization_report(LegitCounts(0, 62, 362, 339))
    assert r.eps_fi.pct == pytest.approx(18.29, abs=0.005)
    assert r.delta_lb_pp == pytest.approx(18.29, abs=0.01)


def test_afroconflillama_nigeria_delta():
    r = legitimization_report(LegitCounts(1, 1, 273, 409))
    assert r.delta_lb_pp == pytest.approx(-0.13, abs=0.01)
    assert r.p == two_prop_z(1, 409, 1, 273).p_value


def test_symmetric_errors_neutral():
    r = legitimization_report(LegitCounts(5, 5, 100, 100))
    assert r.delta_lb == 0 and r.p == pytest.approx(1.0)


def test_zero_support_rejected():
    with pytest.raises(ValueError):
        legitimization_report(LegitCounts(0, 0, 0, 5))
    with pytest.raises(ValueError):
        LegitCounts(3, 0, 2, 5)


@pytest.mark.parametrize("row", LEGIT_CAMEROON, ids=lambda r: r[0])
def test_cameroon_rates_and_delta(row):
    model, n_fl, eps_fl, _, n_fi, eps_fi, _, delta, _ = row
    r = legitimization_report(LegitCounts(n_fl, n_fi, **CAMEROON))
    assert r.eps_fl.pct == pytest.approx(eps_fl, abs=0.01)
    assert r.eps_fi.pct == pytest.approx(eps_fi, abs=0.01)
    assert r.delta_lb_pp == pytest.approx(delta, abs=0.01)


@pytest.mark.parametrize("row", LEGIT_NIGERIA, ids=lambda r: r[0])
def test_nigeria_cis(row):
    _, n_fl, _, ci_fl, n_fi, _, ci_fi, _, _ = row
    r = legitimization_report(LegitCounts(n_fl, n_fi, **NIGERIA))
    assert 100 * r.eps_fl.ci_low == pytest.approx(ci_fl[0], abs=0.2)
    assert 100 * r.eps_fl.ci_high == pytest.approx(ci_fl[1], abs=0.2)
    assert 100 * r.eps_fi.ci_low == pytest.approx(ci_fi[0], abs=0.2)
    assert 100 * r.eps_fi.ci_high == pytest.approx(ci_fi[1], abs=0.2)


counts_st = st.integers(1, 500).flatmap(
    lambda nv: st.integers(1, 500).flatmap(
        lambda nb: st.tuples(st.integers(0, nv), st.integers(0, nb), st.just(nv), st.just(nb))))


@given(counts_st)
def test_swap_v_and_b_negates_delta(c):
    n_fl, n_fi, n_v, n_b = c
    a = legitimization_report(LegitCounts(n_fl, n_fi, n_v, n_b))
    b = legitimization_report(LegitCounts(n_fi, n_fl, n_b, n_v))
    assert a.delta_lb == pytest.approx(-b.delta_lb)
    assert a.p == pytest.approx(b.p)
    assert a.delta_lb == a.eps_fi.rate - a.eps_fl.rate
    assert a.p == two_prop_z(n_fi, n_b, n_fl, n_v).p_value


# ---- shot-count comparison ----

def shot_reports(table, shots):
    return [legitimization_report(LegitCounts(n_fl, n_fi, **CAMEROON), model=m, shots=shots, corpus="cmr")
            for m, n_fl, n_fi, *_ in table]


def test_icl_flags_on_published_series():
    rows = icl_comparison(shot_reports(LEGIT_CAMEROON_3SHOT, 3) + shot_reports(LEGIT_CAMEROON_5SHOT, 5))
    by = {(r.model, r.shots): r for r in rows}
    assert "creep" in by["Olmo", 5].flags
    assert "stabilization" in by["Llama", 5].flags
    assert "sign_change" in by["Llama", 5].flags
    assert "amplification" in by["Gemma", 5].flags
    assert by["Olmo", 3].flags == ()
    assert by["Olmo", 5].delta_lb_pp == pytest.approx(10.38, abs=0.01)


def test_icl_identical_reports_no_flags():
    r = [legitimization_report(LegitCounts(6, 11, **CAMEROON), model="m", shots=s) for s in (0, 3, 5)]
    assert all(row.flags == () for row in icl_comparison(r))


def test_icl_rejects_mismatched_corpora():
    gold = {"a": "V", "b": "B", "c": "V"}
    r0 = report_from_predictions([make_pred("a", "V"), make_pred("b", "B")], gold, "m", 0)
    r3 = report_from_predictions([make_pred("a", "V"), make_pred("b", "B"), make_pred("c", "B")], gold, "m", 3)
    with pytest.raises(ValueError, match="different event sets"):
        icl_comparison([r0, r3])
    with pytest.raises(ValueError, match="duplicate"):
        icl_comparison([r0, r0])
