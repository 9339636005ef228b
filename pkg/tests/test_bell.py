import itertools

import pytest

from freechsh3 import bell
from freechsh3.bell import DeterministicStrategy, ProjectorIndex


def oracle_value(a1, a2, b1, b2):
    """Independent term-by-term evaluation of the probability form.

    Eight congruence indicators transcribed separately from the library's
    table: same-outcome and shifted-outcome matches between the two parties.
    """
    total = 0
    total += 1 if a1 == b1 else 0                 # A1 = B1
    total += 1 if a2 == (b1 + 2) % 3 else 0       # A2 = w^2 B1
    total += 1 if a2 == b2 else 0                 # A2 = B2
    total += 1 if a1 == b2 else 0                 # A1 = B2
    total -= 1 if a1 == (b1 + 2) % 3 else 0       # A1 = w^2 B1
    total -= 1 if a2 == b1 else 0                 # A2 = B1
    total -= 1 if a2 == (b2 + 2) % 3 else 0       # A2 = w^2 B2
    total -= 1 if a1 == (b2 + 1) % 3 else 0       # A1 = w B2
    return float(total)


def test_form_has_24_terms_with_balanced_signs():
    form = bell.chsh3_form()
    assert len(form) == 24
    signs = list(form.terms.values())
    assert signs.count(+1) == 12
    assert signs.count(-1) == 12
    for alpha, beta in form.terms:
        assert alpha.observable in bell.BLOCK_A
        assert beta.observable in bell.BLOCK_B


def test_form_specific_terms():
    form = bell.chsh3_form()
    assert form.coefficient(ProjectorIndex(1, 0), ProjectorIndex(3, 0)) == +1
    assert form.coefficient(ProjectorIndex(1, 0), ProjectorIndex(3, 1)) == -1
    assert form.coefficient(ProjectorIndex(2, 2), ProjectorIndex(3, 0)) == +1
    assert form.coefficient(ProjectorIndex(2, 1), ProjectorIndex(4, 2)) == -1
    # pairs the form does not touch
    assert form.coefficient(ProjectorIndex(1, 0), ProjectorIndex(2, 0)) == 0
    assert form.coefficient(ProjectorIndex(3, 0), ProjectorIndex(1, 0)) == 0


def test_form_is_immutable_singleton():
    form = bell.chsh3_form()
    assert form is bell.chsh3_form()
    with pytest.raises(TypeError):
        form.terms[(ProjectorIndex(1, 0), ProjectorIndex(3, 0))] = 5


def test_term_participation_audit():
    # every projector of block A or B appears in exactly 4 terms, hence
    # every observable in exactly 12
    form = bell.chsh3_form()
    per_index = {}
    for alpha, beta in form.terms:
        per_index[alpha] = per_index.get(alpha, 0) + 1
        per_index[beta] = per_index.get(beta, 0) + 1
    assert set(per_index.values()) == {4}
    per_observable = {}
    for idx, count in per_index.items():
        per_observable[idx.observable] = per_observable.get(idx.observable, 0) + count
    assert per_observable == {1: 12, 2: 12, 3: 12, 4: 12}


def test_classical_value_all_ones_strategy():
    # three positive indicators fire (A1=B1, A2=B2, A1=B2), one negative
    # (A2=B1), so the value is 2
    assert bell.classical_value(DeterministicStrategy(0, 0, 0, 0)) == 2.0


def test_classical_value_matches_oracle_on_all_strategies():
    for combo in itertools.product(range(3), repeat=4):
        s = DeterministicStrategy(*combo)
        assert bell.classical_value(s) == oracle_value(*combo)


def test_probability_and_projector_views_agree_everywhere():
    form = bell.chsh3_form()
    for s in bell.all_strategies():
        assert bell.classical_value(s) == bell.strategy_value_from_form(form, s)


def test_single_match_strategy():
    # A1=1, A2=1, B1=w, B2=1: the A1=B2 and A2=B2 indicators fire (+2),
    # A2=w^2 B1 fires (+1), and no other term
    s = DeterministicStrategy(0, 0, 1, 0)
    assert oracle_value(*s) == bell.classical_value(s)
    # a strategy where only P(A1=B2) fires among the positives
    s2 = DeterministicStrategy(0, 1, 1, 0)
    fired_pos = [s2.a1 == s2.b1, s2.a2 == (s2.b1 + 2) % 3,
                 s2.a2 == s2.b2, s2.a1 == s2.b2]
    assert fired_pos == [False, False, False, True]
    assert bell.classical_value(s2) == oracle_value(*s2)


def test_classical_bound_by_enumeration():
    summary = bell.classical_summary()
    assert summary.max_value == 2.0
    assert bell.classical_bound() == 2.0
    # derived alongside from the same exhaustive oracle
    values = [oracle_value(*c) for c in itertools.product(range(3), repeat=4)]
    assert summary.min_value == min(values)
    assert summary.num_maximizers == sum(1 for v in values if v == 2.0)


def test_classical_values_are_integers_in_range():
    for s in bell.all_strategies():
        v = bell.classical_value(s)
        assert v == int(v)
        assert -4.0 <= v <= 4.0
        assert v <= bell.classical_bound()


def test_algebraic_bound():
    form = bell.chsh3_form()
    assert bell.algebraic_bound(form) == 24.0
    assert bell.algebraic_bound(bell.BellForm(terms={})) == 0.0
    positive_only = bell.BellForm(
        terms={key: c for key, c in form.terms.items() if c > 0}
    )
    assert bell.algebraic_bound(positive_only) == 12.0


def test_outcome_values():
    assert bell.outcome_value(0) == 1.0 + 0.0j
    w = bell.outcome_value(1)
    assert abs(w**3 - 1.0) < 1e-15
    assert abs(1.0 + w + w**2) < 1e-15
    assert abs(bell.outcome_value(2) - w.conjugate()) < 1e-15
    assert abs(abs(bell.outcome_value(4)) - 1.0) < 1e-15
    assert bell.outcome_label(0) == "1"
    assert bell.outcome_label(2) == "w2"
    assert bell.outcome_label(3) == "k4"


def test_form_csv_export():
    text = bell.form_to_csv(bell.chsh3_form())
    lines = text.strip().splitlines()
    assert lines[0] == "i,mu,j,nu,sign"
    assert len(lines) == 25
    assert "1,1,3,1,+1" in lines
    assert "1,1,3,w,-1" in lines
    signs = [line.rsplit(",", 1)[1] for line in lines[1:]]
    assert signs.count("+1") == 12 and signs.count("-1") == 12
