"""The free CHSH-3 quadratic form and its classical analysis.

The expression lives on twelve projector symbols: three outcomes for each of
four observables. Observables 1 and 2 form one commuting block, 3 and 4 the
other, and every term of the form pairs one projector from each block.
Outcomes are labelled by the cube roots of unity, stored here as exponents
0, 1, 2 of the primitive root.
"""

from __future__ import annotations

import io
import itertools
import math
from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping, NamedTuple

OMEGA = complex(-0.5, math.sqrt(3.0) / 2.0)
OMEGA_POWERS = (1.0 + 0.0j, OMEGA, OMEGA.conjugate())

OBSERVABLES = (1, 2, 3, 4)
BLOCK_A = (1, 2)
BLOCK_B = (3, 4)


class ProjectorIndex(NamedTuple):
    """One projector symbol: observable id in 1..4 and outcome exponent."""

    observable: int
    outcome: int


class DeterministicStrategy(NamedTuple):
    """Fixed outcome exponent (0, 1 or 2) for each of the four observables."""

    a1: int
    a2: int
    b1: int
    b2: int

    def assignment(self) -> dict[int, int]:
        return {1: self.a1, 2: self.a2, 3: self.b1, 4: self.b2}


def outcome_value(k: int) -> complex:
    """Eigenvalue attached to outcome exponent k.

    Cube roots of unity for k < 3; padding outcomes of higher-dimensional
    observables get a unit-modulus placeholder (they never enter the form).
    """
    return OMEGA_POWERS[k] if k < 3 else 1.0 + 0.0j


def outcome_label(k: int) -> str:
    return ("1", "w", "w2")[k] if k < 3 else f"k{k + 1}"


@dataclass(frozen=True)
class BellForm:
    """Signed coefficient table over ordered projector pairs."""

    terms: Mapping[tuple[ProjectorIndex, ProjectorIndex], int]

    def coefficient(self, alpha: ProjectorIndex, beta: ProjectorIndex) -> int:
        return self.terms.get((alpha, beta), 0)

    def __len__(self) -> int:
        return len(self.terms)


# The 24 signed terms of the quadratic form, as (i, k, j, l, sign) with the
# first projector X_{i, w^k} taken from block {1, 2} and the second X_{j, w^l}
# from block {3, 4}.
_FORM_TERMS = (
    (1, 0, 3, 0, +1), (1, 0, 4, 0, +1), (1, 0, 3, 1, -1), (1, 0, 4, 2, -1),
    (1, 1, 3, 1, +1), (1, 1, 4, 1, +1), (1, 1, 3, 2, -1), (1, 1, 4, 0, -1),
    (1, 2, 3, 2, +1), (1, 2, 4, 2, +1), (1, 2, 3, 0, -1), (1, 2, 4, 1, -1),
    (2, 0, 3, 1, +1), (2, 0, 4, 0, +1), (2, 0, 3, 0, -1), (2, 0, 4, 1, -1),
    (2, 1, 4, 1, +1), (2, 1, 3, 2, +1), (2, 1, 3, 1, -1), (2, 1, 4, 2, -1),
    (2, 2, 3, 0, +1), (2, 2, 4, 2, +1), (2, 2, 3, 2, -1), (2, 2, 4, 0, -1),
)

_CANONICAL_FORM = BellForm(
    terms=MappingProxyType(
        {
            (ProjectorIndex(i, k), ProjectorIndex(j, l)): sign
            for i, k, j, l, sign in _FORM_TERMS
        }
    )
)


def chsh3_form() -> BellForm:
    """The canonical 24-term free CHSH-3 coefficient table (immutable)."""
    return _CANONICAL_FORM


# Probability view of the same expression: each entry is
# (block-A observable, block-B observable, shift s, sign) and contributes
# sign * P(A equals w^s times B).
_PROBABILITY_TERMS = (
    (1, 3, 0, +1),
    (2, 3, 2, +1),
    (2, 4, 0, +1),
    (1, 4, 0, +1),
    (1, 3, 2, -1),
    (2, 3, 0, -1),
    (2, 4, 2, -1),
    (1, 4, 1, -1),
)


def classical_value(strategy: DeterministicStrategy) -> float:
    """Value of the expression on one deterministic strategy.

    Each probability of the probability view collapses to the 0/1 indicator of
    the corresponding outcome congruence.
    """
    a = strategy.assignment()
    total = 0
    for obs_a, obs_b, shift, sign in _PROBABILITY_TERMS:
        if a[obs_a] == (a[obs_b] + shift) % 3:
            total += sign
    return float(total)


def strategy_value_from_form(
    form: BellForm, strategy: DeterministicStrategy
) -> float:
    """Value of a coefficient table on a deterministic strategy.

    Under commuting deterministic assignments each projector pair becomes the
    product of two outcome indicators; this is the projector-side view of
    classical_value and the two must agree on every strategy.
    """
    a = strategy.assignment()
    total = 0
    for (alpha, beta), sign in form.terms.items():
        if a[alpha.observable] == alpha.outcome and a[beta.observable] == beta.outcome:
            total += sign
    return float(total)


def all_strategies() -> list[DeterministicStrategy]:
    return [
        DeterministicStrategy(*combo)
        for combo in itertools.product(range(3), repeat=4)
    ]


@dataclass(frozen=True)
class ClassicalSummary:
    max_value: float
    min_value: float
    num_maximizers: int


def classical_summary() -> ClassicalSummary:
    """Exhaustive enumeration of all 81 deterministic strategies."""
    values = [classical_value(s) for s in all_strategies()]
    best = max(values)
    return ClassicalSummary(
        max_value=best,
        min_value=min(values),
        num_maximizers=sum(1 for v in values if v == best),
    )


def classical_bound() -> float:
    """Largest value any deterministic strategy attains (known to be 2)."""
    return classical_summary().max_value


def algebraic_bound(form: BellForm) -> float:
    """Sum of absolute coefficients, the bound over unit-modulus assignments."""
    return float(sum(abs(c) for c in form.terms.values()))


def form_to_csv(form: BellForm) -> str:
    """Audit export of the coefficient table, one row per term."""
    buf = io.StringIO()
    buf.write("i,mu,j,nu,sign\n")
    for (alpha, beta), sign in sorted(form.terms.items()):
        buf.write(
            f"{alpha.observable},{outcome_label(alpha.outcome)},"
            f"{beta.observable},{outcome_label(beta.outcome)},{sign:+d}\n"
        )
    return buf.getvalue()
