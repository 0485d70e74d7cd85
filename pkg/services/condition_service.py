"""
Condition evaluation and registry validation.

When conditions gate providers, Causing assertions advertise the state a
provider brings about. Both are evaluated against the StateStore's
discrete enumerations.
"""

from collections import Counter, OrderedDict
from typing import Iterable, List

from models.models import Condition, ProviderSpec, StateAssertion, StateStore, ValidationIssue, ValidationReport
from utils.enums import ProviderKind
from utils.exceptions import UnknownStateVar


def eval_condition(c: Condition, s: StateStore) -> bool:
    """
    Evaluate a When condition against the current state.

    Raises:
        UnknownStateVar: if the condition's variable is not registered.
    """
    return c.comparator.apply(s.get(c.state_var), c.value)


def all_hold(conditions: Iterable[Condition], s: StateStore) -> bool:
    return all(eval_condition(c, s) for c in conditions)


def unmet_conditions(conditions: Iterable[Condition], s: StateStore) -> List[Condition]:
    return [c for c in conditions if not eval_condition(c, s)]


def describe_condition(c: Condition, s: StateStore) -> str:
    """Render a condition with its value label, e.g. "stability == standing"."""
    return f"{c.state_var} {c.comparator.value} {s.label_of(c.state_var, c.value)}"


def assertion_satisfies(a: StateAssertion, c: Condition, s: StateStore) -> bool:
    """
    Whether achieving assertion ``a`` is guaranteed to satisfy condition ``c``.

    Both must talk about the same variable; every value of the variable's
    enumeration that satisfies ``a`` must also satisfy ``c``. An assertion no
    value can satisfy matches nothing.
    """
    if not s.is_registered(a.state_var):
        raise UnknownStateVar(a.state_var)
    if not s.is_registered(c.state_var):
        raise UnknownStateVar(c.state_var)
    if a.state_var != c.state_var:
        return False
    reachable = [v for v in s.domain(a.state_var) if a.comparator.apply(v, a.value)]
    return bool(reachable) and all(c.comparator.apply(v, c.value) for v in reachable)


def validate_registry(providers: List[ProviderSpec], states: StateStore) -> ValidationReport:
    """
    Check a provider registry before the engine starts.

    Reports, in this order: duplicate provider ids, groups that have a Stop
    but neither Start nor Provide, groups with no Provide provider at all,
    Needs/Uses naming unregistered task types and When/Causing on
    unregistered state variables. An empty report means the registry is valid.
    """
    issues: List[ValidationIssue] = []

    counts = Counter(p.id for p in providers)
    for provider_id, count in counts.items():
        if count > 1:
            issues.append(ValidationIssue(
                kind="DuplicateProviderId",
                subject=provider_id,
                detail=f"provider id '{provider_id}' registered {count} times",
            ))

    groups: "OrderedDict[str, List[ProviderSpec]]" = OrderedDict()
    for p in providers:
        groups.setdefault(p.group, []).append(p)

    for group, members in groups.items():
        kinds = {p.kind for p in members}
        if ProviderKind.STOP in kinds and not kinds & {ProviderKind.START, ProviderKind.PROVIDE}:
            issues.append(ValidationIssue(
                kind="StopWithoutStart",
                subject=group,
                detail=f"group '{group}' has a Stop provider but no Start or Provide",
            ))
        elif ProviderKind.PROVIDE not in kinds:
            issues.append(ValidationIssue(
                kind="NoProvideProvider",
                subject=group,
                detail=f"group '{group}' has no Provide provider",
            ))

    for p in providers:
        for need in p.needs:
            if need not in groups:
                issues.append(ValidationIssue(
                    kind="UnknownNeed",
                    subject=p.id,
                    detail=f"provider '{p.id}' needs unregistered task type '{need}'",
                ))
        for used in p.uses:
            if used not in groups:
                issues.append(ValidationIssue(
                    kind="UnknownUses",
                    subject=p.id,
                    detail=f"provider '{p.id}' uses unregistered task type '{used}'",
                ))
        for cond in [*p.when, *p.causing]:
            if not states.is_registered(cond.state_var):
                issues.append(ValidationIssue(
                    kind="UnknownStateVar",
                    subject=p.id,
                    detail=f"provider '{p.id}' refers to unregistered state '{cond.state_var}'",
                ))

    return ValidationReport(issues=issues)
