"""Offer/confirmation-wave bookkeeping and transaction resolution.

An emitted offer wave carries amplitude on each channel; an absorber that
receives a component answers with a confirmation wave whose amplitude is
exactly the complex conjugate of the incident one.  Each offer/confirmation
pair defines an incipient transaction weighted by the squared modulus of
the channel amplitude.  The resolution strategies below pick which (if any)
incipient transaction actualizes in a trial.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .quantum import StateVector

# Weight-completeness tolerance for strategy preconditions.
COVERAGE_ATOL = 1e-9

# Reserved outcome labels.  "none" marks a trial where no transaction formed;
# "degenerate" marks an interval ordering the hierarchy strategy cannot break.
NO_OUTCOME = "none"
DEGENERATE = "degenerate"


class StrategyError(ValueError):
    """A resolution strategy was applied outside its contract."""


class ResolutionStrategy(str, enum.Enum):
    """How competing incipient transactions are collapsed to one outcome."""

    GLOBAL_ECHO = "global-echo"
    HIERARCHY = "hierarchy"
    SEQUENTIAL = "sequential"


@dataclass(frozen=True, slots=True)
class SpacetimePoint:
    t: float
    x: float


def spacetime_interval2(emission: SpacetimePoint, absorption: SpacetimePoint) -> float:
    """Squared interval (dt)^2 - (dx)^2 in units where c = 1.

    Zero marks a lightlike (photon) leg, positive timelike.  Absorption must
    not precede emission.
    """
    dt = absorption.t - emission.t
    if dt < 0:
        raise ValueError("absorption precedes emission")
    dx = absorption.x - emission.x
    return dt * dt - dx * dx


@dataclass(frozen=True, slots=True)
class OfferWave:
    """An emitted state plus the absorber (if any) each channel is aimed at."""

    emission: SpacetimePoint
    state: StateVector
    channel_targets: tuple[tuple[str, str | None], ...]

    def __post_init__(self) -> None:
        targets = dict(self.channel_targets)
        if set(targets) != set(self.state.labels):
            raise ValueError("channel targets must cover exactly the state's channels")
        taken = [a for a in targets.values() if a is not None]
        if len(taken) != len(set(taken)):
            raise ValueError("an absorber may be the target of at most one channel")

    @classmethod
    def from_mapping(
        cls,
        emission: SpacetimePoint,
        state: StateVector,
        targets: dict[str, str | None],
    ) -> "OfferWave":
        return cls(emission, state, tuple((ch, targets.get(ch)) for ch in state.labels))

    def target_of(self, channel: str) -> str | None:
        for ch, absorber in self.channel_targets:
            if ch == channel:
                return absorber
        raise KeyError(f"no channel {channel!r}")

    def channel_of(self, absorber: str) -> str:
        for ch, a in self.channel_targets:
            if a == absorber:
                return ch
        raise KeyError(f"absorber {absorber!r} is not targeted by this offer wave")


@dataclass(frozen=True, slots=True)
class ConfirmationWave:
    """Advanced response from one absorber; amplitude conjugates the offer."""

    channel: str
    absorber: str
    amp: complex
    returned_at: SpacetimePoint


@dataclass(frozen=True, slots=True)
class IncipientTransaction:
    """A matched offer/confirmation pair, not yet actualized.

    ``weight`` is the Born weight |amp|^2 of the channel; ``interval2`` the
    squared emission-to-absorption interval used by the hierarchy strategy;
    ``absorbed_at`` the absorption event (its coordinate time is the default
    tie-break key).
    """

    channel: str
    absorber: str
    weight: float
    interval2: float
    absorbed_at: SpacetimePoint


def respond(ow: OfferWave, absorber: str, at: SpacetimePoint | None = None) -> ConfirmationWave:
    """Build the confirmation wave an absorber returns for its channel.

    The amplitude is the exact complex conjugate of the incident component.
    ``at`` is the absorption event; it defaults to the emission point when
    the geometry is irrelevant to the caller.
    """
    channel = ow.channel_of(absorber)
    amp = ow.state.amp(channel).conjugate()
    return ConfirmationWave(channel, absorber, amp, at if at is not None else ow.emission)


def form_incipient(
    ow: OfferWave,
    cw: ConfirmationWave,
    geometry: tuple[SpacetimePoint, SpacetimePoint] | None = None,
) -> IncipientTransaction:
    """Pair an offer component with its confirmation into a weighted candidate.

    ``geometry`` overrides the (emission, absorption) pair; by default the
    offer's emission point and the confirmation's return point are used.
    """
    offer_amp = ow.state.amp(cw.channel)
    if cw.amp != offer_amp.conjugate():
        raise ValueError("confirmation amplitude does not conjugate the offer")
    weight = (cw.amp * offer_amp).real
    emission, absorption = geometry if geometry is not None else (ow.emission, cw.returned_at)
    interval2 = spacetime_interval2(emission, absorption)
    return IncipientTransaction(cw.channel, cw.absorber, weight, interval2, absorption)


def _total_weight(transactions: Sequence[IncipientTransaction]) -> float:
    return math.fsum(t.weight for t in transactions)


def _pick(transactions: Sequence[IncipientTransaction], scale: float, u: float) -> IncipientTransaction:
    # Inverse-CDF walk; the last entry absorbs any rounding slack at u -> 1.
    acc = 0.0
    for tx in transactions[:-1]:
        acc += tx.weight / scale
        if u < acc:
            return tx
    return transactions[-1]


def resolve_global(
    transactions: Sequence[IncipientTransaction], rng
) -> IncipientTransaction:
    """Sample one winner from a complete competition in a single echo round.

    Requires the candidate weights to sum to 1: the strategy has no account
    of leftover probability mass.
    """
    if not transactions or abs(_total_weight(transactions) - 1.0) > COVERAGE_ATOL:
        raise StrategyError("GlobalEcho requires complete absorber coverage")
    return _pick(transactions, 1.0, rng.random())


def sort_by_interval(
    transactions: Sequence[IncipientTransaction], tie_break: bool = True
) -> list[IncipientTransaction] | str:
    """Order candidates by squared interval ascending, or report ``DEGENERATE``.

    With ``tie_break`` enabled, equal intervals are ordered by absorption
    coordinate time; a tie the policy cannot break (or any tie with the
    policy disabled) makes the ordering undefined.
    """
    if tie_break:
        key = lambda t: (t.interval2, t.absorbed_at.t)
    else:
        key = lambda t: (t.interval2,)
    ordered = sorted(transactions, key=key)
    for a, b in zip(ordered, ordered[1:]):
        if key(a) == key(b):
            return DEGENERATE
    return ordered


def resolve_hierarchy(
    transactions: Sequence[IncipientTransaction], rng, tie_break: bool = True
) -> IncipientTransaction | str:
    """Walk candidates nearest-interval first, each taking its conditional chance.

    Candidate i is accepted with probability w_i / (1 - sum of earlier
    weights), which reproduces the plain Born marginals.  Returns
    ``DEGENERATE`` when the interval ordering is undefined (all-photon
    layouts: every squared interval is zero).
    """
    if not transactions or abs(_total_weight(transactions) - 1.0) > COVERAGE_ATOL:
        raise StrategyError("hierarchy requires complete absorber coverage")
    ordered = sort_by_interval(transactions, tie_break)
    if ordered == DEGENERATE:
        return DEGENERATE
    return _pick(ordered, 1.0, rng.random())


def resolve_step(
    present: Sequence[IncipientTransaction], resolved_failed_mass: float, rng
) -> IncipientTransaction | None:
    """One resolution round over the currently present candidates.

    Each candidate wins with weight w_i / m where m is the probability mass
    not yet burned by earlier failures; with probability 1 - sum(w_i)/m no
    transaction forms yet (``None``).  Placing a late absorber that holds
    all remaining mass therefore makes its success certain.
    """
    m = 1.0 - resolved_failed_mass
    if m <= COVERAGE_ATOL:
        raise StrategyError("probability mass exhausted")
    total = _total_weight(present)
    if total - m > COVERAGE_ATOL:
        raise StrategyError("present weight exceeds the remaining probability mass")
    u = rng.random()
    acc = 0.0
    for tx in present:
        acc += tx.weight / m
        if u < acc:
            return tx
    return None


class EventKind(str, enum.Enum):
    CW = "cw"
    SUCCESS = "success"
    FAILURE = "failure"
    PLACE = "place"
    DIVERT = "divert"
    REMOVE_SCREEN = "remove-screen"
    COIN = "coin"
    NO_TRANSACTION = "no-transaction"
    DEGENERATE = "degenerate"


@dataclass(frozen=True, slots=True)
class LedgerEvent:
    kind: EventKind
    time: float
    absorber: str | None = None
    channel: str | None = None
    label: str | None = None
    weight: float | None = None
    rule_index: int | None = None


@dataclass(frozen=True, slots=True)
class EmitterState:
    """Which absorbers answered the emitter, rendered e.g. ``OW(A,B)``."""

    absorbers: tuple[str, ...]

    @classmethod
    def from_ids(cls, ids: Iterable[str]) -> "EmitterState":
        return cls(tuple(sorted(set(ids))))

    @property
    def label(self) -> str:
        return "OW(" + ",".join(self.absorbers) + ")"


@dataclass(frozen=True, slots=True)
class TrialLedger:
    """Complete causal record of one trial."""

    events: tuple[LedgerEvent, ...]
    emitter_state: EmitterState
    final_outcome: str


def record_emitter_state(events: Iterable[LedgerEvent]) -> EmitterState:
    """Collect the absorbers whose confirmations are on the record."""
    return EmitterState.from_ids(
        e.absorber for e in events if e.kind is EventKind.CW and e.absorber is not None
    )


# -- contingency triggers ----------------------------------------------------
#
# The closed trigger vocabulary lives here because triggers speak the
# engine's language (transaction resolutions, coin outcomes).  "Always"
# covers unconditionally scheduled apparatus changes.


@dataclass(frozen=True, slots=True)
class Always:
    pass


@dataclass(frozen=True, slots=True)
class TransactionFailed:
    absorber: str
    time: float


@dataclass(frozen=True, slots=True)
class TransactionSucceeded:
    absorber: str
    time: float


@dataclass(frozen=True, slots=True)
class CoinOutcome:
    label: str


Trigger = Always | TransactionFailed | TransactionSucceeded | CoinOutcome


def trigger_satisfied(trigger: Trigger, events: Sequence[LedgerEvent]) -> bool:
    """Is the trigger's condition on the record (strictly earlier events)?"""
    if isinstance(trigger, Always):
        return True
    if isinstance(trigger, TransactionFailed):
        return any(
            e.kind is EventKind.FAILURE and e.absorber == trigger.absorber and e.time == trigger.time
            for e in events
        )
    if isinstance(trigger, TransactionSucceeded):
        return any(
            e.kind is EventKind.SUCCESS and e.absorber == trigger.absorber and e.time == trigger.time
            for e in events
        )
    if isinstance(trigger, CoinOutcome):
        return any(e.kind is EventKind.COIN and e.label == trigger.label for e in events)
    raise TypeError(f"unknown trigger {trigger!r}")


_TERMINALS = (NO_OUTCOME, DEGENERATE)
_APPARATUS = (EventKind.PLACE, EventKind.DIVERT, EventKind.REMOVE_SCREEN)


def check_bilking(ledger: TrialLedger, triggers: Sequence[Trigger] = ()) -> list[str]:
    """Audit a completed trial for causal-loop bookkeeping violations.

    Checks, in order: (a) every apparatus change fired by a contingency rule
    has its triggering outcome strictly earlier on the record; (b) exactly
    one transaction succeeded, or the ledger ends in an explicit terminal
    state; (c) the recorded outcome and emitter state agree.  Violations are
    reported as strings; an empty list means the record is clean.
    """
    violations: list[str] = []
    events = ledger.events

    for i, e in enumerate(events):
        if e.kind in _APPARATUS and e.rule_index is not None:
            if e.rule_index >= len(triggers):
                violations.append(f"rule-index-out-of-range:{e.rule_index}")
                continue
            if not trigger_satisfied(triggers[e.rule_index], events[:i]):
                violations.append(
                    f"placement-without-prior-trigger:rule{e.rule_index}@t={e.time}"
                )

    successes = [e for e in events if e.kind is EventKind.SUCCESS]
    if len(successes) > 1:
        violations.append("multiple-success")
    resolved: dict[str, int] = {}
    for e in events:
        if e.kind in (EventKind.SUCCESS, EventKind.FAILURE) and e.absorber:
            resolved[e.absorber] = resolved.get(e.absorber, 0) + 1
    for absorber, n in resolved.items():
        if n > 1:
            violations.append(f"duplicate-resolution:{absorber}")
    if len(successes) == 1:
        winner = successes[0].absorber
        if ledger.final_outcome != winner:
            violations.append(f"outcome-mismatch:recorded={ledger.final_outcome},won={winner}")
    else:
        if ledger.final_outcome not in _TERMINALS:
            violations.append(f"outcome-mismatch:no-success-but-outcome={ledger.final_outcome}")
        terminal = (EventKind.NO_TRANSACTION, EventKind.DEGENERATE)
        if not events or events[-1].kind not in terminal:
            violations.append("missing-terminal-event")

    expected = record_emitter_state(events)
    if ledger.emitter_state != expected:
        violations.append("emitter-state-mismatch:ledger-disagrees-with-cw-record")
    if len(successes) == 1 and successes[0].absorber not in expected.absorbers:
        violations.append(f"outcome-mismatch:{successes[0].absorber}-not-in-{expected.label}")
    for e in events:
        if e.kind is EventKind.FAILURE and e.absorber not in expected.absorbers:
            violations.append(f"failure-without-cw:{e.absorber}")

    return violations
