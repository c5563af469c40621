"""Compiled decision trees: one per (spec, strategy, tie-break) triple.

The single-trial API and the batched runner execute the same tree, so their
statistics agree draw for draw.  Internal nodes consume one uniform each and
split [0, 1) at precomputed cut points; leaves carry the canonical trial
record (ledger, outcome, audit results) shared by every trial landing there.
Branch probabilities fall out of the cut geometry, which doubles as an exact
enumerator for cross-checks.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import experiments as xp
from .engine import (
    COVERAGE_ATOL,
    DEGENERATE,
    NO_OUTCOME,
    Always,
    EventKind,
    IncipientTransaction,
    LedgerEvent,
    OfferWave,
    ResolutionStrategy,
    SpacetimePoint,
    StrategyError,
    TransactionFailed,
    TransactionSucceeded,
    TrialLedger,
    check_bilking,
    form_incipient,
    record_emitter_state,
    respond,
    sort_by_interval,
    trigger_satisfied,
)

# Probability slivers below this are float rounding, not physics; they are
# folded into the neighbouring interval instead of becoming branches.
RESIDUAL_SNAP = 1e-9


@dataclass(frozen=True, slots=True, eq=False)
class Leaf:
    index: int
    outcome: str
    coin: str | None
    ledger: TrialLedger
    conditions: tuple[str, ...]
    bin_index: int | None
    weight_sum_error: float
    violations: tuple[str, ...]
    probability: float


@dataclass(frozen=True, slots=True, eq=False)
class Node:
    draw: int
    cuts: tuple[float, ...]
    children: tuple["Node | Leaf", ...]


@dataclass(frozen=True, eq=False)
class TrialProgram:
    spec: xp.ExperimentSpec
    strategy: ResolutionStrategy
    tie_break: bool
    root: "Node | Leaf"
    leaves: tuple[Leaf, ...]
    draws: int

    @property
    def padded_draws(self) -> int:
        # The uniform table is padded to a whole number of counter blocks so
        # any chunk boundary lands on a block edge (4 draws per block).
        return ((self.draws + 3) // 4) * 4

    def run(self, rng) -> xp.TrialResult:
        node = self.root
        while isinstance(node, Node):
            node = node.children[bisect.bisect_right(node.cuts, rng.random())]
        return xp.TrialResult(node.outcome, node.ledger, node.coin)


@dataclass
class _Walk:
    """Mutable branch state while the tree is being grown."""

    time: float
    present: dict[str, tuple[str, SpacetimePoint]]
    screen_present: bool
    armed: list[tuple[float, int]]
    pending: list[int]
    coin_done: bool
    coin_label: str | None
    failed: list[float]
    expended: set[str]
    draws: int
    prob: float
    events: list[LedgerEvent]
    offered: list[float]
    conditions: list[str]

    def clone(self) -> "_Walk":
        return _Walk(
            self.time,
            dict(self.present),
            self.screen_present,
            list(self.armed),
            list(self.pending),
            self.coin_done,
            self.coin_label,
            list(self.failed),
            set(self.expended),
            self.draws,
            self.prob,
            list(self.events),
            list(self.offered),
            list(self.conditions),
        )


class _Builder:
    def __init__(self, spec: xp.ExperimentSpec, strategy: ResolutionStrategy, tie_break: bool):
        self.spec = spec
        self.strategy = strategy
        self.tie_break = tie_break
        self.bin_channels = spec.bin_channels()
        self.state_channels = set(spec.initial_state.labels)
        self.screen_state = (
            xp.screen_amplitudes(spec.screen, spec.initial_state) if spec.screen else None
        )
        self.bin_index = (
            {label: i for i, label in enumerate(spec.screen.bin_labels())} if spec.screen else {}
        )
        self.triggers = tuple(r.trigger for r in spec.rules)
        self.trigger_refs = {
            t.absorber for t in self.triggers if isinstance(t, (TransactionFailed, TransactionSucceeded))
        }
        self.leaves: list[Leaf] = []
        self.max_draws = 0

    def build(self) -> TrialProgram:
        walk = self._initial_walk()
        if self.strategy is ResolutionStrategy.SEQUENTIAL:
            root = self._seq(walk)
        else:
            if any(not isinstance(t, Always) for t in self.triggers):
                raise StrategyError("strategy requires fixed absorber set")
            if not walk.coin_done:
                root = self._coin_node(walk, self._fixed_core)
            else:
                root = self._fixed_core(walk)
        return TrialProgram(
            self.spec, self.strategy, self.tie_break, root, tuple(self.leaves), self.max_draws
        )

    def _initial_walk(self) -> _Walk:
        present: dict[str, tuple[str, SpacetimePoint]] = {}
        for a in self.spec.absorbers:
            if not a.initially_present:
                continue
            if any(ch == a.channel for ch, _ in present.values()):
                raise ValueError(f"two absorbers on channel {a.channel!r} simultaneously present")
            present[a.id] = (a.channel, a.position)
        armed: list[tuple[float, int]] = []
        pending: list[int] = []
        for i, rule in enumerate(self.spec.rules):
            if isinstance(rule.trigger, Always):
                armed.append((rule.time, i))
            else:
                pending.append(i)
        screen_up = self.spec.screen is not None and any(
            ch in self.bin_channels for ch, _ in present.values()
        )
        return _Walk(
            time=self.spec.emission.t,
            present=present,
            screen_present=screen_up,
            armed=armed,
            pending=pending,
            coin_done=self.spec.coin is None,
            coin_label=None,
            failed=[],
            expended=set(),
            draws=0,
            prob=1.0,
            events=[],
            offered=[],
            conditions=[],
        )

    # -- event-by-event growth ------------------------------------------

    def _seq(self, walk: _Walk) -> Node | Leaf:
        while True:
            candidates = []
            if not walk.coin_done:
                candidates.append((self.spec.coin.flip_time, 0))
            if walk.armed:
                candidates.append((min(at for at, _ in walk.armed), 1))
            if walk.present:
                candidates.append((min(pos.t for _, pos in walk.present.values()), 2))
            if not candidates:
                return self._leaf(walk, NO_OUTCOME, terminal=EventKind.NO_TRANSACTION)
            t, kind = min(candidates)
            if kind == 0:
                return self._coin_node(walk, self._seq)
            if kind == 1:
                self._apply_actions_at(walk, t)
                continue
            node = self._resolve_event(walk, t)
            if node is not None:
                return node

    def _fixed_core(self, walk: _Walk) -> Node | Leaf:
        txs: list[IncipientTransaction] = []
        while True:
            candidates = []
            if walk.armed:
                candidates.append((min(at for at, _ in walk.armed), 0))
            if walk.present:
                candidates.append((min(pos.t for _, pos in walk.present.values()), 1))
            if not candidates:
                break
            t, kind = min(candidates)
            if kind == 0:
                self._apply_actions_at(walk, t)
            else:
                txs.extend(self._absorb_event(walk, t))

        total = math.fsum(tx.weight for tx in txs)
        if self.strategy is ResolutionStrategy.GLOBAL_ECHO:
            if not txs or abs(total - 1.0) > COVERAGE_ATOL:
                raise StrategyError("GlobalEcho requires complete absorber coverage")
            ordered = list(txs)
        else:
            if not txs or abs(total - 1.0) > COVERAGE_ATOL:
                raise StrategyError("hierarchy requires complete absorber coverage")
            ranked = sort_by_interval(txs, self.tie_break)
            if ranked == DEGENERATE:
                return self._leaf(walk, DEGENERATE, terminal=EventKind.DEGENERATE)
            ordered = ranked

        if len(ordered) == 1:
            return self._success_child(walk, ordered[0], [], 1.0, 0)
        weights = [tx.weight for tx in ordered]
        cum = [math.fsum(weights[: i + 1]) for i in range(len(weights))]
        children = []
        prev = 0.0
        for i, tx in enumerate(ordered):
            hi = cum[i] if i < len(ordered) - 1 else 1.0
            if self.strategy is ResolutionStrategy.GLOBAL_ECHO:
                losers = [o for o in ordered if o is not tx]
            else:
                losers = list(ordered[:i])
            children.append(self._success_child(walk, tx, losers, hi - prev, 1))
            prev = hi
        return Node(walk.draws, tuple(cum[:-1]), tuple(children))

    def _coin_node(self, walk: _Walk, grow) -> Node:
        coin = self.spec.coin
        cum = [math.fsum(coin.weights[: i + 1]) for i in range(len(coin.weights))]
        children = []
        for j, label in enumerate(coin.labels):
            child = walk.clone()
            child.coin_done = True
            child.coin_label = label
            child.draws = walk.draws + 1
            child.prob = walk.prob * coin.weights[j]
            child.time = coin.flip_time
            child.events.append(LedgerEvent(EventKind.COIN, coin.flip_time, label=label))
            child.conditions.append(f"coin:{label}")
            self._arm_pending(child)
            children.append(grow(child))
        return Node(walk.draws, tuple(cum[:-1]), tuple(children))

    def _apply_actions_at(self, walk: _Walk, t: float) -> None:
        due = sorted(ridx for at, ridx in walk.armed if at == t)
        walk.armed = [(at, r) for at, r in walk.armed if at != t]
        for ridx in due:
            action = self.spec.rules[ridx].action
            if isinstance(action, xp.PlaceAbsorber):
                if any(ch == action.channel for ch, _ in walk.present.values()):
                    raise ValueError(f"channel {action.channel!r} already has a live absorber")
                walk.present[action.absorber] = (action.channel, action.position)
                walk.events.append(
                    LedgerEvent(EventKind.PLACE, t, absorber=action.absorber,
                                channel=action.channel, rule_index=ridx)
                )
            elif isinstance(action, xp.DivertChannel):
                old = next(
                    (aid for aid, (ch, _) in walk.present.items() if ch == action.channel), None
                )
                if old is not None:
                    del walk.present[old]
                walk.present[action.new_absorber] = (action.channel, action.position)
                walk.events.append(
                    LedgerEvent(EventKind.DIVERT, t, absorber=action.new_absorber,
                                channel=action.channel, rule_index=ridx)
                )
            else:
                walk.screen_present = False
                for aid in [a for a, (ch, _) in walk.present.items() if ch in self.bin_channels]:
                    del walk.present[aid]
                walk.events.append(LedgerEvent(EventKind.REMOVE_SCREEN, t, rule_index=ridx))
        walk.time = t

    def _arm_pending(self, walk: _Walk) -> None:
        for ridx in list(walk.pending):
            rule = self.spec.rules[ridx]
            if trigger_satisfied(rule.trigger, walk.events):
                walk.pending.remove(ridx)
                walk.armed.append((rule.time, ridx))

    def _absorb_event(self, walk: _Walk, t: float) -> list[IncipientTransaction]:
        """Confirmation waves for every live absorber whose time has come."""
        responding = []
        for aid, (ch, pos) in list(walk.present.items()):
            if pos.t != t:
                continue
            if ch in walk.expended:
                # Shadowed: the channel's component was already taken up
                # (e.g. a telescope behind a still-standing screen).
                del walk.present[aid]
                continue
            responding.append((aid, ch, pos))
        screen_event = any(ch in self.bin_channels for _, ch, _pos in responding)
        if screen_event:
            if any(ch not in self.bin_channels for _, ch, _pos in responding):
                raise ValueError("screen and direct absorbers share an absorption event")
            basis = self.screen_state
        else:
            basis = self.spec.initial_state
        order = {ch: i for i, ch in enumerate(basis.labels)}
        responding.sort(key=lambda item: order[item[1]])
        targets: dict[str, str | None] = {ch: None for ch in basis.labels}
        for aid, ch, _pos in responding:
            targets[ch] = aid
        ow = OfferWave.from_mapping(self.spec.emission, basis, targets)
        txs = []
        for aid, ch, pos in responding:
            del walk.present[aid]
            if basis.amp(ch) == 0:
                continue
            tx = form_incipient(ow, respond(ow, aid, at=pos))
            walk.events.append(
                LedgerEvent(EventKind.CW, t, absorber=aid, channel=ch, weight=tx.weight)
            )
            txs.append(tx)
            if not screen_event and ch in self.state_channels:
                walk.expended.add(ch)
        if screen_event:
            walk.expended |= self.state_channels
            walk.screen_present = False
        walk.offered.extend(tx.weight for tx in txs)
        walk.time = t
        return txs

    def _resolve_event(self, walk: _Walk, t: float) -> Node | Leaf | None:
        txs = self._absorb_event(walk, t)
        if not txs:
            return None
        m = 1.0 - math.fsum(walk.failed)
        if m <= COVERAGE_ATOL:
            raise StrategyError("probability mass exhausted")
        weights = [tx.weight for tx in txs]
        if math.fsum(weights) - m > COVERAGE_ATOL:
            raise StrategyError("present weight exceeds the remaining probability mass")
        cum = [math.fsum(weights[: i + 1]) / m for i in range(len(weights))]
        keep_residual = 1.0 - cum[-1] > RESIDUAL_SNAP
        if len(txs) == 1 and not keep_residual:
            return self._success_child(walk, txs[0], [], 1.0, 0)
        children: list[Node | Leaf] = []
        prev = 0.0
        for i, tx in enumerate(txs):
            hi = cum[i] if (i < len(txs) - 1 or keep_residual) else 1.0
            losers = txs[:i] + txs[i + 1:]
            children.append(self._success_child(walk, tx, losers, hi - prev, 1))
            prev = hi
        if keep_residual:
            child = walk.clone()
            child.draws = walk.draws + 1
            child.prob = walk.prob * (1.0 - cum[-1])
            for tx in txs:
                child.events.append(
                    LedgerEvent(EventKind.FAILURE, tx.absorbed_at.t,
                                absorber=tx.absorber, channel=tx.channel)
                )
                if tx.absorber in self.trigger_refs:
                    child.conditions.append(f"failed:{tx.absorber}")
                child.failed.append(tx.weight)
            self._arm_pending(child)
            children.append(self._seq(child))
        cuts = tuple(cum) if keep_residual else tuple(cum[:-1])
        return Node(walk.draws, cuts, tuple(children))

    def _success_child(
        self,
        walk: _Walk,
        winner: IncipientTransaction,
        losers: list[IncipientTransaction],
        width: float,
        draw_bump: int,
    ) -> Leaf:
        child = walk.clone()
        child.draws = walk.draws + draw_bump
        child.prob = walk.prob * width
        for tx in losers:
            child.events.append(
                LedgerEvent(EventKind.FAILURE, tx.absorbed_at.t,
                            absorber=tx.absorber, channel=tx.channel)
            )
            if tx.absorber in self.trigger_refs:
                child.conditions.append(f"failed:{tx.absorber}")
        child.events.append(
            LedgerEvent(EventKind.SUCCESS, winner.absorbed_at.t, absorber=winner.absorber,
                        channel=winner.channel, weight=winner.weight)
        )
        if winner.absorber in self.trigger_refs:
            child.conditions.append(f"succeeded:{winner.absorber}")
        return self._leaf(child, winner.absorber)

    def _leaf(self, walk: _Walk, outcome: str, terminal: EventKind | None = None) -> Leaf:
        if terminal is not None:
            walk.events.append(LedgerEvent(terminal, walk.time))
        events = tuple(walk.events)
        ledger = TrialLedger(events, record_emitter_state(events), outcome)
        unoffered = math.fsum(
            abs(self.spec.initial_state.amp(ch)) ** 2
            for ch in self.spec.initial_state.labels
            if ch not in walk.expended
        )
        leaf = Leaf(
            index=len(self.leaves),
            outcome=outcome,
            coin=walk.coin_label,
            ledger=ledger,
            conditions=tuple(walk.conditions),
            bin_index=self.bin_index.get(outcome),
            weight_sum_error=abs(math.fsum(walk.offered) + unoffered - 1.0),
            violations=tuple(check_bilking(ledger, self.triggers)),
            probability=walk.prob,
        )
        self.leaves.append(leaf)
        self.max_draws = max(self.max_draws, walk.draws)
        return leaf


@lru_cache(maxsize=64)
def compile_program(
    spec: xp.ExperimentSpec,
    strategy: ResolutionStrategy,
    tie_break: bool = True,
) -> TrialProgram:
    """Grow (and cache) the decision tree for one spec/strategy pairing."""
    return _Builder(spec, ResolutionStrategy(strategy), bool(tie_break)).build()


def classify_counts(program: TrialProgram, uniforms: np.ndarray) -> np.ndarray:
    """Push a (trials, draws) uniform block through the tree; count per leaf.

    Row i follows exactly the path ``program.run`` would take drawing row
    i's entries in order, so batched and one-at-a-time execution agree.
    """
    counts = np.zeros(len(program.leaves), dtype=np.int64)

    def descend(node: Node | Leaf, rows: np.ndarray) -> None:
        if isinstance(node, Leaf):
            counts[node.index] += rows.size
            return
        side = np.searchsorted(np.asarray(node.cuts), uniforms[rows, node.draw], side="right")
        for c, child in enumerate(node.children):
            sub = rows[side == c]
            if sub.size:
                descend(child, sub)

    descend(program.root, np.arange(uniforms.shape[0], dtype=np.int64))
    return counts


def outcome_distribution(
    spec: xp.ExperimentSpec,
    strategy: ResolutionStrategy | str,
    tie_break: bool = True,
) -> dict[str, float]:
    """Exact outcome probabilities by summing leaf reach probabilities."""
    program = compile_program(spec, ResolutionStrategy(strategy), tie_break)
    acc: dict[str, list[float]] = {}
    for leaf in program.leaves:
        acc.setdefault(leaf.outcome, []).append(leaf.probability)
    return {k: math.fsum(v) for k, v in sorted(acc.items())}
