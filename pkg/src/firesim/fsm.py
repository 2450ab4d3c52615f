"""Outcome-driven state-machine engine.

Each state runs an entry action once and a tick action at the simulation
rate; a tick may emit an outcome string, which drives exactly one transition
through the table. Execution is single-threaded and fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class UndefinedTransitionError(RuntimeError):
    pass


class TableValidationError(ValueError):
    pass


@dataclass
class StateDef:
    name: str
    on_tick: callable                 # ctx -> outcome | None
    on_enter: callable = None         # ctx -> None
    outcomes: tuple = ()
    timeout_s: float = None           # emits "timeout" when exceeded


@dataclass
class Event:
    t: float
    state: str
    outcome: str


@dataclass
class TransitionTable:
    states: dict
    transitions: dict                 # (state name, outcome) -> next state name
    initial: str
    terminals: frozenset

    def validate(self):
        names = set(self.states)
        if self.initial not in names:
            raise TableValidationError(f"initial state {self.initial!r} undefined")
        for (src, outcome), dst in self.transitions.items():
            if src not in names:
                raise TableValidationError(f"transition from unknown state {src!r}")
            if dst not in names and dst not in self.terminals:
                raise TableValidationError(
                    f"transition ({src!r}, {outcome!r}) maps outside the table to {dst!r}")
        for name, state in self.states.items():
            declared = set(state.outcomes)
            if state.timeout_s is not None:
                declared.add("timeout")
            for outcome in declared:
                if (name, outcome) not in self.transitions and name not in self.terminals:
                    raise TableValidationError(
                        f"state {name!r} declares outcome {outcome!r} with no transition")
        reachable = {self.initial}
        frontier = [self.initial]
        while frontier:
            cur = frontier.pop()
            for (src, _), dst in self.transitions.items():
                if src == cur and dst not in reachable:
                    reachable.add(dst)
                    frontier.append(dst)
        unreachable = (names | set(self.terminals)) - reachable
        if unreachable:
            raise TableValidationError(f"unreachable states: {sorted(unreachable)}")
        return self


class _NullContext:
    def step(self, dt):
        pass


def run_machine(table, ctx=None, dt=0.01, max_time_s=900.0):
    """Run the machine to a terminal state.

    Returns (final_state_name, events). Each transition appends an Event with
    the outcome that caused it; reaching a terminal state appends a final
    event with an empty outcome. Exceeding max_time_s yields the pseudo-final
    state "global-timeout". A tick emitting an outcome with no table entry
    raises UndefinedTransitionError.
    """
    table.validate()
    if ctx is None:
        ctx = _NullContext()
    events = []
    current = table.states[table.initial]
    if current.on_enter:
        current.on_enter(ctx)
    entered_t = 0.0
    k = 0
    while True:
        t = k * dt
        if t > max_time_s:
            events.append(Event(t=t, state=current.name, outcome="global-timeout"))
            return "global-timeout", events
        outcome = current.on_tick(ctx)
        if (outcome is None and current.timeout_s is not None
                and t - entered_t >= current.timeout_s):
            outcome = "timeout"
        if outcome is not None:
            key = (current.name, outcome)
            if key not in table.transitions:
                raise UndefinedTransitionError(
                    f"state {current.name!r} emitted undeclared outcome {outcome!r}")
            events.append(Event(t=t, state=current.name, outcome=outcome))
            nxt = table.transitions[key]
            if nxt in table.terminals:
                events.append(Event(t=t, state=nxt, outcome=""))
                return nxt, events
            current = table.states[nxt]
            if current.on_enter:
                current.on_enter(ctx)
            entered_t = t
        ctx.step(dt)
        k += 1
