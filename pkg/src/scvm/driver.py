"""One-call analysis pipeline: load, run, shadow, check, report.

The wiring order matters and is fixed here: the shadow engine observes
each event before the checkers do, so metadata updates (boundary
tagging, check marking, taint materialization) are never seen late.
Checker rules only ever consult state established by *earlier* events,
which is what makes the ordering safe.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .asm import ProgramImage
from .checkers import CHECKER_ORDER, CheckerRegistry, make_checkers
from .machine import (
    DEFAULT_STEP_LIMIT,
    Machine,
    MachineState,
    SchedulerPolicy,
    load,
)
from .shadow import ShadowState


@dataclass(frozen=True)
class RunConfig:
    checkers: tuple = CHECKER_ORDER
    policy: SchedulerPolicy = field(default_factory=SchedulerPolicy)
    step_limit: int = DEFAULT_STEP_LIMIT
    checker_options: dict = field(default_factory=dict)
    collect_events: bool = False
    shadow_trace: bool = False


@dataclass
class AnalysisResult:
    image: ProgramImage
    outcome: str  # "halt", "fault" or "timeout"
    state: MachineState
    warnings: list
    events: list | None
    machine: Machine
    shadow: ShadowState

    @property
    def image_sha256(self) -> str:
        return hashlib.sha256(self.image.to_bytes()).hexdigest()


def analyze(image: ProgramImage, config: RunConfig | None = None) -> AnalysisResult:
    """Run the image under the config's scheduler with the configured
    checkers attached; returns everything a report needs."""
    config = config or RunConfig()
    machine = load(image, config.policy)
    shadow = ShadowState(trace=[] if config.shadow_trace else None)
    plugins = make_checkers(config.checkers, machine, shadow, config.checker_options)
    registry = CheckerRegistry(plugins)
    machine.add_observer(shadow.on_event)
    machine.add_observer(registry.dispatch)
    result = machine.run(config.step_limit, collect_events=config.collect_events)
    return AnalysisResult(
        image=image,
        outcome=result.outcome,
        state=result.state,
        warnings=registry.warnings,
        events=result.events,
        machine=machine,
        shadow=shadow,
    )
