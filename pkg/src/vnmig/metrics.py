"""Result records shared by the controller and the analysis layer."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field


@dataclass(frozen=True)
class FlowOutcome:
    flow_id: str
    src: str
    dst: str
    rate_pps: float
    sent: int
    received: int
    lost: int
    loss_pct: float
    duplicates: int
    max_gap_ms: float


@dataclass(frozen=True)
class CommandRecord:
    """One scheduled command: where it went, when it was issued, and when
    its execution was confirmed."""

    phase: int
    target: str
    label: str
    issue_ms: float
    exec_ms: float
    attempts: int = 1


@dataclass(frozen=True)
class MigrationMetrics:
    """Measured outcome of one run: per-flow loss, migration duration, and
    the raw execution record. Packet conservation holds per flow:
    sent == received + lost, with in-flight packets at run end counted lost.
    """

    strategy: str
    ordering: str
    channel_kind: str
    seed: object
    duration_ms: float
    phase_timestamps: dict
    flows: tuple[FlowOutcome, ...]
    commands: tuple[CommandRecord, ...]
    aborted: bool = False
    abort_reason: str | None = None
    suppressed_events: int = 0
    drops: dict = field(default_factory=dict)

    def flow(self, flow_id: str) -> FlowOutcome:
        for f in self.flows:
            if f.flow_id == flow_id:
                return f
        raise KeyError(flow_id)

    def total_lost(self) -> int:
        return sum(f.lost for f in self.flows)

    def total_sent(self) -> int:
        return sum(f.sent for f in self.flows)

    def command_exec_ms(self, phase: int, target: str) -> float:
        for c in self.commands:
            if c.phase == phase and c.target == target:
                return c.exec_ms
        raise KeyError((phase, target))

    def as_dict(self) -> dict:
        return asdict(self)
