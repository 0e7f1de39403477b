"""Scenario definition, validation, and simulation assembly.

Scenario files are JSON with a fixed schema. Loading validates the failure
model: for every view the scripted membership changes could make valid, at
most floor((n-1)/3) of its members may be scripted faulty. The request list
must be finite and small (the membership lattice is enumerated up front).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

from .adversary import CLIENT_BEHAVIORS, SERVER_BEHAVIORS
from .client import Client
from .core import ProcessId, View, client, genesis_view, minus, plus, server
from .simnet import ActorContext, RunContext, SimParams, Simulation, Trace


class ScenarioError(ValueError):
    pass


@dataclass
class ServerSpec:
    index: int
    start_at: int = 0
    join: bool = False
    leave_at: Optional[int] = None
    behavior: str = "correct"


@dataclass
class ClientSpec:
    index: int
    script: list = field(default_factory=list)
    start_at: int = 0
    behavior: str = "correct"


@dataclass
class Scenario:
    name: str
    genesis: list[int]
    servers: list[ServerSpec] = field(default_factory=list)
    clients: list[ClientSpec] = field(default_factory=list)
    initial_balances: dict = field(default_factory=dict)
    max_steps: int = 20000
    delay_cap: int = 3
    gossip_period: int = 5
    fairness_bound: int = 10
    mpt_mode: bool = False
    debug_checks: bool = False
    checkers: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    # -- serialization ------------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json(text: str, path: str = "<string>") -> "Scenario":
        data = json.loads(text)
        return _scenario_from_dict(data, text, path)

    @staticmethod
    def load(path) -> "Scenario":
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
        return Scenario.from_json(text, path=str(path))

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(asdict(self), sort_keys=True, indent=2) + "\n")

    # -- derived -----------------------------------------------------------------------

    def genesis_view(self) -> View:
        return genesis_view(server(i) for i in self.genesis)

    def balances(self) -> dict[ProcessId, int]:
        return {ProcessId.parse(label): amount for label, amount in self.initial_balances.items()}

    def faulty(self) -> set[ProcessId]:
        bad = {server(s.index) for s in self.servers if s.behavior != "correct"}
        bad |= {client(c.index) for c in self.clients if c.behavior != "correct"}
        return bad

    def scripted_changes(self) -> list:
        changes = []
        for s in self.servers:
            if s.join:
                changes.append(plus(server(s.index)))
            if s.leave_at is not None:
                changes.append(minus(server(s.index)))
        for c in self.clients:
            for op in c.script:
                if op.get("op") == "vote":
                    statement = op.get("statement", "")
                    if statement.startswith("add server "):
                        changes.append(plus(ProcessId.parse(statement[len("add server "):])))
                    elif statement.startswith("remove server "):
                        changes.append(minus(ProcessId.parse(statement[len("remove server "):])))
        return sorted(set(changes))

    def validate(self) -> None:
        if not self.genesis:
            raise ScenarioError("genesis membership must be nonempty")
        changes = self.scripted_changes()
        if len(changes) > 12:
            raise ScenarioError(
                f"scenario requests {len(changes)} membership changes; the request list must stay small and finite"
            )
        faulty_servers = {r for r in self.faulty() if r.is_server}
        base = self.genesis_view()
        for k in range(len(changes) + 1):
            for subset in itertools.combinations(changes, k):
                view = View(base.changes | frozenset(subset))
                members = view.members()
                if not members:
                    continue
                allowed = (len(members) - 1) // 3
                bad = len(members & faulty_servers)
                if bad > allowed:
                    raise ScenarioError(
                        f"fault bound violated in reachable view with members "
                        f"{sorted(m.label() for m in members)}: {bad} faulty > {allowed} allowed"
                    )


_SCHEMA_FIELDS = {
    "name", "genesis", "servers", "clients", "initial_balances", "max_steps",
    "delay_cap", "gossip_period", "fairness_bound", "mpt_mode", "debug_checks",
    "checkers", "meta",
}
_SERVER_FIELDS = {"index", "start_at", "join", "leave_at", "behavior"}
_CLIENT_FIELDS = {"index", "script", "start_at", "behavior"}


def _line_of(text: str, key: str) -> int:
    for i, line in enumerate(text.splitlines(), start=1):
        if f'"{key}"' in line:
            return i
    return 0


def _scenario_from_dict(data: dict, text: str, path: str) -> Scenario:
    for key in data:
        if key not in _SCHEMA_FIELDS:
            raise ScenarioError(f"{path}:{_line_of(text, key)}: unknown field {key!r}")
    servers = []
    for entry in data.get("servers", []):
        for key in entry:
            if key not in _SERVER_FIELDS:
                raise ScenarioError(f"{path}:{_line_of(text, key)}: unknown server field {key!r}")
        servers.append(ServerSpec(**entry))
    clients = []
    for entry in data.get("clients", []):
        for key in entry:
            if key not in _CLIENT_FIELDS:
                raise ScenarioError(f"{path}:{_line_of(text, key)}: unknown client field {key!r}")
        clients.append(ClientSpec(**entry))
    scenario = Scenario(
        name=data.get("name", "unnamed"),
        genesis=data["genesis"],
        servers=servers,
        clients=clients,
        initial_balances=data.get("initial_balances", {}),
        max_steps=data.get("max_steps", 20000),
        delay_cap=data.get("delay_cap", 3),
        gossip_period=data.get("gossip_period", 5),
        fairness_bound=data.get("fairness_bound", 10),
        mpt_mode=data.get("mpt_mode", False),
        debug_checks=data.get("debug_checks", False),
        checkers=data.get("checkers", []),
        meta=data.get("meta", {}),
    )
    scenario.validate()
    return scenario


def build_simulation(scenario: Scenario, seed: int) -> Simulation:
    scenario.validate()
    params = SimParams(
        max_steps=scenario.max_steps,
        delay_cap=scenario.delay_cap,
        gossip_period=scenario.gossip_period,
        fairness_bound=scenario.fairness_bound,
        debug_checks=scenario.debug_checks,
    )
    run_ctx = RunContext(seed, scenario.genesis_view(), scenario.balances(), params)
    header = json.dumps(
        {"scenario": json.loads(scenario.to_json()), "seed": seed},
        sort_keys=True,
        separators=(",", ":"),
    )
    sim = Simulation(run_ctx, header_note=header)

    all_server_indexes = set(scenario.genesis) | {s.index for s in scenario.servers}
    for idx in sorted(all_server_indexes):
        run_ctx.motions.register_server(server(idx))

    specs = {s.index: s for s in scenario.servers}
    for idx in sorted(all_server_indexes):
        spec = specs.get(idx, ServerSpec(index=idx))
        pid = server(idx)
        ctx = ActorContext(sim, pid)
        behavior = SERVER_BEHAVIORS.get(spec.behavior)
        if behavior is None:
            raise ScenarioError(f"unknown server behavior {spec.behavior!r}")
        from .server import Server

        if behavior is Server:
            actor = Server(ctx, mpt_mode=scenario.mpt_mode)
        else:
            actor = behavior(ctx)
        if spec.join and hasattr(actor, "reconfig"):
            actor.reconfig.join_pending = True
        sim.add_actor(actor, start_at=spec.start_at, byzantine=spec.behavior != "correct")
        if spec.leave_at is not None:
            if hasattr(actor, "reconfig"):
                sim.at_step(spec.leave_at, _make_leave_trigger(actor), pid=pid)
            else:
                sim.at_step(spec.leave_at, _make_halt_trigger(sim, pid), pid=pid)

    for cspec in scenario.clients:
        pid = client(cspec.index)
        ctx = ActorContext(sim, pid)
        if cspec.behavior == "correct":
            actor = Client(ctx, cspec.script)
        else:
            behavior = CLIENT_BEHAVIORS.get(cspec.behavior)
            if behavior is None:
                raise ScenarioError(f"unknown client behavior {cspec.behavior!r}")
            actor = behavior(ctx)
        sim.add_actor(actor, start_at=cspec.start_at, byzantine=cspec.behavior != "correct")

    return sim


def _make_leave_trigger(actor):
    def trigger():
        actor.reconfig.leave_pending = True
        actor.pump()

    return trigger


def _make_halt_trigger(sim, pid):
    def trigger():
        sim.halt(pid)

    return trigger


def run_scenario(scenario: Scenario, seed: int) -> Trace:
    sim = build_simulation(scenario, seed)
    return sim.run()
