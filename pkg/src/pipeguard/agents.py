"""Specialized detection agents, the pluggable reasoner and the execution graph.

Each agent is a pure function from its role's observable signals to findings,
driven by a declarative rule table. A reasoner fuses the accumulated findings
into a single assessment; the shipped implementation is deterministic
rule-plus-correlation fusion (noisy-OR with a cross-stage bonus). Routing
between agents is a small guarded graph with bounded loops.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional, Protocol

from .env import (
    AgentRole,
    ContractViolation,
    ConfigError,
    EnvState,
    KIND_TO_ROLE,
    MitigationAction,
    ObservationSignal,
    PipelineStage,
    SignalKind,
    VulnerabilityClass,
    observe,
)

ROLE_TO_KIND = {role: kind for kind, role in KIND_TO_ROLE.items()}


@dataclass(frozen=True)
class Finding:
    role: AgentRole
    hypothesis: VulnerabilityClass
    stage: PipelineStage
    confidence: float
    evidence: tuple[str, ...]
    note: str = ""

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ContractViolation("finding confidence outside [0,1]")
        if not self.evidence:
            raise ContractViolation("finding must carry evidence")


@dataclass(frozen=True)
class Assessment:
    verdict: Optional[VulnerabilityClass]
    severity: float
    candidate_actions: tuple[MitigationAction, ...]
    rationale: str

    def __post_init__(self):
        if self.verdict is None and tuple(self.candidate_actions) != (
            MitigationAction.ALLOW_CONTINUE,
        ):
            raise ContractViolation("benign assessment must propose AllowContinue only")
        if self.verdict is not None and not self.rationale:
            raise ContractViolation("non-benign assessment requires a rationale")


BENIGN_ASSESSMENT = Assessment(
    verdict=None,
    severity=0.0,
    candidate_actions=(MitigationAction.ALLOW_CONTINUE,),
    rationale="",
)


@dataclass(frozen=True)
class Rule:
    role: AgentRole
    token: str
    vuln_class: VulnerabilityClass
    confidence: float


def load_rules(path: str) -> list[Rule]:
    with open(path, encoding="utf-8") as fh:
        return rules_from_list(json.load(fh))


def rules_from_list(items: list[dict]) -> list[Rule]:
    rules = []
    for obj in items:
        unknown = set(obj) - {"role", "token", "class", "confidence"}
        if unknown:
            raise ConfigError(f"unknown rule fields: {sorted(unknown)}")
        rules.append(Rule(
            role=AgentRole(obj["role"]),
            token=str(obj["token"]),
            vuln_class=VulnerabilityClass(obj["class"]),
            confidence=float(obj["confidence"]),
        ))
    return rules


def default_rules() -> list[Rule]:
    text = resources.files("pipeguard.data").joinpath("rules_default.json").read_text()
    return rules_from_list(json.loads(text))


def _apply_rules(role: AgentRole, signals: list[ObservationSignal],
                 rules: list[Rule]) -> list[Finding]:
    expected_kind = ROLE_TO_KIND[role]
    for sig in signals:
        if sig.kind is not expected_kind:
            raise ContractViolation(
                f"{role.value} agent received a {sig.kind.value} signal"
            )
    findings = []
    for rule in rules:
        if rule.role is not role:
            continue
        for sig in signals:
            if rule.token in sig.content.split():
                findings.append(Finding(
                    role=role,
                    hypothesis=rule.vuln_class,
                    stage=sig.stage,
                    confidence=rule.confidence,
                    evidence=(rule.token,),
                    note=f"{rule.token} in {sig.kind.value}",
                ))
    return findings


def scan_commit(signals, rules=None) -> list[Finding]:
    return _apply_rules(AgentRole.CODE_ANALYSIS, signals, rules or default_rules())


def evaluate_dependency(signals, rules=None) -> list[Finding]:
    return _apply_rules(AgentRole.DEPENDENCY_INTELLIGENCE, signals, rules or default_rules())


def monitor_pipeline(signals, rules=None) -> list[Finding]:
    return _apply_rules(AgentRole.CICD_MONITORING, signals, rules or default_rules())


def check_access(signals, rules=None) -> list[Finding]:
    return _apply_rules(AgentRole.ACCESS_CONTROL, signals, rules or default_rules())


def audit_config(signals, rules=None) -> list[Finding]:
    return _apply_rules(AgentRole.CONFIGURATION_AUDIT, signals, rules or default_rules())


def analyze(role: AgentRole, signals, rules=None) -> list[Finding]:
    return _apply_rules(role, signals, rules or default_rules())


# -- reasoning ---------------------------------------------------------------

CANDIDATE_ACTIONS = {
    VulnerabilityClass.INJECTION: (
        MitigationAction.BLOCK_BUILD,
        MitigationAction.OPEN_GUARD_PULL_REQUEST,
        MitigationAction.REQUEST_REVIEW,
    ),
    VulnerabilityClass.INSECURE_DESERIALIZATION: (
        MitigationAction.BLOCK_BUILD,
        MitigationAction.QUARANTINE_DEPENDENCY,
        MitigationAction.REQUEST_REVIEW,
    ),
    VulnerabilityClass.BROKEN_ACCESS_CONTROL: (
        MitigationAction.REVOKE_CREDENTIALS,
        MitigationAction.BLOCK_BUILD,
        MitigationAction.REQUEST_REVIEW,
    ),
    VulnerabilityClass.MISCONFIGURATION: (
        MitigationAction.APPLY_CONFIG_PATCH,
        MitigationAction.BLOCK_BUILD,
        MitigationAction.REQUEST_REVIEW,
    ),
}


@dataclass(frozen=True)
class ReasonContext:
    stage: PipelineStage
    run_id: str = ""


class Reasoner(Protocol):
    def reason(self, findings: list[Finding], context: ReasonContext) -> Assessment: ...


def noisy_or(confidences) -> float:
    p = 1.0
    for c in confidences:
        p *= 1.0 - c
    return 1.0 - p


def cross_stage_boost(p: float, factor: float) -> float:
    """Multiply the detection odds by `factor`, capped at probability 1."""
    if p >= 1.0:
        return 1.0
    odds = p / (1.0 - p) * factor
    return odds / (1.0 + odds)


@dataclass
class RuleBasedReasoner:
    """Deterministic stand-in for the language-model reasoning layer.

    Fuses per-class finding confidences with noisy-OR; findings of the same
    class seen in two or more distinct stages get an odds-space correlation
    bonus. The external-model adapter slot shares this interface but is not
    implemented here.
    """

    threshold: float = 0.5
    cross_stage_factor: float = 1.5
    correlation_enabled: bool = True

    def reason(self, findings: list[Finding], context: ReasonContext) -> Assessment:
        if not findings:
            return BENIGN_ASSESSMENT
        by_class: dict[VulnerabilityClass, list[Finding]] = {}
        for f in findings:
            by_class.setdefault(f.hypothesis, []).append(f)
        best: Optional[VulnerabilityClass] = None
        best_p = -1.0
        for vc in VulnerabilityClass:  # fixed order gives deterministic ties
            if vc not in by_class:
                continue
            group = by_class[vc]
            p = noisy_or(f.confidence for f in group)
            stages = {f.stage for f in group}
            if self.correlation_enabled and len(stages) >= 2:
                p = cross_stage_boost(p, self.cross_stage_factor)
            if p > best_p:
                best, best_p = vc, p
        if best is None or best_p < self.threshold:
            return BENIGN_ASSESSMENT
        group = by_class[best]
        evidence = sorted({tok for f in group for tok in f.evidence})
        stages = sorted({f.stage for f in group})
        rationale = (
            f"{best.value} indicated by {', '.join(evidence)} "
            f"across stage(s) {', '.join(s.name for s in stages)}; "
            f"fused confidence {best_p:.3f}"
        )
        return Assessment(
            verdict=best,
            severity=min(best_p, 1.0),
            candidate_actions=CANDIDATE_ACTIONS[best],
            rationale=rationale,
        )


# -- execution graph -----------------------------------------------------------


@dataclass(frozen=True)
class Guard:
    vuln_class: Optional[VulnerabilityClass] = None
    min_confidence: float = 0.0
    min_count: int = 1

    def fires(self, findings: list[Finding]) -> bool:
        count = 0
        for f in findings:
            if self.vuln_class is not None and f.hypothesis is not self.vuln_class:
                continue
            if f.confidence >= self.min_confidence:
                count += 1
        return count >= self.min_count


# Unconditional edge.
ALWAYS = Guard(min_count=0)


@dataclass(frozen=True)
class GraphNode:
    id: str
    kind: str  # "agent" | "decision"
    role: Optional[AgentRole] = None


@dataclass(frozen=True)
class GraphEdge:
    src: str
    dst: str
    guard: Guard


@dataclass(frozen=True)
class ExecutionGraph:
    nodes: tuple[GraphNode, ...]
    edges: tuple[GraphEdge, ...]
    entry: str
    max_visits_per_node: int

    def node(self, node_id: str) -> GraphNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)


def build_graph(spec: dict) -> ExecutionGraph:
    """Validate a graph description into an ExecutionGraph."""
    try:
        nodes = tuple(
            GraphNode(
                id=str(n["id"]),
                kind=str(n["type"]),
                role=AgentRole(n["role"]) if n.get("role") else None,
            )
            for n in spec["nodes"]
        )
        entry = str(spec["entry"])
        max_visits = int(spec.get("max_visits_per_node", 1))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"malformed graph spec: {exc}") from exc
    ids = {n.id for n in nodes}
    if len(ids) != len(nodes):
        raise ConfigError("duplicate node ids in graph spec")
    for n in nodes:
        if n.kind not in ("agent", "decision"):
            raise ConfigError(f"node {n.id}: unknown type {n.kind!r}")
        if n.kind == "agent" and n.role is None:
            raise ConfigError(f"agent node {n.id} is missing a role")
    if entry not in ids:
        raise ConfigError(f"entry node {entry!r} does not exist")
    if max_visits < 1:
        raise ConfigError("max_visits_per_node must be positive")
    edges = []
    for e in spec.get("edges", []):
        src, dst = str(e["from"]), str(e["to"])
        for endpoint in (src, dst):
            if endpoint not in ids:
                raise ConfigError(f"edge references unknown node {endpoint!r}")
        g = e.get("guard")
        if g is None:
            guard = ALWAYS
        else:
            guard = Guard(
                vuln_class=VulnerabilityClass(g["class"]) if g.get("class") else None,
                min_confidence=float(g.get("min_confidence", 0.0)),
                min_count=int(g.get("min_count", 1)),
            )
        edges.append(GraphEdge(src, dst, guard))
    return ExecutionGraph(nodes, tuple(edges), entry, max_visits)


def load_graph(path: str) -> ExecutionGraph:
    with open(path, encoding="utf-8") as fh:
        return build_graph(json.load(fh))


def _packaged_graph(name: str) -> ExecutionGraph:
    text = resources.files("pipeguard.data").joinpath(name).read_text()
    return build_graph(json.loads(text))


def default_graph() -> ExecutionGraph:
    """The shipped escalation route: code analysis hands off to pipeline
    monitoring when an injection pattern is present."""
    return _packaged_graph("graph_default.json")


def full_sweep_graph() -> ExecutionGraph:
    """All five agents in pipeline order, then the decision node. Used by the
    evaluation harness so every class is observable."""
    return _packaged_graph("graph_full_sweep.json")


@dataclass(frozen=True)
class DispatchTrace:
    activations: tuple[tuple[AgentRole, tuple[Finding, ...]], ...]
    assessment: Assessment


def dispatch(graph: ExecutionGraph, state: EnvState, reasoner: Reasoner,
             rules: Optional[list[Rule]] = None) -> DispatchTrace:
    """Walk the graph from its entry, collecting findings, and fuse them.

    Guards are evaluated over all findings accumulated so far; the walk stops
    at a decision node, when no guard fires, or at the per-node visit bound.
    """
    rules = rules if rules is not None else default_rules()
    visits: dict[str, int] = {}
    findings: list[Finding] = []
    activations: list[tuple[AgentRole, tuple[Finding, ...]]] = []
    current = graph.entry
    while True:
        visits[current] = visits.get(current, 0) + 1
        node = graph.node(current)
        if node.kind == "decision":
            break
        got = analyze(node.role, observe(state, node.role), rules)
        findings.extend(got)
        activations.append((node.role, tuple(got)))
        nxt = None
        for edge in graph.edges:
            if edge.src != current:
                continue
            if visits.get(edge.dst, 0) >= graph.max_visits_per_node:
                continue
            if edge.guard.fires(findings):
                nxt = edge.dst
                break
        if nxt is None:
            break
        current = nxt
    assessment = reasoner.reason(findings, ReasonContext(stage=state.stage,
                                                         run_id=state.run_id))
    return DispatchTrace(tuple(activations), assessment)
