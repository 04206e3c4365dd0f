"""Experiment runner and metrics engine.

Four arms run against the same scenario suite: a syntactic rule baseline, a
provenance-style post-build checker, a learned policy without fused
reasoning, and the full detection + reasoning + policy stack. Metrics are
per-class precision/recall/F1, mean time-to-mitigation (MTTM), benign-run
overhead, autonomy rate and rollback success. Everything is seeded and
reproducible byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field, asdict
from enum import Enum
from typing import Optional

import numpy as np

from . import learning, ledger as ledger_mod
from .agents import (
    RuleBasedReasoner,
    analyze,
    default_rules,
    dispatch,
    full_sweep_graph,
)
from .env import (
    AgentRole,
    AttackScenario,
    ConfigError,
    EnvConfig,
    EnvState,
    MitigationAction,
    PipelineEnv,
    PipelineStage,
    VulnerabilityClass,
    observe,
    scenario_to_dict,
    unit_draw,
)


class BaselineKind(str, Enum):
    RULE_BASED = "RuleBased"
    PROVENANCE_ONLY = "ProvenanceOnly"
    RL_ONLY = "RLOnly"
    PROPOSED = "Proposed"


ARM_ORDER = (
    BaselineKind.RULE_BASED,
    BaselineKind.PROVENANCE_ONLY,
    BaselineKind.RL_ONLY,
    BaselineKind.PROPOSED,
)

# Post-detection actuation latency per arm, simulated minutes. The two
# non-autonomous arms pay a human review constant; the policy-only arm pays a
# runtime verification pass because it acts without an attached rationale.
DEFAULT_ARM_LATENCY = {
    BaselineKind.RULE_BASED: 25.0,
    BaselineKind.PROVENANCE_ONLY: 25.0,
    BaselineKind.RL_ONLY: 6.0,
    BaselineKind.PROPOSED: 0.0,
}

# Per-step analysis cost charged when computing benign build overhead.
DEFAULT_ANALYSIS_COST = {
    BaselineKind.RULE_BASED: 0.07,
    BaselineKind.PROVENANCE_ONLY: 0.05,
    BaselineKind.RL_ONLY: 0.12,
    BaselineKind.PROPOSED: 0.17,
}

# Fixed verdict-to-action map used by the non-learning arms.
FIXED_ACTION_MAP = {
    VulnerabilityClass.INJECTION: MitigationAction.BLOCK_BUILD,
    VulnerabilityClass.INSECURE_DESERIALIZATION: MitigationAction.BLOCK_BUILD,
    VulnerabilityClass.BROKEN_ACCESS_CONTROL: MitigationAction.REVOKE_CREDENTIALS,
    VulnerabilityClass.MISCONFIGURATION: MitigationAction.APPLY_CONFIG_PATCH,
}

STRONG_RULE_THRESHOLD = 0.5


def episode_seed(seed: int, index: int) -> int:
    digest = hashlib.sha256(f"episode|{seed}|{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % 2**63


def suite_hash(suite: list[AttackScenario]) -> str:
    doc = json.dumps([scenario_to_dict(s) for s in suite],
                     separators=(",", ":"), sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()


@dataclass
class ExperimentOptions:
    episodes: int = 200
    benign_fraction: float = 0.25
    arm_latency: dict = field(default_factory=lambda: dict(DEFAULT_ARM_LATENCY))
    analysis_cost: dict = field(default_factory=lambda: dict(DEFAULT_ANALYSIS_COST))
    env_config: EnvConfig = field(default_factory=EnvConfig)
    ledger_enabled: bool = True
    # Ablation hooks: disable fused cross-stage reasoning / the learned policy.
    reasoner_correlation: bool = True
    use_policy: bool = True
    # Confirmation delay for the static playbook used when RL is disabled.
    playbook_latency: float = 10.0


@dataclass
class Mitigation:
    attack_id: str
    vuln_class: str
    injected_clock: float
    mitigated_clock: float
    action: str
    autonomous: bool
    rollback_ok: bool
    developer_accepted: bool


@dataclass
class EpisodeRecord:
    index: int
    seed: int
    benign: bool
    scenario: Optional[dict]
    predicted_classes: list[str]
    actual_classes: list[str]
    mitigations: list[Mitigation]
    interventions: int
    false_positive_actions: int
    requested_review: bool
    total_return: float
    build_delay: float
    duration_minutes: float
    undefended_minutes: float

    def to_dict(self) -> dict:
        doc = asdict(self)
        return doc


@dataclass
class ClassMetrics:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if (self.tp + self.fp) else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if (p + r) else 0.0


@dataclass
class MetricsReport:
    arm: str
    episodes: int
    seed: int
    suite: str                       # suite hash
    per_class: dict                  # class -> {tp, fp, fn, tn, precision, recall, f1}
    mttm_minutes: float
    overhead_percent: float
    autonomy_rate: float
    rollback_success_rate: float
    false_positive_actions: int

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(doc: dict) -> "MetricsReport":
        return MetricsReport(**doc)


def compute_metrics(records: list[EpisodeRecord], arm: BaselineKind,
                    seed: int, suite_digest: str,
                    arm_latency: float) -> MetricsReport:
    """Aggregate labeled episode outcomes into a metrics report."""
    counts = {vc.value: ClassMetrics() for vc in VulnerabilityClass}
    latencies: list[float] = []
    autonomous = 0
    rollback_ok = 0
    n_mitigations = 0
    fp_actions = 0
    overheads: list[float] = []
    for rec in records:
        actual = set(rec.actual_classes)
        predicted = set(rec.predicted_classes)
        for vc in VulnerabilityClass:
            c = counts[vc.value]
            in_actual, in_pred = vc.value in actual, vc.value in predicted
            if in_actual and in_pred:
                c.tp += 1
            elif in_pred:
                c.fp += 1
            elif in_actual:
                c.fn += 1
            else:
                c.tn += 1
        for m in rec.mitigations:
            n_mitigations += 1
            latencies.append(m.mitigated_clock - m.injected_clock + arm_latency)
            if m.autonomous:
                autonomous += 1
            if m.rollback_ok:
                rollback_ok += 1
        fp_actions += rec.false_positive_actions
        if rec.benign and rec.undefended_minutes > 0:
            overheads.append(
                (rec.duration_minutes - rec.undefended_minutes)
                / rec.undefended_minutes * 100.0
            )
    per_class = {
        name: {
            "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn,
            "precision": c.precision, "recall": c.recall, "f1": c.f1,
        }
        for name, c in counts.items()
    }
    return MetricsReport(
        arm=arm.value,
        episodes=len(records),
        seed=seed,
        suite=suite_digest,
        per_class=per_class,
        mttm_minutes=float(np.mean(latencies)) if latencies else 0.0,
        overhead_percent=float(np.mean(overheads)) if overheads else 0.0,
        autonomy_rate=autonomous / n_mitigations if n_mitigations else 1.0,
        rollback_success_rate=rollback_ok / n_mitigations if n_mitigations else 0.0,
        false_positive_actions=fp_actions,
    )


# -- per-arm decision stacks ----------------------------------------------------


class DecisionStack:
    """Maps an environment state to (verdict, action) for one arm."""

    human_gated = False

    def decide(self, state: EnvState, prior_alerts: int) -> tuple[Optional[VulnerabilityClass], MitigationAction, float]:
        raise NotImplementedError


class RuleBasedStack(DecisionStack):
    """Syntactic rule matches above a confidence floor, fixed action map,
    human review before actuation."""

    human_gated = True

    def __init__(self, rules=None):
        self.rules = rules if rules is not None else default_rules()

    def decide(self, state, prior_alerts):
        best = None
        best_conf = 0.0
        for role in AgentRole:
            for f in analyze(role, observe(state, role), self.rules):
                if f.confidence >= STRONG_RULE_THRESHOLD and f.confidence > best_conf:
                    best, best_conf = f.hypothesis, f.confidence
        if best is None:
            return None, MitigationAction.ALLOW_CONTINUE, 0.0
        return best, FIXED_ACTION_MAP[best], best_conf


# Attack classes whose payload changes artifact bytes; a digest comparison
# can only ever surface these. Permission and configuration tampering leave
# the built artifact byte-identical.
ARTIFACT_ALTERING = frozenset({
    VulnerabilityClass.INJECTION,
    VulnerabilityClass.INSECURE_DESERIALIZATION,
})


class ProvenanceStack(DecisionStack):
    """Detects only artifact digest mismatches at packaging/deployment; the
    harness reveals the mismatch class from ground truth, as a real digest
    check would identify the tampered artifact."""

    human_gated = True

    def decide(self, state, prior_alerts):
        if state.stage < PipelineStage.ARTIFACT_PACKAGING:
            return None, MitigationAction.ALLOW_CONTINUE, 0.0
        for attack in state.active_attacks:
            if attack.vuln_class in ARTIFACT_ALTERING:
                return attack.vuln_class, MitigationAction.BLOCK_BUILD, 1.0
        return None, MitigationAction.ALLOW_CONTINUE, 0.0


class PolicyStack(DecisionStack):
    """Dispatch through the execution graph, fuse findings, act greedily from
    a trained policy."""

    def __init__(self, policy: learning.Policy, correlation: bool = True,
                 rules=None, graph=None):
        self.policy = policy
        self.reasoner = RuleBasedReasoner(correlation_enabled=correlation)
        self.rules = rules if rules is not None else default_rules()
        self.graph = graph if graph is not None else full_sweep_graph()

    def decide(self, state, prior_alerts):
        trace = dispatch(self.graph, state, self.reasoner, self.rules)
        assessment = trace.assessment
        sid = learning.encode_state(state, assessment, prior_alerts)
        action = MitigationAction(self.policy.greedy(sid))
        return assessment.verdict, action, assessment.severity


class PlaybookStack(DecisionStack):
    """Reasoner verdicts plus any raw finding trigger a fixed playbook action
    (the learned policy is disabled)."""

    human_gated = False

    def __init__(self, correlation: bool = True, rules=None, graph=None):
        self.reasoner = RuleBasedReasoner(correlation_enabled=correlation)
        self.rules = rules if rules is not None else default_rules()
        self.graph = graph if graph is not None else full_sweep_graph()

    def decide(self, state, prior_alerts):
        trace = dispatch(self.graph, state, self.reasoner, self.rules)
        assessment = trace.assessment
        if assessment.verdict is not None:
            return (assessment.verdict,
                    FIXED_ACTION_MAP[assessment.verdict],
                    assessment.severity)
        # No fused verdict: the static playbook still reacts to any finding.
        findings = [f for _, fs in trace.activations for f in fs]
        if findings:
            top = max(findings, key=lambda f: f.confidence)
            return top.hypothesis, FIXED_ACTION_MAP[top.hypothesis], top.confidence
        return None, MitigationAction.ALLOW_CONTINUE, 0.0


def _build_stack(arm: BaselineKind, policy: Optional[learning.Policy],
                 options: ExperimentOptions) -> DecisionStack:
    if arm is BaselineKind.RULE_BASED:
        return RuleBasedStack()
    if arm is BaselineKind.PROVENANCE_ONLY:
        return ProvenanceStack()
    if policy is None and options.use_policy:
        raise ConfigError(f"arm {arm.value} requires a trained policy")
    if arm is BaselineKind.RL_ONLY:
        return PolicyStack(policy, correlation=False)
    # Proposed, possibly ablated.
    if not options.use_policy:
        return PlaybookStack(correlation=options.reasoner_correlation)
    return PolicyStack(policy, correlation=options.reasoner_correlation)


# -- episode loop -----------------------------------------------------------------


def _plan_episode(seed: int, index: int, suite: list[AttackScenario],
                  benign_fraction: float) -> list[AttackScenario]:
    if unit_draw("benign-slot", seed, index) < benign_fraction or not suite:
        return []
    return [suite[index % len(suite)]]


def run_episode(stack: DecisionStack, scenarios: list[AttackScenario],
                pipeline: PipelineEnv, ep_seed: int, index: int,
                options: ExperimentOptions,
                arm: BaselineKind) -> EpisodeRecord:
    state = pipeline.reset(scenarios, ep_seed)
    injected_clock = dict(state.injection_clock)
    predicted: set[str] = set()
    mitigations: list[Mitigation] = []
    interventions = 0
    fp_actions = 0
    requested_review = False
    total_return = 0.0
    prior_alerts = 0
    steps = 0
    while not state.done:
        verdict, action, _severity = stack.decide(state, prior_alerts)
        if verdict is not None:
            prior_alerts += 1
        pre_state = state
        transition = pipeline.step(state, action)
        injected_clock.update(dict(transition.next_state.injection_clock))
        total_return += transition.reward
        if action is not MitigationAction.ALLOW_CONTINUE:
            interventions += 1
            if transition.outcome.false_positive:
                fp_actions += 1
            if verdict is not None:
                predicted.add(verdict.value)
        if action is MitigationAction.REQUEST_REVIEW:
            requested_review = True
        for attack in transition.mitigated:
            autonomous = (not stack.human_gated
                          and action is not MitigationAction.REQUEST_REVIEW
                          and not requested_review)
            mitigations.append(Mitigation(
                attack_id=attack.id,
                vuln_class=attack.vuln_class.value,
                injected_clock=injected_clock.get(attack.id, 0.0),
                mitigated_clock=pre_state.clock_minutes,
                action=action.name,
                autonomous=autonomous,
                rollback_ok=pipeline.rollback_succeeds(
                    pre_state, transition.next_state, action),
                developer_accepted=transition.outcome.developer_accepted,
            ))
        state = transition.next_state
        steps += 1
    benign = not scenarios
    analysis_cost = options.analysis_cost.get(arm, 0.0)
    duration = state.clock_minutes + analysis_cost * steps
    undefended = steps * options.env_config.step_minutes if benign else 0.0
    return EpisodeRecord(
        index=index,
        seed=ep_seed,
        benign=benign,
        scenario=scenario_to_dict(scenarios[0]) if scenarios else None,
        predicted_classes=sorted(predicted),
        actual_classes=sorted({s.vuln_class.value for s in scenarios}),
        mitigations=mitigations,
        interventions=interventions,
        false_positive_actions=fp_actions,
        requested_review=requested_review,
        total_return=total_return,
        build_delay=state.build_delay,
        duration_minutes=duration,
        undefended_minutes=undefended,
    )


@dataclass
class LedgerArtifacts:
    chain: list
    validators: ledger_mod.ValidatorSet
    signing_keys: dict
    acl: ledger_mod.AclPolicy
    entries_written: int = 0


def _init_ledger(seed: int) -> LedgerArtifacts:
    validators, keys = ledger_mod.generate_validators(4, seed)
    acl = ledger_mod.default_acl()
    genesis = ledger_mod.make_genesis(validators, keys, acl)
    return LedgerArtifacts([genesis], validators, keys, acl)


def _signals_digest(state: EnvState) -> bytes:
    doc = json.dumps(
        [[s.stage.value, s.kind.value, s.content] for s in state.signals],
        separators=(",", ":"),
    )
    return hashlib.sha256(doc.encode()).digest()


def run_experiment(
    arm: BaselineKind,
    suite: list[AttackScenario],
    seed: int,
    policy: Optional[learning.Policy] = None,
    options: Optional[ExperimentOptions] = None,
) -> tuple[MetricsReport, list[EpisodeRecord], Optional[LedgerArtifacts]]:
    """Run every planned episode through the arm's decision stack."""
    if not suite:
        raise ConfigError("scenario suite must be non-empty")
    options = options or ExperimentOptions()
    stack = _build_stack(arm, policy, options)
    pipeline = PipelineEnv(options.env_config)
    digest = suite_hash(suite)
    records: list[EpisodeRecord] = []
    artifacts: Optional[LedgerArtifacts] = None
    if arm is BaselineKind.PROPOSED and options.ledger_enabled:
        artifacts = _init_ledger(seed)
    global_clock = 0.0
    for i in range(options.episodes):
        scenarios = _plan_episode(seed, i, suite, options.benign_fraction)
        ep_seed = episode_seed(seed, i)
        if artifacts is not None:
            record, entries = _run_episode_with_ledger(
                stack, scenarios, pipeline, ep_seed, i, options, arm, global_clock)
            ledger_mod.append_block(
                artifacts.chain, entries, artifacts.validators.ids()[0],
                artifacts.validators, artifacts.signing_keys, artifacts.acl,
                timestamp=int(global_clock + record.duration_minutes),
            )
            artifacts.entries_written += len(entries)
        else:
            record = run_episode(stack, scenarios, pipeline, ep_seed, i,
                                 options, arm)
        global_clock += record.duration_minutes
        records.append(record)
    latency = options.arm_latency.get(arm, 0.0)
    report = compute_metrics(records, arm, seed, digest, latency)
    return report, records, artifacts


def _run_episode_with_ledger(stack, scenarios, pipeline, ep_seed, index,
                             options, arm, global_clock):
    """Episode loop that also emits one ledger entry per decision."""
    state = pipeline.reset(scenarios, ep_seed)
    entries: list[ledger_mod.LedgerEntry] = []
    injected_clock = dict(state.injection_clock)
    predicted: set[str] = set()
    mitigations: list[Mitigation] = []
    interventions = 0
    fp_actions = 0
    requested_review = False
    total_return = 0.0
    prior_alerts = 0
    steps = 0
    while not state.done:
        verdict, action, severity = stack.decide(state, prior_alerts)
        if verdict is not None:
            prior_alerts += 1
        pre_state = state
        transition = pipeline.step(state, action)
        injected_clock.update(dict(transition.next_state.injection_clock))
        total_return += transition.reward
        summary = (f"{verdict.value} severity {severity:.3f}"
                   if verdict is not None else "benign")
        entries.append(ledger_mod.LedgerEntry(
            agent_id="mitigation-controller",
            role=AgentRole.CICD_MONITORING,
            signals_digest=_signals_digest(pre_state),
            reasoning_summary=summary,
            action=action,
            outcome=transition.outcome,
            timestamp=int(global_clock + pre_state.clock_minutes),
        ))
        if action is not MitigationAction.ALLOW_CONTINUE:
            interventions += 1
            if transition.outcome.false_positive:
                fp_actions += 1
            if verdict is not None:
                predicted.add(verdict.value)
        if action is MitigationAction.REQUEST_REVIEW:
            requested_review = True
        for attack in transition.mitigated:
            mitigations.append(Mitigation(
                attack_id=attack.id,
                vuln_class=attack.vuln_class.value,
                injected_clock=injected_clock.get(attack.id, 0.0),
                mitigated_clock=pre_state.clock_minutes,
                action=action.name,
                autonomous=(action is not MitigationAction.REQUEST_REVIEW
                            and not requested_review),
                rollback_ok=pipeline.rollback_succeeds(
                    pre_state, transition.next_state, action),
                developer_accepted=transition.outcome.developer_accepted,
            ))
        state = transition.next_state
        steps += 1
    benign = not scenarios
    analysis_cost = options.analysis_cost.get(arm, 0.0)
    record = EpisodeRecord(
        index=index,
        seed=ep_seed,
        benign=benign,
        scenario=scenario_to_dict(scenarios[0]) if scenarios else None,
        predicted_classes=sorted(predicted),
        actual_classes=sorted({s.vuln_class.value for s in scenarios}),
        mitigations=mitigations,
        interventions=interventions,
        false_positive_actions=fp_actions,
        requested_review=requested_review,
        total_return=total_return,
        build_delay=state.build_delay,
        duration_minutes=state.clock_minutes + analysis_cost * steps,
        undefended_minutes=steps * options.env_config.step_minutes if benign else 0.0,
    )
    return record, entries


# -- training against the simulated pipeline -------------------------------------


class DefenseEpisodeEnv:
    """Episodic RL view of the pipeline: detection runs inside the env, the
    agent chooses mitigation actions over encoded states."""

    n_states = learning.N_STATES
    n_actions = len(MitigationAction)
    action_labels = tuple(a.name for a in MitigationAction)

    def __init__(self, suite: list[AttackScenario], seed: int,
                 env_config: Optional[EnvConfig] = None,
                 correlation: bool = True,
                 benign_fraction: float = 0.25):
        self.suite = suite
        self.seed = seed
        self.pipeline = PipelineEnv(env_config or EnvConfig())
        self.reasoner = RuleBasedReasoner(correlation_enabled=correlation)
        self.rules = default_rules()
        self.graph = full_sweep_graph()
        self.benign_fraction = benign_fraction
        self._episode = 0
        self._state: Optional[EnvState] = None
        self._prior_alerts = 0

    def _encode(self) -> int:
        trace = dispatch(self.graph, self._state, self.reasoner, self.rules)
        self._last_assessment = trace.assessment
        return learning.encode_state(self._state, trace.assessment,
                                     self._prior_alerts)

    def reset(self, rng) -> int:
        index = self._episode
        self._episode += 1
        scenarios = _plan_episode(self.seed, index, self.suite,
                                  self.benign_fraction)
        self._state = self.pipeline.reset(scenarios, episode_seed(self.seed, index))
        self._prior_alerts = 0
        return self._encode()

    def step(self, action: int) -> tuple[int, float, bool]:
        if self._last_assessment.verdict is not None:
            self._prior_alerts = min(self._prior_alerts + 1,
                                     learning.N_PRIOR_ALERTS - 1)
        transition = self.pipeline.step(self._state, MitigationAction(action))
        self._state = transition.next_state
        if transition.done:
            return 0, transition.reward, True
        return self._encode(), transition.reward, False


def train_mitigation_policy(
    suite: list[AttackScenario],
    config: learning.TrainConfig,
    env_config: Optional[EnvConfig] = None,
    correlation: bool = True,
    benign_fraction: float = 0.25,
) -> learning.Policy:
    def factory():
        return DefenseEpisodeEnv(suite, config.seed, env_config,
                                 correlation, benign_fraction)
    return learning.train(factory, config)


# -- ablations and comparisons -----------------------------------------------------


def ablation(
    suite: list[AttackScenario],
    seed: int,
    policy: learning.Policy,
    disable: set[str],
    options: Optional[ExperimentOptions] = None,
) -> dict:
    """Re-run the full stack with components disabled; report metric deltas."""
    unknown = disable - {"reasoner", "rl", "ledger"}
    if unknown:
        raise ConfigError(f"unknown ablation targets: {sorted(unknown)}")
    base_options = options or ExperimentOptions()
    baseline, base_records, _ = run_experiment(
        BaselineKind.PROPOSED, suite, seed, policy, base_options)
    ablated_options = ExperimentOptions(
        episodes=base_options.episodes,
        benign_fraction=base_options.benign_fraction,
        arm_latency=dict(base_options.arm_latency),
        analysis_cost=dict(base_options.analysis_cost),
        env_config=base_options.env_config,
        ledger_enabled=base_options.ledger_enabled and "ledger" not in disable,
        reasoner_correlation="reasoner" not in disable,
        use_policy="rl" not in disable,
        playbook_latency=base_options.playbook_latency,
    )
    if "rl" in disable:
        ablated_options.arm_latency[BaselineKind.PROPOSED] = \
            base_options.playbook_latency
    ablated, abl_records, _ = run_experiment(
        BaselineKind.PROPOSED, suite, seed, policy, ablated_options)
    deltas = {}
    for vc in VulnerabilityClass:
        b = baseline.per_class[vc.value]
        a = ablated.per_class[vc.value]
        deltas[vc.value] = {
            "recall_delta": a["recall"] - b["recall"],
            "precision_delta": a["precision"] - b["precision"],
            "f1_delta": a["f1"] - b["f1"],
        }
    return {
        "disabled": sorted(disable),
        "baseline": baseline.to_dict(),
        "ablated": ablated.to_dict(),
        "per_class_deltas": deltas,
        "mttm_delta": ablated.mttm_minutes - baseline.mttm_minutes,
        "false_positive_actions_delta":
            ablated.false_positive_actions - baseline.false_positive_actions,
        "confusion_identical": all(
            baseline.per_class[vc.value][k] == ablated.per_class[vc.value][k]
            for vc in VulnerabilityClass for k in ("tp", "fp", "fn", "tn")
        ),
    }


def compare(reports: list[MetricsReport]) -> dict:
    """Per-class F1, per-arm MTTM and per-arm overhead tables."""
    if len(reports) < 2:
        raise ConfigError("comparison requires at least 2 reports")
    suites = {r.suite for r in reports}
    if len(suites) > 1:
        raise ConfigError("reports come from different suites")
    by_arm = {r.arm: r for r in reports}
    arms = [a.value for a in ARM_ORDER if a.value in by_arm]
    f1_rows = []
    for vc in VulnerabilityClass:
        row = {"class": vc.value}
        for arm in arms:
            row[arm] = by_arm[arm].per_class[vc.value]["f1"]
        f1_rows.append(row)
    mttm_rows = [{"arm": arm, "mttm_minutes": by_arm[arm].mttm_minutes}
                 for arm in arms]
    overhead_rows = [{"arm": arm, "overhead_percent": by_arm[arm].overhead_percent}
                     for arm in arms]
    return {"f1": f1_rows, "mttm": mttm_rows, "overhead": overhead_rows}


def comparison_csv(tables: dict) -> dict[str, str]:
    """Render the comparison tables as CSV text, one per table."""
    out = {}
    for name, rows in tables.items():
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()),
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        out[name] = buf.getvalue()
    return out


# -- shipped calibration suite -------------------------------------------------


def calibration_suite() -> list[AttackScenario]:
    """Deterministic scenario suite: per class, six syntactically detectable
    attacks and four that only cross-stage correlation catches."""
    sm = PipelineStage.SOURCE_MANAGEMENT
    dr = PipelineStage.DEPENDENCY_RESOLUTION
    bd = PipelineStage.BUILD
    inj = VulnerabilityClass.INJECTION
    des = VulnerabilityClass.INSECURE_DESERIALIZATION
    bac = VulnerabilityClass.BROKEN_ACCESS_CONTROL
    mis = VulnerabilityClass.MISCONFIGURATION
    spec: list[tuple[VulnerabilityClass, PipelineStage, list[str], bool]] = [
        # (class, stage, payload, syntactic)
        (inj, sm, ["exec_untrusted_input"], True),
        (inj, sm, ["shell_metachar_concat"], True),
        (inj, dr, ["typosquat_pkg"], True),
        (inj, dr, ["postinstall_curl_bash"], True),
        (inj, bd, ["curl_pipe_sh_in_ci"], True),
        (inj, sm, ["exec_untrusted_input", "shell_metachar_concat"], True),
        (inj, sm, ["obfuscated_string_concat"], False),
        (inj, dr, ["version_pin_drift"], False),
        (inj, bd, ["unexpected_build_subprocess"], False),
        (inj, sm, ["obfuscated_string_concat"], False),
        (des, sm, ["pickle_loads_untrusted"], True),
        (des, sm, ["yaml_unsafe_load"], True),
        (des, dr, ["gadget_chain_dep"], True),
        (des, bd, ["deserialize_artifact_blob"], True),
        (des, sm, ["pickle_loads_untrusted", "yaml_unsafe_load"], True),
        (des, dr, ["gadget_chain_dep"], True),
        (des, sm, ["dynamic_attr_loader"], False),
        (des, dr, ["nested_object_graph"], False),
        (des, bd, ["artifact_size_anomaly"], False),
        (des, sm, ["dynamic_attr_loader"], False),
        (bac, sm, ["wildcard_admin"], True),
        (bac, dr, ["secret_in_plaintext"], True),
        (bac, bd, ["token_scope_star"], True),
        (bac, sm, ["wildcard_admin", "secret_in_plaintext"], True),
        (bac, dr, ["wildcard_admin"], True),
        (bac, bd, ["secret_in_plaintext"], True),
        (bac, sm, ["unused_privilege_grant"], False),
        (bac, dr, ["unused_privilege_grant"], False),
        (bac, bd, ["unused_privilege_grant"], False),
        (bac, sm, ["unused_privilege_grant"], False),
        (mis, sm, ["privileged_container_true"], True),
        (mis, dr, ["public_s3_acl"], True),
        (mis, bd, ["debug_endpoint_exposed"], True),
        (mis, sm, ["public_s3_acl", "debug_endpoint_exposed"], True),
        (mis, dr, ["privileged_container_true"], True),
        (mis, bd, ["public_s3_acl"], True),
        (mis, sm, ["implicit_default_config"], False),
        (mis, dr, ["implicit_default_config"], False),
        (mis, bd, ["implicit_default_config"], False),
        (mis, sm, ["implicit_default_config"], False),
    ]
    suite = []
    for i, (vc, stage, payload, syntactic) in enumerate(spec):
        suite.append(AttackScenario(
            id=f"cal-{i:03d}-{vc.value.lower()}",
            vuln_class=vc,
            stage=stage,
            payload=tuple(payload),
            syntactic_detectable=syntactic,
            semantic_detectable=not syntactic,
            severity=0.85 if syntactic else 0.5,
        ))
    return suite
