"""Deterministic simulated CI/CD pipeline environment.

A run walks the pipeline stages in order, injecting configured attack
scenarios at their target stage and emitting role-observable signals.
Mitigation actions change the run's dynamics; every transition is a pure
function of (state, action, run seed), so whole traces are reproducible
byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Optional


class VulnerabilityClass(str, Enum):
    INJECTION = "Injection"
    INSECURE_DESERIALIZATION = "InsecureDeserialization"
    BROKEN_ACCESS_CONTROL = "BrokenAccessControl"
    MISCONFIGURATION = "Misconfiguration"


class PipelineStage(IntEnum):
    SOURCE_MANAGEMENT = 0
    DEPENDENCY_RESOLUTION = 1
    BUILD = 2
    ARTIFACT_PACKAGING = 3
    DEPLOYMENT = 4


class SignalKind(str, Enum):
    COMMIT_DIFF = "commit_diff"
    SBOM_ENTRY = "sbom_entry"
    PIPELINE_LOG = "pipeline_log"
    PERMISSION_RECORD = "permission_record"
    CONFIG_MANIFEST = "config_manifest"


class MitigationAction(IntEnum):
    # Enumeration order is the greedy tie-break order everywhere.
    ALLOW_CONTINUE = 0
    BLOCK_BUILD = 1
    QUARANTINE_DEPENDENCY = 2
    REQUEST_REVIEW = 3
    REVOKE_CREDENTIALS = 4
    PAUSE_BUILD = 5
    APPLY_CONFIG_PATCH = 6
    OPEN_GUARD_PULL_REQUEST = 7


class AgentRole(str, Enum):
    CODE_ANALYSIS = "CodeAnalysis"
    DEPENDENCY_INTELLIGENCE = "DependencyIntelligence"
    CICD_MONITORING = "CICDMonitoring"
    ACCESS_CONTROL = "AccessControl"
    CONFIGURATION_AUDIT = "ConfigurationAudit"


# Which agent role may observe each signal kind.
KIND_TO_ROLE = {
    SignalKind.COMMIT_DIFF: AgentRole.CODE_ANALYSIS,
    SignalKind.SBOM_ENTRY: AgentRole.DEPENDENCY_INTELLIGENCE,
    SignalKind.PIPELINE_LOG: AgentRole.CICD_MONITORING,
    SignalKind.PERMISSION_RECORD: AgentRole.ACCESS_CONTROL,
    SignalKind.CONFIG_MANIFEST: AgentRole.CONFIGURATION_AUDIT,
}

# Default signal kind for a stage's generic events and for attack echoes.
STAGE_KIND = {
    PipelineStage.SOURCE_MANAGEMENT: SignalKind.COMMIT_DIFF,
    PipelineStage.DEPENDENCY_RESOLUTION: SignalKind.SBOM_ENTRY,
    PipelineStage.BUILD: SignalKind.PIPELINE_LOG,
    PipelineStage.ARTIFACT_PACKAGING: SignalKind.PIPELINE_LOG,
    PipelineStage.DEPLOYMENT: SignalKind.CONFIG_MANIFEST,
}


class ContractViolation(Exception):
    """An operation was called outside its contract."""


class ConfigError(Exception):
    """Invalid scenario or environment configuration."""


@dataclass(frozen=True)
class AttackScenario:
    id: str
    vuln_class: VulnerabilityClass
    stage: PipelineStage
    payload: tuple[str, ...]
    syntactic_detectable: bool
    semantic_detectable: bool
    severity: float

    def validate(self) -> None:
        if not self.payload:
            raise ConfigError(f"scenario {self.id}: payload must be non-empty")
        if not (self.syntactic_detectable or self.semantic_detectable):
            raise ConfigError(
                f"scenario {self.id}: undetectable (neither syntactic nor semantic)"
            )
        if not (0.0 <= self.severity <= 1.0):
            raise ConfigError(f"scenario {self.id}: severity outside [0,1]")


_SCENARIO_FIELDS = {
    "id", "class", "stage", "payload",
    "syntactic_detectable", "semantic_detectable", "severity",
}


def scenario_from_dict(obj: dict) -> AttackScenario:
    unknown = set(obj) - _SCENARIO_FIELDS
    if unknown:
        raise ConfigError(f"unknown scenario fields: {sorted(unknown)}")
    missing = _SCENARIO_FIELDS - set(obj)
    if missing:
        raise ConfigError(f"missing scenario fields: {sorted(missing)}")
    scenario = AttackScenario(
        id=str(obj["id"]),
        vuln_class=VulnerabilityClass(obj["class"]),
        stage=PipelineStage[_stage_key(obj["stage"])],
        payload=tuple(str(t) for t in obj["payload"]),
        syntactic_detectable=bool(obj["syntactic_detectable"]),
        semantic_detectable=bool(obj["semantic_detectable"]),
        severity=float(obj["severity"]),
    )
    scenario.validate()
    return scenario


def scenario_to_dict(s: AttackScenario) -> dict:
    return {
        "id": s.id,
        "class": s.vuln_class.value,
        "stage": stage_name(s.stage),
        "payload": list(s.payload),
        "syntactic_detectable": s.syntactic_detectable,
        "semantic_detectable": s.semantic_detectable,
        "severity": s.severity,
    }


_STAGE_NAMES = {
    "SourceManagement": "SOURCE_MANAGEMENT",
    "DependencyResolution": "DEPENDENCY_RESOLUTION",
    "Build": "BUILD",
    "ArtifactPackaging": "ARTIFACT_PACKAGING",
    "Deployment": "DEPLOYMENT",
}
_STAGE_NAMES_REV = {v: k for k, v in _STAGE_NAMES.items()}


def _stage_key(name: str) -> str:
    try:
        return _STAGE_NAMES[name]
    except KeyError:
        raise ConfigError(f"unknown pipeline stage: {name!r}") from None


def stage_name(stage: PipelineStage) -> str:
    return _STAGE_NAMES_REV[stage.name]


def load_scenarios(path: str) -> list[AttackScenario]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise ConfigError("scenario corpus must be a JSON array")
    scenarios = [scenario_from_dict(obj) for obj in data]
    seen: set[str] = set()
    for s in scenarios:
        if s.id in seen:
            raise ConfigError(f"duplicate scenario id: {s.id}")
        seen.add(s.id)
    return scenarios


@dataclass(frozen=True)
class ObservationSignal:
    stage: PipelineStage
    kind: SignalKind
    content: str
    origin_attack: Optional[str] = None

    def stripped(self) -> "ObservationSignal":
        if self.origin_attack is None:
            return self
        return replace(self, origin_attack=None)


@dataclass(frozen=True)
class OutcomeFlags:
    attack_mitigated: bool = False
    false_positive: bool = False
    developer_accepted: bool = False
    build_delay: float = 0.0


@dataclass(frozen=True)
class RewardParams:
    alpha: float = 1.0
    beta: float = 0.5
    delta: float = 0.01
    eta: float = 0.25

    def validate(self) -> None:
        for name in ("alpha", "beta", "delta", "eta"):
            v = getattr(self, name)
            if not (v >= 0.0 and v == v and v != float("inf")):
                raise ConfigError(f"reward parameter {name} must be finite and >= 0")


def compute_reward(outcome: OutcomeFlags, params: RewardParams) -> float:
    """Scalar step reward balancing mitigation value, false alarms,
    added build latency and developer acceptance."""
    return (
        params.alpha * float(outcome.attack_mitigated)
        - params.beta * float(outcome.false_positive)
        - params.delta * outcome.build_delay
        + params.eta * float(outcome.developer_accepted)
    )


@dataclass(frozen=True)
class EnvState:
    run_id: str
    stage: PipelineStage
    step: int
    active_attacks: tuple[AttackScenario, ...]
    signals: tuple[ObservationSignal, ...]
    build_delay: float
    rng_seed: int
    done: bool
    terminal_outcome: Optional[OutcomeFlags] = None
    clock_minutes: float = 0.0
    steps_in_stage: int = 0
    paused: bool = False
    # Scenarios scheduled for stages not yet reached (hidden from agents).
    pending_attacks: tuple[AttackScenario, ...] = ()
    # Markers for reversible side effects ("quarantine:<id>", "patch:<id>", ...)
    effects: tuple[str, ...] = ()
    # Simulated-minute timestamp at which each scenario went live.
    injection_clock: tuple[tuple[str, float], ...] = ()
    mitigated_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class Transition:
    next_state: EnvState
    reward: float
    done: bool
    outcome: OutcomeFlags
    mitigated: tuple[AttackScenario, ...] = ()


def unit_draw(*parts) -> float:
    """Deterministic uniform draw in [0, 1) from a label tuple."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


# Default per-action acceptance probabilities; everything else is 1.0.
DEFAULT_ACCEPTANCE = {
    MitigationAction.OPEN_GUARD_PULL_REQUEST: 0.8,
    MitigationAction.APPLY_CONFIG_PATCH: 0.7,
    MitigationAction.REQUEST_REVIEW: 0.9,
}

# Added build delay per action, simulated minutes.
DEFAULT_DELAYS = {
    MitigationAction.ALLOW_CONTINUE: 0.0,
    MitigationAction.REQUEST_REVIEW: 5.0,
}
DEFAULT_OTHER_DELAY = 2.0

# Weak behavioral traces an ongoing attack leaves in the next stage,
# keyed by class then by the echo signal's kind.
DEFAULT_ECHO_TOKENS = {
    VulnerabilityClass.INJECTION: {
        SignalKind.SBOM_ENTRY: "version_pin_drift",
        SignalKind.PIPELINE_LOG: "unexpected_build_subprocess",
        SignalKind.CONFIG_MANIFEST: "unexpected_build_subprocess",
        SignalKind.COMMIT_DIFF: "obfuscated_string_concat",
    },
    VulnerabilityClass.INSECURE_DESERIALIZATION: {
        SignalKind.SBOM_ENTRY: "nested_object_graph",
        SignalKind.PIPELINE_LOG: "artifact_size_anomaly",
        SignalKind.CONFIG_MANIFEST: "artifact_size_anomaly",
        SignalKind.COMMIT_DIFF: "dynamic_attr_loader",
    },
    VulnerabilityClass.BROKEN_ACCESS_CONTROL: {
        SignalKind.PERMISSION_RECORD: "offhours_token_use",
    },
    VulnerabilityClass.MISCONFIGURATION: {
        SignalKind.CONFIG_MANIFEST: "env_override_drift",
    },
}

# Benign noise occasionally emitted on attack-free runs: weak tokens that a
# match-anything scanner flags but a thresholded reasoner ignores.
DEFAULT_DECOYS = [
    (SignalKind.COMMIT_DIFF, "obfuscated_string_concat"),
    (SignalKind.SBOM_ENTRY, "nested_object_graph"),
    (SignalKind.PERMISSION_RECORD, "unused_privilege_grant"),
    (SignalKind.CONFIG_MANIFEST, "implicit_default_config"),
]


@dataclass(frozen=True)
class EnvConfig:
    reward: RewardParams = field(default_factory=RewardParams)
    max_steps_per_stage: int = 1
    step_minutes: float = 3.0
    require_attacks: bool = False
    allow_multiple_attacks: bool = True
    decoy_probability: float = 0.25
    decoys_only_benign: bool = True
    delays: dict = field(default_factory=dict)          # action name -> minutes
    acceptance: dict = field(default_factory=dict)      # action name -> probability

    def action_delay(self, action: MitigationAction) -> float:
        if action.name in self.delays:
            return float(self.delays[action.name])
        if action in DEFAULT_DELAYS:
            return DEFAULT_DELAYS[action]
        return DEFAULT_OTHER_DELAY

    def acceptance_probability(self, action: MitigationAction) -> float:
        if action.name in self.acceptance:
            return float(self.acceptance[action.name])
        return DEFAULT_ACCEPTANCE.get(action, 1.0)


_ENV_CONFIG_FIELDS = {
    "reward", "max_steps_per_stage", "step_minutes", "require_attacks",
    "allow_multiple_attacks", "decoy_probability", "decoys_only_benign",
    "delays", "acceptance",
}


def env_config_from_dict(obj: dict) -> EnvConfig:
    unknown = set(obj) - _ENV_CONFIG_FIELDS
    if unknown:
        raise ConfigError(f"unknown environment config fields: {sorted(unknown)}")
    kwargs = dict(obj)
    if "reward" in kwargs:
        kwargs["reward"] = RewardParams(**kwargs["reward"])
    cfg = EnvConfig(**kwargs)
    cfg.reward.validate()
    if cfg.max_steps_per_stage < 1:
        raise ConfigError("max_steps_per_stage must be >= 1")
    return cfg


def attack_signal_kind(vuln_class: VulnerabilityClass, stage: PipelineStage) -> SignalKind:
    if vuln_class is VulnerabilityClass.BROKEN_ACCESS_CONTROL:
        return SignalKind.PERMISSION_RECORD
    if vuln_class is VulnerabilityClass.MISCONFIGURATION:
        return SignalKind.CONFIG_MANIFEST
    return STAGE_KIND[stage]


def developer_response(
    action: MitigationAction,
    run_seed: int,
    step: int,
    config: EnvConfig | None = None,
) -> bool:
    """Seeded pseudo-random developer acceptance draw for an action."""
    config = config or EnvConfig()
    p = config.acceptance_probability(action)
    if p >= 1.0:
        return True
    return unit_draw("dev", run_seed, step, action.name) < p


def observe(state: EnvState, role: AgentRole) -> list[ObservationSignal]:
    """Signals visible to one agent role, with ground-truth labels stripped."""
    return [
        sig.stripped()
        for sig in state.signals
        if KIND_TO_ROLE[sig.kind] is role
    ]


def mitigates(action: MitigationAction, attack: AttackScenario,
              current_stage: PipelineStage, developer_accepted: bool) -> bool:
    """Shipped action-effect table: which action neutralizes which attack."""
    if action in (MitigationAction.BLOCK_BUILD, MitigationAction.PAUSE_BUILD):
        return current_stage < PipelineStage.DEPLOYMENT
    if action is MitigationAction.QUARANTINE_DEPENDENCY:
        return attack.stage is PipelineStage.DEPENDENCY_RESOLUTION
    if action is MitigationAction.APPLY_CONFIG_PATCH:
        return attack.vuln_class is VulnerabilityClass.MISCONFIGURATION
    if action is MitigationAction.REVOKE_CREDENTIALS:
        return attack.vuln_class is VulnerabilityClass.BROKEN_ACCESS_CONTROL
    if action is MitigationAction.OPEN_GUARD_PULL_REQUEST:
        return attack.stage is PipelineStage.SOURCE_MANAGEMENT and developer_accepted
    return False


# Actions whose side effect can be undone by an inverse action.
INVERTIBLE_ACTIONS = {
    MitigationAction.QUARANTINE_DEPENDENCY,
    MitigationAction.PAUSE_BUILD,
    MitigationAction.APPLY_CONFIG_PATCH,
    MitigationAction.REVOKE_CREDENTIALS,
    MitigationAction.OPEN_GUARD_PULL_REQUEST,
}

_EFFECT_TAG = {
    MitigationAction.QUARANTINE_DEPENDENCY: "quarantine",
    MitigationAction.PAUSE_BUILD: "pause",
    MitigationAction.APPLY_CONFIG_PATCH: "patch",
    MitigationAction.REVOKE_CREDENTIALS: "revoke",
    MitigationAction.OPEN_GUARD_PULL_REQUEST: "guard_pr",
    MitigationAction.BLOCK_BUILD: "block",
    MitigationAction.REQUEST_REVIEW: "review",
}


class PipelineEnv:
    """One simulated pipeline environment bound to a configuration."""

    def __init__(self, config: EnvConfig | None = None):
        self.config = config or EnvConfig()

    # -- lifecycle ---------------------------------------------------------

    def reset(self, scenarios: list[AttackScenario], seed: int) -> EnvState:
        for s in scenarios:
            s.validate()
        if self.config.require_attacks and not scenarios:
            raise ConfigError("configuration requires at least one attack scenario")
        if not self.config.allow_multiple_attacks and len(scenarios) > 1:
            raise ConfigError("multiple simultaneous attacks disabled by config")
        run_id = "run-" + hashlib.sha256(
            ("|".join(sorted(s.id for s in scenarios)) + f"|{seed}").encode()
        ).hexdigest()[:16]
        state = EnvState(
            run_id=run_id,
            stage=PipelineStage.SOURCE_MANAGEMENT,
            step=0,
            active_attacks=(),
            signals=(),
            build_delay=0.0,
            rng_seed=seed,
            done=False,
            pending_attacks=tuple(scenarios),
        )
        return self._enter_stage(state, PipelineStage.SOURCE_MANAGEMENT)

    def step(self, state: EnvState, action: MitigationAction) -> Transition:
        """Advance one decision step; pure in (state, action)."""
        if state.done:
            raise ContractViolation("step() called on a finished run")

        accepted = developer_response(action, state.rng_seed, state.step, self.config)
        delay_inc = self.config.action_delay(action)
        mitigated = tuple(
            a for a in state.active_attacks
            if mitigates(action, a, state.stage, accepted)
        )
        intervention = action is not MitigationAction.ALLOW_CONTINUE
        outcome = OutcomeFlags(
            attack_mitigated=bool(mitigated),
            false_positive=intervention and not state.active_attacks,
            developer_accepted=accepted,
            build_delay=delay_inc,
        )
        reward = compute_reward(outcome, self.config.reward)

        mitigated_ids = {a.id for a in mitigated}
        signals = tuple(
            s for s in state.signals if s.origin_attack not in mitigated_ids
        )
        effects = state.effects
        if intervention and action in _EFFECT_TAG:
            effects = effects + (f"{_EFFECT_TAG[action]}:{state.step}",)

        nxt = replace(
            state,
            active_attacks=tuple(a for a in state.active_attacks if a.id not in mitigated_ids),
            signals=signals,
            step=state.step + 1,
            build_delay=state.build_delay + delay_inc,
            clock_minutes=state.clock_minutes + self.config.step_minutes + delay_inc,
            paused=action is MitigationAction.PAUSE_BUILD,
            effects=effects,
            mitigated_ids=state.mitigated_ids + tuple(sorted(mitigated_ids)),
        )

        if action is MitigationAction.BLOCK_BUILD:
            nxt = replace(nxt, done=True, terminal_outcome=outcome)
            return Transition(nxt, reward, True, outcome, mitigated)

        at_last_stage = state.stage is PipelineStage.DEPLOYMENT
        stage_exhausted = state.steps_in_stage + 1 >= self.config.max_steps_per_stage
        if at_last_stage and stage_exhausted:
            nxt = replace(nxt, done=True, terminal_outcome=outcome)
            return Transition(nxt, reward, True, outcome, mitigated)

        if stage_exhausted:
            nxt = replace(nxt, steps_in_stage=0)
            nxt = self._enter_stage(nxt, PipelineStage(state.stage + 1))
        else:
            nxt = replace(nxt, steps_in_stage=state.steps_in_stage + 1)
        return Transition(nxt, reward, False, outcome, mitigated)

    def pause(self, state: EnvState) -> EnvState:
        """Freeze a run in place, paying the pause delay; stage is unchanged."""
        if state.done:
            raise ContractViolation("cannot pause a finished run")
        if state.paused:
            raise ContractViolation("run is already paused")
        cost = self.config.action_delay(MitigationAction.PAUSE_BUILD)
        return replace(
            state,
            paused=True,
            build_delay=state.build_delay + cost,
            clock_minutes=state.clock_minutes + cost,
            effects=state.effects + (f"pause:{state.step}",),
        )

    def resume(self, state: EnvState) -> EnvState:
        if not state.paused:
            raise ContractViolation("run is not paused")
        restored = self.invert(state, MitigationAction.PAUSE_BUILD)
        return restored if restored is not None else replace(state, paused=False)

    # -- rollback probing ----------------------------------------------------

    def invert(self, post: EnvState, action: MitigationAction) -> Optional[EnvState]:
        """Apply the inverse of the most recent application of `action`.

        Returns None when the action has no inverse (e.g. a terminated run).
        """
        if action not in INVERTIBLE_ACTIONS:
            return None
        tag = _EFFECT_TAG[action]
        for i in range(len(post.effects) - 1, -1, -1):
            if post.effects[i].startswith(tag + ":"):
                effects = post.effects[:i] + post.effects[i + 1:]
                return replace(post, effects=effects, paused=False)
        return None

    def rollback_succeeds(self, pre: EnvState, post: EnvState,
                          action: MitigationAction) -> bool:
        restored = self.invert(post, action)
        if restored is None:
            return False
        return restored.effects == pre.effects and restored.paused == pre.paused

    # -- internals -----------------------------------------------------------

    def _enter_stage(self, state: EnvState, stage: PipelineStage) -> EnvState:
        seed = state.rng_seed
        new_signals: list[ObservationSignal] = [
            ObservationSignal(stage, STAGE_KIND[stage], f"stage_ok {stage_name(stage)}")
        ]
        injected: list[AttackScenario] = []
        clocks = list(state.injection_clock)
        for s in state.pending_attacks:
            if s.stage is stage:
                injected.append(s)
                clocks.append((s.id, state.clock_minutes))
                new_signals.append(ObservationSignal(
                    stage, attack_signal_kind(s.vuln_class, stage),
                    " ".join(s.payload), origin_attack=s.id,
                ))
        # Persisting semantic attacks leave one weak trace in the next stage.
        for a in state.active_attacks:
            if a.semantic_detectable and stage == a.stage + 1:
                kind = attack_signal_kind(a.vuln_class, stage)
                token = DEFAULT_ECHO_TOKENS[a.vuln_class].get(kind)
                if token:
                    new_signals.append(ObservationSignal(
                        stage, kind, token, origin_attack=a.id,
                    ))
        benign_run = not (state.pending_attacks or state.active_attacks
                          or state.mitigated_ids)
        if (benign_run or not self.config.decoys_only_benign) \
                and unit_draw("decoy", seed, stage.value) < self.config.decoy_probability:
            idx = int(unit_draw("decoy-pick", seed, stage.value) * len(DEFAULT_DECOYS))
            kind, token = DEFAULT_DECOYS[min(idx, len(DEFAULT_DECOYS) - 1)]
            new_signals.append(ObservationSignal(stage, kind, token))
        injected_ids = {s.id for s in injected}
        return replace(
            state,
            stage=stage,
            active_attacks=state.active_attacks + tuple(injected),
            pending_attacks=tuple(s for s in state.pending_attacks
                                  if s.id not in injected_ids),
            signals=state.signals + tuple(new_signals),
            injection_clock=tuple(clocks),
        )
