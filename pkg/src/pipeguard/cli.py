"""Command-line interface.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 contract violation. All randomness flows from the --seed flag (or the
config file), so rerunning a command with the same inputs produces
byte-identical output files.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from . import evaluation, learning, ledger as ledger_mod, protocol
from .env import (
    ConfigError,
    ContractViolation,
    EnvConfig,
    MitigationAction,
    PipelineEnv,
    env_config_from_dict,
    load_scenarios,
    scenario_to_dict,
    stage_name,
)

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_CONFIG = 2
EXIT_CONTRACT = 3


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def handles_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
            _fail(EXIT_CONFIG, str(exc))
        except ContractViolation as exc:
            _fail(EXIT_CONTRACT, str(exc))
        except (ledger_mod.LedgerError, protocol.ProtocolError,
                protocol.FrameError) as exc:
            _fail(EXIT_VERIFY, str(exc))
    return wrapper


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(doc) - {"env", "train", "evaluate"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return doc


def _env_config(doc: dict) -> EnvConfig:
    return env_config_from_dict(doc.get("env", {}))


def _load_suite(path: str | None):
    if path is None:
        return evaluation.calibration_suite()
    return load_scenarios(path)


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _experiment_options(doc: dict, episodes: int | None) -> evaluation.ExperimentOptions:
    section = dict(doc.get("evaluate", {}))
    unknown = set(section) - {"episodes", "benign_fraction", "ledger_enabled",
                              "playbook_latency"}
    if unknown:
        raise ConfigError(f"unknown evaluate config fields: {sorted(unknown)}")
    options = evaluation.ExperimentOptions(env_config=_env_config(doc))
    if "episodes" in section:
        options.episodes = int(section["episodes"])
    if "benign_fraction" in section:
        options.benign_fraction = float(section["benign_fraction"])
    if "ledger_enabled" in section:
        options.ledger_enabled = bool(section["ledger_enabled"])
    if "playbook_latency" in section:
        options.playbook_latency = float(section["playbook_latency"])
    if episodes is not None:
        options.episodes = episodes
    if options.episodes < 1:
        raise ConfigError("episodes must be >= 1")
    if not (0.0 <= options.benign_fraction < 1.0):
        raise ConfigError("benign_fraction must be in [0, 1)")
    return options


@click.group()
def main():
    """Simulated CI/CD supply-chain defense loop."""


@main.command()
@click.option("--scenarios", "scenarios_path", type=click.Path(exists=True),
              default=None, help="Scenario suite JSON (default: shipped suite).")
@click.option("--index", type=int, default=0, show_default=True,
              help="Scenario index within the suite; -1 for a benign run.")
@click.option("--policy", "policy_path", type=click.Path(exists=True),
              default=None, help="Drive actions from a trained policy.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the run trace as JSON.")
@handles_errors
def simulate(scenarios_path, index, policy_path, config_path, seed, out_path):
    """Run one pipeline episode and print its trace."""
    doc = _load_config(config_path)
    suite = _load_suite(scenarios_path)
    if index >= len(suite):
        raise ConfigError(f"scenario index {index} out of range (suite has {len(suite)})")
    scenarios = [] if index < 0 else [suite[index]]
    options = evaluation.ExperimentOptions(env_config=_env_config(doc))
    if policy_path is not None:
        stack = evaluation.PolicyStack(learning.load_policy(policy_path))
    else:
        stack = None
    pipeline = PipelineEnv(options.env_config)
    state = pipeline.reset(scenarios, seed)
    steps = []
    prior_alerts = 0
    while not state.done:
        if stack is not None:
            verdict, action, _sev = stack.decide(state, prior_alerts)
            if verdict is not None:
                prior_alerts += 1
        else:
            verdict, action = None, MitigationAction.ALLOW_CONTINUE
        transition = pipeline.step(state, action)
        steps.append({
            "stage": stage_name(state.stage),
            "action": action.name,
            "verdict": verdict.value if verdict else None,
            "reward": transition.reward,
            "mitigated": [a.id for a in transition.mitigated],
            "signals": [
                {"stage": stage_name(s.stage), "kind": s.kind.value, "content": s.content}
                for s in state.signals
            ],
        })
        state = transition.next_state
    trace = {
        "run_id": state.run_id,
        "seed": seed,
        "scenario": scenario_to_dict(scenarios[0]) if scenarios else None,
        "steps": steps,
        "build_delay": state.build_delay,
        "clock_minutes": state.clock_minutes,
    }
    if out_path:
        _write_json(Path(out_path), trace)
    click.echo(json.dumps(trace, indent=2, sort_keys=True))


@main.command()
@click.option("--suite", "suite_path", type=click.Path(exists=True), default=None)
@click.option("--algorithm", type=click.Choice(["DQN", "PPO"]), default="DQN",
              show_default=True)
@click.option("--episodes", type=int, default=3000, show_default=True)
@click.option("--learning-rate", type=float, default=0.3, show_default=True)
@click.option("--no-correlation", is_flag=True,
              help="Train without cross-stage correlation (detector-only arm).")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@handles_errors
def train(suite_path, algorithm, episodes, learning_rate, no_correlation,
          config_path, seed, out_path):
    """Train a mitigation policy against the simulated pipeline."""
    doc = _load_config(config_path)
    suite = _load_suite(suite_path)
    train_doc = dict(doc.get("train", {}))
    train_doc.setdefault("algorithm", algorithm)
    train_doc.setdefault("episodes", episodes)
    train_doc.setdefault("learning_rate", learning_rate)
    train_doc.setdefault("seed", seed)
    config = learning.TrainConfig.from_dict(train_doc)
    policy = evaluation.train_mitigation_policy(
        suite, config, env_config=_env_config(doc),
        correlation=not no_correlation,
    )
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    learning.save_policy(policy, out_path)
    click.echo(f"trained {config.algorithm} policy over {config.episodes} episodes "
               f"-> {out_path}")


@main.command()
@click.option("--arm", type=click.Choice([a.value for a in evaluation.ARM_ORDER]),
              required=True)
@click.option("--suite", "suite_path", type=click.Path(exists=True), default=None)
@click.option("--policy", "policy_path", type=click.Path(exists=True), default=None,
              help="Trained policy (required for RLOnly and Proposed).")
@click.option("--episodes", type=int, default=None)
@click.option("--disable", "disable_csv", default=None,
              help="Comma-separated components to ablate: reasoner,rl,ledger.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@handles_errors
def evaluate(arm, suite_path, policy_path, episodes, disable_csv, config_path,
             seed, out_dir):
    """Run one evaluation arm over the scenario suite and write reports."""
    doc = _load_config(config_path)
    suite = _load_suite(suite_path)
    options = _experiment_options(doc, episodes)
    kind = evaluation.BaselineKind(arm)
    policy = learning.load_policy(policy_path) if policy_path else None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if disable_csv:
        if kind is not evaluation.BaselineKind.PROPOSED:
            raise ConfigError("--disable applies to the Proposed arm only")
        disable = {part.strip() for part in disable_csv.split(",") if part.strip()}
        result = evaluation.ablation(suite, seed, policy, disable, options)
        _write_json(out / "ablation.json", result)
        click.echo(f"ablation ({', '.join(sorted(disable))} disabled) -> "
                   f"{out / 'ablation.json'}")
        return
    report, records, artifacts = evaluation.run_experiment(
        kind, suite, seed, policy, options)
    _write_json(out / "report.json", report.to_dict())
    _write_json(out / "records.json", [r.to_dict() for r in records])
    if artifacts is not None:
        ledger_mod.write_chain(artifacts.chain, str(out / "ledger.bin"))
        verdict = ledger_mod.verify_chain(
            artifacts.chain, artifacts.validators, artifacts.acl)
        if isinstance(verdict, ledger_mod.ChainInvalid):
            _fail(EXIT_VERIFY,
                  f"ledger verification failed: block {verdict.first_bad_index} "
                  f"({verdict.reason})")
    click.echo(f"{arm}: {report.episodes} episodes, "
               f"MTTM {report.mttm_minutes:.2f} min, "
               f"autonomy {report.autonomy_rate:.3f} -> {out / 'report.json'}")


@main.command()
@click.argument("reports", nargs=-1, type=click.Path(exists=True))
@click.option("--out", "out_dir", type=click.Path(), required=True)
@handles_errors
def compare(reports, out_dir):
    """Build per-class F1, MTTM and overhead tables from report files."""
    loaded = []
    for path in reports:
        with open(path, encoding="utf-8") as fh:
            loaded.append(evaluation.MetricsReport.from_dict(json.load(fh)))
    tables = evaluation.compare(loaded)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "tables.json", tables)
    for name, text in evaluation.comparison_csv(tables).items():
        (out / f"{name}.csv").write_text(text, encoding="utf-8")
    click.echo(f"wrote {out / 'tables.json'} and CSV tables for "
               f"{', '.join(sorted(tables))}")


@main.group()
def ledger():
    """Audit-chain operations."""


@ledger.command("verify")
@click.option("--chain", "chain_path", type=click.Path(exists=True), required=True)
@click.option("--validators", "n_validators", type=int, default=4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True,
              help="Seed the validator set was generated from.")
@handles_errors
def ledger_verify(chain_path, n_validators, seed):
    """Re-verify every link, root, signature, quorum and ACL in a chain file."""
    validators, _keys = ledger_mod.generate_validators(n_validators, seed)
    verdict = ledger_mod.verify_chain_file(
        chain_path, validators, ledger_mod.default_acl())
    if isinstance(verdict, ledger_mod.ChainInvalid):
        click.echo(f"INVALID at block {verdict.first_bad_index}: {verdict.reason}")
        sys.exit(EXIT_VERIFY)
    click.echo("VALID")


@ledger.command("show")
@click.option("--chain", "chain_path", type=click.Path(exists=True), required=True)
@handles_errors
def ledger_show(chain_path):
    """Print a one-line summary per block."""
    for block in ledger_mod.read_chain(chain_path):
        click.echo(
            f"block {block.index}: {len(block.entries)} entries, "
            f"{len(block.signatures)} signatures, t={block.timestamp}, "
            f"hash {block.hash().hex()[:16]}"
        )


@main.group(name="protocol")
def protocol_group():
    """Message-layer utilities."""


@protocol_group.command("replay")
@click.option("--frames", "frames_path", type=click.Path(exists=True), required=True,
              help="Newline-delimited request frames.")
@click.option("--scenarios", "scenarios_path", type=click.Path(exists=True),
              default=None)
@click.option("--index", type=int, default=0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
@handles_errors
def protocol_replay(frames_path, scenarios_path, index, seed, out_path):
    """Replay request frames against a fresh simulated run.

    The run is registered under the alias "demo" as well as its own id.
    """
    suite = _load_suite(scenarios_path)
    if index >= len(suite):
        raise ConfigError(f"scenario index {index} out of range (suite has {len(suite)})")
    scenarios = [] if index < 0 else [suite[index]]
    env = PipelineEnv()
    state = env.reset(scenarios, seed)
    connector = protocol.SimulatedConnector()
    connector.register(state.run_id, env, state)
    connector.runs["demo"] = connector.runs[state.run_id]
    frames = Path(frames_path).read_bytes().split(b"\n")
    responses = protocol.replay([f + b"\n" for f in frames if f],
                                connector.registry())
    payload = b"".join(responses)
    if out_path:
        Path(out_path).write_bytes(payload)
    click.echo(payload.decode("utf-8"), nl=False)


@main.command()
@click.option("--out", "out_path", type=click.Path(), required=True)
@handles_errors
def suite(out_path):
    """Write the shipped calibration scenario suite as JSON."""
    doc = [scenario_to_dict(s) for s in evaluation.calibration_suite()]
    _write_json(Path(out_path), doc)
    click.echo(f"wrote {len(doc)} scenarios -> {out_path}")


if __name__ == "__main__":
    main()
