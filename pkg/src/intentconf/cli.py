"""Command-line entry point for the whole pipeline.

Subcommands: generate a configuration from an intent, validate or deploy
an existing one, replay a benchmark case as a chain, run the accuracy
benchmark, measure configuration complexity, and aggregate transcripts
into reports. Every command is non-interactive; exit codes are 0 for
success, 1 for a domain failure (unresolved chain, failed validation or
deployment), and 2 for usage or configuration errors.
"""

from __future__ import annotations

import datetime as _dt
import glob as _glob
import json
import re
import sys
from pathlib import Path

import click
import yaml

from . import chain as chain_mod
from . import harness as harness_mod
from . import prompting, retrieval, simulator, validation
from .appconfig import AppConfig, AppConfigError, build_provider, load_app_config
from .gateway import ProviderError, ProviderUnreachable
from .preprocess import StructuralError, parse_config, serialize_config
from .simulator import (
    GIB,
    BackendUnavailable,
    ClusterModel,
    NodeSpec,
    QuantityError,
    ShellDeployer,
    SimulatedDeployer,
    UnknownSystemProfile,
    load_cluster_model,
    load_system_profiles,
)

DEFAULT_CLUSTER = ClusterModel(nodes=(NodeSpec(cpu_millicores=4000, memory_bytes=16 * GIB),))

_CONFIG_ERRORS = (
    AppConfigError,
    harness_mod.DatasetError,
    prompting.ProfileViolation,
    BackendUnavailable,
    UnknownSystemProfile,
    QuantityError,
    retrieval.InvalidChunking,
    validation.PathSyntaxError,
    ProviderUnreachable,
    ProviderError,
    OSError,
    ValueError,
)


def _fail_usage(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(2)


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "-", text).strip("-") or "chain"


def _load_assertions(path: Path) -> tuple[validation.Assertion, ...]:
    raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    if isinstance(raw, dict) and "assertions" in raw:
        raw = raw["assertions"]
    if not isinstance(raw, list) or not raw:
        raise AppConfigError(f"{path}: assertions file must hold a non-empty list")
    return tuple(harness_mod.assertion_from_mapping(a, str(path)) for a in raw)


def _cluster_model(config: AppConfig, override: str | None) -> ClusterModel:
    path = Path(override) if override else config.cluster_path
    if path is None:
        return DEFAULT_CLUSTER
    return load_cluster_model(path)


def _deployer(config: AppConfig, backend: str | None, real_ok: bool, cluster: str | None):
    chosen = (backend or config.deploy_backend).lower()
    if chosen == "shell":
        if not real_ok:
            raise BackendUnavailable(
                "shell backend targets a real cluster; pass "
                "--i-understand-this-applies-to-a-real-cluster to confirm"
            )
        return ShellDeployer(opt_in=True)
    profiles = load_system_profiles(config.system_profiles_path)
    return SimulatedDeployer(model=_cluster_model(config, cluster), profiles=profiles)


def _build_index(config: AppConfig) -> retrieval.RetrievalIndex | None:
    if config.docs_path is None:
        return None
    docs = retrieval.load_corpus(config.docs_path)
    if not docs:
        return None
    return retrieval.build_index(
        docs,
        chunk_size=config.retrieval.chunk_size,
        overlap=config.retrieval.overlap,
    )


def _shots_for(config: AppConfig, profile: prompting.OptimizationProfile, system: str):
    if not profile.use_few_shot:
        return ()
    if config.shots_path is None:
        raise AppConfigError(
            f"profile {profile.name!r} needs few-shot examples; set paths.shots"
        )
    shots = prompting.load_shot_library(config.shots_path, system)
    if not shots:
        raise AppConfigError(f"no few-shot examples found for system {system!r}")
    return shots


def _echo_attempts(outcome: chain_mod.ChainOutcome) -> None:
    for record in outcome.attempt_history:
        if record.provider_error:
            click.echo(f"attempt {record.attempt}: provider error: {record.provider_error}")
        elif record.feedback is None:
            passed = ", ".join(s.value for s in record.stages_passed)
            click.echo(f"attempt {record.attempt}: passed {passed}")
        else:
            click.echo(f"attempt {record.attempt}: {record.feedback.summary}")


@click.group()
@click.option(
    "--config",
    "-c",
    "config_path",
    type=click.Path(path_type=Path),
    envvar="INTENTCONF_CONFIG",
    default=None,
    help="Runtime config YAML; defaults to built-in mock settings.",
)
@click.pass_context
def main(ctx: click.Context, config_path: Path | None):
    """Generate, validate, deploy, and evaluate cluster configurations."""
    try:
        ctx.obj = load_app_config(config_path)
    except AppConfigError as exc:
        _fail_usage(str(exc))


@main.command()
@click.option("--system", required=True, help="Target system id (e.g. dask, redis, ray).")
@click.option("--intent", required=True, help="Requirement the configuration must satisfy.")
@click.option("--prompt", default="", help="Task wording, when it differs from the intent.")
@click.option("--profile", "profile_name", default=None, help="Optimization profile.")
@click.option("--output", "-o", type=click.Path(path_type=Path), default=None)
@click.option(
    "--assertions",
    "assertions_path",
    type=click.Path(path_type=Path, exists=True),
    default=None,
    help="YAML list of static checks the result must pass.",
)
@click.option("--scenario", default=None, help="Mock scenario id for scripted providers.")
@click.option("--transcript", type=click.Path(path_type=Path), default=None)
@click.option("--max-attempts", type=int, default=None)
@click.option("--no-deploy", is_flag=True, help="Stop after static checks.")
@click.option("--deploy-backend", type=click.Choice(["simulator", "shell"]), default=None)
@click.option("--i-understand-this-applies-to-a-real-cluster", "real_ok", is_flag=True)
@click.option("--cluster", default=None, help="Cluster model YAML (simulator backend).")
@click.pass_obj
def generate(
    config: AppConfig,
    system: str,
    intent: str,
    prompt: str,
    profile_name: str | None,
    output: Path | None,
    assertions_path: Path | None,
    scenario: str | None,
    transcript: Path | None,
    max_attempts: int | None,
    no_deploy: bool,
    deploy_backend: str | None,
    real_ok: bool,
    cluster: str | None,
):
    """Turn an intent into a validated, deployed configuration."""
    try:
        profile = prompting.OptimizationProfile.for_name(
            profile_name or config.profile,
            sampling=config.sampling,
            max_chain_attempts=max_attempts or config.max_chain_attempts,
        )
        scenario = scenario or f"cli:{system}"
        assertions = _load_assertions(assertions_path) if assertions_path else ()
        deployer = None if no_deploy else _deployer(config, deploy_backend, real_ok, cluster)
        workload = None
        if deployer is not None and hasattr(deployer, "benchmark"):
            workload = config.workload_for(system)
        deps = chain_mod.ChainDeps(
            provider=build_provider(config),
            shots=_shots_for(config, profile, system),
            index=_build_index(config) if profile.use_retrieval else None,
            retrieval_k=config.retrieval.k,
            assertions=assertions,
            deployer=deployer,
            workload=workload,
            case_id=scenario,
        )
        prompt = prompt or f"Write the {system} configuration that satisfies the intent."
        request = prompting.GenerationRequest(system=system, intent=intent, prompt=prompt)
        outcome = chain_mod.run_chain(request, profile, deps)
    except _CONFIG_ERRORS as exc:
        _fail_usage(str(exc))
        return

    config.output_dir.mkdir(parents=True, exist_ok=True)
    transcript = transcript or config.output_dir / f"{_slug(scenario)}.jsonl"
    transcript.parent.mkdir(parents=True, exist_ok=True)
    chain_mod.write_transcript(transcript, outcome, case_id=scenario, system=system)
    _echo_attempts(outcome)
    click.echo(f"transcript: {transcript}")
    if not outcome.resolved:
        click.echo("unresolved: attempt budget exhausted", err=True)
        sys.exit(1)
    output = output or config.output_dir / f"{_slug(scenario)}.yaml"
    output.parent.mkdir(parents=True, exist_ok=True)
    output.write_text(serialize_config(outcome.final_config), encoding="utf-8")
    click.echo(f"config: {output}")
    if outcome.benchmark is not None:
        click.echo(
            f"benchmark: {outcome.benchmark.completion_seconds:.3f} s, "
            f"$ {outcome.benchmark.cost_dollars:.7f}"
        )


@main.command()
@click.argument("config_file", type=click.Path(path_type=Path, exists=True))
@click.option(
    "--assertions",
    "assertions_path",
    type=click.Path(path_type=Path, exists=True),
    required=True,
)
@click.option("--case-id", default="", help="Label used in the report output.")
def validate(config_file: Path, assertions_path: Path, case_id: str):
    """Statically check an existing configuration file."""
    try:
        assertions = _load_assertions(assertions_path)
    except _CONFIG_ERRORS as exc:
        _fail_usage(str(exc))
        return
    try:
        document = parse_config(config_file.read_text(encoding="utf-8"))
    except StructuralError as exc:
        click.echo(f"structural error: {exc}")
        sys.exit(1)
    report = validation.evaluate(document, assertions, case_id=case_id or config_file.name)
    for result in report.results:
        mark = "PASS" if result.passed else "FAIL"
        detail = f" ({result.reason})" if result.reason else ""
        click.echo(f"{mark} {result.assertion.kind.value} {result.assertion.path}{detail}")
    click.echo(f"{'passed' if report.passed else 'failed'}: {report.case_id}")
    sys.exit(0 if report.passed else 1)


@main.command()
@click.argument("config_file", type=click.Path(path_type=Path, exists=True))
@click.option("--system", required=True)
@click.option("--deploy-backend", type=click.Choice(["simulator", "shell"]), default=None)
@click.option("--i-understand-this-applies-to-a-real-cluster", "real_ok", is_flag=True)
@click.option("--cluster", default=None)
@click.pass_obj
def deploy(
    config: AppConfig,
    config_file: Path,
    system: str,
    deploy_backend: str | None,
    real_ok: bool,
    cluster: str | None,
):
    """Deploy an existing configuration file to the selected backend."""
    try:
        document = parse_config(config_file.read_text(encoding="utf-8"))
    except StructuralError as exc:
        click.echo(f"structural error: {exc}", err=True)
        sys.exit(1)
    try:
        deployer = _deployer(config, deploy_backend, real_ok, cluster)
        outcome = deployer.deploy(document, system)
    except _CONFIG_ERRORS as exc:
        _fail_usage(str(exc))
        return
    if outcome.logs:
        click.echo(outcome.logs)
    if outcome.success:
        click.echo("deployed")
    else:
        click.echo(f"deployment failed: {outcome.failure_reason}", err=True)
        sys.exit(1)


@main.command("chain")
@click.option("--case", "case_id", required=True, help="Benchmark case id to replay.")
@click.option("--dataset", type=click.Path(path_type=Path), default=None)
@click.option("--profile", "profile_name", default=None)
@click.option("--no-deploy", is_flag=True)
@click.option("--transcript", type=click.Path(path_type=Path), default=None)
@click.pass_obj
def chain_cmd(
    config: AppConfig,
    case_id: str,
    dataset: Path | None,
    profile_name: str | None,
    no_deploy: bool,
    transcript: Path | None,
):
    """Replay one benchmark case through the full loop."""
    try:
        dataset = dataset or config.dataset_path
        if dataset is None:
            raise AppConfigError("no dataset configured; pass --dataset or set paths.dataset")
        cases = {case.id: case for case in harness_mod.load_dataset(dataset)}
        if case_id not in cases:
            raise AppConfigError(f"case {case_id!r} not found under {dataset}")
        case = cases[case_id]
        profile = prompting.OptimizationProfile.for_name(
            profile_name or config.profile,
            sampling=config.sampling,
            max_chain_attempts=config.max_chain_attempts,
        )
        provider = build_provider(config, extra_script=harness_mod.load_mock_scripts(dataset))
        deployer = None if no_deploy else _deployer(config, None, False, None)
        deps = chain_mod.ChainDeps(
            provider=provider,
            shots=_shots_for(config, profile, case.system),
            index=_build_index(config) if profile.use_retrieval else None,
            retrieval_k=config.retrieval.k,
            assertions=case.assertions,
            deployer=deployer,
            workload=config.workload_for(case.system) if deployer is not None else None,
            case_id=case.id,
        )
        request = prompting.GenerationRequest(
            system=case.system, intent=case.intent, prompt=case.prompt
        )
        outcome = chain_mod.run_chain(request, profile, deps)
    except _CONFIG_ERRORS as exc:
        _fail_usage(str(exc))
        return
    config.output_dir.mkdir(parents=True, exist_ok=True)
    transcript = transcript or config.output_dir / f"{_slug(case.id)}.jsonl"
    transcript.parent.mkdir(parents=True, exist_ok=True)
    chain_mod.write_transcript(transcript, outcome, case_id=case.id, system=case.system)
    _echo_attempts(outcome)
    click.echo(f"transcript: {transcript}")
    sys.exit(0 if outcome.resolved else 1)


@main.command()
@click.option("--dataset", type=click.Path(path_type=Path), default=None)
@click.option(
    "--profiles",
    default="lads",
    help="Comma-separated profile names to benchmark (columns of the table).",
)
@click.option("--workers", type=int, default=1)
@click.pass_obj
def bench(config: AppConfig, dataset: Path | None, profiles: str, workers: int):
    """Run the static-validation benchmark and emit the accuracy table."""
    try:
        dataset = dataset or config.dataset_path
        if dataset is None:
            raise AppConfigError("no dataset configured; pass --dataset or set paths.dataset")
        cases = harness_mod.load_dataset(dataset)
        if not cases:
            raise harness_mod.DatasetError(f"no cases found under {dataset}")
        profile_list = [
            prompting.OptimizationProfile.for_name(
                name.strip(),
                sampling=config.sampling,
                max_chain_attempts=config.max_chain_attempts,
            )
            for name in profiles.split(",")
            if name.strip()
        ]
        if not profile_list:
            raise AppConfigError("no profiles requested")
        provider = build_provider(config, extra_script=harness_mod.load_mock_scripts(dataset))
        shots_by_system = {}
        systems = sorted({case.system for case in cases})
        if any(p.use_few_shot for p in profile_list):
            if config.shots_path is None:
                raise AppConfigError("requested profiles need few-shot examples; set paths.shots")
            for system in systems:
                shots = prompting.load_shot_library(config.shots_path, system)
                if not shots:
                    raise AppConfigError(f"no few-shot examples found for system {system!r}")
                shots_by_system[system] = shots
        deps = harness_mod.HarnessDeps(
            provider=provider,
            shots_by_system=shots_by_system,
            index=_build_index(config) if any(p.use_retrieval for p in profile_list) else None,
            retrieval_k=config.retrieval.k,
        )
        table = harness_mod.run_static_eval(cases, profile_list, deps, workers=workers)
    except _CONFIG_ERRORS as exc:
        _fail_usage(str(exc))
        return
    rendered = harness_mod.render_accuracy_table(table)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    (config.output_dir / "accuracy.txt").write_text(rendered, encoding="utf-8")
    meta = {"generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat()}
    (config.output_dir / "accuracy.json").write_text(
        harness_mod.accuracy_table_to_json(table, meta=meta), encoding="utf-8"
    )
    click.echo(rendered, nl=False)
    click.echo(f"reports: {config.output_dir / 'accuracy.json'}")


@main.command()
@click.argument("patterns", nargs=-1, required=True)
def complexity(patterns: tuple[str, ...]):
    """Summarize structural complexity of configuration files."""
    paths: list[Path] = []
    for pattern in patterns:
        paths.extend(Path(p) for p in sorted(_glob.glob(pattern, recursive=True)))
    if not paths:
        _fail_usage(f"no files match {', '.join(patterns)}")
    documents = []
    for path in paths:
        try:
            documents.append(parse_config(path.read_text(encoding="utf-8")))
        except (OSError, StructuralError) as exc:
            _fail_usage(f"{path}: {exc}")
    summary = validation.aggregate_complexity(documents)
    click.echo(f"Configs    {summary.count}")
    click.echo(f"Max Keys   {summary.max_key_count}")
    click.echo(f"Max Depth  {summary.max_depth}")
    click.echo(f"Avg Keys   {summary.mean_key_count:.2f} ± {summary.std_key_count:.2f}")
    click.echo(f"Avg Depth  {summary.mean_depth:.2f} ± {summary.std_depth:.2f}")


@main.command()
@click.option("--transcripts", required=True, help="Glob of chain transcript JSONL files.")
@click.option("--rate", type=float, default=None, help="Dollars per token.")
@click.pass_obj
def report(config: AppConfig, transcripts: str, rate: float | None):
    """Aggregate transcripts: resolution curve, cost rows, latency stats."""
    files = [Path(p) for p in sorted(_glob.glob(transcripts, recursive=True))]
    if not files:
        _fail_usage(f"no transcripts match {transcripts!r}")
    rate = rate if rate is not None else config.rate_per_token
    if rate <= 0:
        _fail_usage(f"rate must be > 0, got {rate}")
    stats = []
    for file in files:
        try:
            entries = chain_mod.read_transcript(file)
        except (OSError, json.JSONDecodeError) as exc:
            _fail_usage(f"{file}: {exc}")
            return
        if entries:
            stats.append(harness_mod.transcript_stats(entries))
    if not stats:
        _fail_usage("matched transcripts are all empty")
    curve = harness_mod.resolution_curve(stats)
    records = [
        harness_mod.CostRecord(
            case_id=s.case_id,
            system=s.system or "unknown",
            attempts=s.attempts_used,
            prompt_tokens=s.prompt_tokens,
            completion_tokens=s.completion_tokens,
            dollars=(s.prompt_tokens + s.completion_tokens) * rate,
            latency_seconds=s.latencies,
        )
        for s in stats
    ]
    click.echo(f"chains: {len(stats)}")
    for k in sorted(curve):
        click.echo(f"resolved by attempt {k}: {curve[k]:.1f}%")
    click.echo("")
    click.echo("max completion tokens and cost per configuration (completion tokens priced):")
    for row in harness_mod.cost_report(records, rate):
        click.echo(f"  {row.system}  {row.max_completion_tokens}  $ {row.cost_display}")
    latency_rows = harness_mod.latency_report(records)
    if any(row.calls for row in latency_rows):
        click.echo("")
        click.echo("latency per attempt (mean ± std, seconds):")
        for row in latency_rows:
            click.echo(
                f"  {row.system}  {row.mean_seconds:.3f} ± {row.std_seconds:.3f} "
                f"({row.calls} calls)"
            )
    config.output_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "chains": len(stats),
        "resolution_curve": {str(k): v for k, v in curve.items()},
        "cost": [
            {
                "system": row.system,
                "max_completion_tokens": row.max_completion_tokens,
                "cost_dollars": row.cost_display,
            }
            for row in harness_mod.cost_report(records, rate)
        ],
        "latency": [
            {
                "system": row.system,
                "mean_seconds": row.mean_seconds,
                "std_seconds": row.std_seconds,
                "calls": row.calls,
            }
            for row in latency_rows
        ],
        "meta": {"generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat()},
    }
    out = config.output_dir / "report.json"
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    click.echo(f"report: {out}")


if __name__ == "__main__":
    main()
