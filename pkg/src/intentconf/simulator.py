"""Deployment backends: a desk-scale cluster simulator and a shell bridge.

The simulator places replicas onto modeled nodes first-fit, reports the
binding resource on failure, and prices a benchmark run with a closed-form
speedup model: a workload is a serial part plus a perfectly parallel part,
so completion = t_s + t_p / R for R total cores, and cost grows with the
core- and memory-hours held. The shell backend hands the canonical YAML to
a real cluster CLI and is gated behind an explicit opt-in.
"""

from __future__ import annotations

import os
import re
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from importlib import resources as importlib_resources
from pathlib import Path

import yaml

from .chain import filter_logs
from .preprocess import ConfigDocument, serialize_config
from .validation import resolve_path

DEFAULT_CPU_RATE = 0.04  # dollars per core-hour
DEFAULT_MEM_RATE = 0.004  # dollars per GiB-hour

GIB = 2**30

_NUMBER_RE = re.compile(r"^(\d+(?:\.\d+)?)([A-Za-z]*)$")

_MEMORY_SUFFIXES = {"Ki": 2**10, "Mi": 2**20, "Gi": 2**30}


class QuantityError(ValueError):
    """A resource quantity string does not follow the grammar for its dimension."""


class UnknownSystemProfile(KeyError):
    """No resource-path profile is registered for the requested system."""


class InvalidWorkload(ValueError):
    """The spec yields zero total cores; the speedup model is undefined."""


class BackendUnavailable(RuntimeError):
    """The real-cluster backend is not opted in or its CLI is missing."""


def parse_quantity(text, kind: str) -> int:
    """Parse a resource quantity for the given dimension.

    cpu quantities come back in millicores ("250m" -> 250, "2" -> 2000);
    memory quantities in bytes, with binary suffixes Ki/Mi/Gi ("1Gi" ->
    1073741824). Suffixes from the other dimension, negatives, and
    anything else off-grammar raise QuantityError.
    """
    if kind not in ("cpu", "memory"):
        raise ValueError(f"kind must be 'cpu' or 'memory', got {kind!r}")
    if isinstance(text, bool):
        raise QuantityError(f"{kind} quantity must be a number or string, got {text!r}")
    if isinstance(text, (int, float)):
        if text < 0:
            raise QuantityError(f"{kind} quantity must be non-negative, got {text!r}")
        value, suffix = float(text), ""
    else:
        match = _NUMBER_RE.match(str(text).strip())
        if not match:
            raise QuantityError(f"malformed {kind} quantity {text!r}")
        value, suffix = float(match.group(1)), match.group(2)
    if kind == "cpu":
        if suffix == "m":
            return round(value)
        if suffix == "":
            return round(value * 1000)
        raise QuantityError(f"suffix {suffix!r} is not valid for cpu quantities: {text!r}")
    if suffix == "":
        return round(value)
    if suffix in _MEMORY_SUFFIXES:
        return round(value * _MEMORY_SUFFIXES[suffix])
    raise QuantityError(f"suffix {suffix!r} is not valid for memory quantities: {text!r}")


@dataclass(frozen=True)
class ResourceSpec:
    """What one deployment asks for: per-replica shape times replica count."""

    cpu_millicores: int
    memory_bytes: int
    replicas: int

    def __post_init__(self):
        if self.cpu_millicores < 0 or self.memory_bytes < 0:
            raise ValueError("resource demands must be >= 0")
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")

    @property
    def total_cores(self) -> float:
        return self.replicas * self.cpu_millicores / 1000.0


@dataclass(frozen=True)
class NodeSpec:
    cpu_millicores: int
    memory_bytes: int

    def __post_init__(self):
        if self.cpu_millicores <= 0 or self.memory_bytes <= 0:
            raise ValueError("node capacities must be > 0")


@dataclass(frozen=True)
class ClusterModel:
    nodes: tuple[NodeSpec, ...]
    cpu_rate: float = DEFAULT_CPU_RATE
    mem_rate: float = DEFAULT_MEM_RATE

    def __post_init__(self):
        if not self.nodes:
            raise ValueError("cluster model needs at least one node")
        if self.cpu_rate < 0 or self.mem_rate < 0:
            raise ValueError("rates must be >= 0")


@dataclass(frozen=True)
class Workload:
    """Amdahl-style job: a serial portion plus a perfectly parallel portion."""

    serial_seconds: float
    parallel_core_seconds: float

    def __post_init__(self):
        if self.serial_seconds <= 0:
            raise ValueError("serial_seconds must be > 0")
        if self.parallel_core_seconds < 0:
            raise ValueError("parallel_core_seconds must be >= 0")


@dataclass(frozen=True)
class DeploymentOutcome:
    success: bool
    failure_reason: str = ""
    placed: tuple[tuple[int, int], ...] = ()  # (replica index, node index)
    logs: str = ""
    resources: ResourceSpec | None = None


@dataclass(frozen=True)
class BenchmarkResultDyn:
    completion_seconds: float
    cost_dollars: float
    resources: ResourceSpec


@dataclass(frozen=True)
class SystemProfile:
    """Where replicas/cpu/memory live inside one system's configuration."""

    system: str
    replicas_path: str
    cpu_path: str
    memory_path: str
    default_replicas: int = 1
    default_cpu: str = "500m"
    default_memory: str = "512Mi"


def load_system_profiles(path: Path | str | None = None) -> dict[str, SystemProfile]:
    """Profiles from a YAML file; the bundled registry when no path is given."""
    if path is None:
        text = (
            importlib_resources.files("intentconf").joinpath("data/system_profiles.yaml")
        ).read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ValueError("system profile file must be a YAML mapping")
    profiles = {}
    for system, spec in data.items():
        if not isinstance(spec, dict):
            raise ValueError(f"profile for {system!r} must be a mapping")
        defaults = spec.get("defaults") or {}
        profiles[str(system)] = SystemProfile(
            system=str(system),
            replicas_path=str(spec["replicas_path"]),
            cpu_path=str(spec["cpu_path"]),
            memory_path=str(spec["memory_path"]),
            default_replicas=int(defaults.get("replicas", 1)),
            default_cpu=str(defaults.get("cpu", "500m")),
            default_memory=str(defaults.get("memory", "512Mi")),
        )
    return profiles


@dataclass(frozen=True)
class ResourceExtraction:
    spec: ResourceSpec
    notes: tuple[str, ...] = ()


def _first_match(root: dict, path: str):
    matches = resolve_path(root, path)
    return matches[0] if matches else None


def extract_resources(
    config: ConfigDocument | dict,
    system: str,
    profiles: dict[str, SystemProfile] | None = None,
) -> ResourceExtraction:
    """Read (cpu, memory, replicas) out of a config via the system's path profile.

    Missing paths fall back to the profile defaults; each fallback is noted
    so deployment logs show what was assumed.
    """
    if profiles is None:
        profiles = load_system_profiles()
    profile = profiles.get(system)
    if profile is None:
        raise UnknownSystemProfile(f"no resource profile for system {system!r}")
    root = config.root if isinstance(config, ConfigDocument) else config
    notes = []

    replicas_raw = _first_match(root, profile.replicas_path)
    if replicas_raw is None:
        replicas_raw = profile.default_replicas
        notes.append(f"replicas not set; default {profile.default_replicas} applied")
    try:
        replicas = int(replicas_raw)
    except (TypeError, ValueError):
        raise QuantityError(f"replicas value {replicas_raw!r} is not an integer")
    if isinstance(replicas_raw, bool) or replicas < 1:
        raise QuantityError(f"replicas value {replicas_raw!r} must be an integer >= 1")

    cpu_raw = _first_match(root, profile.cpu_path)
    if cpu_raw is None:
        cpu_raw = profile.default_cpu
        notes.append(f"cpu not set; default {profile.default_cpu} applied")
    memory_raw = _first_match(root, profile.memory_path)
    if memory_raw is None:
        memory_raw = profile.default_memory
        notes.append(f"memory not set; default {profile.default_memory} applied")

    spec = ResourceSpec(
        cpu_millicores=parse_quantity(cpu_raw, "cpu"),
        memory_bytes=parse_quantity(memory_raw, "memory"),
        replicas=replicas,
    )
    return ResourceExtraction(spec=spec, notes=tuple(notes))


def apply(model: ClusterModel, spec: ResourceSpec) -> DeploymentOutcome:
    """Place each replica on the first node with room, tracking remaining capacity.

    Replicas are identical, so first-fit over nodes in index order is the
    whole heuristic. On failure the reason names memory only when memory is
    the first constraint violated on every node; otherwise cpu.
    """
    remaining = [[node.cpu_millicores, node.memory_bytes] for node in model.nodes]
    placed: list[tuple[int, int]] = []
    logs: list[str] = []
    for replica in range(spec.replicas):
        target = None
        first_violations = []
        for node_index, (cpu_left, mem_left) in enumerate(remaining):
            if spec.cpu_millicores > cpu_left:
                first_violations.append("cpu")
                continue
            if spec.memory_bytes > mem_left:
                first_violations.append("memory")
                continue
            target = node_index
            break
        if target is None:
            reason = (
                "insufficient memory"
                if first_violations and all(v == "memory" for v in first_violations)
                else "insufficient cpu"
            )
            logs.append(
                f"Error: replica {replica} unplaceable: {reason} "
                f"(demand cpu={spec.cpu_millicores}m memory={spec.memory_bytes}B)"
            )
            return DeploymentOutcome(
                success=False,
                failure_reason=reason,
                placed=tuple(placed),
                logs="\n".join(logs),
                resources=spec,
            )
        remaining[target][0] -= spec.cpu_millicores
        remaining[target][1] -= spec.memory_bytes
        placed.append((replica, target))
        logs.append(
            f"placed replica {replica} on node {target} "
            f"(remaining cpu={remaining[target][0]}m memory={remaining[target][1]}B)"
        )
    return DeploymentOutcome(
        success=True,
        placed=tuple(placed),
        logs="\n".join(logs),
        resources=spec,
    )


def run_workload(model: ClusterModel, spec: ResourceSpec, workload: Workload) -> BenchmarkResultDyn:
    """Closed-form completion time and cost for a placed deployment.

    With R = replicas x cores per replica: completion = t_s + t_p / R, and
    cost charges cpu_rate per core-hour on R cores plus mem_rate per
    GiB-hour on the memory held by every replica for the whole run.
    """
    total_cores = spec.total_cores
    if total_cores == 0:
        raise InvalidWorkload("spec allocates zero cores; completion time is undefined")
    completion = workload.serial_seconds + workload.parallel_core_seconds / total_cores
    hourly = model.cpu_rate * total_cores + model.mem_rate * spec.replicas * (
        spec.memory_bytes / GIB
    )
    cost = (completion / 3600.0) * hourly
    return BenchmarkResultDyn(completion_seconds=completion, cost_dollars=cost, resources=spec)


def load_cluster_model(path: Path | str) -> ClusterModel:
    """Cluster model from YAML: a nodes list plus optional pricing rates."""
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict) or not isinstance(data.get("nodes"), list):
        raise ValueError(f"cluster model {path} must be a mapping with a nodes list")
    nodes = tuple(
        NodeSpec(
            cpu_millicores=parse_quantity(node.get("cpu", 0), "cpu"),
            memory_bytes=parse_quantity(node.get("memory", 0), "memory"),
        )
        for node in data["nodes"]
    )
    return ClusterModel(
        nodes=nodes,
        cpu_rate=float(data.get("cpu_rate", DEFAULT_CPU_RATE)),
        mem_rate=float(data.get("mem_rate", DEFAULT_MEM_RATE)),
    )


def shell_deploy(
    config: ConfigDocument,
    kube_context: str | None = None,
    *,
    opt_in: bool = False,
    cli: str = "kubectl",
) -> DeploymentOutcome:
    """Apply the canonical YAML through a real cluster CLI.

    Refuses to run unless explicitly opted in and the CLI is on PATH; this
    path mutates shared infrastructure.
    """
    if not opt_in:
        raise BackendUnavailable(
            "real-cluster deployment requires the explicit opt-in flag"
        )
    if shutil.which(cli) is None:
        raise BackendUnavailable(f"cluster CLI {cli!r} not found on PATH")
    with tempfile.NamedTemporaryFile("w", suffix=".yaml", delete=False) as handle:
        handle.write(serialize_config(config))
        manifest = handle.name
    command = [cli, "apply", "-f", manifest]
    if kube_context:
        command += ["--context", kube_context]
    try:
        proc = subprocess.run(command, capture_output=True, text=True)
    finally:
        os.unlink(manifest)
    logs = proc.stdout + ("\n" + proc.stderr if proc.stderr else "")
    if proc.returncode == 0:
        return DeploymentOutcome(success=True, logs=logs)
    stderr_lines = filter_logs(proc.stderr)
    reason = stderr_lines[0] if stderr_lines else f"{cli} exited with code {proc.returncode}"
    return DeploymentOutcome(success=False, failure_reason=reason, logs=logs)


@dataclass(frozen=True)
class SimulatedDeployer:
    """Deployment backend over the in-memory cluster model."""

    model: ClusterModel
    profiles: dict[str, SystemProfile] = field(default_factory=load_system_profiles)

    def deploy(self, config: ConfigDocument, system: str) -> DeploymentOutcome:
        try:
            extraction = extract_resources(config, system, self.profiles)
        except QuantityError as exc:
            return DeploymentOutcome(
                success=False,
                failure_reason=str(exc),
                logs=f"Error: {exc}",
            )
        outcome = apply(self.model, extraction.spec)
        if extraction.notes:
            notes = "\n".join(f"note: {note}" for note in extraction.notes)
            outcome = DeploymentOutcome(
                success=outcome.success,
                failure_reason=outcome.failure_reason,
                placed=outcome.placed,
                logs=f"{notes}\n{outcome.logs}" if outcome.logs else notes,
                resources=outcome.resources,
            )
        return outcome

    def benchmark(self, spec: ResourceSpec, workload: Workload) -> BenchmarkResultDyn:
        return run_workload(self.model, spec, workload)


@dataclass(frozen=True)
class ShellDeployer:
    """Deployment backend that shells out to a real cluster CLI."""

    kube_context: str | None = None
    opt_in: bool = False
    cli: str = "kubectl"

    def deploy(self, config: ConfigDocument, system: str) -> DeploymentOutcome:
        return shell_deploy(
            config, self.kube_context, opt_in=self.opt_in, cli=self.cli
        )
