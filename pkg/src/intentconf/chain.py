"""Generate, check, deploy, and retry: the feedback loop around the model.

Each attempt walks an ordered set of gates. When a gate fails, the failure
is condensed into a short stage-tagged summary plus filtered log lines,
and the next attempt gets the original prompt with that feedback appended.
The loop stops at the first attempt that passes every enabled gate or when
the attempt budget runs out.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .gateway import Provider, ProviderError, ProviderUnreachable, complete
from .preprocess import ConfigDocument, StructuralError, preprocess_reply
from .prompting import (
    GenerationRequest,
    OptimizationProfile,
    FewShotExample,
    VerdictUnparseable,
    build_prompt,
    verify_alignment,
)
from .retrieval import DEFAULT_TOP_K, Chunk, RetrievalIndex, retrieve
from .validation import Assertion, evaluate

SEVERITY_MARKERS = (
    "error",
    "warn",
    "fatal",
    "exception",
    "failed",
    "denied",
    "insufficient",
)

LOG_LINE_CAP = 50
_HEAD = 25
_TAIL = 25


class Stage(enum.Enum):
    """Gates in pipeline order; an attempt reaches a gate only after all earlier ones pass."""

    GENERATION = "Generation"
    STRUCTURAL = "Structural"
    STATIC_VALIDATION = "StaticValidation"
    COT_VERIFICATION = "CoTVerification"
    DEPLOYMENT = "Deployment"
    RUNTIME_BENCHMARK = "RuntimeBenchmark"

    @property
    def order(self) -> int:
        return _STAGE_ORDER[self]


_STAGE_ORDER = {stage: i for i, stage in enumerate(Stage)}


def filter_logs(raw: str) -> list[str]:
    """Keep only failure-relevant lines from raw output.

    Lines survive when they contain a severity marker (case-insensitive);
    consecutive duplicates collapse to one; above 50 lines the middle is
    elided, keeping the first and last 25.
    """
    kept: list[str] = []
    for line in raw.splitlines():
        lowered = line.lower()
        if not any(marker in lowered for marker in SEVERITY_MARKERS):
            continue
        if kept and kept[-1] == line:
            continue
        kept.append(line)
    if len(kept) > LOG_LINE_CAP:
        omitted = len(kept) - _HEAD - _TAIL
        kept = kept[:_HEAD] + [f"... {omitted} lines elided ..."] + kept[-_TAIL:]
    return kept


@dataclass(frozen=True)
class FeedbackContext:
    """What the next attempt is told about this attempt's failure."""

    failed_stage: Stage
    filtered_lines: tuple[str, ...]
    summary: str

    def render(self) -> str:
        if not self.filtered_lines:
            return self.summary
        return self.summary + "\n" + "\n".join(self.filtered_lines)


def make_feedback(
    failed_stage: Stage, prior_stage: Stage | None, reason: str, raw_logs: str
) -> FeedbackContext:
    reason = " ".join(reason.split()) or "unspecified failure"
    if prior_stage is None:
        summary = f"{failed_stage.value} failed due to {reason}"
    else:
        summary = f"{failed_stage.value} failed after {prior_stage.value} succeeded due to {reason}"
    return FeedbackContext(
        failed_stage=failed_stage,
        filtered_lines=tuple(filter_logs(raw_logs)),
        summary=summary,
    )


@dataclass(frozen=True)
class AttemptRecord:
    """One attempt: how far it got, what it cost, what it fed forward."""

    attempt: int
    stages_passed: tuple[Stage, ...]
    reached: Stage
    feedback: FeedbackContext | None
    prompt_tokens: int
    completion_tokens: int
    latency_seconds: float
    user_message: str
    response_text: str = ""
    provider_error: str = ""

    @property
    def failed(self) -> bool:
        return self.feedback is not None or bool(self.provider_error)


@dataclass(frozen=True)
class ChainOutcome:
    resolved: bool
    attempts_used: int
    max_attempts: int
    final_config: ConfigDocument | None
    benchmark: object | None
    attempt_history: tuple[AttemptRecord, ...]
    total_prompt_tokens: int
    total_completion_tokens: int
    total_latency_seconds: float

    @property
    def total_tokens(self) -> int:
        return self.total_prompt_tokens + self.total_completion_tokens


@dataclass
class ChainDeps:
    """Everything run_chain consumes besides the request and profile.

    deployer is duck-typed: it needs deploy(config, system) and, to enable
    the runtime benchmark gate, benchmark(resources, workload).
    """

    provider: Provider
    shots: Sequence[FewShotExample] = ()
    index: RetrievalIndex | None = None
    retrieval_k: int = DEFAULT_TOP_K
    assertions: Sequence[Assertion] = ()
    deployer: object | None = None
    workload: object | None = None
    case_id: str = ""


@dataclass
class _AttemptState:
    stages_passed: list[Stage] = field(default_factory=list)
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency: float = 0.0

    def charge(self, raw) -> None:
        self.prompt_tokens += raw.prompt_tokens
        self.completion_tokens += raw.completion_tokens
        self.latency += raw.latency_seconds

    @property
    def prior(self) -> Stage | None:
        return self.stages_passed[-1] if self.stages_passed else None


def run_chain(
    request: GenerationRequest,
    profile: OptimizationProfile,
    deps: ChainDeps,
) -> ChainOutcome:
    """Run the generate/check/repair loop up to the profile's attempt budget.

    Gates are enabled by the inputs at hand: static validation when
    assertions exist, alignment verification when the profile reasons
    step-by-step, deployment when a deployer is wired in, and the runtime
    benchmark when that deployer can also benchmark a placed workload.
    """
    history: list[AttemptRecord] = []
    feedback: FeedbackContext | None = None
    final_config: ConfigDocument | None = None
    benchmark_result = None
    resolved = False

    context_chunks: tuple[Chunk, ...] = ()
    if profile.use_retrieval and deps.index is not None:
        context_chunks = tuple(
            retrieve(deps.index, f"{request.system} {request.intent}", k=deps.retrieval_k)
        )

    for attempt in range(1, profile.max_chain_attempts + 1):
        payload = build_prompt(
            profile,
            request,
            shots=deps.shots,
            context_chunks=context_chunks,
            feedback=feedback.render() if feedback else "",
        )
        payload = replace(payload, metadata={"case": deps.case_id, "attempt": str(attempt)})
        state = _AttemptState()
        try:
            raw = complete(payload, profile.effective_sampling, deps.provider)
        except (ProviderUnreachable, ProviderError) as exc:
            history.append(
                AttemptRecord(
                    attempt=attempt,
                    stages_passed=(),
                    reached=Stage.GENERATION,
                    feedback=None,
                    prompt_tokens=0,
                    completion_tokens=0,
                    latency_seconds=0.0,
                    user_message=payload.user_message,
                    provider_error=str(exc),
                )
            )
            break
        state.charge(raw)
        state.stages_passed.append(Stage.GENERATION)

        attempt_feedback: FeedbackContext | None = None
        config: ConfigDocument | None = None

        # Structural gate: the reply must reduce to one well-formed mapping.
        try:
            config = preprocess_reply(raw.text)
            state.stages_passed.append(Stage.STRUCTURAL)
        except StructuralError as exc:
            attempt_feedback = make_feedback(
                Stage.STRUCTURAL, state.prior, str(exc), f"Error: {exc}"
            )

        # Static validation gate, only when the case declares assertions.
        if attempt_feedback is None and deps.assertions:
            report = evaluate(config, deps.assertions, case_id=deps.case_id)
            if report.passed:
                state.stages_passed.append(Stage.STATIC_VALIDATION)
            else:
                failures = report.failures
                reason = (
                    f"{len(failures)} of {len(report.results)} assertions failed; "
                    f"first: path {failures[0].assertion.path!r} {failures[0].reason}"
                )
                logs = "\n".join(
                    f"Error: assertion failed: path {f.assertion.path!r} {f.reason}"
                    for f in failures
                )
                attempt_feedback = make_feedback(
                    Stage.STATIC_VALIDATION, state.prior, reason, logs
                )

        # Alignment gate: the model re-reads its own output against the intent.
        if attempt_feedback is None and profile.use_cot:
            try:
                verdict = verify_alignment(
                    config,
                    request,
                    deps.provider,
                    profile.sampling,
                    metadata={"case": f"{deps.case_id}#verify", "attempt": str(attempt)},
                )
                state.charge(verdict.raw)
                if verdict.aligned:
                    state.stages_passed.append(Stage.COT_VERIFICATION)
                else:
                    reason = verdict.reason or "configuration does not reflect the intent"
                    attempt_feedback = make_feedback(
                        Stage.COT_VERIFICATION,
                        state.prior,
                        reason,
                        f"Error: intent misalignment: {reason}",
                    )
            except VerdictUnparseable as exc:
                state.charge(exc.raw)
                attempt_feedback = make_feedback(
                    Stage.COT_VERIFICATION,
                    state.prior,
                    "alignment verdict unparseable",
                    f"Error: alignment verdict unparseable: {exc}",
                )

        # Deployment gate.
        deploy_outcome = None
        if attempt_feedback is None and deps.deployer is not None:
            deploy_outcome = deps.deployer.deploy(config, request.system)
            if deploy_outcome.success:
                state.stages_passed.append(Stage.DEPLOYMENT)
            else:
                attempt_feedback = make_feedback(
                    Stage.DEPLOYMENT,
                    state.prior,
                    deploy_outcome.failure_reason or "deployment failed",
                    deploy_outcome.logs,
                )

        # Runtime benchmark gate, when the deployer can price the workload.
        if (
            attempt_feedback is None
            and deploy_outcome is not None
            and deps.workload is not None
            and hasattr(deps.deployer, "benchmark")
        ):
            try:
                benchmark_result = deps.deployer.benchmark(
                    deploy_outcome.resources, deps.workload
                )
                state.stages_passed.append(Stage.RUNTIME_BENCHMARK)
            except ValueError as exc:
                attempt_feedback = make_feedback(
                    Stage.RUNTIME_BENCHMARK, state.prior, str(exc), f"Error: {exc}"
                )

        reached = (
            attempt_feedback.failed_stage if attempt_feedback else state.stages_passed[-1]
        )
        history.append(
            AttemptRecord(
                attempt=attempt,
                stages_passed=tuple(state.stages_passed),
                reached=reached,
                feedback=attempt_feedback,
                prompt_tokens=state.prompt_tokens,
                completion_tokens=state.completion_tokens,
                latency_seconds=state.latency,
                user_message=payload.user_message,
                response_text=raw.text,
            )
        )
        if attempt_feedback is None:
            resolved = True
            final_config = config
            break
        feedback = attempt_feedback

    return ChainOutcome(
        resolved=resolved,
        attempts_used=history[-1].attempt if history else 0,
        max_attempts=profile.max_chain_attempts,
        final_config=final_config,
        benchmark=benchmark_result if resolved else None,
        attempt_history=tuple(history),
        total_prompt_tokens=sum(r.prompt_tokens for r in history),
        total_completion_tokens=sum(r.completion_tokens for r in history),
        total_latency_seconds=sum(r.latency_seconds for r in history),
    )


def write_transcript(
    path: Path | str, outcome: ChainOutcome, case_id: str = "", system: str = ""
) -> None:
    """Persist one chain as JSON lines, one attempt per line.

    Content is fully determined by the chain inputs: no timestamps, so
    identical runs produce identical bytes.
    """
    lines = []
    for record in outcome.attempt_history:
        entry = {
            "case": case_id,
            "system": system,
            "attempt": record.attempt,
            "max_attempts": outcome.max_attempts,
            "stages_passed": [s.value for s in record.stages_passed],
            "reached": record.reached.value,
            "failed_stage": record.feedback.failed_stage.value if record.feedback else None,
            "summary": record.feedback.summary if record.feedback else None,
            "filtered_lines": list(record.feedback.filtered_lines) if record.feedback else [],
            "prompt_tokens": record.prompt_tokens,
            "completion_tokens": record.completion_tokens,
            "latency_seconds": record.latency_seconds,
            "provider_error": record.provider_error or None,
            "prompt": record.user_message,
            "response": record.response_text,
        }
        lines.append(json.dumps(entry, ensure_ascii=True, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_transcript(path: Path | str) -> list[dict]:
    """Parse a transcript back into attempt dicts, in attempt order."""
    entries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            entries.append(json.loads(line))
    entries.sort(key=lambda e: e.get("attempt", 0))
    return entries
