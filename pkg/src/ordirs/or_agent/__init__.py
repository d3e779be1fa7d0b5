"""Workflow-analysis agent layered on the segmentation engine."""

from ordirs.or_agent.agent import (
    AnalysisResult,
    SubQuery,
    analyse,
    plan_analysis,
    run_all,
    run_subquery,
    series_from_results,
)
from ordirs.or_agent.program import AnalysisProgram, eval_analysis_program, parse_program, validate_program
from ordirs.or_agent.report import AgentReport, compose_report, templated_answer

__all__ = [
    "AgentReport",
    "AnalysisProgram",
    "AnalysisResult",
    "SubQuery",
    "analyse",
    "compose_report",
    "eval_analysis_program",
    "parse_program",
    "plan_analysis",
    "run_agent",
    "run_all",
    "run_subquery",
    "series_from_results",
    "templated_answer",
    "validate_program",
]


def run_agent(query, frames, llm, *, fps: float = 1.0, jobs: int = 1, engine=None) -> AgentReport:
    """Plan, segment, analyse and compose in one call."""
    from ordirs.rs_engine import segment_frames

    transcripts: list = []
    subs = plan_analysis(query, llm, transcripts=transcripts)
    results = run_all(subs, frames, llm, engine or segment_frames, fps=fps, jobs=jobs)
    report = compose_report(query, subs, results, llm)
    report.transcripts = transcripts + report.transcripts
    return report
