"""Synthetic operating-room scenarios with exact ground truth and scripted backends."""

from ordirs.synth_world.backend import NoiseConfig, SyntheticBackend
from ordirs.synth_world.scenario import ScenarioSpec, bundled_path, load_scenarios, parse_scenarios
from ordirs.synth_world.scripted_llm import Rule, ScriptedLlm
from ordirs.synth_world.world import GeneratedScenario, WorldState, annotations_for, build_world, generate_scenario, gt_frames

BUNDLED_SCENARIOS = ("door", "person_table", "phases")

__all__ = [
    "BUNDLED_SCENARIOS",
    "GeneratedScenario",
    "NoiseConfig",
    "Rule",
    "ScenarioSpec",
    "ScriptedLlm",
    "SyntheticBackend",
    "WorldState",
    "annotations_for",
    "build_world",
    "bundled_path",
    "generate_scenario",
    "gt_frames",
    "load_bundled",
    "load_scenarios",
    "parse_scenarios",
]


def load_bundled(names=BUNDLED_SCENARIOS) -> list[ScenarioSpec]:
    specs: list[ScenarioSpec] = []
    for n in names:
        specs += load_scenarios(bundled_path(f"{n}.yaml"))
    return specs
