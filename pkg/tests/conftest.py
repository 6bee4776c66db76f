import json
from importlib import resources

import pytest

from safedrive.dynamics import VehicleParams, VehicleState
from safedrive.world import Agent, LaneId, PolicyMode, RoadGeometry, ScriptedPolicy, WorldState, load_scenario

ROAD = RoadGeometry()


def bundled(name: str):
    return resources.files("safedrive.scenarios").joinpath(name + ".json")


def scenario(name: str, seed=None):
    return load_scenario(bundled(name), seed=seed)


def scenario_dict(name: str) -> dict:
    return json.loads(bundled(name).read_text())


def agent(id, x, lane=LaneId.Middle, vx=20.0, mode=PolicyMode.ConstantSpeed, envelope=(-5.0, 1.5), **policy):
    y = ROAD.center(lane)
    return Agent(id, VehicleState(x, y, vx, 0.0), VehicleParams(),
                 ScriptedPolicy(mode=mode, envelope=envelope, **policy), lane)


def world(ego=(0.0, 6.0, 30.0, 0.0), agents=(), step_index=0):
    return WorldState(step_index, VehicleState(*ego), VehicleParams(), tuple(agents), ROAD)


@pytest.fixture
def empty_world():
    return world()


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        ok, detail = ACCEPTANCE.get(n, (None, "not run"))
        mark = "PASS" if ok else ("FAIL" if ok is False else "SKIP")
        terminalreporter.write_line(f"criterion {n:2d}: {mark}  {detail}")
