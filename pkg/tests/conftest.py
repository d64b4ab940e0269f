import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def intr():
    from lccal.projection import CameraIntrinsics
    return CameraIntrinsics.virtual()


@pytest.fixture(scope="session")
def corridor_scene(intr):
    from lccal.scene import corridor, default_poses, generate_scene
    lidar_pose, cam_pose = default_poses()
    return generate_scene(corridor(0), lidar_pose, cam_pose, intr)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.report_line(n))
