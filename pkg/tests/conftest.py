import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def small_phantom():
    """128x128x96 ring phantom with moderate noise, run once per session."""
    from faz3d.phantom import generate_phantom, ring_phantom_spec

    spec = ring_phantom_spec(nx=128, ny=128, nz=96, faz_radius_um=120.0, seed=5)
    return spec, generate_phantom(spec, keep_mask=True)


@pytest.fixture(scope="session")
def small_phantom_result(small_phantom):
    from faz3d.faz import run_pipeline

    _, (volume, surfaces, enfaces, truth) = small_phantom
    return run_pipeline(volume, surfaces, enfaces, scan_id="small", group_label="healthy")


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        ok, detail = RESULTS[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
