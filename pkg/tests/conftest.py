import pytest

from mobsynth.model import AgeGroup, Demographic, Sex
from mobsynth.worldgen import WorldSpec, generate_world, reference_inputs

M20 = Demographic(Sex.MALE, AgeGroup.AGE_20S)
F30 = Demographic(Sex.FEMALE, AgeGroup.AGE_30S)


def small_spec(n=40, seed=7, **kw):
    return WorldSpec(populations={M20: n, F30: n}, seed=seed, **kw)


@pytest.fixture(scope="session")
def small_world():
    spec = small_spec()
    world = generate_world(spec)
    return spec, world, reference_inputs(spec, world)


@pytest.fixture(scope="session")
def big_world():
    """10^4 agents split over the two default groups."""
    spec = WorldSpec(populations={M20: 5000, F30: 5000}, seed=11, threshold=0)
    world = generate_world(spec)
    return spec, world, reference_inputs(spec, world)


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
