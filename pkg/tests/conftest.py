import numpy as np
import pytest
from hypothesis import settings

from netform.fespace import FESpace, StateVector
from netform.mesh import generate_structured_hex, generate_structured_quad, generate_triangles

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def quad4():
    return FESpace(generate_structured_quad(4, 4))


@pytest.fixture(scope="session")
def cross3():
    return FESpace(generate_triangles(3, 3, style="crisscross"))


@pytest.fixture(scope="session")
def hex2():
    return FESpace(generate_structured_hex(2, 2, 2))


def random_spd_state(space, rng, scale=1.0, pressure_scale=1.0):
    """State with random SPD cell tensors and a random pressure."""
    dim, nc = space.dim, space.n_cells
    A = rng.standard_normal((nc, dim, dim))
    C = scale * (A @ np.swapaxes(A, 1, 2) / dim + 0.2 * np.eye(dim))
    from netform.fespace import tensor_components

    p = pressure_scale * rng.standard_normal(space.n_vertices)
    return StateVector.from_fields(tensor_components(C), p, space.layout)


def _criterion_label(nodeid):
    name = nodeid.rsplit("::", 1)[-1]
    _, _, num, *words = name.split("_")
    return f"criterion {int(num):2d} ({' '.join(words)})"


def pytest_terminal_summary(terminalreporter):
    """Print one PASS/FAIL line per acceptance criterion."""
    verdicts = {}
    for reports in terminalreporter.stats.values():
        for rep in reports:
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid or not hasattr(rep, "when"):
                continue
            entry = verdicts.setdefault(nodeid, {"ok": True, "detail": ""})
            if rep.failed or rep.skipped:
                entry["ok"] = False
            for key, value in rep.user_properties:
                if key == "detail":
                    entry["detail"] = value
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in sorted(verdicts):
        entry = verdicts[nodeid]
        status = "PASS" if entry["ok"] else "FAIL"
        terminalreporter.write_line(f"{status} {_criterion_label(nodeid)}: {entry['detail']}")
