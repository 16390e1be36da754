import os

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=30, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

torch.set_num_threads(int(os.environ.get("GATR_WSS_THREADS", "1")))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rel(a, b) -> float:
    a, b = torch.as_tensor(a), torch.as_tensor(b)
    return float(torch.linalg.norm(a - b) / torch.linalg.norm(b).clamp_min(1e-300))


def random_descriptors(rng, n=20, v=12.0):
    from gatr_wss.descriptors import DescriptorSet

    def unit(a):
        return a / np.linalg.norm(a, axis=1, keepdims=True)

    return DescriptorSet(rng.standard_normal((n, 3)) * 10, unit(rng.standard_normal((n, 3))),
                         unit(rng.standard_normal((n, 3))), rng.random(n) * 50, rng.random(n) * 50,
                         rng.standard_normal(n), rng.standard_normal(n), v)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
