import numpy as np
import pytest

from alphamaml.autodiff import ops
from alphamaml.tasks import Episode

# Reference sinusoid run used by the evaluation tests. Pinned from one run of
# the reference implementation: 100/100 meta-test episodes improved after 10
# adaptation steps.
SINE_RUN = dict(task="sinusoid", k_shot=10, q_query=10, alpha0=0.01, beta0=0.005,
                max_iters=5000, loss_threshold=0.5, val_every=500, seed=0)


class QuadLearner:
    """L(theta) = theta^2 on a single scalar parameter, ignoring the data."""

    loss_kind = "mse"

    def loss(self, params, inputs, targets):
        return ops.mul(params[0], params[0])


def quad_episode():
    z = np.zeros((1, 1))
    return Episode(z, z, z, z)


@pytest.fixture(scope="session")
def sine_run(tmp_path_factory):
    from alphamaml.harness import RunConfig, run

    out = tmp_path_factory.mktemp("sine") / "run"
    cfg = RunConfig(**SINE_RUN, output_dir=str(out))
    trace = run(cfg)
    assert trace.status == "completed"
    return cfg, trace, out


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        terminalreporter.write_line(verdicts[n])
