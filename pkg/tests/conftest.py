import numpy as np
import pytest

from sparse_rks.model import LdsModel, build_random_system, generate_sparse_inputs, simulate

# Verdict lines from the acceptance suite, repeated in the terminal summary.
ACCEPTANCE_LINES = []


def random_spd(rng, size, scale=1.0):
    M = rng.standard_normal((size, size))
    return scale * (M @ M.T / size + 0.5 * np.eye(size))


def random_model(seed, n, m, p, K, time_varying=False, noise_scale=0.3):
    """Small random system with non-identity covariances and mild dynamics."""
    rng = np.random.default_rng(seed)
    steps = K if time_varying else 1

    def draw(shape, scale=1.0):
        mats = [scale * rng.standard_normal(shape) for _ in range(steps)]
        return mats if time_varying else mats[0]

    A = draw((n, n), 0.5 / np.sqrt(n))
    B, C, D = draw((n, m)), draw((p, n)), draw((p, m))
    Q = [random_spd(rng, n, noise_scale) for _ in range(steps)]
    R = [random_spd(rng, p, noise_scale) for _ in range(steps)]
    return LdsModel(A=A, B=B, C=C, D=D, Q=Q if time_varying else Q[0],
                    R=R if time_varying else R[0], K=K)


def random_instance(seed, n, m, p, K, **kwargs):
    model = random_model(seed, n, m, p, K, **kwargs)
    u = np.random.default_rng(seed + 1000).standard_normal((K, m))
    traj = simulate(model, u, seed=seed + 2000)
    return model, traj


def study_instance(seed, p=12, support_mode="time_varying", noise=True, s=3):
    from sparse_rks.model import snr_to_sigma_v
    sigma_u = 5.0
    sigma_v = snr_to_sigma_v(20.0, s, sigma_u)
    model = build_random_system(10, 40, p, 10, seed, sigma_v=sigma_v)
    u, supports = generate_sparse_inputs(40, 10, s, sigma_u, support_mode, seed=seed + 1)
    traj = simulate(model, u, seed=seed + 2, noise=noise, supports=supports, sigma_u=sigma_u)
    return model, traj


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda text: int(text.split()[2])):
            terminalreporter.write_line(line)
