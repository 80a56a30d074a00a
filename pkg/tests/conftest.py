import math

import pytest

from cahetnet.configio import config_from_document, default_document
from cahetnet.model import Band, NetworkConfig, Tier

MACRO_DENSITY = 1.0 / (math.pi * 500.0**2)
NOISE_PSD = 10 ** ((-174 - 30) / 10)
NOISE_FIGURE = 10**0.6


def two_tier(
    deployment="[1,0;0,1]",
    small_ratio=2.0,
    small_bias=1.0,
    ue_ratio=None,
    interference_limited=False,
    alphas=(3.0, 4.0),
    powers=(40.0, 1.0),
    share=1.8e6,
):
    """Two tiers and two bands with the default radio parameters."""
    tiers = [Tier(MACRO_DENSITY, powers[0]), Tier(small_ratio * MACRO_DENSITY, powers[1], small_bias)]
    bands = [
        Band.from_wavelength(9e6, alphas[0], 0.375),
        Band.from_wavelength(9e6, alphas[1], 0.12),
    ]
    ue = (12 * small_ratio if ue_ratio is None else ue_ratio) * MACRO_DENSITY
    return NetworkConfig.build(tiers, bands, deployment, ue, share, NOISE_PSD, NOISE_FIGURE, interference_limited)


def single_tier(alphas=(3.0,), ue_ratio=12.0, interference_limited=False, share=1.8e6, density=MACRO_DENSITY, power=40.0):
    wavelengths = (0.375, 0.12, 0.2)
    bands = [Band.from_wavelength(9e6, a, wavelengths[i % 3]) for i, a in enumerate(alphas)]
    dep = "[" + ",".join("1" for _ in alphas) + "]"
    return NetworkConfig.build(
        [Tier(density, power)], bands, dep, ue_ratio * density, share, NOISE_PSD, NOISE_FIGURE, interference_limited
    )


@pytest.fixture
def table_one():
    return config_from_document(default_document())


ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, passed: bool, detail: str) -> None:
    """Record one PASS/FAIL line for the acceptance summary."""
    line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
