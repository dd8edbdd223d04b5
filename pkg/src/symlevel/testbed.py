"""Training-free verification of the symmetry-recovery equivalences.

Works purely on angles: a synthetic equivalence class is a set of rotation
offsets drawn from a symmetry distribution (center at offset 0), and the
oracle estimator maps the member at offset g to g + beta for a fixed bias
beta. An unbiased oracle (beta = 0, or beta in C_n for cyclic classes) must
reproduce the class's symmetry set exactly; any other bias must produce a
witness element mapped outside it. Extreme offsets are injected explicitly
because that is where the violation witnesses live.

Also provides the closed-form expected identity-pull loss over a uniform
class, (alpha0^2 + theta^2) / (2 theta), and its Monte Carlo counterpart
using the linear |a - b| metric on [-180, 180].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .angles import canonicalize_angle, compose, cyclic_elements


@dataclass(frozen=True)
class OraclePsi:
    """Exactly equivariant estimator with a constant bias: offset g -> g + beta."""

    bias: float = 0.0

    def predict(self, offset: float) -> float:
        return compose(offset, self.bias)


@dataclass
class CheckReport:
    name: str
    params: dict
    condition_holds: bool   # predicted image matches the class's symmetry set
    expected_to_hold: bool  # whether the configured bias should satisfy it
    witness: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.condition_holds == self.expected_to_hold

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        params = " ".join(f"{k}={v}" for k, v in self.params.items())
        witness = f" witness: {self.witness}" if self.witness else ""
        return f"{self.name} {params} {status}{witness}"


def check_prop1(theta: float, n_samples: int, beta: float, seed: int = 0) -> CheckReport:
    """Uniform symmetries: the oracle image must stay inside [-theta, theta]
    and map the center to the identity iff the bias is zero.

    The extreme offsets +-theta are always included in the sampled class.
    """
    if not 0.0 < theta <= 180.0:
        raise ValueError("theta must lie in (0, 180]")
    if n_samples < 100:
        raise ValueError("need at least 100 samples")
    rng = np.random.default_rng(seed)
    offsets = np.concatenate([[0.0, -theta, theta], rng.uniform(-theta, theta, n_samples - 3)])
    oracle = OraclePsi(beta)
    predictions = np.array([oracle.predict(o) for o in offsets])
    center_ok = oracle.predict(0.0) == 0.0
    violations = [(o, p) for o, p in zip(offsets, predictions) if abs(p) > theta + 1e-9]
    holds = center_ok and not violations
    witness = ""
    if violations:
        o, p = violations[0]
        witness = f"offset {o:+.6g} -> {p:+.6g} outside [-{theta:g}, {theta:g}]"
    elif not center_ok:
        witness = f"center -> {oracle.predict(0.0):+.6g} != 0"
    return CheckReport(
        name="prop1_uniform",
        params={"theta": theta, "beta": beta, "n": n_samples},
        condition_holds=holds,
        expected_to_hold=(beta == 0.0),
        witness=witness,
    )


def check_prop2(sigma: float, n_samples: int, beta: float, seed: int = 0) -> CheckReport:
    """Gaussian symmetries: the unbiased oracle reproduces the drawn offset set
    exactly; a biased one maps the extreme drawn element outside it.
    """
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    rng = np.random.default_rng(seed)
    offsets = np.concatenate([[0.0], rng.normal(0.0, sigma, n_samples - 1)])
    offsets = np.array([canonicalize_angle(o) for o in offsets])
    oracle = OraclePsi(beta)
    predictions = np.array([oracle.predict(o) for o in offsets])
    drawn = set(float(o) for o in offsets)
    holds = all(float(p) in drawn for p in predictions)
    witness = ""
    if beta > 0:
        u = float(offsets.max())
        witness = f"max offset {u:+.6g} -> {oracle.predict(u):+.6g} > max of drawn set"
    elif beta < 0:
        u = float(offsets.min())
        witness = f"min offset {u:+.6g} -> {oracle.predict(u):+.6g} < min of drawn set"
    return CheckReport(
        name="prop2_gaussian",
        params={"sigma": sigma, "beta": beta, "n": n_samples},
        condition_holds=holds,
        expected_to_hold=(beta == 0.0),
        witness=witness if not holds else "",
        extras={"empirical_std": float(predictions.std())},
    )


def check_prop3(n: int, n_samples: int, beta: float, seed: int = 0) -> CheckReport:
    """Cyclic symmetries: any bias inside C_n leaves the image equal to C_n;
    any other bias produces a rotated coset distinct from it.
    """
    if not 1 <= n <= 8:
        raise ValueError("cyclic order must lie in 1..8")
    rng = np.random.default_rng(seed)
    elements = cyclic_elements(n)
    offsets = list(elements) + [elements[int(i)] for i in rng.integers(0, n, max(n_samples - n, 0))]
    oracle = OraclePsi(beta)
    image = sorted(set(round(oracle.predict(o), 9) for o in offsets))
    target = sorted(round(e, 9) for e in elements)
    holds = image == target
    beta_in_group = min(abs(canonicalize_angle(beta - e)) for e in elements) < 1e-9
    witness = ""
    if not holds:
        extra = [v for v in image if v not in target]
        witness = f"image element {extra[0]:+.6g} not in C_{n}" if extra else "image != C_n"
    return CheckReport(
        name="prop3_cyclic",
        params={"n": n, "beta": beta, "n_samples": n_samples},
        condition_holds=holds,
        expected_to_hold=beta_in_group,
        witness=witness,
    )


def expected_l2(theta: float, alpha0: float) -> float:
    """Closed-form mean of |alpha - alpha0| over alpha ~ U[-theta, theta]."""
    if theta <= 0.0:
        raise ValueError("theta must be positive")
    if abs(alpha0) > theta:
        raise ValueError("alpha0 must lie within [-theta, theta]")
    return (alpha0 * alpha0 + theta * theta) / (2.0 * theta)


def monte_carlo_l2(theta: float, alpha0: float, n: int, seed: int = 0,
                   draws: np.ndarray | None = None) -> float:
    """Monte Carlo mean of |alpha - alpha0| over the uniform class.

    Pass `draws` to reuse one sample across an alpha0 sweep (common random
    numbers make the empirical minimizer comparison exact-ordering stable).
    """
    if n < 10_000:
        raise ValueError("need at least 1e4 draws")
    if draws is None:
        rng = np.random.default_rng(seed)
        draws = rng.uniform(-theta, theta, n)
    return float(np.mean(np.abs(draws - alpha0)))


def default_sweep(seed: int = 0) -> list[CheckReport]:
    """The full proposition sweep used by the acceptance gate."""
    reports = []
    for theta in (30.0, 60.0, 90.0):
        for beta in (0.0, 15.0, -15.0):
            reports.append(check_prop1(theta, 500, beta, seed))
    for sigma in (9.0, 18.0, 45.0):
        for beta in (0.0, 15.0, -15.0):
            reports.append(check_prop2(sigma, 500, beta, seed))
    for n in range(1, 9):
        step = 360.0 / n
        betas = [0.0, 15.0, -15.0, step]
        if n >= 2:
            betas.append(step / 2.0)  # off-group coset witness
        for beta in betas:
            reports.append(check_prop3(n, 200, beta, seed))
    return reports


def render_report(reports: list[CheckReport]) -> str:
    lines = [r.line() for r in reports]
    n_pass = sum(r.passed for r in reports)
    lines.append(f"total {n_pass}/{len(reports)} checks passed")
    return "\n".join(lines)
