"""Deterministic algebraic invariant suite behind the ``selftest`` subcommand."""

from __future__ import annotations

import numpy as np
from pydantic import BaseModel

from .noise import basis_for, c_d, isotropy_matrix, stratonovich_corrector, theta_canonical
from .spectral import (
    Grid,
    SpectralField,
    biot_savart,
    curl2d,
    divergence,
    laplacian,
    leray_project,
)


class Check(BaseModel):
    name: str
    value: float
    tolerance: float
    passed: bool


class SelftestReport(BaseModel):
    seed: int
    checks: list[Check]
    passed: bool


def random_field(grid: Grid, rng: np.random.Generator, kmax: int, rank: str = "scalar", mean_zero: bool = True) -> SpectralField:
    """Real random field with modes ``|k|_inf <= kmax`` only."""
    shape = grid.phys_shape if rank == "scalar" else (grid.d,) + grid.phys_shape
    f = SpectralField.from_physical(grid, rng.standard_normal(shape))
    mask = (np.max(np.abs(grid.kvec), axis=0) <= kmax).astype(float)
    if mean_zero:
        mask = mask * (grid.k2 > 0)
    return f.with_coeffs(f.coeffs * mask)


def _rel(a: SpectralField, b: SpectralField) -> float:
    nb = np.sqrt(b.l2_sq())
    return float(np.sqrt((a - b).l2_sq()) / nb) if nb > 0 else float(np.sqrt(a.l2_sq()))


def isotropy_checks(ns=(1, 2, 4, 8), ns_3d=(1, 2), tol: float = 1e-12) -> list[Check]:
    out = []
    for d, ns_d in ((2, ns), (3, ns_3d)):
        for n in ns_d:
            theta = theta_canonical(d, n, 1.0)
            m = isotropy_matrix(theta, basis_for(theta))
            err = float(np.max(np.abs(m - np.eye(d) / c_d(d))))
            out.append(Check(name=f"isotropy d={d} n={n}", value=err, tolerance=tol, passed=err < tol))
    return out


def corrector_checks(rng: np.random.Generator, ns=(1, 4), fields: int = 20, N: int = 32, mu: float = 0.7, tol: float = 1e-10) -> list[Check]:
    """``corrector(f) = mu Lap f`` on fields whose doubly shifted spectrum stays on the grid."""
    out = []
    grid = Grid(2, N)
    for n in ns:
        theta = theta_canonical(2, n, 1.0)
        basis = basis_for(theta)
        kmax = N // 2 - 2 * n - 1
        worst = 0.0
        for _ in range(fields):
            f = random_field(grid, rng, kmax)
            lap = laplacian(f)
            worst = max(worst, _rel(stratonovich_corrector(theta, basis, f, mu), lap * mu))
        out.append(Check(name=f"corrector n={n}", value=worst, tolerance=tol, passed=worst < tol))
    return out


def projection_checks(rng: np.random.Generator, N: int = 32, trials: int = 5, tol: float = 1e-12) -> list[Check]:
    grid = Grid(2, N)
    curl_err = div_err = idem_err = 0.0
    for _ in range(trials):
        zeta = random_field(grid, rng, N // 2 - 1)
        u = biot_savart(zeta)
        curl_err = max(curl_err, _rel(curl2d(u), zeta))
        div_err = max(div_err, float(np.sqrt(divergence(u).l2_sq() / max(u.l2_sq(), 1e-300))))
        v = random_field(grid, rng, N // 2 - 1, rank="vector")
        p = leray_project(v)
        idem_err = max(idem_err, _rel(leray_project(p), p))
    return [
        Check(name="curl(K zeta) = zeta", value=curl_err, tolerance=tol, passed=curl_err < tol),
        Check(name="div(K zeta) = 0", value=div_err, tolerance=tol, passed=div_err < tol),
        Check(name="P^2 = P", value=idem_err, tolerance=tol, passed=idem_err < tol),
    ]


def run_selftest(seed: int = 0) -> SelftestReport:
    rng = np.random.default_rng(seed)
    checks = isotropy_checks() + corrector_checks(rng) + projection_checks(rng)
    return SelftestReport(seed=seed, checks=checks, passed=all(c.passed for c in checks))


__all__ = ["Check", "SelftestReport", "corrector_checks", "isotropy_checks", "projection_checks", "random_field", "run_selftest"]
