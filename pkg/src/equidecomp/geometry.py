"""Annulus foliation, the one-element cube diffuser, and expansion parameter solvers.

The solid annulus Y = {1 ≤ ‖y‖ ≤ ρ}, ρ = 1 + √2/2, is foliated by the
spheres Y_z (z = ‖y‖) with leaf measure the surface area (4πz² on the
whole sphere) and ν Lebesgue on [1, ρ].  Leaf masses are estimated by
binning samples by norm: volume in a thin shell divided by its width.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .group import GroupElement, apply_many, inverse, rigid_motion
from .space import RHO, Z99

SQRT2 = math.sqrt(2.0)
H = SQRT2 / 2.0
GEOM_TOL = 1e-12


class GeometryError(ValueError):
    pass


# ------------------------------------------------------------------- foliation


@dataclass
class Foliation:
    """Shell binning of [1, ρ]; leaf area of a full sphere is 4πz²."""
    rho: float = RHO
    bins: int = 32

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(1.0, self.rho, self.bins + 1)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def nu_total(self) -> float:
        return self.rho - 1.0

    @property
    def M_bound(self) -> float:
        """M with M ≥ μ_z(Y) ≥ 1/M and M ≥ ν(Z) ≥ 1/M."""
        return 4.0 * math.pi * self.rho ** 2

    def check_M(self) -> bool:
        M = self.M_bound
        return M >= 4 * math.pi * self.rho ** 2 and 4 * math.pi >= 1 / M and M >= self.nu_total >= 1 / M

    @staticmethod
    def leaf_area(z):
        return 4.0 * math.pi * np.asarray(z, float) ** 2

    def mean_leaf_area(self) -> np.ndarray:
        """Average of 4πz² over each bin."""
        e = self.edges
        return 4.0 * math.pi * (e[1:] ** 3 - e[:-1] ** 3) / (3.0 * self.widths)

    def bin_of(self, r: np.ndarray) -> np.ndarray:
        """Bin index of each norm (-1 outside [1, ρ])."""
        r = np.asarray(r, float)
        idx = np.searchsorted(self.edges, r, side="right") - 1
        idx[r == self.rho] = self.bins - 1
        return np.where((r >= 1.0) & (r <= self.rho), idx, -1)

    def leaf_masses(self, counts: np.ndarray, n: int, volume: float):
        """Per-bin leaf-mass estimates and 99% radii from sample counts in a region of given volume."""
        p = counts / n
        est = volume * p / self.widths
        rad = Z99 * volume * np.sqrt(p * (1 - p) / n) / self.widths
        return est, rad


def annulus_volume(rho: float = RHO) -> float:
    return 4.0 * math.pi * (rho ** 3 - 1.0) / 3.0


@dataclass
class FoliationReport:
    n: int
    estimate: float
    exact: float
    std_error: float
    z_score: float
    per_bin: list
    passed: bool

    def to_json(self):
        return dict(self.__dict__)


def foliation_consistency(n: int, seed: int = 0, bins: int = 32, rho: float = RHO,
                          chunk: int = 1_000_000) -> FoliationReport:
    """Integrate binned leaf masses against ν and compare with the exact annulus volume.

    Samples are uniform in the bounding cube [-ρ, ρ]^3 so the annulus mass
    itself is estimated, not assumed.
    """
    fol = Foliation(rho, bins)
    rng = np.random.default_rng(seed)
    counts = np.zeros(bins, np.int64)
    done = 0
    while done < n:
        k = min(chunk, n - done)
        pts = rng.uniform(-rho, rho, size=(k, 3))
        b = fol.bin_of(np.linalg.norm(pts, axis=1))
        counts += np.bincount(b[b >= 0], minlength=bins)
        done += k
    vol = (2 * rho) ** 3
    est_bins, _ = fol.leaf_masses(counts, n, vol)
    estimate = float(np.sum(est_bins * fol.widths))
    p = counts.sum() / n
    se = vol * math.sqrt(p * (1 - p) / n)
    exact = annulus_volume(rho)
    z = (estimate - exact) / se
    per_bin = [(float(a), float(b)) for a, b in zip(est_bins, fol.mean_leaf_area())]
    return FoliationReport(n, estimate, exact, se, z, per_bin, abs(z) <= 3.0)


# ------------------------------------------------------------------- the cube


@dataclass
class CubeDiffuser:
    """Unit cube [-1/2, 1/2]^2 × [h, h+1] with face A at height h and face B at h+1."""
    h: float = H
    D: float = 0.5

    @property
    def lo(self) -> np.ndarray:
        return np.array([-0.5, -0.5, self.h])

    @property
    def hi(self) -> np.ndarray:
        return np.array([0.5, 0.5, self.h + 1.0])

    @property
    def center(self) -> np.ndarray:
        return (self.lo + self.hi) / 2

    @property
    def vertices(self) -> np.ndarray:
        lo, hi = self.lo, self.hi
        return np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])

    @property
    def face_A(self) -> np.ndarray:
        v = self.vertices
        return v[np.isclose(v[:, 2], self.h)]

    @property
    def face_B(self) -> np.ndarray:
        v = self.vertices
        return v[np.isclose(v[:, 2], self.h + 1.0)]

    @property
    def side(self) -> float:
        return float(self.hi[0] - self.lo[0])

    @property
    def f(self) -> GroupElement:
        """Quarter turn about the y-axis through the centre: face A goes to the +x wall."""
        R = ((0, 0, -1), (0, 1, 0), (1, 0, 0))
        c = self.center
        t = c - np.array(R, float) @ c
        return rigid_motion(R, tuple(float(x) for x in t))

    def contains(self, pts: np.ndarray) -> np.ndarray:
        p = np.asarray(pts, float)
        return np.all((p >= self.lo - GEOM_TOL) & (p <= self.hi + GEOM_TOL), axis=1)

    @staticmethod
    def tangent_angle(pts: np.ndarray) -> np.ndarray:
        """Angle between the sphere's tangent plane at x and the horizontal plane of face A."""
        p = np.asarray(pts, float)
        return np.arccos(np.clip(np.abs(p[:, 2]) / np.linalg.norm(p, axis=1), -1, 1))

    def checks(self) -> dict:
        """Residuals of the geometric identities (all should be ≤ 1e-12)."""
        A = self.face_A
        fA = apply_many(self.f, A)
        top_center = np.array([0.0, 0.0, self.h + 1.0])
        # points of face B other than its centre lie strictly outside Y_rho
        grid = np.stack(np.meshgrid(np.linspace(-.5, .5, 11), np.linspace(-.5, .5, 11)), -1).reshape(-1, 2)
        Bpts = np.column_stack([grid, np.full(len(grid), self.h + 1.0)])
        return {
            "h_minus_sqrt2_over_2": abs(self.h - SQRT2 / 2),
            "h_plus_1_minus_rho": abs(self.h + 1.0 - RHO),
            "side_minus_1": abs(self.side - 1.0),
            "corner_norm_minus_1": float(np.max(np.abs(np.linalg.norm(A, axis=1) - 1.0))),
            "face_B_tangency": abs(float(np.linalg.norm(top_center)) - RHO),
            "face_B_outside_rho": float(max(0.0, RHO - np.min(np.linalg.norm(Bpts, axis=1)))),
            "corner_angle_minus_pi_over_4": float(np.max(np.abs(self.tangent_angle(A) - math.pi / 4))),
            "f_maps_A_to_wall": float(np.max(np.abs(fA[:, 0] - 0.5))),
            "f_preserves_cube": float(np.max(np.abs(np.sort(apply_many(self.f, self.vertices), axis=0)
                                                    - np.sort(self.vertices, axis=0)))),
        }

    def max_sampled_angle(self, n: int = 100_000, seed: int = 0) -> float:
        """Largest tangent angle over random points of K with 1 ≤ ‖x‖ ≤ ρ."""
        rng = np.random.default_rng(seed)
        p = self.lo + rng.random((n, 3)) * (self.hi - self.lo)
        r = np.linalg.norm(p, axis=1)
        p = p[(r >= 1) & (r <= RHO)]
        return float(np.max(self.tangent_angle(np.vstack([p, self.face_A]))))


def construct_cube() -> CubeDiffuser:
    cube = CubeDiffuser()
    bad = {k: v for k, v in cube.checks().items() if v > GEOM_TOL}
    if bad:
        raise GeometryError(f"cube identities violated: {bad}")
    return cube


def in_intervals(r: np.ndarray, intervals) -> np.ndarray:
    out = np.zeros(len(r), bool)
    for a, b in intervals:
        out |= (r >= a) & (r <= b)
    return out


def random_interval_union(rng, k: int | None = None, rho: float = RHO):
    """A random union of 1..4 disjoint closed subintervals of [1, ρ]."""
    k = int(rng.integers(1, 5)) if k is None else k
    cuts = np.sort(rng.uniform(1.0, rho, 2 * k))
    return [(float(cuts[2 * j]), float(cuts[2 * j + 1])) for j in range(k)]


@dataclass
class DiffuserReport:
    intervals: list
    n: int
    mass_K_R: float
    mass_K_R_radius: float
    estimates: np.ndarray
    radii: np.ndarray
    required: np.ndarray
    passed: bool
    max_leaf_mass_K: float

    def to_json(self):
        return {
            "intervals": self.intervals,
            "n": self.n,
            "mass_K_R": self.mass_K_R,
            "mass_K_R_radius": self.mass_K_R_radius,
            "estimates": self.estimates.tolist(),
            "radii": self.radii.tolist(),
            "required": self.required.tolist(),
            "passed": self.passed,
            "max_leaf_mass_K": self.max_leaf_mass_K,
        }


def diffuser_check(cube: CubeDiffuser, n: int, intervals, bins: int = 32, seed: int = 0,
                   chunk: int = 1_000_000, rng=None) -> DiffuserReport:
    """Estimate μ_z(f(K_R)) per z-bin and compare with ½·μ(K_R).

    Samples y are uniform in K (volume 1).  y ∈ f(K_R) iff ‖f^-1 y‖ ∈ R,
    so the same samples give μ(K_R) and, binned by ‖y‖, the leaf masses of
    f(K_R).  A bin passes when est ≥ D·μ(K_R)·(1 − 3·radius/est).
    """
    fol = Foliation(RHO, bins)
    rng = np.random.default_rng(seed) if rng is None else rng
    finv = inverse(cube.f)
    cnt_img = np.zeros(bins, np.int64)
    cnt_K = np.zeros(bins, np.int64)
    in_KR = 0
    done = 0
    vol = float(np.prod(cube.hi - cube.lo))
    while done < n:
        k = min(chunk, n - done)
        y = cube.lo + rng.random((k, 3)) * (cube.hi - cube.lo)
        ry = np.linalg.norm(y, axis=1)
        src = np.linalg.norm(apply_many(finv, y), axis=1)
        b = fol.bin_of(ry)
        member = in_intervals(src, intervals)
        in_KR += int(np.count_nonzero(in_intervals(ry, intervals)))
        ok = b >= 0
        cnt_img += np.bincount(b[ok & member], minlength=bins)
        cnt_K += np.bincount(b[ok], minlength=bins)
        done += k
    est, rad = fol.leaf_masses(cnt_img, n, vol)
    leafK, leafK_rad = fol.leaf_masses(cnt_K, n, vol)
    p = in_KR / n
    mKR = vol * p
    mKR_rad = Z99 * vol * math.sqrt(p * (1 - p) / n)
    # an empty bin gets no statistical allowance
    rel = np.divide(rad, est, out=np.zeros_like(rad), where=est > 0)
    required = cube.D * mKR * (1 - 3 * rel)
    passed = bool(np.all(est >= required)) if mKR > 0 else bool(np.all(est >= 0))
    return DiffuserReport(list(intervals), n, mKR, mKR_rad, est, rad, required, passed,
                          float(np.max(leafK - leafK_rad)))


# -------------------------------------------------------------- parameter solvers


def solve_delta(D: float, M: float, T_size: int, eps: float, grid: int | None = None) -> float:
    """Largest δ ∈ (0, D) with δ·|T|·M/(D − δ) ≤ ε.

    The constraint is increasing in δ, so the supremum is εD/(|T|M + ε).
    With ``grid`` the answer is the largest point of an even grid on (0, D)
    that satisfies the inequality.
    """
    if not (0 < D <= 1 and 0 < eps < 1 and M > 0 and T_size >= 1):
        raise GeometryError("parameters out of range")
    best = eps * D / (T_size * M + eps)
    if grid is None:
        return best
    pts = np.linspace(0, D, grid + 1)[1:-1]
    ok = pts * T_size * M / (D - pts) <= eps
    if not np.any(ok):
        raise GeometryError("no feasible delta on the grid")
    return float(pts[ok][-1])


def delta_feasible(delta: float, D: float, M: float, T_size: int, eps: float) -> bool:
    return 0 < delta < D and delta * T_size * M / (D - delta) <= eps


@dataclass
class ComposedParams:
    eta: float
    M: float
    eps: float
    delta: float            # from solve_delta with D = 1/2, |T| = 1
    delta_quarter: float    # ε/(4M)
    beta: float             # δε/(2M) with δ = ε/(4M)
    delta_stated: float     # η/(12M³)
    beta_stated: float      # η²/(36M⁵)

    def to_json(self):
        return dict(self.__dict__)


def composed_expander_params(eta: float, M: float, D: float = 0.5, T_size: int = 1) -> ComposedParams:
    """(ε, δ, β) for the composed expander: ε = η/(3M²), δ feasible for the diffuser, β = δε/(2M)."""
    if not (0 < eta < 1) or M < 1:
        raise GeometryError("need eta in (0,1) and M >= 1")
    eps = eta / (3 * M * M)
    delta = solve_delta(D, M, T_size, eps)
    dq = eps / (4 * M)
    if not delta_feasible(dq, D, M, T_size, eps):
        raise GeometryError("ε/(4M) is not feasible for these parameters")
    beta = dq * eps / (2 * M)
    return ComposedParams(eta, M, eps, delta, dq, beta, eta / (12 * M ** 3), eta ** 2 / (36 * M ** 5))


@dataclass
class AnnulusRecipe:
    """R = S_β T S_δ ∪ S_β T ∪ S_δ with leaf-wise word sets S_β, S_δ and diffuser T."""
    params: ComposedParams
    l_beta: int
    l_delta: int
    size_beta: object       # bound on |S_β|, int or BigBound
    size_delta: object
    T: tuple
    order: tuple = ("S_beta T S_delta", "S_beta T", "S_delta")

    @property
    def symbolic_size(self):
        """Upper bound on |S_β||T||S_δ| + |S_β||T| + |S_δ| before deduplication."""
        from .bounds import BigBound
        t = len(self.T)
        if isinstance(self.size_beta, int) and isinstance(self.size_delta, int):
            return self.size_beta * t * self.size_delta + self.size_beta * t + self.size_delta
        b = self.size_beta if isinstance(self.size_beta, BigBound) else BigBound(self.size_beta, 0)
        d = self.size_delta if isinstance(self.size_delta, BigBound) else BigBound(self.size_delta, 0)
        # the three terms are each ≤ |S_β||T||S_δ| since all sizes are ≥ 1
        return b * d * (3 * t)

    def enumerate(self, S_beta, S_delta, T_set, name: str = "R"):
        from .group import set_union, set_product
        left = set_product(S_beta, T_set)
        return set_union([(left, S_delta), (left, None), (S_delta, None)], name)


def annulus_expander(eta: float, c: float = 1 - math.sqrt(5) / 3, q_size: int = 6) -> AnnulusRecipe:
    """Symbolic recipe of an η-expanding set for the annulus from leaf-wise LPS word sets."""
    from .bounds import l_for_growth_mp
    from .expansion import word_count_free
    M = 4 * math.pi * RHO ** 2
    p = composed_expander_params(eta, M)
    lb = l_for_growth_mp(c, p.beta, q_size)
    ld = l_for_growth_mp(c, p.delta_quarter, q_size)
    cube = construct_cube()
    return AnnulusRecipe(p, lb, ld, word_count_free(q_size, lb), word_count_free(q_size, ld), (cube.f,))


# ------------------------------------------------------- cube stacking diffuser


def stacking_diffuser(n: int) -> GroupElement:
    """Quarter turn of the last two coordinates of R^n about the centre of [0,1]^n.

    Maps (.., x, z) to (.., 1 − z, x), so slabs {z ∈ R} become slabs of the
    second-to-last coordinate and every horizontal slice meets the image
    in measure ν(R).
    """
    L = [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]
    L[n - 2][n - 2] = L[n - 1][n - 1] = Fraction(0)
    L[n - 2][n - 1], L[n - 1][n - 2] = Fraction(-1), Fraction(1)
    t = [Fraction(0)] * n
    t[n - 2] = Fraction(1)
    return rigid_motion(L, t)


def stacking_slice_masses(n: int, intervals, bins: int = 16, samples: int = 200_000, seed: int = 0):
    """Monte Carlo μ_z(γ.Y_R) on slices of [0,1]^n, with ν(R) for comparison."""
    g = stacking_diffuser(n)
    ginv = inverse(g)
    rng = np.random.default_rng(seed)
    pts = rng.random((samples, n))
    src = apply_many(ginv, pts)
    inside = np.all((src >= 0) & (src <= 1), axis=1) & in_intervals(src[:, -1], intervals)
    b = np.minimum((pts[:, -1] * bins).astype(int), bins - 1)
    est = np.bincount(b[inside], minlength=bins) / np.bincount(b, minlength=bins)
    nu_R = sum(b_ - a for a, b_ in intervals)
    return est, nu_R


def leafwise_diffusion_check(n: int, intervals, eps: float, samples: int = 400_000, bins: int = 20,
                             seed: int = 0) -> dict:
    """Discretized leafwise diffusion on [0,1]^n with T = {γ}, D = 1, M = 1.

    V is Y_R with a thin slab removed, so μ_z(V) ≥ (1 − δ)μ_z(Y) on its
    support; the ν-mass of bins with μ_z(T.V) > δ·μ(V) must exceed 1 − ε.
    """
    delta = solve_delta(1.0, 1.0, 1, eps)
    g = stacking_diffuser(n)
    ginv = inverse(g)
    rng = np.random.default_rng(seed)
    pts = rng.random((samples, n))
    cut = delta / 2

    def in_V(x):
        ok = np.all((x >= 0) & (x <= 1), axis=1) & in_intervals(x[:, -1], intervals)
        return ok & (x[:, 0] >= cut)

    mu_V = float(np.mean(in_V(pts)))
    img = in_V(apply_many(ginv, pts))
    b = np.minimum((pts[:, -1] * bins).astype(int), bins - 1)
    per_bin = np.bincount(b[img], minlength=bins) / np.bincount(b, minlength=bins)
    good = per_bin > delta * mu_V
    nu_good = float(np.mean(good))
    return {"delta": delta, "mu_V": mu_V, "per_bin": per_bin.tolist(), "nu_good": nu_good,
            "required": 1 - eps, "passed": nu_good > 1 - eps}
