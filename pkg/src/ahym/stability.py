"""Flat Higgs sub-bundles, slopes, stability verdicts and destabilizer extraction."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .bundle import FlatHiggsBundle, dagger
from .curvature import degree, dprime_norm2, projection_defects, sub_degree
from .diagnostics import l2_norm_endo, whiten_endo
from .geometry import MetricField, Twist, affine_laplacian, integrate

INVARIANCE_TOL = 1e-10

STABLE = "stable"
SEMISTABLE = "semistable-not-stable"
UNSTABLE = "unstable-witness"


class StabilityError(ValueError):
    pass


@dataclass
class InvariantSubspace:
    basis: np.ndarray  # r x k, orthonormal columns

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.conj().T

    def defects(self, b: FlatHiggsBundle) -> dict[str, float]:
        P = self.projector
        Q = np.eye(P.shape[0]) - P
        out = {}
        for k, rho in enumerate(b.holonomy):
            out[f"rho{k}"] = float(np.linalg.norm(Q @ rho @ P))
            out[f"rho{k}^-1"] = float(np.linalg.norm(Q @ np.linalg.inv(rho) @ P))
        for i, t in enumerate(b.higgs):
            out[f"theta{i}"] = float(np.linalg.norm(Q @ t @ P))
        return out

    def max_defect(self, b: FlatHiggsBundle) -> float:
        d = self.defects(b)
        return max(d.values()) if d else 0.0


def _orth(M, tol=1e-9):
    if M.size == 0:
        return M.reshape(M.shape[0], 0)
    u, s, _ = np.linalg.svd(M, full_matrices=False)
    k = int(np.sum(s > tol * max(1.0, s.max() if s.size else 0)))
    return u[:, :k]


def _null(M, tol=1e-9):
    r = M.shape[1]
    _, s, vh = np.linalg.svd(M)
    k = int(np.sum(s > tol * max(1.0, s.max() if s.size else 0)))
    return vh[k:].conj().T.reshape(r, r - k)


def _intersect(A, B):
    if A.shape[1] == 0 or B.shape[1] == 0:
        return A[:, :0]
    # x = A a = B c  <=>  [A, -B] (a, c) = 0
    N = _null(np.hstack([A, -B]))
    return _orth(A @ N[: A.shape[1]])


def _sum(A, B):
    return _orth(np.hstack([A, B]))


def _generators(b: FlatHiggsBundle) -> list[np.ndarray]:
    gens = []
    for k, rho in enumerate(b.holonomy):
        if b.twisted(k):
            gens += [rho, np.linalg.inv(rho)]
    gens += [t for t in b.higgs if np.any(t)]
    return gens


def _invariant(B, gens, tol):
    P = B @ B.conj().T
    Q = np.eye(P.shape[0]) - P
    return all(np.linalg.norm(Q @ G @ B) <= tol * max(1.0, np.linalg.norm(G)) for G in gens)


def invariant_subspaces(b: FlatHiggsBundle, tol: float = INVARIANCE_TOL, seed: int = 12345) -> list[InvariantSubspace]:
    """Proper subspaces invariant under every holonomy matrix, its inverse and every Higgs matrix.

    Candidates are the joint generalized eigenspaces, kernels and images of
    powers of each generator's nilpotent part inside them, and coordinate
    subspaces (needed when the family acts by scalars on a block, where the
    invariant subspaces form a continuum and we keep the axis-aligned ones).
    The candidate set is closed under sums and intersections, filtered by the
    invariance defect and deduplicated by projector.
    """
    r = b.rank
    if r > 4:
        raise StabilityError("invariant subspace enumeration supports rank <= 4")
    gens = _generators(b)
    rng = np.random.default_rng(seed)
    cands: list[np.ndarray] = []
    eye = np.eye(r, dtype=complex)

    # joint generalized eigenspaces via a generic combination
    if gens:
        M = sum(complex(rng.normal(), rng.normal()) * G for G in gens)
    else:
        M = np.zeros((r, r), dtype=complex)
    ev = np.linalg.eigvals(M)
    clusters: list[complex] = []
    for z in ev:
        if not any(abs(z - c) < 1e-6 * max(1.0, abs(c)) for c in clusters):
            clusters.append(z)
    blocks = []
    for c in clusters:
        m = sum(abs(z - c) < 1e-6 * max(1.0, abs(c)) for z in ev)
        V = _null(np.linalg.matrix_power(M - c * eye, m))
        if V.shape[1]:
            blocks.append(V)
            cands.append(V)

    for V in blocks:
        for G in gens:
            mu = np.trace(V.conj().T @ G @ V) / V.shape[1]
            N = (G - mu * eye) @ V
            # restrict to V: V^dagger N is the matrix of the nilpotent part in the basis V
            Nv = V.conj().T @ N
            for p in range(1, V.shape[1] + 1):
                Np = np.linalg.matrix_power(Nv, p)
                ker = _null(Np)
                if ker.shape[1]:
                    cands.append(_orth(V @ ker))
                img = _orth(Np)
                if img.shape[1]:
                    cands.append(_orth(V @ img))

    for k in range(1, r):
        for idx in itertools.combinations(range(r), k):
            cands.append(eye[:, list(idx)])

    pool: list[np.ndarray] = []
    projs: list[np.ndarray] = []

    def add(B):
        if B.shape[1] == 0 or not _invariant(B, gens, 1e-8):
            return False
        P = B @ B.conj().T
        if any(np.abs(P - Q).max() < 1e-7 for Q in projs):
            return False
        pool.append(B)
        projs.append(P)
        return True

    for B in cands:
        add(_orth(B))
    # close under sums and intersections, pairing each new member with all earlier ones
    i = 1
    while i < len(pool):
        for j in range(i):
            A, B = pool[i], pool[j]
            add(_sum(A, B))
            add(_intersect(A, B))
        i += 1

    out = []
    for B in pool:
        if B.shape[1] < r:
            sub = InvariantSubspace(B)
            if sub.max_defect(b) < tol:
                out.append(sub)
    out.sort(key=lambda s: (s.rank, tuple(np.round(np.abs(s.projector).ravel(), 6))))
    return out


def projection_field(sub: InvariantSubspace, H0: np.ndarray) -> np.ndarray:
    """``H0``-orthogonal projection onto the constant subspace at every point."""
    B = sub.basis
    G = dagger(B) @ H0 @ B
    return B @ np.linalg.solve(G, dagger(B) @ H0)


def induced_degree(sub: InvariantSubspace, H0: np.ndarray, b: FlatHiggsBundle, g: MetricField) -> float:
    """Degree of a flat sub-bundle from its induced metric ``B^dagger H0 B``.

    The Higgs bracket is traceless on the sub-bundle, so only
    ``-1/4 Lap log det`` of the induced metric contributes. Across a twisted
    seam the induced metric transforms by the restricted holonomy ``A``
    (``rho B = B A``), which shifts the log determinant by ``-2 log|det A|``.
    """
    B = sub.basis
    h = dagger(B) @ H0 @ B
    ld = np.log(np.linalg.det(h).real)
    off = []
    for k, rho in enumerate(b.holonomy):
        if b.twisted(k):
            A = dagger(B) @ rho @ B
            off.append(-2.0 * np.log(abs(np.linalg.det(A))))
        else:
            off.append(None)
    return integrate(-0.25 * affine_laplacian(ld, g, Twist(offset=tuple(off))), g) / g.dim


def projection_checks(pi, H0, b, g) -> dict[str, float]:
    """Sup defects of idempotence, self-adjointness, and the two flatness conditions."""
    from .geometry import d1

    out = projection_defects(pi, H0)
    etw = b.endo_twist()
    Q = np.eye(b.rank) - pi
    out["dbar"] = max(float(np.abs(Q @ d1(pi, g.chart, k, etw)).max()) for k in range(g.dim))
    out["higgs"] = max(float(np.abs(Q @ (t @ pi - pi @ t)).max()) for t in b.higgs)
    return out


@dataclass
class SlopeEntry:
    subspace: InvariantSubspace
    rank: int
    degree: float
    slope: float
    checks: dict
    formula_degree: float = float("nan")


@dataclass
class StabilityVerdict:
    entries: list[SlopeEntry]
    degree: float
    slope: float
    verdict: str
    margin: float
    tol: float
    witness: SlopeEntry | None = None

    def to_json(self) -> dict:
        def cplx(B):
            return [[[float(z.real), float(z.imag)] for z in row] for row in B]

        return {
            "verdict": self.verdict,
            "bundle_degree": self.degree,
            "bundle_slope": self.slope,
            "margin": self.margin,
            "tolerance": self.tol,
            "subbundles": [
                {
                    "basis": cplx(e.subspace.basis),
                    "rank": e.rank,
                    "degree": e.degree,
                    "slope": e.slope,
                    "projection_formula_degree": e.formula_degree,
                }
                for e in self.entries
            ],
            "witness": None if self.witness is None else cplx(self.witness.subspace.basis),
        }


def slope_table(b, H0, g, tol: float | None = None, check_tol: float = 1e-8) -> StabilityVerdict:
    """Slopes of every invariant sub-bundle compared against the bundle slope.

    ``tol`` is the band within which a slope counts as equal to the bundle
    slope; the default ``10 * max(h)^2`` tracks the discretization error.

    Raises:
        StabilityError: if a projection field fails its flatness checks.
    """
    if tol is None:
        tol = 10 * max(g.chart.spacing) ** 2
    degE = degree(H0, b, g)
    muE = degE / b.rank
    entries = []
    for sub in invariant_subspaces(b):
        pi = projection_field(sub, H0)
        checks = projection_checks(pi, H0, b, g)
        scale = max(1.0, float(np.abs(pi).max()))
        if max(checks.values()) > check_tol * scale:
            raise StabilityError(f"projection field is not a flat Higgs sub-bundle: {checks}")
        d = induced_degree(sub, H0, b, g)
        entries.append(SlopeEntry(sub, sub.rank, d, d / sub.rank, checks, sub_degree(pi, H0, b, g)))
    if not entries:
        return StabilityVerdict([], degE, muE, STABLE, np.inf, tol)
    worst = max(entries, key=lambda e: e.slope)
    margin = muE - worst.slope
    if margin > tol:
        verdict, witness = STABLE, None
    elif margin >= -tol:
        verdict, witness = SEMISTABLE, worst
    else:
        verdict, witness = UNSTABLE, worst
    return StabilityVerdict(entries, degE, muE, verdict, margin, tol, witness)


def gamma(mu: np.ndarray, ranks: list[int], degE: float, r: int, sub_degrees: list[float]) -> float:
    """``sum (mu_{a+1} - mu_a) rank_a (deg E / r - deg E_a / rank_a)``."""
    return float(
        sum((mu[a + 1] - mu[a]) * ranks[a] * (degE / r - sub_degrees[a] / ranks[a]) for a in range(len(ranks)))
    )


# destabilizer extraction -----------------------------------------------------------

def normalize_snapshot(s: np.ndarray, H0: np.ndarray, g: MetricField) -> np.ndarray:
    """Trace-free part of ``s`` scaled to unit L2 norm in ``H0``."""
    r = s.shape[-1]
    tr = np.trace(s, axis1=-2, axis2=-1)[..., None, None]
    u = s - tr / r * np.eye(r)
    nrm = l2_norm_endo(u, H0, g)
    if nrm == 0:
        raise StabilityError("snapshot is pure trace")
    return u / nrm


@dataclass
class Destabilizer:
    alpha: int
    pi: np.ndarray
    rank: int
    degree: float
    slope_excess: float
    gamma: float
    mu: np.ndarray
    ranks: list[int]
    sub_degrees: list[float]
    projectors: list[np.ndarray]
    rank_identity_defect: float
    checks: list[dict] = field(default_factory=list)


def _cluster(evals: np.ndarray, gap_factor: float, const_factor: float):
    """Split sorted pointwise eigenvalue columns into contiguous level groups.

    Returns (groups, means, pooled std, min gap) for the finest partition whose
    every gap exceeds ``gap_factor`` times the pooled std and ``1/const_factor``
    times that std; ``None`` if only the trivial partition qualifies.
    """
    r = evals.shape[-1]
    cols = evals.reshape(-1, r)
    best = None
    for cuts in range(r - 1, 0, -1):
        for pos in itertools.combinations(range(1, r), cuts):
            bounds = (0,) + pos + (r,)
            groups = [list(range(bounds[i], bounds[i + 1])) for i in range(len(bounds) - 1)]
            vals = [cols[:, gr].ravel() for gr in groups]
            means = np.array([v.mean() for v in vals])
            resid = np.concatenate([v - v.mean() for v in vals])
            std = float(np.sqrt(np.mean(resid**2)))
            gaps = np.diff(means)
            if gaps.min() <= 0:
                continue
            if gaps.min() > gap_factor * std and std < const_factor * gaps.min():
                cand = (groups, means, std, float(gaps.min()))
                if best is None or len(groups) > len(best[0]):
                    best = cand
        if best is not None:
            return best
    return None


def extract_destabilizer(
    snapshots: list[np.ndarray],
    H0: np.ndarray,
    b: FlatHiggsBundle,
    g: MetricField,
    gap_factor: float = 5.0,
    const_factor: float = 0.1,
) -> Destabilizer | None:
    """Candidate destabilizing sub-bundle from normalized log-metric snapshots.

    The last snapshot's pointwise spectrum is clustered; sharp spectral
    projectors below each gap give sub-bundles ``E_a`` whose degrees feed
    ``gamma``. Returns ``None`` when the spectrum is not near-constant.
    """
    if len(snapshots) < 3:
        raise StabilityError("need at least three snapshots")
    u = snapshots[-1]
    wh = whiten_endo(H0, u)
    found = _cluster(wh.evals, gap_factor, const_factor)
    if found is None:
        return None
    groups, means, _, _ = found
    r = b.rank
    degE = degree(H0, b, g)
    projectors, ranks, subdeg, checks = [], [], [], []
    for a in range(len(groups) - 1):
        upto = groups[a][-1] + 1
        sel = np.zeros(r)
        sel[:upto] = 1.0
        pi = wh.Wi @ ((wh.U * sel) @ dagger(wh.U)) @ wh.W
        projectors.append(pi)
        ranks.append(upto)
        checks.append(projection_checks(pi, H0, b, g))
        subdeg.append(sub_degree(pi, H0, b, g, tol=1e-6))
    gam = gamma(means, ranks, degE, r, subdeg)
    mult = [len(gr) for gr in groups]
    lhs = means[-1] * r
    rhs = sum((means[a + 1] - means[a]) * ranks[a] for a in range(len(ranks)))
    # the two sides differ by the trace of the clustered spectrum, which is 0 for trace-free u
    rank_defect = abs(lhs - rhs)
    excess = [subdeg[a] / ranks[a] - degE / r for a in range(len(ranks))]
    a = int(np.argmax(excess))
    return Destabilizer(
        alpha=a,
        pi=projectors[a],
        rank=ranks[a],
        degree=subdeg[a],
        slope_excess=excess[a],
        gamma=gam,
        mu=means,
        ranks=ranks,
        sub_degrees=subdeg,
        projectors=projectors,
        rank_identity_defect=rank_defect,
        checks=checks,
    )


def match_subspace(pi: np.ndarray, H0: np.ndarray, subs: list[InvariantSubspace]) -> tuple[InvariantSubspace | None, float]:
    """Invariant subspace whose projection field is closest to ``pi`` in sup norm."""
    best, dist = None, np.inf
    for sub in subs:
        d = float(np.abs(projection_field(sub, H0) - pi).max())
        if d < dist:
            best, dist = sub, d
    return best, dist
