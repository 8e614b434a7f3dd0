"""Fidelity decay between restrictions of quasi-free states.

Two thermal states of the field, at different temperatures or expressed
in frames related by a boost, are compared on growing families of
orthonormal one-particle modes.  Each restriction is a Gaussian state
determined by the thermally weighted Gram matrix of the modes; for the
default families the restrictions factor over modes and the fidelity is
a product of single-mode thermal fidelities, so it is non-increasing by
construction and its decay toward zero is the observable.

The decay is an overlap proxy.  Inequivalence of the states themselves
is a statement about the full infinite system; only the trend of the
finite-restriction fidelity is measured here, and the documented
thresholds are measured targets, not theorems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    NumericalError,
    StructuralError,
    UnsupportedConfigurationError,
    ValidationError,
)
from .oneparticle import MomentumFunction, planck_occupation
from .quasifree import QuasiFreeState, doubled_gram
from .textio import fmt17, write_csv, write_keyvals

__all__ = [
    "ModeFamily",
    "RestrictedGaussianState",
    "FidelityCurve",
    "adapted_family",
    "single_frequency_family",
    "mode_occupations",
    "restricted_gaussian",
    "restrict_state",
    "fidelity",
    "thermal_fidelity",
    "thermal_fidelity_spectral",
    "overlap_decay",
]

_GRAM_TOL = 1e-10
_MOMENT_TOL = 1e-8
_TAIL_TOL = 1e-6
_MAX_CUTOFF = 4096


@dataclass
class ModeFamily:
    """Orthonormal one-particle modes with a reproducible descriptor."""

    modes: list
    descriptor: str = ""

    def __post_init__(self):
        if not self.modes:
            raise ValidationError("mode family must be nonempty")
        g = self.gram()
        defect = float(np.max(np.abs(g - np.eye(len(self.modes)))))
        if defect > _GRAM_TOL:
            raise ValidationError(
                "modes are not orthonormal: Gram defect %s" % fmt17(defect))

    def __len__(self) -> int:
        return len(self.modes)

    def gram(self) -> np.ndarray:
        n = len(self.modes)
        g = np.zeros((n, n), dtype=complex)
        for i in range(n):
            for j in range(i, n):
                g[i, j] = _cross_inner(self.modes[i], self.modes[j])
                g[j, i] = np.conj(g[i, j])
        return g

    def prefix(self, n: int) -> "ModeFamily":
        if not 1 <= n <= len(self.modes):
            raise ValidationError("prefix length out of range")
        return ModeFamily(self.modes[:n],
                          descriptor="%s#prefix=%d" % (self.descriptor, n))


def _supports_disjoint(a: MomentumFunction, b: MomentumFunction) -> bool:
    qa = a.q[np.abs(a.values) > 0]
    qb = b.q[np.abs(b.values) > 0]
    if len(qa) == 0 or len(qb) == 0:
        return True
    return bool(np.min(np.abs(qa[:, None] - qb[None, :])) > 1e-12)


def _cross_inner(a: MomentumFunction, b: MomentumFunction) -> complex:
    """Inner product allowing modes on different grids with disjoint support."""
    if a.same_points(b):
        return a.inner(b)
    if _supports_disjoint(a, b):
        return 0.0
    raise StructuralError(
        "modes must share a point set or have disjoint momentum supports")


def _point_mass_modes(centers, half_width, mass=0.0):
    """One mode per center: a unit-norm spike on its own quadrature node.

    Distinct nodes give exactly vanishing cross inner products, so the
    family is orthonormal to machine precision and restrictions factor
    mode by mode.
    """
    centers = np.asarray(centers, dtype=float)
    modes = []
    for qc in centers:
        q = np.array([qc])
        w_dq = np.array([2.0 * half_width])
        amp = 1.0 / math.sqrt(4.0 * math.pi * w_dq[0] * qc * qc)
        modes.append(MomentumFunction.from_radial(q, w_dq, np.array([amp]),
                                                 mass=mass))
    return modes


def adapted_family(n: int, s_lo: float = 0.1, s_hi: float = 5.0,
                   mass: float = 0.0) -> ModeFamily:
    """Thermally ordered grid family: n point modes, low frequency first.

    Low-frequency modes carry the largest thermal weight, so the family
    enumerates modes in order of decreasing spectral weight for any KMS
    state; prefixes are nested by construction.
    """
    if n < 1:
        raise ValidationError("family size must be >= 1")
    if not (0 < s_lo < s_hi):
        raise ValidationError("need 0 < s_lo < s_hi")
    centers = np.linspace(s_lo, s_hi, n)
    hw = (centers[1] - centers[0]) / 2.0 if n > 1 else (s_hi - s_lo) / 2.0
    return ModeFamily(
        _point_mass_modes(centers, hw, mass=mass),
        descriptor="adapted:n=%d,s_lo=%s,s_hi=%s" % (n, fmt17(s_lo), fmt17(s_hi)))


def single_frequency_family(frequencies, mass: float = 0.0) -> ModeFamily:
    """Point modes at explicitly chosen frequencies."""
    freqs = np.asarray(frequencies, dtype=float).reshape(-1)
    if len(np.unique(freqs)) != len(freqs):
        raise ValidationError("frequencies must be distinct")
    hw = 0.5 * float(np.min(np.abs(freqs)))
    return ModeFamily(
        _point_mass_modes(freqs, hw, mass=mass),
        descriptor="single:%s" % ",".join(fmt17(x) for x in freqs))


def mode_occupations(state: QuasiFreeState, family: ModeFamily,
                     n_c: int = 48) -> np.ndarray:
    """Number expectation of each mode in the given state.

    Uses the thermally weighted norm <kappa e, kappa e> = 1 + 2<n>; the
    state's frame (including boosts) is folded in by the correlator
    machinery, so a boosted thermal state yields the band-averaged
    occupation of each lab-frame mode.
    """
    occ = np.empty(len(family))
    for k, mode in enumerate(family.modes):
        g = doubled_gram(state, mode, mode, n_c=n_c)
        if abs(g.imag) > _GRAM_TOL:
            raise NumericalError(
                "thermal Gram diagonal has imaginary part %s" % fmt17(g.imag))
        occ[k] = (g.real - 1.0) / 2.0
        if occ[k] < -_GRAM_TOL:
            raise NumericalError(
                "negative occupation %s from thermal Gram" % fmt17(occ[k]))
    return np.clip(occ, 0.0, None)


class RestrictedGaussianState:
    """Covariance data of a quasi-free state restricted to a mode family.

    Stores the Hermitian thermal Gram M = S + iA of the modes, where S
    is the symmetrized two-point matrix and A the commutator part.  The
    admissibility bound M >= identity (the uncertainty relation for
    orthonormal modes) is enforced on construction.
    """

    def __init__(self, gram, cutoff: int = 12):
        M = np.asarray(gram, dtype=complex)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValidationError("thermal Gram must be a square matrix")
        if np.max(np.abs(M - M.conj().T)) > _GRAM_TOL:
            raise ValidationError("thermal Gram must be Hermitian")
        evals = np.linalg.eigvalsh(M)
        if np.min(evals) < 1.0 - _GRAM_TOL:
            raise ValidationError(
                "uncertainty violation: thermal Gram eigenvalue %s below 1"
                % fmt17(float(np.min(evals))))
        if int(cutoff) < 2:
            raise ValidationError("occupation cutoff must be >= 2")
        self.gram = M
        self.cutoff = int(cutoff)

    @property
    def n_modes(self) -> int:
        return self.gram.shape[0]

    @property
    def S(self) -> np.ndarray:
        return self.gram.real.copy()

    @property
    def A(self) -> np.ndarray:
        return self.gram.imag.copy()

    def occupations(self) -> np.ndarray:
        off = self.gram - np.diag(np.diag(self.gram))
        if np.max(np.abs(off)) > _GRAM_TOL:
            raise UnsupportedConfigurationError(
                "restriction does not factor over modes: off-diagonal Gram "
                "entry %s" % fmt17(float(np.max(np.abs(off)))))
        occ = (np.diag(self.gram).real - 1.0) / 2.0
        return np.clip(occ, 0.0, None)

    def density_matrix(self):
        """Product thermal density matrix reproducing the Gram moments.

        The per-mode cutoff starts at the stored value and is raised
        until the truncated tail and the realized number expectation
        both meet tolerance.
        """
        occs = self.occupations()
        diags = []
        self.achieved_cutoffs = []
        for nbar in occs:
            diags.append(_thermal_diagonal(nbar, self.cutoff))
            self.achieved_cutoffs.append(len(diags[-1]) - 1)
        full = diags[0]
        for d in diags[1:]:
            full = np.kron(full, d)
        return np.diag(full)

    def verify_moments(self, rho) -> float:
        """Max defect of realized per-mode number expectations vs target."""
        occs = self.occupations()
        dims = [c + 1 for c in self.achieved_cutoffs]
        diag = np.real(np.diag(np.asarray(rho)))
        defect = 0.0
        for k, dim in enumerate(dims):
            before = int(np.prod(dims[:k])) if k else 1
            after = int(np.prod(dims[k + 1:])) if k + 1 < len(dims) else 1
            marg = diag.reshape(before, dim, after).sum(axis=(0, 2))
            got = float(np.sum(np.arange(dim) * marg))
            defect = max(defect, abs(got - occs[k]))
        return defect


def _thermal_diagonal(nbar: float, cutoff: int) -> np.ndarray:
    """Normalized truncated geometric weights for occupation nbar.

    Raises the cutoff until the tail is below 1e-6 and the realized
    number expectation matches nbar within 1e-8.
    """
    if nbar < 0:
        raise ValidationError("occupation must be >= 0")
    if nbar == 0.0:
        return np.concatenate([[1.0], np.zeros(cutoff)])
    x = nbar / (nbar + 1.0)
    c = int(cutoff)
    while True:
        n = np.arange(c + 1)
        p = (1.0 - x) * x ** n
        tail = x ** (c + 1)
        probs = p / p.sum()
        got = float(np.sum(n * probs))
        if tail < _TAIL_TOL and abs(got - nbar) < _MOMENT_TOL:
            return probs
        if c >= _MAX_CUTOFF:
            raise NumericalError(
                "cutoff %d cannot reach moment tolerance for occupation %s"
                % (c, fmt17(nbar)))
        c = min(2 * c, _MAX_CUTOFF)


def restricted_gaussian(state: QuasiFreeState, family: ModeFamily,
                        cutoff: int = 12, n_c: int = 48):
    """Covariance-level restriction of a state to a mode family."""
    n = len(family)
    M = np.zeros((n, n), dtype=complex)
    for i in range(n):
        for j in range(i, n):
            if i == j or family.modes[i].same_points(family.modes[j]):
                M[i, j] = doubled_gram(state, family.modes[i],
                                       family.modes[j], n_c=n_c)
            elif _supports_disjoint(family.modes[i], family.modes[j]):
                M[i, j] = 0.0
            else:
                raise StructuralError(
                    "modes must share a point set or have disjoint supports")
            M[j, i] = np.conj(M[i, j])
    return RestrictedGaussianState(M, cutoff=cutoff)


def restrict_state(state: QuasiFreeState, family: ModeFamily,
                   cutoff: int = 12, n_c: int = 48):
    """Density matrix of the restriction, with a post-hoc moment check."""
    rgs = restricted_gaussian(state, family, cutoff=cutoff, n_c=n_c)
    rho = rgs.density_matrix()
    defect = rgs.verify_moments(rho)
    if defect > _MOMENT_TOL:
        raise NumericalError(
            "realized moments miss the covariance target by %s" % fmt17(defect))
    return rho


def fidelity(rho, sigma) -> float:
    """Uhlmann fidelity tr sqrt(sqrt(rho) sigma sqrt(rho)).

    Computed by eigendecomposition of Hermitian PSD inputs; symmetric in
    its arguments to numerical precision.
    """
    rho = np.asarray(rho, dtype=complex)
    sigma = np.asarray(sigma, dtype=complex)
    if rho.shape != sigma.shape or rho.ndim != 2:
        raise ValidationError("states must be square matrices on one space")
    for name, M in (("rho", rho), ("sigma", sigma)):
        if np.max(np.abs(M - M.conj().T)) > 1e-10:
            raise ValidationError("%s is not Hermitian" % name)
        evals = np.linalg.eigvalsh(M)
        if float(np.min(evals)) < -1e-10:
            raise ValidationError(
                "%s is not PSD: eigenvalue %s" % (name, fmt17(float(np.min(evals)))))
        if abs(float(np.sum(evals)) - 1.0) > 1e-8:
            raise ValidationError("%s does not have unit trace" % name)
    evals, vecs = np.linalg.eigh(rho)
    root = (vecs * np.sqrt(np.clip(evals, 0.0, None))) @ vecs.conj().T
    inner = root @ sigma @ root
    vals = np.linalg.eigvalsh(inner)
    return float(np.sum(np.sqrt(np.clip(vals, 0.0, None))))


def thermal_fidelity(n1: float, n2: float) -> float:
    """Closed-form fidelity of two single-mode thermal states."""
    if n1 < 0 or n2 < 0:
        raise ValidationError("occupations must be >= 0")
    return 1.0 / (math.sqrt((n1 + 1.0) * (n2 + 1.0)) - math.sqrt(n1 * n2))


def thermal_fidelity_spectral(n1: float, n2: float,
                              cutoff: int | None = None) -> float:
    """Brute-force spectral route: sum of sqrt(p_n q_n) over the spectrum.

    Independent of the closed form; the cutoff is raised until both
    truncated tails are negligible.
    """
    if cutoff is None:
        d1 = _thermal_diagonal(n1, 12)
        d2 = _thermal_diagonal(n2, 12)
        c = max(len(d1), len(d2)) - 1
    else:
        c = int(cutoff)
    n = np.arange(c + 1)
    x = n1 / (n1 + 1.0) if n1 > 0 else 0.0
    y = n2 / (n2 + 1.0) if n2 > 0 else 0.0
    p = (1.0 - x) * x ** n if n1 > 0 else np.concatenate([[1.0], np.zeros(c)])
    q = (1.0 - y) * y ** n if n2 > 0 else np.concatenate([[1.0], np.zeros(c)])
    return float(np.sum(np.sqrt(p * q)))


@dataclass
class FidelityCurve:
    """Fidelity of nested restrictions against mode count."""

    ns: np.ndarray
    values: np.ndarray
    threshold: float
    n_star: int | None
    slope: float
    descriptor: str = ""
    meta: dict = field(default_factory=dict)

    def save(self, path):
        write_csv(path, "n,fidelity", [self.ns, self.values])
        pairs = [("family", self.descriptor),
                 ("threshold", fmt17(self.threshold)),
                 ("n_star", "none" if self.n_star is None else str(self.n_star)),
                 ("log_slope", fmt17(self.slope))]
        pairs += sorted((k, str(v)) for k, v in self.meta.items())
        write_keyvals(str(path) + ".meta", pairs)


def overlap_decay(state1: QuasiFreeState, state2: QuasiFreeState,
                  family: ModeFamily, threshold: float = 0.01,
                  n_c: int = 48) -> FidelityCurve:
    """Fidelity of the two restrictions over nested family prefixes.

    Restrictions of both states factor over the point-mode family, so
    F_n is the running product of single-mode thermal fidelities and is
    non-increasing by construction.  Reports the first n with
    F_n < threshold (None when not reached, which is an outcome, not an
    error) and the mean log-slope of the decay.
    """
    if not (0.0 < threshold < 1.0):
        raise ValidationError("threshold must be in (0, 1)")
    occ1 = mode_occupations(state1, family, n_c=n_c)
    occ2 = mode_occupations(state2, family, n_c=n_c)
    factors = np.array([thermal_fidelity(a, b) for a, b in zip(occ1, occ2)])
    values = np.cumprod(factors)
    ns = np.arange(1, len(values) + 1)
    hit = np.nonzero(values < threshold)[0]
    n_star = int(ns[hit[0]]) if len(hit) else None
    logs = np.log(np.clip(values, 1e-300, None))
    slope = float(np.polyfit(ns, logs, 1)[0]) if len(ns) > 1 else 0.0
    return FidelityCurve(ns=ns, values=values, threshold=threshold,
                         n_star=n_star, slope=slope,
                         descriptor=family.descriptor,
                         meta={"state1": repr(state1), "state2": repr(state2)})
