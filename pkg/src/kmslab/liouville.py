"""Truncated detector-field Liouvilleans and return-to-equilibrium dynamics.

The detector is a two-level system with gap E; its doubled (GNS) space is
C^2 (x) C^2 with the observable algebra acting on the first factor.  The
reservoir is a finite family of signed-frequency modes sampling the glued
thermal form factor, second-quantized on a truncated Fock space.  The free
generator is diagonal in the occupation basis; the interaction couples a
2x2 monopole matrix to a field operator built from the mode amplitudes,
minus its modular conjugate, so that the coupled generator still
annihilates the perturbed equilibrium vector in the untruncated limit.

Sign and pairing conventions follow the one-particle glue: a mode at s > 0
carries weight sqrt(1 + mu), its mirror at -s carries sqrt(mu) with the
phase -e^{i zeta}, and the two are exchanged by the modular conjugation.
"""

from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    AmbiguousThresholdWarning,
    NumericalError,
    ResonanceWarning,
    StructuralError,
    TruncationWarning,
    ValidationError,
)
from .oneparticle import default_coupling, planck_occupation
from .textio import fmt17, write_csv

__all__ = [
    "ReservoirDiscretization",
    "TruncatedFock",
    "LiouvilleanOperator",
    "ModularConjugation",
    "SpectrumReport",
    "SweepReport",
    "EvolutionResult",
    "RTEReport",
    "TomitaReport",
    "form_factor_values",
    "paired_modes",
    "jittered_modes",
    "resonant_shell_modes",
    "detector_gibbs_vector",
    "gns_vacuum",
    "product_initial",
    "one_boson_initial",
    "assemble_L0",
    "assemble_coupling",
    "assemble_liouvillean",
    "modular_conjugation",
    "perturbed_kms_vector",
    "spectrum_scan",
    "kernel_splitting_sweep",
    "evolve",
    "reduce_detector",
    "trace_distance",
    "fgr_window",
    "rte_distance_series",
    "tomita_residual",
    "write_coordinate",
]

_HERMITICITY_TOL = 1e-13
_DENSE_DIM = 4096


def _gluing_phase(zeta):
    # -e^{i zeta}, with the rounding residue of pi-multiples snapped away
    # so the default gluing keeps mode amplitudes and generators real.
    phase = -cmath.exp(1j * zeta)
    if abs(phase.imag) < 1e-15:
        return complex(phase.real, 0.0)
    return phase


def form_factor_values(s, beta, coupling=None, zeta=math.pi, amplitude=1.0):
    """Evaluate the glued form factor at signed frequencies s.

    For s > 0 the value is s*sqrt(1+mu_beta(s))*u(s); at -s it is
    -e^{i zeta} * s*sqrt(mu_beta(s))*conj(u(s)), which keeps the
    detailed-balance ratio |f(-s)|^2/|f(s)|^2 = e^{-beta s} exact.
    """
    if coupling is None:
        coupling = default_coupling
    s = np.asarray(s, dtype=float)
    if np.any(s == 0.0):
        raise ValidationError("form factor is undefined at s = 0")
    phase = _gluing_phase(zeta)
    out = np.empty(s.shape, dtype=complex)
    pos = s > 0
    spos = s[pos]
    out[pos] = spos * np.sqrt(1.0 + planck_occupation(spos, beta)) \
        * amplitude * np.asarray(coupling(spos), dtype=complex)
    sneg = -s[~pos]
    out[~pos] = phase * sneg * np.sqrt(planck_occupation(sneg, beta)) \
        * np.conj(amplitude * np.asarray(coupling(sneg), dtype=complex))
    if abs(zeta - math.pi) < 1e-15 and np.max(np.abs(out.imag)) == 0.0:
        return out.real.astype(float)
    return out


@dataclass
class ReservoirDiscretization:
    """Finite mode family (s_j, w_j, f_j) sampling the glued form factor."""

    s: np.ndarray
    w: np.ndarray
    f: np.ndarray
    beta: float
    zeta: float = math.pi
    coupling: Callable | None = None
    amplitude: float = 1.0

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        self.f = np.asarray(self.f)
        if self.s.ndim != 1 or self.s.shape != self.w.shape or self.s.shape != self.f.shape:
            raise ValidationError("mode arrays s, w, f must be 1-d and congruent")
        if np.any(self.s == 0.0):
            raise ValidationError("mode frequencies must be nonzero")
        if len(np.unique(self.s)) != len(self.s):
            raise ValidationError("mode frequencies must be distinct")
        if np.any(self.w <= 0.0):
            raise ValidationError("quadrature weights must be positive")

    @property
    def n_modes(self) -> int:
        return len(self.s)

    def mirror_index(self) -> np.ndarray:
        """Index map j -> j' with s[j'] = -s[j]; StructuralError if unpaired."""
        order = {}
        for j, sv in enumerate(self.s):
            order[sv] = j
        mirror = np.empty(self.n_modes, dtype=int)
        for j, sv in enumerate(self.s):
            if -sv not in order:
                raise StructuralError(
                    "modes are not +/- paired: no partner for s=%s" % fmt17(sv))
            mirror[j] = order[-sv]
        return mirror

    @property
    def is_paired(self) -> bool:
        try:
            self.mirror_index()
        except StructuralError:
            return False
        return True

    def norm_defect(self, n_quad: int = 4000) -> float:
        """Relative defect of sum |f_j|^2 against the continuum glued norm."""
        if self.coupling is None:
            raise ValidationError("norm defect needs the continuum coupling")
        smax = float(np.max(np.abs(self.s)))
        q = np.linspace(1e-6, smax, n_quad)
        u2 = np.abs(self.amplitude * np.asarray(self.coupling(q), dtype=complex)) ** 2
        mu = planck_occupation(q, self.beta)
        dens = 4.0 * math.pi * q * q * (1.0 + 2.0 * mu) * u2
        cont = float(np.trapezoid(dens, q))
        disc = float(np.sum(np.abs(self.f) ** 2))
        return abs(disc - cont) / cont

    def spectral_density(self, energy: float) -> float:
        """Continuum coupling density 4*pi*|f_beta(E)|^2 at a positive energy."""
        if self.coupling is None:
            raise ValidationError("spectral density needs the continuum coupling")
        val = form_factor_values(np.array([float(energy)]), self.beta,
                                 coupling=self.coupling, zeta=self.zeta,
                                 amplitude=self.amplitude)[0]
        return 4.0 * math.pi * abs(val) ** 2

    def recurrence_time(self) -> float:
        spacing = float(np.min(np.diff(np.sort(self.s))))
        return 2.0 * math.pi / spacing


def _gl_panel(a: float, b: float, n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return a + 0.5 * (b - a) * (x + 1.0), 0.5 * (b - a) * w


def _pack(beta, s, w, coupling, zeta, amplitude) -> ReservoirDiscretization:
    f = np.sqrt(4.0 * math.pi * w) * form_factor_values(
        s, beta, coupling=coupling, zeta=zeta, amplitude=amplitude)
    return ReservoirDiscretization(s=s, w=w, f=f, beta=beta, zeta=zeta,
                                   coupling=coupling or default_coupling,
                                   amplitude=amplitude)


def paired_modes(beta, n_side=12, s_min=0.02, s_max=6.0, split=1.5,
                 coupling=None, zeta=math.pi, amplitude=1.0):
    """Exactly mirrored +/- grid.  Resonant by construction; J-compatible."""
    n1 = n_side // 2
    n2 = n_side - n1
    q1, w1 = _gl_panel(s_min, split, n1)
    q2, w2 = _gl_panel(split, s_max, n2)
    q = np.concatenate([q1, q2])
    wq = np.concatenate([w1, w2])
    s = np.concatenate([q, -q])
    w = np.concatenate([wq, wq])
    return _pack(beta, s, w, coupling, zeta, amplitude)


def jittered_modes(beta, seed, n_side=12, s_min=0.02, s_max=6.0,
                   split_lo=1.2, split_hi=1.8, coupling=None,
                   zeta=math.pi, amplitude=1.0):
    """Non-resonant grid: independent panel split points on the two sides."""
    rng = np.random.default_rng(seed)
    n1 = n_side // 2
    n2 = n_side - n1

    def one_side():
        b = split_lo + (split_hi - split_lo) * rng.random()
        q1, w1 = _gl_panel(s_min, b, n1)
        q2, w2 = _gl_panel(b, s_max, n2)
        return np.concatenate([q1, q2]), np.concatenate([w1, w2])

    qp, wp = one_side()
    qm, wm = one_side()
    s = np.concatenate([qp, -qm])
    w = np.concatenate([wp, wm])
    return _pack(beta, s, w, coupling, zeta, amplitude)


def resonant_shell_modes(beta, gap, seed, orders=(2, 8, 2), s_min=0.02,
                         s_max=6.0, half_width_lo=0.35, half_width_hi=0.5,
                         coupling=None, zeta=math.pi, amplitude=1.0):
    """Non-resonant grid concentrating quadrature around |s| = gap.

    The middle panel brackets the detector gap so the modes that exchange
    quanta with the detector are densely resolved; revival of the resonant
    shell then happens late compared to the golden-rule decay.
    """
    rng = np.random.default_rng(seed)

    def one_side():
        hw = half_width_lo + (half_width_hi - half_width_lo) * rng.random()
        panels = [(s_min, gap - hw, orders[0]),
                  (gap - hw, gap + hw, orders[1]),
                  (gap + hw, s_max, orders[2])]
        qs, ws = [], []
        for a, b, n in panels:
            qq, ww = _gl_panel(a, b, n)
            qs.append(qq)
            ws.append(ww)
        return np.concatenate(qs), np.concatenate(ws)

    qp, wp = one_side()
    qm, wm = one_side()
    s = np.concatenate([qp, -qm])
    w = np.concatenate([wp, wm])
    return _pack(beta, s, w, coupling, zeta, amplitude)


class TruncatedFock:
    """Detector (C^2 x C^2) tensor truncated bosonic Fock space.

    The reservoir occupation basis is enumerated in lexicographic order,
    either with a total-occupation budget (n_tot_max) or per-mode caps
    (n_max).  Full-space indices are detector-major: index = d*R + r with
    d in {0:++, 1:+-, 2:-+, 3:--}.
    """

    detector_dim = 4

    def __init__(self, disc: ReservoirDiscretization, n_tot_max=None, n_max=None):
        if (n_tot_max is None) == (n_max is None):
            raise ValidationError("give exactly one of n_tot_max or n_max")
        self.disc = disc
        N = disc.n_modes
        if n_tot_max is not None:
            if int(n_tot_max) < 1:
                raise ValidationError("n_tot_max must be >= 1")
            self.n_tot_max = int(n_tot_max)
            self.caps = np.full(N, self.n_tot_max, dtype=np.int64)
        else:
            caps = np.full(N, int(n_max), dtype=np.int64)
            if np.any(caps < 1):
                raise ValidationError("n_max must be >= 1")
            self.n_tot_max = int(np.sum(caps))
            self.caps = caps
        self.basis = self._enumerate(N, self.caps, self.n_tot_max)
        base = (int(np.max(self.caps)) if N else 0) + 2
        self._radix = base ** np.arange(N - 1, -1, -1, dtype=np.int64)
        self._keys = self.basis @ self._radix
        if np.any(np.diff(self._keys) <= 0):
            raise StructuralError("occupation basis is not key-sorted")
        self.reservoir_dim = self.basis.shape[0]
        self.dim = 4 * self.reservoir_dim
        self.vacuum = 0
        self.occupation_energy = self.basis @ self.disc.s

    @staticmethod
    def _enumerate(N, caps, budget) -> np.ndarray:
        rows = []
        state = np.zeros(N, dtype=np.int64)

        def rec(j, left):
            if j == N:
                rows.append(state.copy())
                return
            for n in range(min(int(caps[j]), left) + 1):
                state[j] = n
                rec(j + 1, left - n)
            state[j] = 0

        rec(0, budget)
        return np.array(rows, dtype=np.int64)

    def index_of(self, occupation) -> int:
        key = np.asarray(occupation, dtype=np.int64) @ self._radix
        i = int(np.searchsorted(self._keys, key))
        if i >= len(self._keys) or self._keys[i] != key:
            raise ValidationError("occupation tuple outside the truncation")
        return i

    def occupation_of(self, index) -> np.ndarray:
        return self.basis[index].copy()

    def creation_matrix(self, mode: int) -> sp.csr_matrix:
        """Matrix of a_mode^dagger on the truncated reservoir basis."""
        B = self.basis
        tot = B.sum(axis=1)
        ok = (B[:, mode] < self.caps[mode]) & (tot < self.n_tot_max)
        cols = np.nonzero(ok)[0]
        child_keys = self._keys[cols] + self._radix[mode]
        rows = np.searchsorted(self._keys, child_keys)
        vals = np.sqrt(B[cols, mode] + 1.0)
        return sp.csr_matrix((vals, (rows, cols)),
                             shape=(self.reservoir_dim, self.reservoir_dim))

    def field_matrix(self, amplitudes) -> sp.csr_matrix:
        """Phi(f) = sum_j f_j a_j^dagger + conj(f_j) a_j, truncated."""
        amplitudes = np.asarray(amplitudes)
        acc = None
        for j in range(self.disc.n_modes):
            if amplitudes[j] == 0:
                continue
            A = self.creation_matrix(j)
            term = amplitudes[j] * A
            acc = term if acc is None else acc + term
        if acc is None:
            return sp.csr_matrix((self.reservoir_dim, self.reservoir_dim))
        out = acc + acc.conj().T
        if np.isrealobj(amplitudes):
            out = out.real
        return out.tocsr()


def _hermiticity_defect(M) -> float:
    D = (M - M.conj().T).tocoo()
    if D.nnz == 0:
        return 0.0
    return float(np.max(np.abs(D.data)))


def _check_hermitian(M, label: str):
    defect = _hermiticity_defect(M)
    if defect >= _HERMITICITY_TOL:
        raise StructuralError(
            "%s is not Hermitian: max entry defect %s" % (label, fmt17(defect)))


@dataclass
class LiouvilleanOperator:
    """Assembled generator with tagged parts for introspection."""

    matrix: sp.csr_matrix
    parts: dict
    lam: float
    beta: float
    gap: float
    space: TruncatedFock

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def norm_estimate(self) -> float:
        """Infinity norm of the matrix, the documented proxy for ||L||."""
        return float(spla.norm(self.matrix, np.inf))

    def with_lambda(self, lam: float) -> "LiouvilleanOperator":
        mat = self.parts["L0"] + lam * self.parts["V"]
        return LiouvilleanOperator(matrix=mat.tocsr(), parts=self.parts,
                                   lam=float(lam), beta=self.beta,
                                   gap=self.gap, space=self.space)


def detector_gibbs_vector(E: float, beta: float) -> np.ndarray:
    """GNS vector of the detector Gibbs state on C^2 x C^2."""
    if E <= 0 or beta <= 0:
        raise ValidationError("detector gap and beta must be positive")
    x = math.exp(-beta * E / 2.0)
    v = np.array([x, 0.0, 0.0, 1.0])
    return v / math.sqrt(1.0 + x * x)


def gns_vacuum(space: TruncatedFock, E: float, beta: float) -> np.ndarray:
    """Omega_0: detector Gibbs vector tensor the reservoir Fock vacuum."""
    g = detector_gibbs_vector(E, beta)
    out = np.zeros(space.dim)
    R = space.reservoir_dim
    for d in range(4):
        out[d * R + space.vacuum] = g[d]
    return out


def product_initial(space: TruncatedFock, detector_rho: np.ndarray) -> np.ndarray:
    """Purification vector of (detector density matrix) x reservoir vacuum."""
    rho = np.asarray(detector_rho, dtype=complex)
    if rho.shape != (2, 2):
        raise ValidationError("detector density matrix must be 2x2")
    if np.max(np.abs(rho - rho.conj().T)) > 1e-12:
        raise ValidationError("detector density matrix must be Hermitian")
    evals, evecs = np.linalg.eigh(rho)
    if np.any(evals < -1e-10):
        raise ValidationError("detector density matrix must be PSD")
    if abs(np.sum(evals) - 1.0) > 1e-10:
        raise ValidationError("detector density matrix must have unit trace")
    root = (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.conj().T
    psi = np.zeros(space.dim, dtype=complex)
    R = space.reservoir_dim
    for a in range(2):
        for b in range(2):
            psi[(2 * a + b) * R + space.vacuum] = root[a, b]
    return psi / np.linalg.norm(psi)


def one_boson_initial(space: TruncatedFock, detector_vec: np.ndarray,
                      mode_profile: np.ndarray) -> np.ndarray:
    """Detector doubled vector tensor a normalized one-boson wavepacket."""
    dv = np.asarray(detector_vec, dtype=complex)
    if dv.shape != (4,):
        raise ValidationError("detector vector must have 4 components")
    prof = np.asarray(mode_profile, dtype=complex)
    if prof.shape != (space.disc.n_modes,):
        raise ValidationError("mode profile length must match the mode count")
    nrm = np.linalg.norm(prof)
    if nrm == 0:
        raise ValidationError("mode profile must be nonzero")
    prof = prof / nrm
    psi = np.zeros(space.dim, dtype=complex)
    R = space.reservoir_dim
    occ = np.zeros(space.disc.n_modes, dtype=np.int64)
    for j in range(space.disc.n_modes):
        if prof[j] == 0:
            continue
        occ[:] = 0
        occ[j] = 1
        r = space.index_of(occ)
        for d in range(4):
            psi[d * R + r] += dv[d] * prof[j]
    return psi / np.linalg.norm(psi)


def assemble_L0(space: TruncatedFock, E: float) -> LiouvilleanOperator:
    """Free generator: detector splitting plus second-quantized frequency.

    Diagonal in the occupation basis apart from the (diagonal) 4x4 detector
    block; warns when reservoir sums collide with {0, +-E} exactly, since a
    resonant grid keeps a large degenerate kernel at every coupling.
    """
    if E <= 0:
        raise ValidationError("detector gap must be positive")
    R = space.reservoir_dim
    d_energy = np.array([0.0, E, -E, 0.0])
    diag = (np.repeat(d_energy, R)
            + np.tile(space.occupation_energy, 4))
    collisions = []
    occ_tot = space.basis.sum(axis=1)
    for d in range(4):
        vals = d_energy[d] + space.occupation_energy
        hit = np.nonzero(np.abs(vals) < 1e-12)[0]
        for r in hit:
            if d in (0, 3) and occ_tot[r] == 0:
                continue
            collisions.append((d, r))
    if collisions:
        listing = ", ".join(
            "(detector %d, occupation %s)" % (d, tuple(int(x) for x in space.basis[r]))
            for d, r in collisions[:8])
        more = "" if len(collisions) <= 8 else " and %d more" % (len(collisions) - 8)
        warnings.warn(
            "resonant mode grid: %d reservoir sums collide with {0, +-E}: %s%s"
            % (len(collisions), listing, more), ResonanceWarning, stacklevel=2)
    mat = sp.diags(diag).tocsr()
    parts = {"L_D": sp.kron(sp.diags(d_energy), sp.identity(R)).tocsr(),
             "dGamma": sp.kron(sp.identity(4),
                               sp.diags(space.occupation_energy)).tocsr()}
    return LiouvilleanOperator(matrix=mat, parts=parts, lam=0.0,
                               beta=space.disc.beta, gap=E, space=space)


def assemble_coupling(space: TruncatedFock, G: np.ndarray):
    """Interaction I = G x 1 x Phi(f) and V = I - (its modular conjugate).

    The conjugate is taken in closed form: 1 x conj(G) x Phi(e^{-beta s/2} f),
    which uses the detailed-balance property of the glued amplitudes and
    avoids constructing J.
    """
    G = np.asarray(G, dtype=complex)
    if G.shape != (2, 2):
        raise ValidationError("monopole matrix must be 2x2")
    if np.max(np.abs(G - G.conj().T)) > 1e-12:
        raise ValidationError("monopole matrix must be Hermitian")
    if np.max(np.abs(G.imag)) == 0.0:
        G = G.real
    disc = space.disc
    Phi_f = space.field_matrix(disc.f)
    Phi_g = space.field_matrix(np.exp(-disc.beta * disc.s / 2.0) * disc.f)
    I2 = sp.identity(2, format="csr")
    I_mat = sp.kron(sp.kron(sp.csr_matrix(G), I2), Phi_f).tocsr()
    JIJ = sp.kron(sp.kron(I2, sp.csr_matrix(np.conj(G))), Phi_g).tocsr()
    V = (I_mat - JIJ).tocsr()
    _check_hermitian(I_mat, "I")
    _check_hermitian(JIJ, "JIJ")
    _check_hermitian(V, "V")
    return I_mat, V


def assemble_liouvillean(space: TruncatedFock, E: float, G: np.ndarray,
                         lam: float) -> LiouvilleanOperator:
    """Full coupled generator L0 + lam*(I - JIJ) with parts tagged."""
    L0 = assemble_L0(space, E)
    I_mat, V = assemble_coupling(space, G)
    mat = (L0.matrix + lam * V).tocsr()
    _check_hermitian(mat, "L")
    parts = dict(L0.parts)
    parts.update({"L0": L0.matrix, "I": I_mat, "V": V})
    return LiouvilleanOperator(matrix=mat, parts=parts, lam=float(lam),
                               beta=space.disc.beta, gap=float(E), space=space)


class ModularConjugation:
    """Anti-unitary J: detector factor swap and mode mirror, with conjugation.

    The reservoir part maps occupation of mode s_j to its mirror -s_j and
    multiplies by (-e^{i zeta}) per quantum; the detector part exchanges the
    two C^2 factors.  Applied as J v = phases * conj(v o permutation).
    """

    def __init__(self, space: TruncatedFock):
        self.space = space
        disc = space.disc
        mirror = disc.mirror_index()
        B = space.basis
        mirrored = B[:, mirror]
        keys = mirrored @ space._radix
        perm_r = np.searchsorted(space._keys, keys)
        if np.any(space._keys[perm_r] != keys):
            raise StructuralError("mirrored occupation leaves the truncation")
        phase_unit = _gluing_phase(disc.zeta)
        tot = B.sum(axis=1)
        res_phase = phase_unit ** tot
        det_perm = np.array([0, 2, 1, 3])
        R = space.reservoir_dim
        self._perm = np.concatenate(
            [det_perm[d] * R + perm_r for d in range(4)])
        self._phase = np.tile(res_phase, 4)
        if np.max(np.abs(self._phase.imag)) == 0.0:
            self._phase = self._phase.real

    def apply(self, vec: np.ndarray) -> np.ndarray:
        out = np.empty(len(vec), dtype=complex)
        out[self._perm] = self._phase * np.conj(vec)
        if np.isrealobj(vec) and np.isrealobj(self._phase):
            return out.real
        return out

    def conjugate_matrix(self, M) -> sp.csr_matrix:
        """Return J M J as a sparse matrix (for antisymmetry checks)."""
        P = sp.csr_matrix(
            (self._phase, (self._perm, np.arange(len(self._perm)))),
            shape=M.shape)
        return (P @ M.conj() @ P.conj()).tocsr()


def modular_conjugation(space: TruncatedFock) -> ModularConjugation:
    return ModularConjugation(space)


def perturbed_kms_vector(L0: LiouvilleanOperator, I_mat, lam: float,
                         beta: float, consistency_tol: float = 1e-9):
    """Normalized e^{-beta(L0 + lam I)/2} Omega_0 via exponential action.

    A full-step against two-half-step consistency check guards the Krylov
    action; disagreement raises a numerical error carrying the residual.
    """
    space = L0.space
    omega0 = gns_vacuum(space, L0.gap, beta)
    if lam == 0.0:
        return omega0.copy()
    A = (-(beta / 2.0) * (L0.matrix + lam * I_mat)).tocsc()
    full = spla.expm_multiply(A, omega0)
    half = spla.expm_multiply((0.5 * A).tocsc(),
                              spla.expm_multiply((0.5 * A).tocsc(), omega0))
    scale = np.linalg.norm(full)
    if scale == 0.0 or not np.all(np.isfinite(full)):
        raise NumericalError("exponential action diverged")
    residual = float(np.linalg.norm(full - half) / scale)
    if residual > consistency_tol:
        raise NumericalError(
            "exponential action failed to converge: half-step residual %s"
            % fmt17(residual))
    return full / scale


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    kernel_dim: int
    theta: float
    norm_estimate: float
    gap_below: float
    gap_above: float
    residual_max: float
    method: str

    def save(self, path):
        idx = np.arange(len(self.eigenvalues))
        write_csv(path, "index,eigenvalue", [idx, self.eigenvalues])


def spectrum_scan(L: LiouvilleanOperator, theta: float | None = None,
                  k: int = 12) -> SpectrumReport:
    """Eigenvalues near zero and the numerical kernel dimension.

    Dense eigendecomposition below dimension 4096; otherwise a shift-invert
    Lanczos solve around zero returning the k eigenvalues closest to the
    shift, with residuals checked against 1e-9 * ||L||.  The threshold
    theta defaults to 1e-8 * ||L|| (infinity norm proxy) and is reported so
    the kernel count is auditable; a warning fires when an eigenvalue
    magnitude falls within a factor of 3 of theta.
    """
    norm = L.norm_estimate()
    if theta is None:
        theta = 1e-8 * max(norm, 1.0)
    theta = float(theta)
    residual_max = 0.0
    if L.dim < _DENSE_DIM:
        dense = L.matrix.toarray()
        vals = np.linalg.eigvalsh(dense)
        method = "dense"
        order = np.argsort(np.abs(vals))
        eigs = vals[order]
    else:
        sigma = 1e-7 * max(norm, 1.0)
        vals, vecs = spla.eigsh(L.matrix.tocsc(), k=min(k, L.dim - 2),
                                sigma=sigma, which="LM")
        res = L.matrix @ vecs - vecs * vals
        residual_max = float(np.max(np.linalg.norm(res, axis=0)))
        order = np.argsort(np.abs(vals))
        eigs = vals[order]
        method = "shift-invert"
    mags = np.abs(eigs)
    kernel_dim = int(np.sum(mags < theta))
    below = mags[mags < theta]
    above = mags[mags >= theta]
    gap_below = float(np.max(below)) if len(below) else 0.0
    gap_above = float(np.min(above)) if len(above) else math.inf
    near = (mags > theta / 3.0) & (mags < theta * 3.0)
    if np.any(near):
        warnings.warn(
            "kernel threshold theta=%s sits inside an eigenvalue cluster: "
            "largest magnitude below theta %s, smallest above %s"
            % (fmt17(theta), fmt17(gap_below), fmt17(gap_above)),
            AmbiguousThresholdWarning, stacklevel=2)
    return SpectrumReport(eigenvalues=eigs, kernel_dim=kernel_dim,
                          theta=theta, norm_estimate=norm,
                          gap_below=gap_below, gap_above=gap_above,
                          residual_max=residual_max, method=method)


@dataclass
class SweepReport:
    lambdas: np.ndarray
    gaps: np.ndarray
    kernel_dims: np.ndarray
    fit_exponent: float
    fit_prefactor: float
    theta: float

    def save(self, path):
        fit = np.full(len(self.lambdas), self.fit_exponent)
        write_csv(path, "lambda,gap,fit_exponent", [self.lambdas, self.gaps, fit])


def kernel_splitting_sweep(space: TruncatedFock, E: float, G: np.ndarray,
                           lambdas: Sequence[float],
                           theta: float | None = None) -> SweepReport:
    """Scan the near-zero spectrum over a coupling sweep.

    The gap column is the second-smallest eigenvalue magnitude, i.e. the
    separation of the formerly degenerate kernel pair; the exponent is a
    least-squares fit of log(gap) against log(lambda) over the positive
    couplings.
    """
    base = assemble_liouvillean(space, E, G, 0.0)
    gaps, kdims = [], []
    theta_used = None
    for lam in lambdas:
        rep = spectrum_scan(base.with_lambda(lam), theta=theta)
        theta_used = rep.theta
        mags = np.abs(rep.eigenvalues)
        gaps.append(float(np.sort(mags)[1]))
        kdims.append(rep.kernel_dim)
    lambdas = np.asarray(list(lambdas), dtype=float)
    gaps = np.asarray(gaps)
    posmask = lambdas > 0
    if np.sum(posmask) >= 2 and np.all(gaps[posmask] > 0):
        co = np.polyfit(np.log(lambdas[posmask]), np.log(gaps[posmask]), 1)
        fit_p, fit_c = float(co[0]), float(math.exp(co[1]))
    else:
        fit_p, fit_c = math.nan, math.nan
    return SweepReport(lambdas=lambdas, gaps=gaps,
                       kernel_dims=np.asarray(kdims, dtype=int),
                       fit_exponent=fit_p, fit_prefactor=fit_c,
                       theta=float(theta_used))


@dataclass
class EvolutionResult:
    times: np.ndarray
    states: np.ndarray
    norm_drift: float
    energy_drift: float


def evolve(L: LiouvilleanOperator, psi0: np.ndarray,
           tgrid: Sequence[float]) -> EvolutionResult:
    """Unitary propagation of a vector along an increasing time grid.

    Dense eigendecomposition propagates all grid points from one spectral
    factorization; the sparse path steps with Krylov exponential action.
    Norm and energy-expectation drift are tracked and must stay below
    1e-10, otherwise a numerical error reports the failing step.
    """
    tgrid = np.asarray(tgrid, dtype=float)
    if len(tgrid) == 0 or np.any(np.diff(tgrid) <= 0):
        raise ValidationError("time grid must be nonempty and increasing")
    psi0 = np.asarray(psi0)
    nrm0 = np.linalg.norm(psi0)
    if abs(nrm0 - 1.0) > 1e-10:
        raise ValidationError("initial vector must be normalized")
    e0 = float(np.real(np.vdot(psi0, L.matrix @ psi0)))
    states = np.empty((len(tgrid), L.dim), dtype=complex)
    norm_drift = 0.0
    energy_drift = 0.0
    if L.dim < _DENSE_DIM:
        vals, vecs = np.linalg.eigh(L.matrix.toarray())
        coef = vecs.conj().T @ psi0
        for i, t in enumerate(tgrid):
            states[i] = vecs @ (np.exp(-1j * vals * t) * coef)
    else:
        mat = (-1j) * L.matrix.tocsc()
        psi = psi0.astype(complex)
        prev_t = 0.0
        for i, t in enumerate(tgrid):
            dt = t - prev_t
            if dt > 0:
                psi = spla.expm_multiply(dt * mat, psi)
            prev_t = t
            states[i] = psi
    for i, t in enumerate(tgrid):
        nd = abs(np.linalg.norm(states[i]) - 1.0)
        ed = abs(float(np.real(np.vdot(states[i], L.matrix @ states[i]))) - e0)
        if nd > norm_drift:
            norm_drift = nd
        if ed > energy_drift:
            energy_drift = ed
        if nd > 1e-10:
            raise NumericalError(
                "propagation norm drift %s at step %d (t=%s)"
                % (fmt17(nd), i, fmt17(t)))
        if ed > 1e-10 * max(abs(e0), 1.0):
            raise NumericalError(
                "generator expectation drift %s at step %d (t=%s)"
                % (fmt17(ed), i, fmt17(t)))
    return EvolutionResult(times=tgrid, states=states,
                           norm_drift=norm_drift, energy_drift=energy_drift)


def reduce_detector(psi: np.ndarray, space: TruncatedFock) -> np.ndarray:
    """Physical 2x2 detector state from a doubled-space vector."""
    R = space.reservoir_dim
    P = np.asarray(psi).reshape(2, 2, R)
    return np.einsum("abn,cbn->ac", P, P.conj())


def trace_distance(rho1: np.ndarray, rho2: np.ndarray) -> float:
    diff = np.asarray(rho1) - np.asarray(rho2)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(diff))))


def fgr_window(disc: ReservoirDiscretization, E: float,
               t_rec: float | None = None):
    """Suggested coupling window: decay before recurrence, still perturbative.

    Returns (lam_lo, lam_hi) with lam^2 * rho(E) between 5/T_rec and 0.2*E.
    """
    if t_rec is None:
        t_rec = disc.recurrence_time()
    rho = disc.spectral_density(E)
    lam_lo = math.sqrt(5.0 / (t_rec * rho))
    lam_hi = math.sqrt(0.2 * E / rho)
    return lam_lo, lam_hi


@dataclass
class RTEReport:
    times: np.ndarray
    distances: np.ndarray
    threshold: float
    crossing_time: float | None
    pre_recurrence_min: float
    recurrence_time: float
    reached: bool

    def save(self, path):
        write_csv(path, "t,trace_distance", [self.times, self.distances])


def rte_distance_series(L: LiouvilleanOperator, initial: np.ndarray,
                        tgrid: Sequence[float], threshold: float = 0.05,
                        reference: np.ndarray | None = None) -> RTEReport:
    """Reduced-detector trace distance to the dressed equilibrium state.

    The reference defaults to the reduced perturbed KMS vector at the
    operator's own coupling, i.e. the detector Gibbs state plus its O(lam)
    dressing.  Failure to reach the threshold before the recurrence time is
    reported in the summary, not raised.
    """
    space = L.space
    t_rec = space.disc.recurrence_time()
    if reference is None:
        if "I" not in L.parts:
            raise ValidationError(
                "operator lacks an interaction part; pass a reference state")
        L0 = LiouvilleanOperator(matrix=L.parts["L0"], parts=L.parts,
                                 lam=0.0, beta=L.beta, gap=L.gap, space=space)
        omega = perturbed_kms_vector(L0, L.parts["I"], L.lam, L.beta)
        reference = reduce_detector(omega, space)
    traj = evolve(L, initial, tgrid)
    dists = np.array([trace_distance(reduce_detector(traj.states[i], space),
                                     reference)
                      for i in range(len(traj.times))])
    pre = traj.times < t_rec
    below = pre & (dists < threshold)
    if np.any(below):
        crossing = float(traj.times[np.argmax(below)])
        reached = True
    else:
        crossing = None
        reached = False
    pre_min = float(np.min(dists[pre])) if np.any(pre) else float(np.min(dists))
    return RTEReport(times=traj.times, distances=dists, threshold=threshold,
                     crossing_time=crossing, pre_recurrence_min=pre_min,
                     recurrence_time=t_rec, reached=reached)


@dataclass
class TomitaReport:
    labels: list
    residuals: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals)) if len(self.residuals) else 0.0


def _pair_vector(space: TruncatedFock, pair_mode: int) -> np.ndarray:
    """Normalized glued amplitude vector supported on a mode and its mirror."""
    disc = space.disc
    mirror = disc.mirror_index()
    j = int(pair_mode)
    h = np.zeros(disc.n_modes, dtype=complex)
    h[j] = disc.f[j]
    h[mirror[j]] = disc.f[mirror[j]]
    return h / np.linalg.norm(h)


def tomita_residual(space: TruncatedFock, E: float, beta: float,
                    observables: Sequence | None = None) -> TomitaReport:
    """Residuals of J e^{-beta L0/2} X Omega = X^dagger Omega at lam = 0.

    Observables are descriptors: ("identity",), ("detector", M) with M a
    2x2 matrix acting on the observable-side detector factor,
    ("field_power", pair_mode, k) for the k-th power of the pair field
    operator, and ("weyl", pair_mode, alpha) for the truncated exponential
    exp(i*alpha*Phi) whose cutoff tail probes the truncation.  A field
    power exceeding the available occupation budget triggers a truncation
    warning.
    """
    if observables is None:
        observables = [("identity",), ("field_power", 0, 2), ("weyl", 0, 1.0)]
    J = modular_conjugation(space)
    omega0 = gns_vacuum(space, E, beta)
    R = space.reservoir_dim
    d_energy = np.array([0.0, E, -E, 0.0])
    diag = np.repeat(d_energy, R) + np.tile(space.occupation_energy, 4)
    half_mod = np.exp(-beta * diag / 2.0)
    I2 = sp.identity(2, format="csr")
    IR = sp.identity(R, format="csr")
    labels, residuals = [], []
    for desc in observables:
        kind = desc[0]
        if kind == "identity":
            X = sp.identity(space.dim, format="csr")
            label = "identity"
        elif kind == "detector":
            M = sp.csr_matrix(np.asarray(desc[1], dtype=complex))
            X = sp.kron(sp.kron(M, I2), IR).tocsr()
            label = "detector"
        elif kind == "field_power":
            j, kpow = int(desc[1]), int(desc[2])
            h = _pair_vector(space, j)
            budget = int(space.n_tot_max)
            if kpow > budget:
                warnings.warn(
                    "field power %d exceeds the occupation budget %d; the "
                    "image of Omega is truncated" % (kpow, budget),
                    TruncationWarning, stacklevel=2)
            Phi = space.field_matrix(h)
            Xr = sp.identity(R, format="csr")
            for _ in range(kpow):
                Xr = (Xr @ Phi).tocsr()
            X = sp.kron(sp.identity(4), Xr).tocsr()
            label = "field_power_%d" % kpow
        elif kind == "weyl":
            j, alpha = int(desc[1]), float(desc[2])
            h = _pair_vector(space, j)
            Phi = space.field_matrix(h).toarray()
            W = sla.expm(1j * alpha * np.asarray(Phi, dtype=complex))
            X = sp.kron(sp.identity(4), sp.csr_matrix(W)).tocsr()
            label = "weyl_%g" % alpha
        else:
            raise ValidationError("unknown observable descriptor %r" % (desc,))
        lhs = J.apply(half_mod * (X @ omega0))
        rhs = X.conj().T @ omega0
        labels.append(label)
        residuals.append(float(np.linalg.norm(lhs - rhs)))
    return TomitaReport(labels=labels, residuals=np.asarray(residuals))


def write_coordinate(M, path):
    """Export a matrix in coordinate text format: row,col,re,im."""
    C = sp.coo_matrix(M)
    order = np.lexsort((C.col, C.row))
    write_csv(path, "row,col,re,im",
              [C.row[order], C.col[order],
               np.real(C.data[order]), np.imag(C.data[order])])


def resonance_floor(space: TruncatedFock, E: float) -> float:
    """Smallest nonzero |free eigenvalue|: the quasi-resonance gap at lam=0."""
    d_energy = np.array([0.0, E, -E, 0.0])
    vals = np.concatenate([d + space.occupation_energy for d in d_energy])
    mags = np.abs(vals)
    nz = mags[mags > 1e-12]
    if len(nz) == 0:
        raise StructuralError("all free eigenvalues vanish")
    return float(np.min(nz))
