"""Doubled detector-reservoir generator: assembly, symmetry, evolution."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kmslab import liouville as lv
from kmslab.errors import (AmbiguousThresholdWarning, NumericalError,
                           ResonanceWarning, StructuralError,
                           TruncationWarning, ValidationError)
from kmslab.oneparticle import default_coupling, kms_glue, MomentumFunction

OFFDIAG = np.array([[0.0, 1.0], [1.0, 0.0]])


def _small_paired(n_side=4, n_tot=2, beta=1.0, amplitude=0.5):
    disc = lv.paired_modes(beta, n_side=n_side, amplitude=amplitude)
    return disc, lv.TruncatedFock(disc, n_tot_max=n_tot)


def _empty_space(beta=1.0):
    disc = lv.ReservoirDiscretization(np.array([]), np.array([]),
                                      np.array([]), beta=beta)
    return lv.TruncatedFock(disc, n_tot_max=1)


# ---------------------------------------------------------------------------
# form factor and discretizations

def test_form_factor_matches_glued_vector():
    q = np.geomspace(0.05, 6.0, 40)
    u = MomentumFunction.from_radial(q, np.full(40, 0.01), default_coupling(q))
    g = kms_glue(u, 1.0)
    direct = lv.form_factor_values(g.s, 1.0)
    assert np.max(np.abs(direct - g.values)) < 1e-13 * np.max(np.abs(g.values))


def test_form_factor_real_at_default_phase():
    s = np.array([-2.0, -0.5, 0.5, 2.0])
    vals = lv.form_factor_values(s, 1.0)
    assert vals.dtype == np.float64


def test_form_factor_rejects_zero_frequency():
    with pytest.raises(ValidationError):
        lv.form_factor_values(np.array([0.0, 1.0]), 1.0)


def test_paired_grid_structure():
    disc, _ = _small_paired()
    mirror = disc.mirror_index()
    assert np.array_equal(mirror[mirror], np.arange(disc.n_modes))
    assert np.allclose(disc.s[mirror], -disc.s)
    assert disc.is_paired


def test_jittered_grid_is_unpaired():
    disc = lv.jittered_modes(1.0, seed=0)
    assert not disc.is_paired
    with pytest.raises(StructuralError):
        disc.mirror_index()


def test_jittered_grids_differ_by_seed():
    a = lv.jittered_modes(1.0, seed=0)
    b = lv.jittered_modes(1.0, seed=1)
    assert np.max(np.abs(a.s - b.s)) > 1e-3


def test_discretization_norm_defect():
    assert lv.paired_modes(1.0).norm_defect() < 5e-3
    assert lv.jittered_modes(1.0, seed=0).norm_defect() < 5e-3
    assert lv.resonant_shell_modes(1.0, 1.0, seed=0).norm_defect() < 0.1


def test_recurrence_time_minimal_spacing():
    disc = lv.ReservoirDiscretization(np.array([-2.0, -1.0, 1.0, 1.25]),
                                      np.full(4, 0.1), np.full(4, 0.3),
                                      beta=1.0)
    assert disc.recurrence_time() == pytest.approx(2.0 * math.pi / 0.25, rel=1e-12)


def test_spectral_density_positive():
    disc = lv.paired_modes(1.0)
    assert disc.spectral_density(1.0) > 0


def test_discretization_validation():
    with pytest.raises(ValidationError):
        lv.ReservoirDiscretization(np.array([0.0, 1.0]), np.full(2, 0.1),
                                   np.full(2, 0.1), beta=1.0)
    with pytest.raises(ValidationError):
        lv.ReservoirDiscretization(np.array([1.0, 1.0]), np.full(2, 0.1),
                                   np.full(2, 0.1), beta=1.0)


# ---------------------------------------------------------------------------
# truncated Fock space

def test_space_dimension_total_budget():
    disc, space = _small_paired(n_side=4, n_tot=2)
    n = disc.n_modes
    expected = 1 + n + n * (n + 1) // 2
    assert space.reservoir_dim == expected
    assert space.dim == 4 * expected


def test_space_dimension_per_mode_caps():
    disc, _ = _small_paired(n_side=2)
    space = lv.TruncatedFock(disc, n_max=1)
    assert space.reservoir_dim == 2 ** disc.n_modes


def test_space_requires_exactly_one_truncation():
    disc, _ = _small_paired()
    with pytest.raises(ValidationError):
        lv.TruncatedFock(disc)
    with pytest.raises(ValidationError):
        lv.TruncatedFock(disc, n_tot_max=2, n_max=2)


def test_index_occupation_roundtrip():
    _, space = _small_paired(n_side=4, n_tot=3)
    for idx in range(0, space.reservoir_dim, 7):
        occ = space.occupation_of(idx)
        assert space.index_of(occ) == idx


def test_creation_operator_algebra():
    disc, space = _small_paired(n_side=2, n_tot=3)
    interior = space.basis.sum(axis=1) < space.n_tot_max
    for j in range(disc.n_modes):
        a_dag = space.creation_matrix(j).toarray()
        a = a_dag.conj().T
        number = np.diag(a_dag @ a).real
        assert np.allclose(number, space.basis[:, j])
        comm = a @ a_dag - a_dag @ a
        assert np.allclose(np.diag(comm).real[interior], 1.0)
        off = comm - np.diag(np.diag(comm))
        assert np.max(np.abs(off)) < 1e-14


def test_single_mode_field_block():
    f = 0.37
    disc = lv.ReservoirDiscretization(np.array([0.8]), np.array([1.0]),
                                      np.array([f]), beta=1.0)
    space = lv.TruncatedFock(disc, n_max=1)
    phi = space.field_matrix(disc.f).toarray()
    assert np.allclose(phi, np.array([[0.0, f], [f, 0.0]]))


def test_field_matrix_hermitian():
    disc, space = _small_paired()
    phi = space.field_matrix(disc.f)
    assert lv._hermiticity_defect(phi) < 1e-13


# ---------------------------------------------------------------------------
# generator assembly

def test_detector_gibbs_vector_values():
    E, beta = 1.0, 1.0
    v = lv.detector_gibbs_vector(E, beta)
    x = math.exp(-0.5)
    norm = math.sqrt(1.0 + x * x)
    assert np.allclose(v, np.array([x, 0.0, 0.0, 1.0]) / norm, rtol=1e-15)
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValidationError):
        lv.detector_gibbs_vector(-1.0, 1.0)


def test_empty_reservoir_free_spectrum():
    space = _empty_space()
    L0 = lv.assemble_L0(space, 1.0)
    eig = np.sort(np.linalg.eigvalsh(L0.matrix.toarray()))
    assert np.allclose(eig, [-1.0, 0.0, 0.0, 1.0], atol=1e-14)


def test_free_generator_annihilates_equilibrium():
    _, space = _small_paired()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResonanceWarning)
        L0 = lv.assemble_L0(space, 1.0)
    omega = lv.gns_vacuum(space, 1.0, 1.0)
    assert np.linalg.norm(L0.matrix @ omega) < 1e-14


def test_paired_grid_warns_resonant():
    disc, space = _small_paired()
    with pytest.warns(ResonanceWarning):
        lv.assemble_L0(space, 1.0)


def test_jittered_grid_no_resonance_warning():
    disc = lv.jittered_modes(1.0, seed=0, n_side=4)
    space = lv.TruncatedFock(disc, n_tot_max=2)
    with warnings.catch_warnings():
        warnings.simplefilter("error", ResonanceWarning)
        lv.assemble_L0(space, 1.0)


def test_coupling_hermitian_and_vanishing_at_equilibrium():
    _, space = _small_paired()
    I_mat, V = lv.assemble_coupling(space, OFFDIAG)
    assert lv._hermiticity_defect(I_mat) < 1e-13
    assert lv._hermiticity_defect(V) < 1e-13
    omega = lv.gns_vacuum(space, 1.0, 1.0)
    assert abs(np.vdot(omega, V @ omega)) < 1e-14


def test_coupling_rejects_nonhermitian_monopole():
    _, space = _small_paired()
    with pytest.raises(ValidationError):
        lv.assemble_coupling(space, np.array([[0.0, 1.0], [2.0, 0.0]]))


def test_liouvillean_parts_and_lambda_rescale():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResonanceWarning)
        _, space = _small_paired()
        L = lv.assemble_liouvillean(space, 1.0, OFFDIAG, 0.25)
        direct = (L.parts["L0"] + 0.25 * L.parts["V"]).toarray()
        assert np.max(np.abs(L.matrix.toarray() - direct)) < 1e-14
        other = L.with_lambda(0.5)
        assert other.lam == 0.5
        expect = (L.parts["L0"] + 0.5 * L.parts["V"]).toarray()
        assert np.max(np.abs(other.matrix.toarray() - expect)) < 1e-14


# ---------------------------------------------------------------------------
# modular conjugation

def test_conjugation_involution_and_fixed_vector():
    _, space = _small_paired()
    J = lv.ModularConjugation(space)
    rng = np.random.default_rng(3)
    psi = rng.normal(size=space.dim) + 1j * rng.normal(size=space.dim)
    assert np.max(np.abs(J.apply(J.apply(psi)) - psi)) < 1e-14 * np.max(np.abs(psi))
    omega = lv.gns_vacuum(space, 1.0, 1.0)
    assert np.max(np.abs(J.apply(omega) - omega)) < 1e-14


def test_conjugation_flips_generator_sign():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResonanceWarning)
        _, space = _small_paired()
        J = lv.ModularConjugation(space)
        for lam in (0.0, 0.3):
            L = lv.assemble_liouvillean(space, 1.0, OFFDIAG, lam)
            M = L.matrix.toarray()
            flipped = J.conjugate_matrix(L.matrix).toarray()
            scale = np.max(np.abs(M))
            assert np.max(np.abs(flipped + M)) < 1e-12 * scale


def test_conjugation_needs_paired_modes():
    disc = lv.jittered_modes(1.0, seed=0, n_side=4)
    space = lv.TruncatedFock(disc, n_tot_max=2)
    with pytest.raises(StructuralError):
        lv.ModularConjugation(space)


# ---------------------------------------------------------------------------
# perturbed equilibrium vector

def test_perturbed_vector_at_zero_coupling():
    _, space = _small_paired()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResonanceWarning)
        L0 = lv.assemble_L0(space, 1.0)
    I_mat, _ = lv.assemble_coupling(space, OFFDIAG)
    omega0 = lv.gns_vacuum(space, 1.0, 1.0)
    omega = lv.perturbed_kms_vector(L0, I_mat, 0.0, 1.0)
    assert np.max(np.abs(omega - omega0)) < 1e-14


def test_perturbed_vector_is_normalized_and_close():
    _, space = _small_paired()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResonanceWarning)
        L0 = lv.assemble_L0(space, 1.0)
    I_mat, _ = lv.assemble_coupling(space, OFFDIAG)
    omega0 = lv.gns_vacuum(space, 1.0, 1.0)
    omega = lv.perturbed_kms_vector(L0, I_mat, 0.05, 1.0)
    assert np.linalg.norm(omega) == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(omega - omega0) < 0.2


# ---------------------------------------------------------------------------
# spectra

def test_dense_spectrum_symmetric_about_zero():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResonanceWarning)
        _, space = _small_paired()
        L = lv.assemble_liouvillean(space, 1.0, OFFDIAG, 0.1)
    report = lv.spectrum_scan(L)
    assert report.method == "dense"
    full = np.sort(np.linalg.eigvalsh(L.matrix.toarray()))
    assert np.max(np.abs(full + full[::-1])) < 1e-10 * max(1.0, abs(full[-1]))
    assert report.kernel_dim >= 1


def test_free_kernel_dimension_two():
    disc = lv.jittered_modes(1.0, seed=0, n_side=4)
    space = lv.TruncatedFock(disc, n_tot_max=2)
    L = lv.assemble_liouvillean(space, 1.0, OFFDIAG, 0.0)
    report = lv.spectrum_scan(L)
    assert report.kernel_dim == 2


def test_ambiguous_threshold_warns():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResonanceWarning)
        _, space = _small_paired(n_side=4, n_tot=2)
        L = lv.assemble_liouvillean(space, 1.0, OFFDIAG, 0.0)
    floor = lv.resonance_floor(space, 1.0)
    with pytest.warns(AmbiguousThresholdWarning):
        lv.spectrum_scan(L, theta=floor)


def test_spectrum_report_serialization(tmp_path):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResonanceWarning)
        _, space = _small_paired(n_side=2, n_tot=1)
        L = lv.assemble_liouvillean(space, 1.0, OFFDIAG, 0.0)
    report = lv.spectrum_scan(L)
    path = tmp_path / "spectrum.csv"
    report.save(str(path))
    assert path.read_text().splitlines()[0] == "index,eigenvalue"


# ---------------------------------------------------------------------------
# time evolution and distance series

def test_evolution_conserves_norm_and_energy():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResonanceWarning)
        _, space = _small_paired()
        L = lv.assemble_liouvillean(space, 1.0, OFFDIAG, 0.2)
    rng = np.random.default_rng(5)
    psi0 = rng.normal(size=space.dim) + 1j * rng.normal(size=space.dim)
    psi0 /= np.linalg.norm(psi0)
    result = lv.evolve(L, psi0, np.linspace(0.5, 8.0, 16))
    norms = np.linalg.norm(result.states, axis=1)
    assert np.max(np.abs(norms - 1.0)) < 1e-10
    assert result.norm_drift < 1e-10
    assert result.energy_drift < 1e-10


def test_equilibrium_vector_is_stationary():
    _, space = _small_paired()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResonanceWarning)
        L0 = lv.assemble_L0(space, 1.0)
    omega = lv.gns_vacuum(space, 1.0, 1.0)
    result = lv.evolve(L0, omega.astype(complex), [1.0, 3.0])
    for state in result.states:
        assert np.max(np.abs(state - omega)) < 1e-12


def test_reduce_detector_recovers_product_state():
    _, space = _small_paired()
    rho = np.array([[0.7, 0.1j], [-0.1j, 0.3]])
    psi = lv.product_initial(space, rho)
    back = lv.reduce_detector(psi, space)
    assert np.max(np.abs(back - rho)) < 1e-13
    assert np.trace(back).real == pytest.approx(1.0, abs=1e-13)


def test_trace_distance_extremes():
    rho = np.diag([1.0, 0.0]).astype(complex)
    sig = np.diag([0.0, 1.0]).astype(complex)
    assert lv.trace_distance(rho, rho) == pytest.approx(0.0, abs=1e-14)
    assert lv.trace_distance(rho, sig) == pytest.approx(1.0, abs=1e-14)


def test_distance_series_constant_at_zero_coupling():
    _, space = _small_paired()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResonanceWarning)
        L = lv.assemble_liouvillean(space, 1.0, OFFDIAG, 0.0)
    psi = lv.product_initial(space, np.diag([1.0, 0.0]))
    report = lv.rte_distance_series(L, psi, np.linspace(1.0, 5.0, 5))
    assert np.max(report.distances) - np.min(report.distances) < 1e-10
    assert not report.reached


def test_one_boson_initial_normalized():
    disc, space = _small_paired()
    profile = np.exp(-((disc.s - 1.0) ** 2)) * (disc.s > 0)
    psi = lv.one_boson_initial(space, np.array([0.0, 0.0, 0.0, 1.0]), profile)
    assert np.linalg.norm(psi) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValidationError):
        lv.one_boson_initial(space, np.array([1.0, 0.0]), profile)


# ---------------------------------------------------------------------------
# modular relation at zero coupling

def test_tomita_identity_and_detector_observables():
    _, space = _small_paired()
    report = lv.tomita_residual(space, 1.0, 1.0,
                                observables=[("identity",),
                                             ("detector", OFFDIAG),
                                             ("detector", np.diag([1.0, 0.0]))])
    assert report.max_residual < 1e-8


def test_tomita_field_power_beyond_budget_warns():
    _, space = _small_paired(n_side=2, n_tot=2)
    with pytest.warns(TruncationWarning):
        lv.tomita_residual(space, 1.0, 1.0,
                           observables=[("field_power", 0, 5)])


# ---------------------------------------------------------------------------
# misc exports

def test_fgr_window_ordering():
    disc = lv.resonant_shell_modes(1.0, 1.0, seed=0)
    lo, hi = lv.fgr_window(disc, 1.0)
    assert 0 < lo < hi


def test_coordinate_export(tmp_path):
    M = np.array([[0.0, 1.5], [2.0 + 1.0j, 0.0]])
    path = tmp_path / "matrix.csv"
    lv.write_coordinate(M, path=str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "row,col,re,im"
    assert len(lines) == 3


@given(st.integers(0, 10 ** 6))
@settings(max_examples=60, deadline=None)
def test_occupation_roundtrip_random(idx):
    _, space = _small_paired(n_side=4, n_tot=3)
    idx = idx % space.reservoir_dim
    assert space.index_of(space.occupation_of(idx)) == idx
