"""Quasi-free states of the scalar field: Weyl generating functionals,
thermal two-point functions, detailed-balance spectra and mixing decay.

A state is determined by an inverse temperature (infinite for the vacuum),
a mass, and the frame its bath is at rest in. Correlators of test vectors
are evaluated through the doubled inner product

    <f, g>_beta = <kf, (1 + mu) kg> + <kg, mu kf>,

with the occupation mu evaluated at the bath-frame frequency of each
momentum point. Boosted frames use the (q, cos theta) point layout of the
one-particle module, where the frequency seen by the bath is the Doppler
product q * gamma * (1 - v*c).
"""

import math

import numpy as np

from .errors import ResolutionError, StructuralError, ValidationError
from .oneparticle import (BoostSpec, CauchyData, MomentumFunction,
                          ground_map, planck_occupation)

__all__ = [
    "QuasiFreeState", "CorrelatorSeries", "BalanceReport",
    "weyl_expectation", "two_point", "two_point_series", "weyl_correlator",
    "kms_balance_check", "balance_span_study", "mixing_decay",
    "gaussian_packet", "shell_packet",
]


class QuasiFreeState:
    """A quasi-free reference state: thermal at finite beta, vacuum at
    beta = inf. `frame` is the boost carrying lab momenta to bath-frame
    momenta; the default is the lab frame itself."""

    def __init__(self, beta=math.inf, mass=0.0, frame=None, kind=None):
        if beta != math.inf and not (isinstance(beta, (int, float)) and beta > 0):
            raise ValidationError("beta must be positive or inf")
        if mass < 0:
            raise ValidationError("mass must be >= 0")
        inferred = "vacuum" if beta == math.inf else "kms"
        if kind is not None and kind != inferred:
            raise ValidationError(
                "kind %r inconsistent with beta=%r (vacuum iff beta=inf)"
                % (kind, beta))
        self.beta = float(beta)
        self.mass = float(mass)
        self.frame = frame if frame is not None else BoostSpec(0.0)
        self.kind = inferred

    @property
    def is_vacuum(self):
        return self.kind == "vacuum"

    def __repr__(self):
        return ("QuasiFreeState(beta=%r, mass=%r, frame=%r)"
                % (self.beta, self.mass, self.frame))


class CorrelatorSeries:
    """A complex time series with its provenance attached."""

    def __init__(self, times, values, metadata=None):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=complex)
        if times.ndim != 1 or times.shape != values.shape:
            raise ValidationError("times and values must be equal-length 1d arrays")
        if np.any(np.diff(times) <= 0):
            raise ValidationError("times must be strictly increasing")
        self.times = times
        self.values = values
        self.metadata = dict(metadata or {})

    def save(self, path):
        from .textio import write_csv, write_keyvals
        write_csv(path, "t,re,im",
                  [self.times, self.values.real, self.values.imag])
        write_keyvals(path + ".meta", sorted(self.metadata.items()))


# ---------------------------------------------------------------------------
# internal evaluation helpers

def _as_kappa(state, f):
    """Accept CauchyData (mapped through the ground map) or a ready
    momentum-space vector."""
    if isinstance(f, CauchyData):
        if f.mass != state.mass:
            raise ValidationError("test-function mass differs from state mass")
        return ground_map(f)
    if isinstance(f, MomentumFunction):
        if f.mass != state.mass:
            raise ValidationError("test-function mass differs from state mass")
        return f
    raise ValidationError("expected CauchyData or MomentumFunction")


def _aligned_pair(state, f, g, n_c=48):
    """Bring two kappa-vectors onto one point set appropriate for the
    state's frame, returning (F, G, q_lab, wq2, q_bath)."""
    kf = _as_kappa(state, f)
    kg = _as_kappa(state, g) if g is not None else kf
    boosted = state.frame.rapidity != 0.0
    if boosted and state.mass != 0.0:
        raise ValidationError("boosted frames are supported for the massless field")
    if boosted:
        kf = kf.with_angular(n_c)
        kg = kg.with_angular(n_c)
    if not kf.same_points(kg):
        raise StructuralError("test vectors must share one momentum point set")
    q = kf.q
    wq2 = kf.wtot * q ** 2
    if boosted:
        v = state.frame.v_rel
        q_bath = q * state.frame.gamma * (1.0 - v * kf.c)
    else:
        q_bath = None  # omega computed from mass below
    return kf, kg, q, wq2, q_bath


def _occupation(state, kf, q_bath):
    if state.is_vacuum:
        return np.zeros_like(kf.q)
    freq = q_bath if q_bath is not None else kf.omega
    return planck_occupation(freq, state.beta)


def doubled_gram(state, f, g, n_c=48):
    """<kappa_beta f, kappa_beta g> for the given state."""
    kf, kg, q, wq2, q_bath = _aligned_pair(state, f, g, n_c)
    mu = _occupation(state, kf, q_bath)
    term1 = np.sum(wq2 * (1.0 + mu) * np.conj(kf.values) * kg.values)
    term2 = np.sum(wq2 * mu * kf.values * np.conj(kg.values))
    return complex(term1 + term2)


# ---------------------------------------------------------------------------
# operations

def weyl_expectation(state, f, n_c=48):
    """Expectation of the Weyl operator W(f): exp(-||kappa_beta f||^2 / 2)."""
    val = doubled_gram(state, f, f, n_c).real
    return math.exp(-0.5 * val)


def two_point(state, f, g, n_c=48):
    """Two-point function <kappa_beta f, kappa_beta g>."""
    return doubled_gram(state, f, g, n_c)


def _phase_matmul(coeff, freq, tgrid, sign, chunk=4096):
    """sum_i coeff_i * exp(sign * 1j * freq_i * t) evaluated on tgrid."""
    out = np.zeros(tgrid.size, dtype=complex)
    for i0 in range(0, freq.size, chunk):
        sl = slice(i0, i0 + chunk)
        out += np.exp(sign * 1j * np.outer(tgrid, freq[sl])) @ coeff[sl]
    return out


def two_point_series(state, g, f, tgrid, n_c=48):
    """C(t) = two_point(g, f translated backwards in lab time by t).

    The lab time translation multiplies the momentum amplitude by
    e^{-i omega t}; thermal weights stay at the bath-frame frequency.
    """
    kg, kf, q, wq2, q_bath = _aligned_pair(state, g, f, n_c)
    mu = _occupation(state, kg, q_bath)
    om = kg.omega
    a = wq2 * (1.0 + mu) * np.conj(kg.values) * kf.values
    b = wq2 * mu * kg.values * np.conj(kf.values)
    tgrid = np.asarray(tgrid, dtype=float)
    vals = (_phase_matmul(a, om, tgrid, -1)
            + _phase_matmul(b, om, tgrid, +1))
    return CorrelatorSeries(tgrid, vals, {
        "series": "two_point", "beta": state.beta, "mass": state.mass,
        "frame_rapidity": state.frame.rapidity})


def weyl_correlator(state, f, g, tgrid, n_c=48):
    """omega(W(g) alpha_t W(f)) on the given time grid.

    Equals omega(W(f)) omega(W(g)) exp(-z(t)) with
    z(t) = <kappa_beta g, kappa_beta T_t f>; bounded by 1 in modulus,
    and exactly omega(W(f)) when g = 0.
    """
    kg, kf, q, wq2, q_bath = _aligned_pair(state, g, f, n_c)
    mu = _occupation(state, kg, q_bath)
    om = kg.omega
    a = wq2 * (1.0 + mu) * np.conj(kg.values) * kf.values
    b = wq2 * mu * kg.values * np.conj(kf.values)
    nf = np.sum(wq2 * (1.0 + 2.0 * mu) * np.abs(kf.values) ** 2).real
    ng = np.sum(wq2 * (1.0 + 2.0 * mu) * np.abs(kg.values) ** 2).real
    wf = math.exp(-0.5 * nf)
    wg = math.exp(-0.5 * ng)
    tgrid = np.asarray(tgrid, dtype=float)
    z = (_phase_matmul(a, om, tgrid, +1)
         + _phase_matmul(b, om, tgrid, -1))
    vals = wf * wg * np.exp(-z)
    meta = {"series": "weyl_correlator", "beta": state.beta,
            "mass": state.mass, "frame_rapidity": state.frame.rapidity,
            "weyl_f": wf, "weyl_g": wg}
    return CorrelatorSeries(tgrid, vals, meta)


class BalanceReport:
    """Result of a Fourier detailed-balance check."""

    def __init__(self, max_err, max_band_err, nu, spectrum_pos, spectrum_neg,
                 residual, t_span, sigma_t, n_t, negative_leakage, beta):
        self.max_err = max_err
        self.max_band_err = max_band_err
        self.nu = nu
        self.spectrum_pos = spectrum_pos
        self.spectrum_neg = spectrum_neg
        self.residual = residual
        self.t_span = t_span
        self.sigma_t = sigma_t
        self.n_t = n_t
        self.negative_leakage = negative_leakage
        self.beta = beta

    def text_pairs(self):
        pairs = [("max_err", float(self.max_err)),
                 ("max_band_err", float(self.max_band_err)),
                 ("negative_leakage", float(self.negative_leakage)),
                 ("t_span", float(self.t_span)),
                 ("sigma_t", float(self.sigma_t)),
                 ("n_t", str(self.n_t)),
                 ("beta", "inf" if self.beta == math.inf else float(self.beta)),
                 ("nu_min", float(self.nu[0])),
                 ("nu_max", float(self.nu[-1])),
                 ("nu_points", str(self.nu.size))]
        return pairs


def default_window_width(t_span):
    """Gaussian window width paired with a time span: sqrt(8 * span).

    Scales so the windowing bias falls like 1/span, halving on doubling.
    """
    return math.sqrt(8.0 * t_span)


def kms_balance_check(state, f, g=None, t_span=200.0, sigma_t=None,
                      dt=0.1, nu_grid=None, band_floor=1e-4, n_c=48):
    """Windowed Fourier transform of t -> two_point(g, f o T_{-t}) and the
    detailed-balance residual of its two frequency branches.

    Reports max_err = max |W(-nu) - e^{-beta nu} W(nu)| / max |W| over the
    positive frequency grid, and max_band_err, the pointwise relative
    version restricted to the band where |W(nu)| exceeds band_floor times
    the peak. For the vacuum the negative-frequency leakage is reported
    instead of a balance ratio.
    """
    if t_span <= 0:
        raise ValidationError("t_span must be positive")
    if sigma_t is None:
        sigma_t = default_window_width(t_span)
    if t_span < 5.0 * sigma_t:
        raise ResolutionError(
            "time span %.6g cannot hold a window of width %.6g; "
            "need span >= %.6g" % (t_span, sigma_t, 5.0 * sigma_t),
            required_span=5.0 * sigma_t)
    if nu_grid is None:
        nu_grid = np.linspace(0.1, 3.5, 171)
    else:
        nu_grid = np.asarray(nu_grid, dtype=float)
        if np.any(nu_grid <= 0):
            raise ValidationError("nu grid must be positive (both signs are formed internally)")
    half = np.arange(0.0, 0.5 * t_span + 0.5 * dt, dt)
    same = g is None
    if same:
        series = two_point_series(state, f, f, half, n_c)
        cg = series.values * np.exp(-half ** 2 / (2.0 * sigma_t ** 2))
        # C(-t) = conj(C(t)) for equal packets, fold the negative half in
        pos_ph = np.exp(1j * np.outer(nu_grid, half))
        w_pos = dt * (2.0 * np.real(pos_ph @ cg) - np.real(cg[0]))
        neg_ph = np.exp(-1j * np.outer(nu_grid, half))
        w_neg = dt * (2.0 * np.real(neg_ph @ cg) - np.real(cg[0]))
        n_t = 2 * half.size - 1
    else:
        tgrid = np.concatenate([-half[:0:-1], half])
        series = two_point_series(state, g, f, tgrid, n_c)
        cg = series.values * np.exp(-tgrid ** 2 / (2.0 * sigma_t ** 2))
        w_pos = dt * np.real(np.exp(1j * np.outer(nu_grid, tgrid)) @ cg)
        w_neg = dt * np.real(np.exp(-1j * np.outer(nu_grid, tgrid)) @ cg)
        n_t = tgrid.size
    peak = float(np.max(np.abs(w_pos)))
    if peak == 0.0:
        raise ValidationError("spectrum vanishes on the requested nu grid")
    if state.is_vacuum:
        leakage = float(np.max(np.abs(w_neg))) / peak
        residual = np.abs(w_neg) / peak
        return BalanceReport(float(np.max(residual)), leakage, nu_grid,
                             w_pos, w_neg, residual, t_span, sigma_t, n_t,
                             leakage, state.beta)
    expfac = np.exp(-state.beta * nu_grid)
    residual = np.abs(w_neg - expfac * w_pos) / peak
    band = np.abs(w_pos) > band_floor * peak
    if np.any(band):
        rel = np.abs(w_neg[band] / w_pos[band] - expfac[band]) / expfac[band]
        max_band = float(np.max(rel))
    else:
        max_band = math.nan
    leakage = float(np.max(np.abs(w_neg))) / peak
    return BalanceReport(float(np.max(residual)), max_band, nu_grid,
                         w_pos, w_neg, residual, t_span, sigma_t, n_t,
                         leakage, state.beta)


def balance_span_study(state, f, spans=(200.0, 400.0, 800.0), **kw):
    """Balance residuals over doubling spans plus the fitted decay order.

    Returns (residuals, order) where order is the mean of
    log2(r_i / r_{i+1}) over consecutive span doublings.
    """
    spans = list(spans)
    res = [kms_balance_check(state, f, t_span=s, **kw).max_err for s in spans]
    orders = [math.log2(res[i] / res[i + 1]) for i in range(len(res) - 1)]
    return res, (sum(orders) / len(orders) if orders else math.nan)


class MixingReport:
    def __init__(self, times, abs_two_point, weyl_residual, t0_two_point,
                 t0_weyl_residual):
        self.times = times
        self.abs_two_point = abs_two_point
        self.weyl_residual = weyl_residual
        self.t0_two_point = t0_two_point
        self.t0_weyl_residual = t0_weyl_residual

    def tail_fraction(self, t_from):
        """sup_{t >= t_from} of both series, relative to their t=0 values."""
        sel = self.times >= t_from
        if not np.any(sel):
            raise ValidationError("t_from beyond the computed series")
        f1 = float(np.max(self.abs_two_point[sel])) / self.t0_two_point
        f2 = float(np.max(self.weyl_residual[sel])) / self.t0_weyl_residual
        return f1, f2


def mixing_decay(state, f, g=None, t_max=80.0, n_t=801, n_c=48):
    """|two_point(g, f o T_{-t})| together with the Weyl-correlator
    factorization residual |omega(W(g) alpha_t W(f)) - omega(W(f)) omega(W(g))|.
    """
    tgrid = np.linspace(0.0, t_max, n_t)
    gg = f if g is None else g
    tp = two_point_series(state, gg, f, tgrid, n_c)
    wc = weyl_correlator(state, f, gg, tgrid, n_c)
    prod = wc.metadata["weyl_f"] * wc.metadata["weyl_g"]
    resid = np.abs(wc.values - prod)
    abs_tp = np.abs(tp.values)
    if abs_tp[0] == 0.0 or resid[0] == 0.0:
        raise ValidationError("degenerate packets: vanishing t=0 correlator")
    return MixingReport(tgrid, abs_tp, resid, float(abs_tp[0]), float(resid[0]))


# ---------------------------------------------------------------------------
# packet builders

def gaussian_packet(q, w_dq, center=1.0, width=1.0, mass=0.0):
    """Smooth momentum packet sqrt(q) exp(-((q-center)/width)^2) as a
    ready one-particle vector."""
    q = np.asarray(q, dtype=float)
    vals = np.sqrt(q) * np.exp(-(((q - center) / width) ** 2))
    return MomentumFunction.from_radial(q, w_dq, vals, mass)


def shell_packet(q, w_dq, radius=0.0, width=1.0, momentum_part=0.0, mass=0.0):
    """Cauchy data of a spherical-shell Gaussian at the given radius.

    f1(q) = j0(q * radius) exp(-q^2 width^2 / 4); the optional momentum
    component puts the same profile into the second slot scaled by
    momentum_part.
    """
    q = np.asarray(q, dtype=float)
    prof = np.exp(-0.25 * (q * width) ** 2)
    if radius == 0.0:
        j0 = np.ones_like(q)
    else:
        x = q * radius
        j0 = np.sin(x) / x
    f1 = j0 * prof
    f2 = momentum_part * j0 * prof
    return CauchyData(q, w_dq, f1, f2, mass)
