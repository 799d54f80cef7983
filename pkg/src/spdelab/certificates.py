"""Global-existence certificates along a noise path.

Three checks, all reducing to one scalar integral against the semigroup
sup-norm decay:

* integral certificate: J = Lambda beta int_0^inf e^{kappa beta W_r}
  ||e^{-kappa^2 r/2} S_r f||_inf^beta dr < 1 grants a global solution with
  the envelope B(t) = (1 - J(t))^{-1/beta};
* saturation certificate: same integral with factor e^{-kappa W_r}, for
  nonlinearities only controlled on (0, C*); certifies when
  ||f||_inf <= C* (1 - J*)^{1/beta} and the enveloped sup norm stays
  inside (0, C*);
* heat-kernel certificate: for f dominated by K S_eta psi, the integral
  int e^{kappa beta W_r - (lam1 + kappa^2/2) beta r} dr against a closed-form
  threshold built from the kernel-ratio constant c; the threshold crossing
  has the same gamma-tail law as the blowup functional, so an analytic mode
  returns the certification probability.

The [0, T] part of each integral is trapezoidal on the path grid; the
(T, inf) remainder is replaced by a closed-form majorant that freezes W at
its endpoint and grows the remaining Brownian factor at its conditional
mean rate. A certificate is granted only if computed part plus majorant
clears the threshold.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .blowup import ModelParams, PowerLaw, TabulatedNonlinearity
from .domain import EigenData
from .errors import ConfigurationError, PreconditionFailure
from .stochastic import EXP_CLAMP, BrownianPath, derive_params, exp_functional, gamma_tail

logger = logging.getLogger(__name__)


class CertificateKind(str, Enum):
    INTEGRAL = "integral"
    SATURATION = "saturation"
    HEAT_KERNEL = "heat_kernel"


class Verdict(str, Enum):
    CERTIFIED = "certified"
    NOT_CERTIFIED = "not_certified"


@dataclass(frozen=True, eq=False)
class CertificateReport:
    """Evaluated certificate: the integral, the verdict, and envelope samples.

    J is the certificate integral (computed part plus tail majorant) for the
    integral and saturation kinds, and the path functional for the heat-kernel
    kind in path mode. threshold is what J was compared against. envelope and
    bound_sup sample B(t) (or B*(t)) and B(t) * ||e^{-kappa^2 t/2} S_t f||_inf
    on the path grid; they are present only on certified reports. probability
    is set only by the heat-kernel certificate in analytic mode, where no
    per-path verdict exists.
    """

    kind: CertificateKind
    J: float
    verdict: Verdict | None
    threshold: float
    tail: float = 0.0
    times: np.ndarray | None = None
    envelope: np.ndarray | None = None
    bound_sup: np.ndarray | None = None
    probability: float | None = None
    inputs: dict | None = None
    reason: str | None = None

    def __post_init__(self):
        if self.envelope is not None:
            if abs(self.envelope[0] - 1.0) > 1e-12:
                raise ConfigurationError("certificate envelope must start at B(0) = 1")
        if self.probability is not None and not 0.0 <= self.probability <= 1.0:
            raise ConfigurationError(f"probability {self.probability} outside [0, 1]")


def _validate_initial(f: np.ndarray, eigen: EigenData) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (eigen.grid.npoints,):
        raise ConfigurationError(
            f"initial data has shape {f.shape}, grid has {eigen.grid.npoints} nodes"
        )
    if np.any(f < -1e-12):
        node = int(np.argmin(f))
        raise PreconditionFailure(f"initial data negative at node {node}: f={f[node]}")
    if not np.any(f > 0):
        raise PreconditionFailure("initial data vanishes identically")
    defect = eigen.projection_defect(f)
    scale = float(np.max(np.abs(f)))
    if defect > 1e-8 * scale:
        logger.warning(
            "initial data has %.3g relative mass outside the retained basis; "
            "the certificate applies to the projected data",
            defect / scale,
        )
    return f


def _check_upper_bound(params: ModelParams, z_max: float | None = None) -> None:
    """The certificates need G(z) <= Lambda z^(1+beta), globally or on (0, z_max)."""
    g = params.G
    if isinstance(g, PowerLaw):
        return  # coeff <= Lambda enforced at construction
    if isinstance(g, TabulatedNonlinearity):
        z = g.z[1:]
        vals = g.g[1:]
        if z_max is not None:
            keep = z < z_max
            z, vals = z[keep], vals[keep]
        cap = params.Lambda * z ** (1.0 + params.beta)
        bad = vals > cap * (1.0 + 1e-12)
        if np.any(bad):
            j = int(np.argmax(bad))
            raise PreconditionFailure(
                f"nonlinearity exceeds Lambda z^(1+beta) at z={z[j]}: {vals[j]} > {cap[j]}"
            )
        return
    raise ConfigurationError(f"cannot verify the upper bound for nonlinearity {type(g).__name__}")


def _sup_norm_series(
    f: np.ndarray, times: np.ndarray, kappa: float, eigen: EigenData, chunk: int = 4096
) -> np.ndarray:
    """||e^{-kappa^2 t/2} S_t f||_inf at each time, through the retained basis."""
    coeff = eigen.project(f)
    lam = eigen.eigenvalues
    out = np.empty(times.shape)
    for lo in range(0, len(times), chunk):
        t = times[lo : lo + chunk]
        fields = eigen.modes @ (np.exp(-np.outer(lam, t)) * coeff[:, None])
        out[lo : lo + chunk] = np.max(np.abs(fields), axis=0)
    return out * np.exp(-0.5 * kappa**2 * times)


def _coefficient_envelope(f: np.ndarray, T: float, kappa: float, eigen: EigenData) -> float:
    """Bound on ||e^{-kappa^2 t/2} S_t f||_inf at t = T that keeps majorizing
    after multiplication by e^{-(lam_1 + kappa^2/2)(t - T)} for t > T."""
    coeff = eigen.project(f)
    mode_sup = np.max(np.abs(eigen.modes), axis=0)
    return math.exp(-0.5 * kappa**2 * T) * float(
        np.sum(np.abs(coeff) * np.exp(-eigen.eigenvalues * T) * mode_sup)
    )


def _cumtrapz(values: np.ndarray, dt: float) -> np.ndarray:
    out = np.empty_like(values)
    out[0] = 0.0
    np.cumsum(0.5 * dt * (values[1:] + values[:-1]), out=out[1:])
    return out


def _certificate_integral_core(
    path: BrownianPath,
    f: np.ndarray,
    params: ModelParams,
    lam1: float,
    eigen: EigenData,
    w_sign: float,
    w_scale: float,
    growth_rate: float,
) -> tuple[np.ndarray, np.ndarray, float, str | None]:
    """Shared J(t) machinery: returns (J_series, sup_norm_series, tail, reason).

    The Brownian factor is e^{w_sign * w_scale * W_r}; growth_rate is the
    conditional mean growth exponent of that factor beyond the horizon.
    """
    exponent = w_sign * w_scale * path.values
    reason = None
    if float(np.max(exponent)) > EXP_CLAMP:
        reason = "exponential factor overflows along the path"
        exponent = np.minimum(exponent, EXP_CLAMP)
    norms = _sup_norm_series(f, path.times, params.kappa, eigen)
    integrand = params.Lambda * params.beta * np.exp(exponent) * norms**params.beta
    J_series = _cumtrapz(integrand, path.dt)

    # (T, inf) majorant: freeze W at the endpoint, grow its factor at the
    # conditional mean rate, and decay the sup norm at the slowest retained
    # rate. lam_min <= every retained eigenvalue keeps this a majorant.
    lam_min = min(lam1, eigen.lam1)
    c_env = (lam_min + 0.5 * params.kappa**2) * params.beta - growth_rate
    if c_env <= 0:
        return J_series, norms, math.inf, "tail majorant diverges (noise growth beats decay)"
    N_T = _coefficient_envelope(f, path.horizon, params.kappa, eigen)
    w_end = w_sign * w_scale * float(path.values[-1])
    tail = params.Lambda * params.beta * math.exp(min(w_end, EXP_CLAMP)) * N_T**params.beta / c_env
    return J_series, norms, tail, reason


def certificate_integral(
    path: BrownianPath,
    f: np.ndarray,
    params: ModelParams,
    lam1: float,
    eigen: EigenData,
) -> CertificateReport:
    """Global-existence certificate J < 1 with envelope B(t) = (1-J(t))^(-1/beta).

    J adds a closed-form majorant for the horizon tail to the trapezoidal
    [0, T] part, so a certified J is an overestimate of the true integral
    up to the conditional-mean treatment of the unseen Brownian factor.
    """
    if params.kappa <= 0:
        raise ConfigurationError("certificates need kappa > 0; the noiseless dichotomy is separate")
    f = _validate_initial(f, eigen)
    _check_upper_bound(params)
    J_series, norms, tail, reason = _certificate_integral_core(
        path, f, params, lam1, eigen,
        w_sign=1.0, w_scale=params.kappa * params.beta,
        growth_rate=0.5 * params.kappa**2 * params.beta**2,
    )
    J = float(J_series[-1]) + tail
    if reason is not None:
        return CertificateReport(
            kind=CertificateKind.INTEGRAL, J=J, verdict=Verdict.NOT_CERTIFIED,
            threshold=1.0, tail=tail, reason=reason,
        )
    if J >= 1.0:
        return CertificateReport(
            kind=CertificateKind.INTEGRAL, J=J, verdict=Verdict.NOT_CERTIFIED,
            threshold=1.0, tail=tail, reason=f"integral {J:.6g} is not below one",
        )
    envelope = (1.0 - J_series) ** (-1.0 / params.beta)
    return CertificateReport(
        kind=CertificateKind.INTEGRAL,
        J=J,
        verdict=Verdict.CERTIFIED,
        threshold=1.0,
        tail=tail,
        times=path.times,
        envelope=envelope,
        bound_sup=envelope * norms,
    )


def certificate_saturation(
    path: BrownianPath,
    f: np.ndarray,
    params: ModelParams,
    lam1: float,
    eigen: EigenData,
) -> CertificateReport:
    """Certificate for the variant model driven by G(v) itself, where the
    power-law domination is only assumed on (0, C*).

    Certifies when ||f||_inf <= C* (1 - J*)^(1/beta) and the enveloped sup
    norm B*(t) ||e^{-kappa^2 t/2} S_t f||_inf stays strictly inside (0, C*).
    """
    if params.kappa <= 0:
        raise ConfigurationError("certificates need kappa > 0; the noiseless dichotomy is separate")
    if params.Cstar is None:
        raise ConfigurationError("saturation certificate needs Cstar in the model parameters")
    f = _validate_initial(f, eigen)
    _check_upper_bound(params, z_max=params.Cstar)
    J_series, norms, tail, reason = _certificate_integral_core(
        path, f, params, lam1, eigen,
        w_sign=-1.0, w_scale=params.kappa,
        growth_rate=0.5 * params.kappa**2,
    )
    J = float(J_series[-1]) + tail
    sup_f = float(np.max(f))
    if reason is not None or J >= 1.0:
        return CertificateReport(
            kind=CertificateKind.SATURATION, J=J, verdict=Verdict.NOT_CERTIFIED,
            threshold=0.0, tail=tail,
            reason=reason or f"integral {J:.6g} is not below one",
        )
    threshold = params.Cstar * (1.0 - J) ** (1.0 / params.beta)
    envelope = (1.0 - J_series) ** (-1.0 / params.beta)
    bound_sup = envelope * norms
    if sup_f > threshold:
        return CertificateReport(
            kind=CertificateKind.SATURATION, J=J, verdict=Verdict.NOT_CERTIFIED,
            threshold=threshold, tail=tail,
            reason=f"||f||_inf = {sup_f:.6g} exceeds Cstar (1 - J)^(1/beta) = {threshold:.6g}",
        )
    inside = (bound_sup > 0.0) & (bound_sup < params.Cstar)
    if not bool(inside.all()):
        k = int(np.argmin(inside))
        return CertificateReport(
            kind=CertificateKind.SATURATION, J=J, verdict=Verdict.NOT_CERTIFIED,
            threshold=threshold, tail=tail,
            reason=f"enveloped sup norm leaves (0, Cstar) at t={path.times[k]:.6g}",
        )
    return CertificateReport(
        kind=CertificateKind.SATURATION,
        J=J,
        verdict=Verdict.CERTIFIED,
        threshold=threshold,
        tail=tail,
        times=path.times,
        envelope=envelope,
        bound_sup=bound_sup,
    )


def admissible_initial(K: float, eta: float, eigen: EigenData) -> np.ndarray:
    """The extreme admissible datum K S_eta psi, exact in the retained basis."""
    phi1 = eigen.modes[:, 0]
    return K * math.exp(-eigen.lam1 * eta) * phi1


def certificate_heat_kernel(
    K: float,
    eta: float,
    params: ModelParams,
    lam1: float,
    eigen: EigenData,
    c: float,
    path: BrownianPath | None = None,
    f: np.ndarray | None = None,
) -> CertificateReport:
    """Certificate for initial data dominated by K S_eta psi.

    With psi the L2-normalized principal mode and c the kernel-ratio constant,
    the sufficient condition is

        int_0^inf e^{kappa beta W_r - (lam1 + kappa^2/2) beta r} dr
            < e^{lam1 beta eta} / (Lambda beta [K (1+c) (sup psi)^2 int psi]^beta).

    In path mode (path given) the left side is evaluated on the path grid plus
    the endpoint-frozen tail majorant and compared against the right side. In
    analytic mode (path None) the left side has the known gamma law, and the
    report carries the probability that the condition holds.

    When f is given it is checked against the domination f <= K S_eta psi
    node by node; the first violating node is named in the failure.
    """
    if K <= 0 or not math.isfinite(K):
        raise ConfigurationError(f"K must be positive and finite, got {K}")
    if eta < 1.0:
        raise ConfigurationError(f"eta must be >= 1, got {eta}")
    if not (math.isfinite(c) and c > 0):
        raise ConfigurationError(f"kernel-ratio constant must be positive and finite, got {c}")
    _check_upper_bound(params)
    phi1 = eigen.modes[:, 0]
    if f is not None:
        f = _validate_initial(f, eigen)
        cap = K * math.exp(-eigen.lam1 * eta) * phi1
        bad = f > cap * (1.0 + 1e-12) + 1e-300
        if np.any(bad):
            node = int(np.argmax(bad))
            coords = tuple(float(axis[node]) for axis in eigen.grid.nodes())
            raise PreconditionFailure(
                f"initial data exceeds K S_eta psi at node {node} (x={coords}): "
                f"{f[node]} > {cap[node]}"
            )
    sup_phi1 = float(np.max(phi1))
    mass_phi1 = float(np.sum(eigen.grid.weights * phi1))
    beta = params.beta
    denom = params.Lambda * beta * (K * (1.0 + c) * sup_phi1**2 * mass_phi1) ** beta
    threshold = math.exp(min(lam1 * beta * eta, EXP_CLAMP)) / denom
    inputs = {"K": K, "eta": eta, "c": c}

    if path is None:
        if params.kappa <= 0:
            raise ConfigurationError("analytic mode needs kappa > 0; the functional degenerates")
        alpha = derive_params(beta, params.kappa, lam1).alpha
        z = 2.0 / (params.kappa**2 * beta**2 * threshold)
        probability = gamma_tail(alpha, z)
        return CertificateReport(
            kind=CertificateKind.HEAT_KERNEL,
            J=math.nan,
            verdict=None,
            threshold=threshold,
            probability=probability,
            inputs=inputs,
        )

    a = -(lam1 + 0.5 * params.kappa**2) * beta
    b = params.kappa * beta
    func = exp_functional(path, a, b)
    c_env = (lam1 + 0.5 * params.kappa**2) * beta - 0.5 * params.kappa**2 * beta**2
    if func.saturated:
        J = math.inf
        tail = math.inf
        reason = "exponential factor overflows along the path"
    elif c_env <= 0:
        J = math.inf
        tail = math.inf
        reason = "tail majorant diverges (noise growth beats decay)"
    else:
        tail = math.exp(min(b * float(path.values[-1]) + a * path.horizon, EXP_CLAMP)) / c_env
        J = float(func.values[-1]) + tail
        reason = None
    certified = J < threshold
    return CertificateReport(
        kind=CertificateKind.HEAT_KERNEL,
        J=J,
        verdict=Verdict.CERTIFIED if certified else Verdict.NOT_CERTIFIED,
        threshold=threshold,
        tail=tail,
        times=path.times,
        inputs=inputs,
        reason=None if certified else (reason or f"functional {J:.6g} is not below {threshold:.6g}"),
    )
