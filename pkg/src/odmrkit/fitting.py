"""Least-squares analysis of spectra and decay traces.

Models here are small and smooth (sums of Lorentzians, stretched
exponentials), so the solver is a damped Gauss-Newton iteration with a
Levenberg-Marquardt lambda schedule and forward-difference Jacobians.
Positive parameters (widths, decay times) are fitted through a log transform
and polarization fractions through a logistic transform, which keeps the
invariants without a constrained solver. Reported 1 sigma uncertainties come
from the inverse normal matrix scaled by the residual variance.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import comb

import numpy as np

from .dynamics import PopulationTrace
from .errors import FitConvergenceError, ValidationError
from .spectrum import SpectrumSeries

LAW_FREE = "free"
LAW_UNPOLARIZED = "binomial-unpolarized"
LAW_P = "binomial-P"
LAW_P1P2 = "two-parameter-P1P2"
AMPLITUDE_LAWS = (LAW_FREE, LAW_UNPOLARIZED, LAW_P, LAW_P1P2)

# line weights of n equally split lines from equivalent unpolarized nuclei
MULTIPLICITY_WEIGHTS = {
    2: np.array([1.0, 1.0]) / 2.0,
    3: np.array([1.0, 1.0, 1.0]) / 3.0,
    4: np.array([1.0, 3.0, 3.0, 1.0]) / 8.0,
    7: np.array([1.0, 3.0, 6.0, 7.0, 6.0, 3.0, 1.0]) / 27.0,
}
FITTABLE_LINE_COUNTS = (1, 2, 3, 4, 7)

MAX_ITER = 200
GRAD_TOL = 1e-10
STEP_TOL = 1e-12
JACOBIAN_REL_STEP = 1e-6
MAX_CONDITION = 1e14
# normal-matrix eigenvalues below this fraction of the largest are treated as
# directions the data leaves unconstrained
RANK_RCOND = 1e-10


def polarization_amplitudes(p: float) -> np.ndarray:
    """Binomial line weights for three equivalent spin-1/2 nuclei, indexed by
    the number k of polarized nuclei.

    Line k sits at center + (k - 3/2) * splitting; a negative splitting
    (negative gamma_n) therefore reverses the frequency order of the weights.
    """
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"polarization must lie in [0, 1], got {p}")
    return np.array([comb(3, k) * p**k * (1.0 - p) ** (3 - k) for k in range(4)])


def polarization_amplitudes_2(p1: float, p2: float) -> np.ndarray:
    """Line weights when two sites share polarization p1 and the third has p2."""
    for name, p in (("p1", p1), ("p2", p2)):
        if not 0.0 <= p <= 1.0:
            raise ValidationError(f"{name} must lie in [0, 1], got {p}")
    q1, q2 = 1.0 - p1, 1.0 - p2
    return np.array(
        [
            q1 * q1 * q2,
            q1 * q1 * p2 + 2.0 * p1 * q1 * q2,
            p1 * p1 * q2 + 2.0 * p1 * p2 * q1,
            p1 * p1 * p2,
        ]
    )


def net_polarization(p1: float, p2: float) -> float:
    """Average per-nucleus polarization of the two-parameter model."""
    return (2.0 * p1 + p2) / 3.0


@dataclass(frozen=True)
class MultipletModel:
    """Baseline minus a sum of equally spaced, shared-width Lorentzian dips.

    Line k of n sits at center + (k - (n-1)/2) * splitting with the splitting
    SIGNED; its amplitude is depth * weight_k under the constrained amplitude
    laws, or the free per-line amplitude. depth > 0 describes dips below the
    baseline (ESR contrast), depth < 0 upward peaks.
    """

    center_mhz: float
    splitting_mhz: float
    fwhm_mhz: float
    depth: float = 1.0
    n_lines: int = 4
    amplitude_law: str = LAW_UNPOLARIZED
    amplitudes: tuple[float, ...] | None = None  # free law only
    baseline: float = 1.0
    p: float | None = None
    p1: float | None = None
    p2: float | None = None

    def __post_init__(self):
        if self.fwhm_mhz <= 0:
            raise ValidationError(f"fwhm must be positive, got {self.fwhm_mhz}")
        if self.amplitude_law not in AMPLITUDE_LAWS:
            raise ValidationError(f"unknown amplitude law {self.amplitude_law!r}")
        if self.n_lines < 1:
            raise ValidationError("n_lines must be at least 1")
        if self.amplitude_law == LAW_FREE:
            if self.amplitudes is None or len(self.amplitudes) != self.n_lines:
                raise ValidationError("free law needs one amplitude per line")
        elif self.amplitude_law == LAW_UNPOLARIZED:
            if self.n_lines not in MULTIPLICITY_WEIGHTS:
                raise ValidationError(
                    f"no multiplicity weights for {self.n_lines} lines; "
                    f"known: {sorted(MULTIPLICITY_WEIGHTS)}"
                )
        elif self.n_lines != 4:
            raise ValidationError("polarization laws describe 4-line multiplets")

    def line_positions(self) -> np.ndarray:
        k = np.arange(self.n_lines, dtype=float)
        return self.center_mhz + (k - 0.5 * (self.n_lines - 1)) * self.splitting_mhz

    def line_weights(self) -> np.ndarray:
        if self.amplitude_law == LAW_FREE:
            return np.array(self.amplitudes, dtype=float)
        if self.amplitude_law == LAW_UNPOLARIZED:
            return MULTIPLICITY_WEIGHTS[self.n_lines].copy()
        if self.amplitude_law == LAW_P:
            if self.p is None:
                raise ValidationError("binomial-P model needs p")
            return polarization_amplitudes(self.p)
        if self.p1 is None or self.p2 is None:
            raise ValidationError("two-parameter model needs p1 and p2")
        return polarization_amplitudes_2(self.p1, self.p2)

    def line_amplitudes(self) -> np.ndarray:
        w = self.line_weights()
        return w if self.amplitude_law == LAW_FREE else self.depth * w

    def evaluate(self, freqs_mhz: np.ndarray) -> np.ndarray:
        f = np.asarray(freqs_mhz, dtype=float)
        y = np.full(f.shape, self.baseline)
        for pos, amp in zip(self.line_positions(), self.line_amplitudes()):
            y -= amp / (1.0 + (2.0 * (f - pos) / self.fwhm_mhz) ** 2)
        return y


@dataclass(frozen=True)
class DecayModel:
    """offset + amplitude * exp(-(t / t_us)^stretch_n)."""

    t_us: float
    amplitude: float
    offset: float
    stretch_n: float = 1.0
    kind: str = "stretched-exponential"

    def __post_init__(self):
        if self.kind != "stretched-exponential":
            raise ValidationError(f"unknown decay kind {self.kind!r}")
        if self.t_us <= 0:
            raise ValidationError(f"decay time must be positive, got {self.t_us}")
        if not 0.0 < self.stretch_n <= 4.0:
            raise ValidationError(f"stretch exponent must lie in (0, 4], got {self.stretch_n}")

    def evaluate(self, times_us: np.ndarray) -> np.ndarray:
        t = np.asarray(times_us, dtype=float)
        if t.size and t.min() < 0:
            raise ValidationError("decay model is defined for non-negative times")
        return self.offset + self.amplitude * np.exp(-((t / self.t_us) ** self.stretch_n))


@dataclass(frozen=True)
class FitReport:
    """Solver diagnostics plus parameter estimates in natural units."""

    parameters: dict[str, float] | None
    sigmas: dict[str, float] | None
    residual_norm: float
    iterations: int
    converged: bool
    n_points: int
    condition: float
    covariance: np.ndarray | None = field(default=None, repr=False, compare=False)
    parameter_names: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "parameters": self.parameters,
            "sigmas": self.sigmas,
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "n_points": self.n_points,
            "condition": self.condition,
        }


class _ParamSet:
    """Ordered fit parameters with per-parameter transforms.

    lin: identity. log: value = sign * exp(u), sign fixed at setup (keeps
    magnitudes positive and the sign out of the solver's reach). logit:
    value = 1 / (1 + exp(-u)), keeps fractions inside (0, 1).
    """

    def __init__(self):
        self.names: list[str] = []
        self.transforms: list[str] = []
        self.signs: list[float] = []
        self.x0: list[float] = []

    def add(self, name: str, value: float, transform: str = "lin"):
        sign = 1.0
        if transform == "lin":
            u = float(value)
        elif transform == "log":
            if value == 0:
                raise ValidationError(f"initial {name} must be nonzero")
            sign = 1.0 if value > 0 else -1.0
            u = float(np.log(abs(value)))
        elif transform == "logit":
            p = min(max(float(value), 1e-6), 1.0 - 1e-6)
            u = float(np.log(p / (1.0 - p)))
        else:
            raise ValidationError(f"unknown transform {transform!r}")
        self.names.append(name)
        self.transforms.append(transform)
        self.signs.append(sign)
        self.x0.append(u)

    def decode(self, x: np.ndarray) -> dict[str, float]:
        out = {}
        for name, tr, sign, u in zip(self.names, self.transforms, self.signs, x):
            if tr == "lin":
                out[name] = float(u)
            elif tr == "log":
                out[name] = float(sign * np.exp(u))
            else:
                out[name] = float(1.0 / (1.0 + np.exp(-u)))
        return out

    def scale(self, x: np.ndarray) -> np.ndarray:
        """|d value / d u| per parameter, for sigma propagation."""
        vals = self.decode(x)
        out = np.empty(len(self.names))
        for k, (name, tr) in enumerate(zip(self.names, self.transforms)):
            if tr == "lin":
                out[k] = 1.0
            elif tr == "log":
                out[k] = abs(vals[name])
            else:
                out[k] = vals[name] * (1.0 - vals[name])
        return out


def _forward_jacobian(fn, x, r0, rel_step):
    jac = np.empty((r0.size, x.size))
    for k in range(x.size):
        h = rel_step * (abs(x[k]) + 1.0)
        xk = x.copy()
        xk[k] += h
        jac[:, k] = (fn(xk) - r0) / h
    return jac


def _least_squares(fn, params: _ParamSet) -> tuple[np.ndarray, FitReport]:
    """Damped Gauss-Newton. Returns the internal solution and a report whose
    parameters/sigmas are already decoded to natural units."""
    x = np.array(params.x0, dtype=float)
    r = fn(x)
    if not np.all(np.isfinite(r)):
        raise ValidationError("model is not finite at the initial parameters")
    cost = float(r @ r)
    lam = 1e-3
    converged = False
    condition = np.nan
    iterations = 0
    n_pts = r.size

    while iterations < MAX_ITER:
        iterations += 1
        jac = _forward_jacobian(fn, x, r, JACOBIAN_REL_STEP)
        grad = jac.T @ r
        normal = jac.T @ jac
        if iterations == 1:
            condition = float(np.linalg.cond(normal))
            if not np.isfinite(condition) or condition > MAX_CONDITION:
                raise FitConvergenceError(
                    f"degenerate Jacobian: normal-matrix condition {condition:.3e} "
                    f"exceeds {MAX_CONDITION:.0e}"
                )
        if np.abs(grad).max() < GRAD_TOL:
            converged = True
            break
        damping = np.clip(np.diag(normal), 1e-12, None)
        accepted = False
        step = None
        while lam < 1e15:
            try:
                step = np.linalg.solve(normal + lam * np.diag(damping), -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            r_new = fn(x + step)
            if np.all(np.isfinite(r_new)) and float(r_new @ r_new) < cost:
                x = x + step
                r = r_new
                cost = float(r_new @ r_new)
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged = True  # damping saturated: no downhill step left
            break
        if np.linalg.norm(step) < STEP_TOL * (np.linalg.norm(x) + STEP_TOL):
            converged = True
            break

    residual_norm = float(np.sqrt(cost))
    if not converged:
        raise FitConvergenceError(
            f"no convergence in {MAX_ITER} iterations (residual norm {residual_norm:.3e})",
            report=FitReport(
                parameters=None,
                sigmas=None,
                residual_norm=residual_norm,
                iterations=iterations,
                converged=False,
                n_points=n_pts,
                condition=condition,
            ),
        )

    jac = _forward_jacobian(fn, x, r, JACOBIAN_REL_STEP)
    normal = jac.T @ jac
    dof = max(n_pts - x.size, 1)
    variance = cost / dof
    evals, evecs = np.linalg.eigh(normal)
    kept = evals > RANK_RCOND * max(evals.max(), 0.0)
    inv_evals = np.where(kept, 1.0 / np.where(kept, evals, 1.0), 0.0)
    cov_internal = (evecs * (variance * inv_evals)) @ evecs.T
    if not kept.all():
        # a degenerate solution (e.g. two amplitude parameters entering only
        # through one combination) leaves null directions: their spread is the
        # parameter's own scale, not zero, so add unit internal variance there
        null = evecs[:, ~kept]
        cov_internal = cov_internal + null @ null.T
    scale = params.scale(x)
    cov = cov_internal * np.outer(scale, scale)
    values = params.decode(x)
    sigmas = {
        name: float(np.sqrt(max(cov[k, k], 0.0)))
        for k, name in enumerate(params.names)
    }
    report = FitReport(
        parameters=values,
        sigmas=sigmas,
        residual_norm=residual_norm,
        iterations=iterations,
        converged=True,
        n_points=n_pts,
        condition=condition,
        covariance=cov,
        parameter_names=tuple(params.names),
    )
    return x, report


def _multiplet_params(init: MultipletModel, n_lines: int, law: str) -> _ParamSet:
    params = _ParamSet()
    params.add("center_mhz", init.center_mhz)
    if n_lines > 1:
        params.add("splitting_mhz", init.splitting_mhz, "log")
    params.add("fwhm_mhz", init.fwhm_mhz, "log")
    params.add("baseline", init.baseline)
    if law == LAW_FREE:
        amps = init.line_amplitudes()
        for k in range(n_lines):
            params.add(f"amp_{k}", float(amps[k]) if k < amps.size else 0.0)
    else:
        params.add("depth", init.depth if init.depth != 0 else 1.0)
        if law == LAW_P:
            params.add("p", init.p if init.p is not None else 0.5, "logit")
        elif law == LAW_P1P2:
            params.add("p1", init.p1 if init.p1 is not None else 0.5, "logit")
            params.add("p2", init.p2 if init.p2 is not None else 0.5, "logit")
    return params


def _multiplet_from_values(vals: dict[str, float], n_lines: int, law: str) -> MultipletModel:
    common = {
        "center_mhz": vals["center_mhz"],
        "splitting_mhz": vals.get("splitting_mhz", 0.0),
        "fwhm_mhz": vals["fwhm_mhz"],
        "baseline": vals["baseline"],
        "n_lines": n_lines,
        "amplitude_law": law,
    }
    if law == LAW_FREE:
        common["amplitudes"] = tuple(vals[f"amp_{k}"] for k in range(n_lines))
    else:
        common["depth"] = vals["depth"]
        if law == LAW_P:
            common["p"] = vals["p"]
        elif law == LAW_P1P2:
            common["p1"] = vals["p1"]
            common["p2"] = vals["p2"]
    return MultipletModel(**common)


def fit_multiplet(
    spec: SpectrumSeries,
    n_lines: int,
    law: str,
    init: MultipletModel,
) -> tuple[MultipletModel, FitReport]:
    """Fit an equally spaced Lorentzian multiplet to a spectrum.

    The sign of the splitting is taken from the initialization (it encodes the
    isotope's gamma_n sign) and is never flipped by the solver. Constrained
    amplitude laws tie the line weights to at most two parameters.
    """
    if law not in AMPLITUDE_LAWS:
        raise ValidationError(f"unknown amplitude law {law!r}")
    if n_lines not in FITTABLE_LINE_COUNTS:
        raise ValidationError(f"n_lines must be one of {FITTABLE_LINE_COUNTS}, got {n_lines}")
    if n_lines > 1 and init.splitting_mhz == 0:
        raise ValidationError("multiplet fits need a nonzero initial splitting")
    span = (n_lines - 1) * abs(init.splitting_mhz)
    coverage = float(spec.freqs_mhz[-1] - spec.freqs_mhz[0])
    if n_lines > 1 and coverage < 2.0 * span:
        raise ValidationError(
            f"spectrum covers {coverage:.1f} MHz, need at least twice the "
            f"multiplet span ({span:.1f} MHz)"
        )

    params = _multiplet_params(init, n_lines, law)
    freqs = spec.freqs_mhz
    target = spec.intensity

    def residual(x):
        model = _multiplet_from_values(params.decode(x), n_lines, law)
        return model.evaluate(freqs) - target

    x, report = _least_squares(residual, params)
    return _multiplet_from_values(params.decode(x), n_lines, law), report


@dataclass(frozen=True)
class PolarizationResult:
    """Extracted nuclear polarization with 1 sigma uncertainties.

    ordering = sign of the splitting: -1 means the line order in frequency is
    reversed relative to the polarized-count index (negative gamma_n).
    """

    law: str
    net_p: float
    sigma_net_p: float
    ordering: int
    p: float | None = None
    sigma_p: float | None = None
    p1: float | None = None
    sigma_p1: float | None = None
    p2: float | None = None
    sigma_p2: float | None = None

    def __post_init__(self):
        for v in (self.net_p, self.p, self.p1, self.p2):
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValidationError(f"polarization {v} outside [0, 1]")

    def to_dict(self) -> dict:
        out = {"law": self.law, "net_p": self.net_p, "sigma_net_p": self.sigma_net_p,
               "ordering": self.ordering}
        for k in ("p", "sigma_p", "p1", "sigma_p1", "p2", "sigma_p2"):
            v = getattr(self, k)
            if v is not None:
                out[k] = v
        return out


def resolvability(spec: SpectrumSeries, init: MultipletModel) -> tuple[float, MultipletModel]:
    """Free-law fit quality gate: FWHM over |splitting|; < 1 means resolved."""
    free_init = replace(
        init,
        amplitude_law=LAW_FREE,
        amplitudes=tuple(float(a) for a in init.line_amplitudes()),
        p=None, p1=None, p2=None,
    )
    fitted, _ = fit_multiplet(spec, init.n_lines, LAW_FREE, free_init)
    if fitted.splitting_mhz == 0:
        return np.inf, fitted
    return fitted.fwhm_mhz / abs(fitted.splitting_mhz), fitted


def fit_polarization(
    spec: SpectrumSeries,
    kind: str,
    init: MultipletModel,
    check_resolvable: bool = True,
) -> tuple[PolarizationResult, FitReport]:
    """Constrained 4-line fit with amplitudes tied to polarization parameters.

    kind "single" uses the binomial law (one P); "double" gives two sites an
    independent P1 and the third P2. The splitting sign comes from the
    initialization, not the data.
    """
    if kind not in ("single", "double"):
        raise ValidationError(f"kind must be 'single' or 'double', got {kind!r}")
    if init.n_lines != 4:
        raise ValidationError("polarization fits describe 4-line multiplets")
    if check_resolvable:
        metric, _ = resolvability(spec, init)
        if not metric < 1.0:
            raise ValidationError(
                f"multiplet not resolvable: FWHM / |splitting| = {metric:.3f} >= 1"
            )
    law = LAW_P if kind == "single" else LAW_P1P2
    init = replace(init, amplitude_law=law)
    if kind == "double" and init.p1 is not None and init.p1 == init.p2:
        # the two-parameter law is rank deficient at p1 == p2 (parallel
        # amplitude gradients), so split the start values
        init = replace(
            init, p1=min(init.p1 + 0.05, 0.99), p2=max(init.p2 - 0.05, 0.01)
        )
    model, report = fit_multiplet(spec, 4, law, init)
    ordering = -1 if model.splitting_mhz < 0 else 1
    names = report.parameter_names
    if kind == "single":
        result = PolarizationResult(
            law=law,
            net_p=model.p,
            sigma_net_p=report.sigmas["p"],
            ordering=ordering,
            p=model.p,
            sigma_p=report.sigmas["p"],
        )
    else:
        i1, i2 = names.index("p1"), names.index("p2")
        cov = report.covariance
        var_net = (4.0 * cov[i1, i1] + cov[i2, i2] + 4.0 * cov[i1, i2]) / 9.0
        result = PolarizationResult(
            law=law,
            net_p=net_polarization(model.p1, model.p2),
            sigma_net_p=float(np.sqrt(max(var_net, 0.0))),
            ordering=ordering,
            p1=model.p1,
            sigma_p1=report.sigmas["p1"],
            p2=model.p2,
            sigma_p2=report.sigmas["p2"],
        )
    return result, report


def fit_decay(
    trace: PopulationTrace,
    init: DecayModel,
    series: str | None = None,
    free_stretch: bool = False,
) -> tuple[DecayModel, FitReport]:
    """Stretched-exponential fit of one population series.

    stretch_n stays frozen at the initialization value unless free_stretch;
    the default model is therefore a plain exponential for init.stretch_n = 1.
    """
    if series is None:
        if len(trace.populations) != 1:
            raise ValidationError(
                f"trace has series {sorted(trace.populations)}; pick one via series="
            )
        series = next(iter(trace.populations))
    if series not in trace.populations:
        raise ValidationError(f"trace has no series {series!r}")
    t = trace.times_us
    y = trace.populations[series]
    if t.size < 8:
        raise ValidationError(f"need at least 8 samples, got {t.size}")
    if float(t.max() - t.min()) < 1.5 * init.t_us:
        raise ValidationError(
            f"trace spans {float(t.max() - t.min()):.3g} us, need at least "
            f"1.5x the initial decay time ({init.t_us:.3g} us)"
        )
    if float(np.ptp(y)) < 1e-12 * max(1.0, float(np.abs(y).max())):
        raise ValidationError("constant trace: no decay detectable")

    params = _ParamSet()
    params.add("offset", init.offset)
    params.add("amplitude", init.amplitude if init.amplitude != 0 else float(np.ptp(y)))
    params.add("t_us", init.t_us, "log")
    if free_stretch:
        params.add("stretch_n", init.stretch_n, "log")

    def residual(x):
        vals = params.decode(x)
        n = vals.get("stretch_n", init.stretch_n)
        model = vals["offset"] + vals["amplitude"] * np.exp(-((t / vals["t_us"]) ** n))
        return model - y

    x, report = _least_squares(residual, params)
    vals = params.decode(x)
    fitted = DecayModel(
        t_us=vals["t_us"],
        amplitude=vals["amplitude"],
        offset=vals["offset"],
        stretch_n=vals.get("stretch_n", init.stretch_n),
    )
    return fitted, report


def fit_decay_with_stretch_check(
    trace: PopulationTrace,
    init: DecayModel,
    series: str | None = None,
) -> dict:
    """Frozen-exponent fit, plus the free-exponent fit when it disagrees.

    Returns {"frozen": (model, report)} and adds "free" and
    "disagree_2sigma": True when the free-n decay time differs from the
    frozen-n one by more than twice the larger uncertainty.
    """
    frozen = fit_decay(trace, init, series, free_stretch=False)
    out = {"frozen": frozen, "disagree_2sigma": False}
    try:
        free = fit_decay(trace, init, series, free_stretch=True)
    except FitConvergenceError:
        return out
    sig = max(frozen[1].sigmas["t_us"], free[1].sigmas["t_us"])
    if abs(frozen[0].t_us - free[0].t_us) > 2.0 * sig:
        out["free"] = free
        out["disagree_2sigma"] = True
    return out
