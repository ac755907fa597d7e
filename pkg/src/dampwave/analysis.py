"""Post-hoc checks of decay behaviour on sampled series and trajectories."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter1d

from . import damping as dmp
from . import mesh as msh
from .dynamics import GalerkinSystem, SimConfig, Trajectory
from .equilibria import Equilibrium, LojasiewiczEstimate, distance_to
from .nonlinearity import bounds_on, validate_sign

SELECTION_GAP = 0.10
EXPONENT_AGREEMENT = 0.25
# estimates this close to 1/2 are read as the exponential branch
THETA_HALF_BAND = 0.05
SERIES_FLOOR = 1e-10
MAX_MODAL_SIZE = 1500


@dataclass
class OdeBoundCheck:
    alpha: float
    C: float
    beta: float | None
    C_prime: float | None
    slack: np.ndarray  # v' + C v^alpha; <= 0 when the inequality holds
    bound: np.ndarray
    inequality_violations: int
    bound_violations: int

    @property
    def ok(self) -> bool:
        return self.inequality_violations == 0 and self.bound_violations == 0

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "C": self.C,
            "beta": self.beta,
            "C_prime": self.C_prime,
            "max_slack": float(np.max(self.slack)),
            "inequality_violations": self.inequality_violations,
            "bound_violations": self.bound_violations,
        }


def lemma3_check(t, v, alpha: float, C: float, rtol: float = 1e-5, atol: float = 1e-14) -> OdeBoundCheck:
    """Check ``v' <= -C v^α`` on samples and the bound it implies.

    ``α > 1`` gives ``v(t) <= C' t^{-β}`` with ``β = 1/(α-1)`` and
    ``C' = [C(α-1)]^{-β}``; ``α = 1`` gives ``v(t) <= v(0) e^{-Ct}``.
    Derivatives are second-order finite differences, so the slack
    tolerance is relative to ``|v'| + C v^α``.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ValueError("v must be nonnegative")
    if np.any(np.diff(t) <= 0):
        raise ValueError("samples must be sorted in time")
    if alpha < 1 or C <= 0:
        raise ValueError("need alpha >= 1 and C > 0")
    dv = np.gradient(v, t, edge_order=2)
    rhs = C * v**alpha
    slack = dv + rhs
    ineq_bad = int(np.sum(slack > rtol * (np.abs(dv) + rhs) + atol))

    if alpha > 1:
        beta = 1.0 / (alpha - 1.0)
        c_prime = (C * (alpha - 1.0)) ** (-beta)
        with np.errstate(divide="ignore"):
            bound = np.where(t > 0, c_prime * np.where(t > 0, t, 1.0) ** (-beta), np.inf)
    else:
        beta, c_prime = None, None
        bound = v[0] * np.exp(-C * (t - t[0]))
    bound_bad = int(np.sum(v > bound * (1 + 1e-9) + atol))
    return OdeBoundCheck(alpha, C, beta, c_prime, slack, bound, ineq_bad, bound_bad)


@dataclass
class DecayFit:
    cls: str  # exponential | polynomial | inconclusive
    rate: float | None  # ζ or β
    prefactor: float | None
    window: tuple[float, float]
    rms: float
    gap: float
    exponential: tuple[float, float, float] = (math.nan, math.nan, math.nan)  # (ζ, prefactor, rms)
    polynomial: tuple[float, float, float] = (math.nan, math.nan, math.nan)  # (β, prefactor, rms)
    envelope: bool = False
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "class": self.cls,
            "rate": self.rate,
            "prefactor": self.prefactor,
            "window": list(self.window),
            "rms": self.rms,
            "gap": self.gap,
            "exponential": {"zeta": self.exponential[0], "prefactor": self.exponential[1], "rms": self.exponential[2]},
            "polynomial": {"beta": self.polynomial[0], "prefactor": self.polynomial[1], "rms": self.polynomial[2]},
            "envelope": self.envelope,
            "note": self.note,
        }


def envelope(t: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, bool]:
    """Running max over one estimated oscillation period, if the series oscillates.

    The period is estimated from sign changes of ``d/dt log y``.
    """
    logy = np.log(y)
    d = np.diff(logy) / np.diff(t)
    s = np.sign(d)
    s = s[s != 0]
    flips = np.flatnonzero(s[1:] != s[:-1])
    if flips.size < 4:
        return y, False
    spacing = float(np.median(np.diff(flips)))
    width = max(1, int(round(2.0 * spacing)))
    if width % 2 == 0:
        width += 1
    return maximum_filter1d(y, size=width, mode="nearest"), True


def fit_decay(t, y, t_min_fraction: float = 0.2) -> DecayFit:
    """Fit exponential (log y vs t) and power-law (log y vs log t) decay.

    The first ``t_min_fraction`` of the time span is discarded as
    transient.  The lower-RMS model wins when it beats the other by more
    than 10 %; otherwise the fit is inconclusive.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise ValueError("series must be finite and nonnegative")
    y = np.maximum(y, 1e-300)
    t0 = t[0] + t_min_fraction * (t[-1] - t[0])
    keep = t >= t0
    t, y = t[keep], y[keep]
    if t.size < 20:
        raise ValueError(f"need at least 20 samples after the transient cut, got {t.size}")
    y_env, osc = envelope(t, y)
    logy = np.log(y_env)

    a_exp, b_exp = np.polyfit(t, logy, 1)
    rms_exp = float(np.sqrt(np.mean((logy - (a_exp * t + b_exp)) ** 2)))
    exp_fit = (float(-a_exp), float(np.exp(b_exp)), rms_exp)
    if np.all(t > 0):
        lt = np.log(t)
        a_pow, b_pow = np.polyfit(lt, logy, 1)
        rms_pow = float(np.sqrt(np.mean((logy - (a_pow * lt + b_pow)) ** 2)))
        pow_fit = (float(-a_pow), float(np.exp(b_pow)), rms_pow)
    else:
        pow_fit = (math.nan, math.nan, math.inf)

    window = (float(t[0]), float(t[-1]))
    worse = max(exp_fit[2], pow_fit[2])
    better = min(exp_fit[2], pow_fit[2])
    gap = (worse - better) / worse if worse > 0 else 0.0
    common = dict(window=window, gap=gap, exponential=exp_fit, polynomial=pow_fit, envelope=osc)
    if gap <= SELECTION_GAP:
        return DecayFit("inconclusive", None, None, rms=better, note="models indistinguishable", **common)
    cls, (rate, pref, rms) = ("exponential", exp_fit) if exp_fit[2] < pow_fit[2] else ("polynomial", pow_fit)
    if rate <= 0:
        return DecayFit("inconclusive", None, None, rms=rms, note=f"best {cls} model does not decay", **common)
    return DecayFit(cls, rate, pref, rms=rms, **common)


def velocity_decay_check(traj: Trajectory, threshold: float = 1e-3, T_check: float | None = None) -> dict:
    """``‖v(T)‖ <= threshold`` and the last-10 % running max of ``‖v‖`` <= 2·threshold."""
    if traj.blown_up:
        return {"pass": False, "value": float("inf"), "blown_up": True, "blow_up_time": traj.blow_up_time}
    t = traj.times
    vn = traj.column("v_l2")
    T_check = t[-1] if T_check is None else T_check
    if T_check > t[-1] + 1e-9:
        raise ValueError("trajectory does not reach T_check")
    i = int(np.argmin(np.abs(t - T_check)))
    tail = (t >= t[0] + 0.9 * (T_check - t[0])) & (t <= T_check + 1e-12)
    running = float(np.max(vn[tail]))
    value = float(vn[i])
    return {"pass": bool(value <= threshold and running <= 2 * threshold), "value": value,
            "tail_max": running, "threshold": threshold, "T_check": float(t[i]), "blown_up": False}


# --------------------------------------------------------------------------
# Linearised modal prediction


def linearized_decay_rate(eq: Equilibrium, nl, h_eff: float, g_slope: float = 1.0,
                          mesh: msh.Mesh | None = None, deviation: tuple[np.ndarray, np.ndarray] | None = None) -> dict | None:
    """Slowest decay rate of the linearisation about ``eq``.

    Builds the first-order companion matrix of ``ü + C u̇ = K u`` with
    ``K = Δ + f'(φ)`` (or ``-A + f'(ψ)``) and ``C = h_eff g'(0) (B) + D_b``.
    With ``deviation = (u0 - φ, v0)`` only modes present in the data count.
    """
    if eq.system is not None:
        A = np.asarray(eq.system.A, float)
        K = -A + np.diag(nl.df(eq.phi))
        Cm = h_eff * g_slope * np.asarray(eq.system.B, float)
        free = slice(None)
    else:
        mesh = mesh or eq.mesh
        free = mesh.free_mask().ravel()
        if free.sum() > MAX_MODAL_SIZE:
            return None
        L = msh.laplacian_matrix(mesh)[free][:, free].toarray()
        K = L + np.diag(nl.df(eq.phi.ravel()[free]))
        Cm = np.diag(h_eff * g_slope + mesh.boundary_damping().ravel()[free])
    n = K.shape[0]
    M = np.block([[np.zeros((n, n)), np.eye(n)], [K, -Cm]])
    s, V = np.linalg.eig(M)
    rates = -s.real
    slowest = float(rates.min())
    out = {"slowest_rate": slowest, "excited_rate": slowest}
    if deviation is not None:
        du, dv = deviation
        x0 = np.concatenate([np.ravel(du)[free], np.ravel(dv)[free]])
        if np.linalg.norm(x0) > 0:
            c, *_ = np.linalg.lstsq(V, x0.astype(complex), rcond=None)
            amp = np.abs(c) * np.linalg.norm(V, axis=0)
            excited = amp > 1e-6 * amp.max()
            out["excited_rate"] = float(rates[excited].min())
    return out


# --------------------------------------------------------------------------
# Convergence report


@dataclass
class TheoremReport:
    data: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.data[key]

    def to_dict(self) -> dict:
        return self.data

    def text(self) -> str:
        d = self.data
        lines = [f"scenario        : {d.get('scenario', '-')}"]
        hyp = d["hypotheses"]
        lines.append(f"damping         : {hyp['damping']['profile']}")
        lines.append(f"  certificate   : {hyp['damping']['certificate']['verdict']}")
        lines.append(f"  structure     : {hyp['damping']['structure']}")
        lines.append(f"  divergence    : {hyp['damping']['criterion_11']}")
        lines.append(f"sign condition  : {hyp['sign']['status']}")
        b = hyp["bounds"]
        lines.append(f"sup |f|,|f'|,|f''| on [-{b['beta']:.3g}, {b['beta']:.3g}] : {b['f']:.4g}, {b['df']:.4g}, {b['d2f']:.4g}")
        if "velocity_damping" in hyp:
            lines.append(f"velocity damping: {hyp['velocity_damping']['name']} valid={hyp['velocity_damping']['valid']}")
        lines.append(f"hypotheses hold : {d['hypotheses_hold']}")
        if d.get("blown_up"):
            lines.append(f"blow-up at t    : {d['blow_up_time']}")
        if d.get("theta") is not None:
            lines.append(f"theta estimate  : {d['theta']:.4f} (R^2 {d['theta_r2']:.4f})")
        pred = d.get("predicted")
        if pred:
            rate = pred.get("rate")
            lines.append(f"predicted       : {pred['class']}" + (f" rate {rate:.4g}" if rate is not None else ""))
        meas = d.get("measured")
        if meas:
            rate = meas.get("rate")
            lines.append(f"measured        : {meas['class']}" + (f" rate {rate:.4g}" if rate is not None else ""))
        if "agreement" in d:
            lines.append(f"agreement       : {'yes' if d['agreement'] else 'no'}")
        lem = d["lemma1"]
        lines.append(f"velocity decay  : {'pass' if lem['pass'] else 'fail'} (|v(T)| = {lem['value']:.3g})")
        if "energy_drift" in d:
            lines.append(f"energy change   : {d['energy_drift']:.3e} (relative, max over run)")
        lines.append(f"converged       : {d['converged']}")
        lines.append(f"verdict         : {d['verdict']}")
        for note in d.get("notes", []):
            lines.append(f"note            : {note}")
        return "\n".join(lines)


def _distance_series(traj: Trajectory, eq: Equilibrium, mesh):
    dist = np.empty(len(traj.times))
    vel = np.empty(len(traj.times))
    for i in range(len(traj.times)):
        dist[i], vel[i] = distance_to(traj.u[i], traj.v[i], eq, mesh)
    return dist, vel


def _measured_series(t, y):
    peak = np.max(y)
    below = np.flatnonzero(y < SERIES_FLOOR * peak)
    stop = below[0] if below.size else len(y)
    return t[:stop], y[:stop]


def _time_mean(profile, t_end):
    if profile.kind == "constant":
        return profile.params["h0"], True
    ts = np.linspace(0.0, max(t_end, 1e-9), 20001)
    return float(np.trapezoid(dmp.evaluate(profile, ts), ts) / ts[-1]), False


def theorem1_report(
    traj: Trajectory,
    eq: Equilibrium | None,
    ls: LojasiewiczEstimate | None,
    config: SimConfig,
    system: GalerkinSystem | None = None,
    lemma1_threshold: float = 1e-3,
    scenario: str | None = None,
    notes: tuple[str, ...] = (),
) -> TheoremReport:
    """Assemble hypotheses, predicted rate class and measured decay for one run."""
    profile = config.damping
    nl = system.nonlinearity if system is not None else config.nonlinearity
    cert = dmp.certify_integrally_positive(profile)
    structure = dmp.classify_structure(profile)
    c11 = dmp.criterion_11(profile)
    sup_u = float(np.nanmax(traj.column("u_linf")[np.isfinite(traj.column("u_linf"))])) if len(traj.reports) else 1.0
    beta = max(1.0, sup_u) if np.isfinite(sup_u) else 1.0
    sign = validate_sign(nl, beta)
    f_sup, df_sup, d2f_sup = bounds_on(nl, beta)
    hyp = {
        "damping": {
            "profile": profile.label,
            "certificate": cert.to_dict(),
            "structure": structure,
            "criterion_11": c11.verdict,
        },
        "sign": sign.to_dict(),
        "bounds": {"beta": beta, "f": f_sup, "df": df_sup, "d2f": d2f_sup},
    }
    g = config.velocity_damping
    g_ok = True
    if not g.is_linear:
        vrep = dmp.validate_velocity_damping(g)
        g_ok = vrep.valid
        hyp["velocity_damping"] = {"name": g.name, "valid": vrep.valid, "m1": g.m1, "m2": g.m2}
    damping_ok = cert.verdict == "certified-up-to-horizon" or structure in ("positive-negative", "on-off")
    hypotheses_hold = bool(damping_ok and sign.status == "satisfied" and g_ok)

    lemma1 = velocity_decay_check(traj, lemma1_threshold)
    data = {
        "schema_version": 1,
        "scenario": scenario,
        "hypotheses": hyp,
        "hypotheses_hold": hypotheses_hold,
        "lemma1": lemma1,
        "blown_up": traj.blown_up,
        "blow_up_time": traj.blow_up_time,
        "epsilon": traj.epsilon,
        "notes": list(notes),
    }
    if traj.blown_up:
        data.update(converged=False, theta=None, verdict="blow-up observed" + ("; sign condition violated" if sign.status != "satisfied" else ""))
        return TheoremReport(data)

    E = traj.column("E")
    data["energy_drift"] = float(np.max(np.abs(E - E[0])) / max(abs(E[0]), 1e-300))
    mesh = config.mesh
    dist, vel = _distance_series(traj, eq, mesh)
    series = dist + vel
    converged = bool(dist[-1] <= 0.1 * dist.max() and vel[-1] <= 0.1 * max(vel.max(), 1e-300))
    data["converged"] = converged
    data["equilibrium"] = {"residual": eq.residual, "sup_norm": float(np.max(np.abs(eq.phi))), "converged": eq.converged}
    data["distance_final"] = {"h1": float(dist[-1]), "v_l2": float(vel[-1]), "residual": float(traj.final.residual)}
    data["notes"].append(
        "distance is the discrete H1 norm of u - phi plus ‖v‖; the final residual ‖Δu+f(u)‖ stands in for the W^{2,p} norm"
    )

    predicted = None
    if ls is not None:
        data["theta"] = ls.theta
        data["theta_r2"] = ls.r2
        if ls.theta >= 0.5 - THETA_HALF_BAND:
            predicted = {"class": "exponential", "rate": None}
        else:
            predicted = {"class": "polynomial", "rate": ls.theta / (1.0 - 2.0 * ls.theta)}
        h_eff, exact = _time_mean(profile, traj.times[-1])
        slope = float(np.asarray(g.dg(np.array([0.0])))[0])
        modal = linearized_decay_rate(eq, nl, h_eff, slope, mesh, (traj.u[0] - eq.phi, traj.v[0]))
        if modal is not None:
            data["modal"] = {**modal, "h_eff": h_eff, "constant_damping": exact}
            if predicted["class"] == "exponential" and exact:
                if modal["excited_rate"] > 1e-9:
                    predicted["rate"] = modal["excited_rate"]
                else:
                    data["notes"].append("linearisation has no decaying excited mode")
        data["predicted"] = predicted

    t_fit, y_fit = _measured_series(traj.times, series)
    try:
        fit = fit_decay(t_fit, y_fit)
        data["measured"] = {"class": fit.cls, **fit.to_dict()}
    except ValueError as exc:
        fit = None
        data["measured"] = {"class": "inconclusive", "rate": None, "note": str(exc)}

    if predicted is not None and fit is not None:
        agree = fit.cls == predicted["class"]
        if agree and predicted["rate"] is not None and fit.rate is not None:
            agree = abs(fit.rate - predicted["rate"]) <= EXPONENT_AGREEMENT * predicted["rate"]
        data["agreement"] = bool(agree)
        if fit.cls == "exponential":
            data["notes"].append(f"decay consistent with exp(-{fit.rate:.4g} t)")
        elif fit.cls == "polynomial":
            data["notes"].append(f"decay consistent with t^-{fit.rate:.4g}")

    if hypotheses_hold:
        if converged:
            verdict = "conclusion observed" if data.get("agreement", True) else "convergence observed; rate class disagrees"
        else:
            verdict = "conclusion not observed within horizon"
    else:
        verdict = "conclusion observed despite refuted hypothesis" if converged else "conclusion not observed; hypothesis refuted"
    data["verdict"] = verdict
    return TheoremReport(data)
