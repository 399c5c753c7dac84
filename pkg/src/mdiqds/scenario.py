"""Scenario configuration, validation, and orchestration of the four run
modes: analytic replay, Monte-Carlo pipeline, protocol trials, table sweep."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import presets, protocol
from .errors import (
    DegenerateSessionError,
    DomainError,
    InfeasibleBoundsError,
    ValidationError,
)
from .estimation import ErrorBudget, YieldEstimate, estimate_yields, true_error_upper_bound
from .security import build_security_report, select_code_string
from .session import ChannelTables, StopRule, run_kgp_session
from .sources import DecoySourceConfig, SystemProfile

MODES = ("analytic", "montecarlo", "protocol", "table-sweep")
FORMATS = ("json", "csv")

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_VALIDATION = 3


@dataclass
class Scenario:
    """One fully resolved run configuration."""

    mode: str
    source_a: DecoySourceConfig
    source_b: DecoySourceConfig
    profile: SystemProfile
    budget: ErrorBudget
    target_security: float = 1e-4
    seed: int | None = None
    output_format: str = "json"
    scale_factor: float = 1.0
    r_fraction: float = presets.DEFAULT_R_FRACTION
    zeta: float = presets.DEFAULT_ZETA
    n_sig: float = 5.58e12
    x_error_method: str = "lp"
    analytic: dict = field(default_factory=dict)
    protocol_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.output_format not in FORMATS:
            raise ValidationError(f"format must be one of {FORMATS}")
        if self.scale_factor < 1:
            raise ValidationError("scale_factor must be >= 1")
        if self.mode in ("montecarlo", "protocol") and self.seed is None:
            raise ValidationError(f"{self.mode} mode requires a seed")
        if not 0.0 < self.target_security <= 1.0:
            raise ValidationError("target_security must lie in (0,1]")
        if not 0.0 < self.r_fraction < 1.0:
            raise ValidationError("r_fraction must lie in (0,1)")


# worked-example parameters for the analytic replay
_ANALYTIC_DEFAULTS = {
    "n_k": 8_900_000,
    "r_k": 518_000,
    "e_obs": 0.0207,
    "h_min_target": 8.69e5,
}

_PROTOCOL_DEFAULTS = {
    "length": 1000,
    "e_bar": 0.05,
    "p_e": 0.35,
    "honest_error": 0.05,
    "trials": 10_000,
}


def _build_source(payload: dict) -> DecoySourceConfig:
    merged = {
        "intensities": dict(presets.DEFAULT_INTENSITIES),
        "intensity_probs": dict(presets.DEFAULT_INTENSITY_PROBS),
        "basis_probs": dict(presets.DEFAULT_BASIS_PROBS),
        "pulse_rate": presets.DEFAULT_PULSE_RATE,
    }
    for key, value in payload.items():
        if key not in merged:
            raise ValidationError(f"unknown source field {key!r}")
        if isinstance(merged[key], dict):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    return DecoySourceConfig(**merged)


def _build_profile(payload: dict, preset: str | None) -> SystemProfile:
    base = presets.profile_for_preset(preset or "standard")
    merged = {
        "distance_km": base.distance_km,
        "loss_coeff_db_per_km": base.loss_coeff_db_per_km,
        "detector_efficiency": base.detector_efficiency,
        "dark_count_prob": base.dark_count_prob,
        "misalignment": base.misalignment,
    }
    for key, value in payload.items():
        if key not in merged:
            raise ValidationError(f"unknown profile field {key!r}")
        merged[key] = value
    return SystemProfile(**merged)


def _build_budget(payload: dict) -> ErrorBudget:
    known = {f.name for f in fields(ErrorBudget)}
    unknown = set(payload) - known
    if unknown:
        raise ValidationError(f"unknown budget fields {sorted(unknown)}")
    try:
        return ErrorBudget(**payload)
    except DomainError as exc:
        raise ValidationError(str(exc)) from exc


def scenario_from_dict(raw: dict, preset: str | None = None) -> Scenario:
    """Validate a configuration dictionary and apply the worked-example
    defaults to everything left unspecified."""
    if not isinstance(raw, dict):
        raise ValidationError("scenario must be a JSON object")
    known = {
        "mode", "seed", "format", "scale_factor", "target_security",
        "source", "source_a", "source_b", "profile", "budget", "preset",
        "r_fraction", "zeta", "n_sig", "x_error_method", "analytic", "protocol",
    }
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"unknown scenario fields {sorted(unknown)}")
    preset = raw.get("preset", preset)
    shared = raw.get("source", {})
    source_a = _build_source({**shared, **raw.get("source_a", {})})
    source_b = _build_source({**shared, **raw.get("source_b", {})})
    try:
        return Scenario(
            mode=raw.get("mode", "analytic"),
            source_a=source_a,
            source_b=source_b,
            profile=_build_profile(raw.get("profile", {}), preset),
            budget=_build_budget(raw.get("budget", {})),
            target_security=raw.get("target_security", 1e-4),
            seed=raw.get("seed"),
            output_format=raw.get("format", "json"),
            scale_factor=raw.get("scale_factor", 1.0),
            r_fraction=raw.get("r_fraction", presets.DEFAULT_R_FRACTION),
            zeta=raw.get("zeta", presets.DEFAULT_ZETA),
            n_sig=raw.get("n_sig", 5.58e12),
            x_error_method=raw.get("x_error_method", "lp"),
            analytic={**_ANALYTIC_DEFAULTS, **raw.get("analytic", {})},
            protocol_params={**_PROTOCOL_DEFAULTS, **raw.get("protocol", {})},
        )
    except (ValidationError, DomainError) as exc:
        raise ValidationError(str(exc)) from exc


def load_scenario(path: str | Path, preset: str | None = None) -> Scenario:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"scenario file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ValidationError(f"scenario file is not valid JSON: {exc}")
    return scenario_from_dict(raw, preset=preset)


def render_report(payload: dict) -> str:
    """Canonical JSON rendering: byte-identical for identical payloads."""
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=True) + "\n"


# -- run modes ---------------------------------------------------------------


def run_analytic(scenario: Scenario) -> tuple[int, dict]:
    """Replay the security pipeline from published or configured inputs."""
    params = scenario.analytic
    budget = scenario.budget
    n_k = int(params["n_k"])
    r_k = int(params["r_k"])
    n_half = n_k // 2
    if "n_k0" in params or "n_k1" in params:
        n_k0 = int(params.get("n_k0", 0))
        n_k1 = int(params.get("n_k1", 0))
        e_k1 = float(params.get("e_k1", 0.0))
    else:
        # recover the count rate from the published min-entropy: feed it
        # entirely through the vacuum term, which the entropy bound treats
        # identically to any split with e_k1 = 0
        n_k0 = round(float(params["h_min_target"]))
        n_k1 = 0
        e_k1 = 0.0
    est = YieldEstimate(
        bell=0,
        n_k=n_k,
        r_k=r_k,
        e_obs=float(params["e_obs"]),
        e_upper=true_error_upper_bound(
            float(params["e_obs"]), n_half, r_k, budget.eps_pe
        ),
        m_k0=0.0,
        m_k1=0.0,
        n_k0=n_k0,
        n_k1=n_k1,
        e_k1=e_k1,
        n_bar_k1=0.0,
        e_bar_k1=0.0,
        validity_ok=True,
        usable=True,
        budget=budget,
    )
    per_kgp = {
        "alice_bob": (est, n_k + r_k),
        "alice_charlie": (est, n_k + r_k),
    }
    report = build_security_report(
        per_kgp, budget, n_sig=scenario.n_sig,
        pulse_rate=scenario.source_b.pulse_rate, zeta=scenario.zeta,
    )
    payload = {"mode": "analytic", "security": report.to_dict()}
    return (EXIT_OK if report.feasible else EXIT_INFEASIBLE), payload


def run_montecarlo(scenario: Scenario) -> tuple[int, dict]:
    """Simulate both key-generation links at the scaled budget and push the
    sifted data through the estimation and security chain."""
    pulses = max(int(scenario.n_sig / scenario.scale_factor), 1)
    tables = ChannelTables(scenario.source_a, scenario.source_b, scenario.profile)
    per_kgp = {}
    details = {}
    sessions = {}
    for index, name in enumerate(("alice_bob", "alice_charlie")):
        sifted = run_kgp_session(
            scenario.source_a,
            scenario.source_b,
            scenario.profile,
            StopRule(total_pulses=pulses),
            seed=int(scenario.seed) + index,
            tables=tables,
        )
        sessions[name] = {
            "n_pulses": sifted.n_pulses,
            "z_set_sizes": sifted.z_counts.tolist(),
            "x_set_sizes": sifted.x_counts.tolist(),
        }
        result = estimate_yields(
            sifted,
            scenario.source_a,
            scenario.source_b,
            scenario.budget,
            r_fraction=scenario.r_fraction,
            seed=int(scenario.seed) + index,
            x_error_method=scenario.x_error_method,
        )
        details[name] = {str(b): e.to_dict() for b, e in result.estimates.items()}
        try:
            bell, est = select_code_string(result)
        except DegenerateSessionError as exc:
            payload = {
                "mode": "montecarlo",
                "sessions": sessions,
                "yield_estimates": details,
                "security": None,
                "infeasible_reason": f"{name}: {exc}",
            }
            return EXIT_INFEASIBLE, payload
        per_kgp[name] = (est, int(sifted.z_counts[bell, 0, 0]))
    try:
        report = build_security_report(
            per_kgp,
            scenario.budget,
            n_sig=float(pulses),
            pulse_rate=scenario.source_b.pulse_rate,
            zeta=scenario.zeta,
            per_bell_details=details,
        )
    except DegenerateSessionError as exc:
        payload = {
            "mode": "montecarlo",
            "sessions": sessions,
            "yield_estimates": details,
            "security": None,
            "infeasible_reason": str(exc),
        }
        return EXIT_INFEASIBLE, payload
    payload = {
        "mode": "montecarlo",
        "scale_factor": scenario.scale_factor,
        "sessions": sessions,
        "yield_estimates": details,
        "security": report.to_dict(),
    }
    return (EXIT_OK if report.feasible else EXIT_INFEASIBLE), payload


def run_protocol(scenario: Scenario) -> tuple[int, dict]:
    """Monte-Carlo protocol trials against the analytic bounds."""
    params = scenario.protocol_params
    length = int(params["length"])
    e_bar = float(params["e_bar"])
    p_e = float(params["p_e"])
    if not e_bar < p_e:
        raise ValidationError("protocol scenario needs e_bar < p_e")
    gap = p_e - e_bar
    s_a = e_bar + gap / 3.0
    s_v = e_bar + 2.0 * gap / 3.0
    trials = int(params["trials"])
    honest_error = float(params["honest_error"])
    seed = int(scenario.seed)

    honest = protocol.simulate_honest_batch(
        length, honest_error, s_a, s_v, trials, seed
    )
    repudiation_rate = protocol.simulate_repudiating_alice(
        (s_a + s_v) / 2.0, (s_a + s_v) / 2.0, length, s_a, s_v, trials, seed + 1
    )
    forge_rate = protocol.simulate_forging_bob("random-guess", length, s_v, trials, seed + 2)

    half = length // 2
    abort_margin = s_a - honest_error
    abort_bound = 2.0 * math.exp(-2.0 * abort_margin**2 * half) if abort_margin > 0 else 1.0
    repudiation_bound = 2.0 * math.exp(-0.25 * (s_v - s_a) ** 2 * length)
    forge_bound = min(
        sum(math.comb(half, m) for m in range(max(math.ceil(s_v * half) - 1, 0) + 1))
        * 2.0**-half,
        1.0,
    )

    def entry(rate, bound):
        sigma = math.sqrt(max(rate * (1 - rate), 1.0 / trials) / trials)
        return {
            "empirical": rate,
            "bound": bound,
            "ok": rate <= bound + 3.0 * sigma,
        }

    checks = {
        "honest_abort": entry(honest["abort_rate"], abort_bound),
        "transfer_failure": entry(honest["transfer_failure_rate"], repudiation_bound),
        "repudiation": entry(repudiation_rate, repudiation_bound),
        "forging": entry(forge_rate, forge_bound),
    }
    payload = {
        "mode": "protocol",
        "length": length,
        "s_a": s_a,
        "s_v": s_v,
        "trials": trials,
        "checks": checks,
        "sample_transcript": protocol.simulate_honest_run(
            length, honest_error, honest_error, s_a, s_v, seed + 3
        ),
    }
    ok = all(c["ok"] for c in checks.values())
    return (EXIT_OK if ok else EXIT_INFEASIBLE), payload


def run_table_sweep(scenario: Scenario) -> tuple[int, dict]:
    """Replay the published raw-key-time arithmetic for every benchmark row."""
    rows = []
    all_ok = True
    for label, benchmark in presets.BENCHMARKS.items():
        for row in benchmark:
            preset = presets.DETECTOR_PRESETS[row.detector]
            minutes = presets.benchmark_minutes(row)
            tolerance = 10.0 ** (-row.printed_decimals)
            ok = abs(minutes - row.t_r_minutes) < tolerance
            all_ok &= ok
            rows.append(
                {
                    "security": label,
                    "detector": row.detector,
                    "eta_d": preset.detector_efficiency,
                    "y_0": preset.dark_count_prob,
                    "n_sig": row.n_sig,
                    "t_r_minutes": minutes,
                    "t_r_minutes_printed": row.t_r_minutes,
                    "matches_printed": ok,
                }
            )
    return (EXIT_OK if all_ok else EXIT_INFEASIBLE), {"mode": "table-sweep", "rows": rows}


def table_rows_to_csv(rows: list[dict]) -> str:
    header = "security,detector,eta_d,y_0,n_sig,t_r_minutes"
    lines = [header]
    for row in rows:
        lines.append(
            f"{row['security']},{row['detector']},{row['eta_d']},{row['y_0']},"
            f"{row['n_sig']},{row['t_r_minutes']}"
        )
    return "\n".join(lines) + "\n"


def run(scenario: Scenario) -> tuple[int, dict]:
    """Dispatch one scenario; returns (exit_code, report payload)."""
    runner = {
        "analytic": run_analytic,
        "montecarlo": run_montecarlo,
        "protocol": run_protocol,
        "table-sweep": run_table_sweep,
    }[scenario.mode]
    try:
        return runner(scenario)
    except InfeasibleBoundsError as exc:
        return EXIT_INFEASIBLE, {"mode": scenario.mode, "infeasible_reason": str(exc)}
