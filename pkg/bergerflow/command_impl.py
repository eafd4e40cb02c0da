"""Implementations of the subcommands."""

import argparse
import collections.abc
import concurrent.futures
import contextlib
import dataclasses
import json
import logging
import math
import pathlib
import typing

import numpy as np
from prompt_toolkit.shortcuts import ProgressBar, ProgressBarCounter

from .blowup import align_distance, extract_blowup_sequence
from .command import Argument, command
from .config import RunConfig, output_dir, parse_config
from .flow import BlowThroughError, FlowTrajectory, RunState, run
from .initial import ConstantPhi, SeedParams, construct_initial_metric, validate_closeness
from .kahler import twin_run
from .output import (
    ManifestWriter,
    alignment_table,
    json_bytes,
    load_checkpoint,
    load_trajectory,
    profile_dump,
    read_series,
    trajectory_summary,
    write_checkpoint,
    write_outputs,
)
from .profile import FS_BOUND, DiagnosticRecord, SpatialGrid
from .soliton import (
    POWER,
    SQRT2,
    PhiProfile,
    ode_residuals,
    soliton_profile,
    soliton_system_residuals,
    solve_phi,
)
from .tools import isatty, print_check, print_json, print_row

logger = logging.getLogger(__name__)


def _nodes(args: argparse.Namespace) -> int | None:
    grids: list[int] | None = args.grid
    if not grids:
        return None
    if len(grids) > 1:
        raise ValueError("--grid takes a single node count outside of sweep")
    return grids[0]


def _destination(config: RunConfig, args: argparse.Namespace) -> pathlib.Path:
    dest = output_dir(args.out, config["run"]["tag"])
    dest.mkdir(parents=True, exist_ok=True)
    return dest


@command()
def validate(config: RunConfig, args: argparse.Namespace) -> int:
    """Validate configuration and the Closeness Assumptions of the initial data."""
    params = config.seed_params()
    profile = construct_initial_metric(params, config.grid(_nodes(args)))
    report = validate_closeness(profile, params.delta)
    print_row([("bold", "A² "), ("", repr(params.A2))])
    for name, margin in report.items():
        print_check(f"({name})", margin.ok, f"margin={margin.margin:.6e} node={margin.node}")
    if config.debug:
        print_json(report.dump())
    return 0 if report.ok else 1


class _MuProgress:
    """Progress of a run measured by the decay of ``μ`` towards ``μ_stop``."""

    STEPS = 1000

    def __init__(
        self, counter: ProgressBarCounter[object] | None, mu0: float, mu_stop: float
    ) -> None:
        self.counter = counter
        self.span = math.log(mu0 / mu_stop)
        self.mu0 = mu0

    def update(self, rec: DiagnosticRecord) -> None:
        """Show the progress of the given record."""
        if self.counter is None:
            return
        done = math.log(self.mu0 / rec.mu) / self.span
        self.counter.items_completed = min(max(int(done * self.STEPS), 0), self.STEPS)
        self.counter.label = f"t={rec.t:.6e} μ={rec.mu:.4e}"


@command(
    "run",
    arguments=[
        Argument(
            ("--override",),
            {
                "action": "store_true",
                "help": "Run even if the Closeness Assumptions fail.",
            },
        ),
    ],
)
def run_(config: RunConfig, args: argparse.Namespace) -> int:
    """Run the flow from the configured initial data until a stop criterion."""
    dest = _destination(config, args)
    params = config.seed_params()
    stepping, stop = config.stepping(), config.stop_criteria()
    state: RunState | None = None
    if args.resume is not None:
        ck = load_checkpoint(args.resume)
        if (ck.stepping, ck.stop) != (stepping, stop):
            logger.warning(
                "Checkpoint step policy differs from the configuration, using checkpoint"
            )
        stepping, stop, state = ck.stepping, ck.stop, ck.state
        profile = state.profile
        logger.info("Resuming at step %d, t=%.6e", state.step, profile.t)
    else:
        profile = construct_initial_metric(params, config.grid(_nodes(args)))
    mu0 = state.mu0 if state is not None else float(np.min(profile.g))
    mu_stop, _ = stop.resolve(mu0)
    every = config["output"]["checkpoint_every"]
    checkpoint = dest / "checkpoint.json"
    extra = {"config.ini": config.dumps().encode("utf-8")}

    with contextlib.ExitStack() as stack:
        counter = None
        if isatty() and not config.debug:
            pb = stack.enter_context(ProgressBar(title="Ricci flow"))
            counter = pb()
            counter.total = _MuProgress.STEPS
        progress = _MuProgress(counter, mu0, mu_stop)

        def on_record(st: RunState) -> None:
            progress.update(st.series[-1])
            if len(st.series) % every == 0:
                write_checkpoint(checkpoint, st, stepping, stop)

        try:
            trajectory = run(
                profile,
                params.delta,
                stop,
                stepping,
                override=getattr(args, "override", False),
                state=state,
                on_record=on_record,
            )
        except BlowThroughError as exc:
            if exc.trajectory is not None:
                extra["last_valid.json"] = json_bytes(profile_dump(exc.last_valid, True))
                write_outputs(exc.trajectory, [], [], dest, config["output"]["hexfloat"], extra)
            raise

    write_outputs(trajectory, [], [], dest, config["output"]["hexfloat"], extra)
    _print_summary(trajectory)
    print_row([("bold", "Output "), ("", str(dest))])
    return 0


def _print_summary(trajectory: FlowTrajectory) -> None:
    summary = trajectory_summary(trajectory)
    if summary["type1"] is not None:
        del summary["type1"]["series"], summary["type1"]["mu2_series"]
    print_json(summary)


@command()
def soliton(config: RunConfig, args: argparse.Namespace) -> int:
    """Construct the blowdown soliton and verify its identities."""
    sec = config["soliton"]
    r = np.linspace(sec["r_min"], sec["r_max"], sec["nodes"])
    sol = soliton_profile(r, sec["chi"])
    ode = ode_residuals(sol)
    w = config["blowup"]["window"]
    band = soliton_profile(np.linspace(-w, w, sec["nodes"]), sec["chi"])
    system = soliton_system_residuals(band, sec["lam"])
    dr = float(band.r[1] - band.r[0])
    r2 = POWER * math.log(1.0 + SQRT2) - sec["chi"]
    phi2 = float(solve_phi([r2], sec["chi"])[0])
    f_max = float(np.max(np.abs(sol.F)))
    checks = {
        "ode1": (ode.res1_max, ode.res1_max <= 1e-12),
        "ode2": (ode.res2_max, ode.res2_max <= 1e-10),
        "phi(r*) = 2": (abs(phi2 - 2.0), abs(phi2 - 2.0) <= 1e-10),
        "F": (f_max, f_max <= 1e-8 + float(sol.r[1] - sol.r[0]) ** 4),
        "h1d": (system.h1d, system.h1d <= 1e-6),
        "g2d": (system.g2d, system.g2d <= 1e-6),
        "self-similar step": (
            system.step_defect,
            system.step_defect <= 1e-8 + 10.0 * dr**2,
        ),
    }
    for name, (value, ok) in checks.items():
        print_check(name, ok, f"{value:.3e}")
    dest = _destination(config, args)
    writer = ManifestWriter.open(dest)
    writer.write_json(
        "soliton.json",
        {
            "chi": sec["chi"],
            "lam": sec["lam"],
            "r": sol.r.tolist(),
            "phi": sol.phi.tolist(),
            "s": sol.s.tolist(),
            "f": sol.f.tolist(),
            "g": sol.g.tolist(),
            "ode": dataclasses.asdict(ode),
            "system": dataclasses.asdict(system),
            "checks": {k: {"value": v, "ok": ok} for k, (v, ok) in checks.items()},
        },
    )
    writer.close()
    return 0 if all(ok for _, ok in checks.values()) else 1


@command()
def blowup(config: RunConfig, args: argparse.Namespace) -> int:
    """Rescale the end of a finished run and align it with the soliton."""
    dest = _destination(config, args)
    trajectory = load_trajectory(dest)
    w = config["blowup"]["window"]
    frames = extract_blowup_sequence(trajectory, config["blowup"]["count"], window=w)
    target = PhiProfile.solve(np.linspace(-w, w, 5), config["soliton"]["chi"])
    alignments = [align_distance(fr, target, window=(-w, w)) for fr in frames]
    for fr, al in zip(frames, alignments, strict=True):
        print_row(
            f"t={fr.t_center:.6e} K={fr.K:.4e} χ={al.chi:+.6f} σ={al.scale:.6f} "
            f"dist={al.dist:.4e} f²={al.f2_dist:.4e}"
        )
    dists = [al.dist for al in alignments]
    tail = dists[-3:]
    monotone = all(b <= a for a, b in zip(tail, tail[1:], strict=False))
    print_check("distance nonincreasing", monotone)
    print_check("final distance ≤ 0.05", dists[-1] <= 0.05, f"{dists[-1]:.4e}")
    writer = ManifestWriter.open(dest)
    writer.write_json("alignments.json", alignment_table(frames, alignments))
    writer.close()
    return 0


def _kahler_params(config: RunConfig) -> SeedParams:
    """Configured seed with ``ε = 0`` and constant ``φ``."""
    return dataclasses.replace(config.seed_params(), epsilon=0.0, phi_shape=ConstantPhi())


@command()
def twin(config: RunConfig, args: argparse.Namespace) -> int:
    """Compare the full flow with the scalar Calabi flow on Kähler data."""
    params = _kahler_params(config)
    profile = construct_initial_metric(params, config.grid(_nodes(args)))
    stepping = config.stepping()
    trajectory = run(profile, params.delta, config.stop_criteria(), stepping)
    if trajectory.T_est is None:
        raise RuntimeError("Singular time of the Kähler run could not be estimated")
    result = twin_run(profile, trajectory.T_est / 2.0, stepping)
    ok = result.max_deviation <= profile.grid.tol
    print_check(
        "twin run",
        ok,
        f"t_end={trajectory.T_est / 2.0:.6e} max deviation={result.max_deviation:.3e} "
        f"tol={profile.grid.tol:.3e}",
    )
    dest = _destination(config, args)
    writer = ManifestWriter.open(dest)
    writer.write_json(
        "twin.json",
        {
            "node_count": profile.grid.node_count,
            "h": profile.grid.h,
            "T_est": trajectory.T_est,
            "times": result.times,
            "deviations": result.deviations,
            "u_residuals": [math.nan, *result.u_residuals],
            "max_deviation": result.max_deviation,
        },
    )
    writer.close()
    return 0 if ok else 1


@dataclasses.dataclass(frozen=True)
class Check:
    """Result of a single acceptance check."""

    name: str
    ok: bool
    value: float
    gate: bool = True
    """Informational checks never fail the report."""


def series_checks(
    series: collections.abc.Sequence[DiagnosticRecord], delta: float, h: float
) -> list[Check]:
    """Acceptance checks evaluated on the diagnostic series of a run."""
    if not series:
        return []
    tol = 10.0 * h**2
    psi_min = min(r.psi_min for r in series)
    psi_max = max(r.psi_max for r in series)
    gs = max(r.gs_max_abs for r in series)
    fs = max(r.fs_max for r in series)
    fs_bound = max(FS_BOUND, series[0].fs_max) + tol
    thr = [r.threshold for r in series]
    drops = [
        (b.threshold - a.threshold) + tol * (b.t - a.t)
        for a, b in zip(series, series[1:], strict=False)
    ]
    rates = [r.dg2_minus for r in series]
    at_pole = sum(1 for r in series if r.mu_argmin == 0 or r.g_minus - r.mu <= tol) / len(series)
    curv = max(r.curv_mu2 for r in series)
    r_min = [r.R_min for r in series]
    return [
        Check("ψ ≥ -1", psi_min >= -1.0 - 1e-6, psi_min),
        Check("ψ ≤ 0", psi_max <= tol, psi_max),
        Check("|g_s| ≤ 1", gs <= 1.0 + tol, gs),
        Check("f_s bound", fs <= fs_bound, fs),
        Check("threshold ≥ δ²", min(thr) >= delta**2 - tol, min(thr)),
        Check("threshold nondecreasing", min(drops, default=0.0) >= 0.0, min(drops, default=0.0)),
        Check("pole rate ≥ -12", min(rates) >= -12.2, min(rates)),
        Check("pole rate ≤ -4", max(rates) <= -3.8, max(rates)),
        Check("μ at s_-", at_pole >= 0.99, at_pole),
        Check("curvature·μ² bounded", curv <= 100.0, curv),
        Check("R_min above initial", min(r_min) >= r_min[0] - tol, min(r_min), gate=False),
    ]


def summary_checks(summary: collections.abc.Mapping[str, typing.Any]) -> list[Check]:
    """Acceptance checks on the singular time fit and Type-I ratios."""
    checks = []
    if (fit := summary.get("fit")) is not None:
        checks.append(Check("μ² fit residual ≤ 1%", fit["residual"] <= 0.01, fit["residual"]))
        checks.append(Check("μ² slope in window", fit["slope_ok"], fit["slope"]))
    if (type1 := summary.get("type1")) is not None:
        checks.append(Check("Type-I ratio ≤ 50", type1["tail_max"] <= 50.0, type1["tail_max"]))
        checks.append(Check("Type-I ratio ≥ 0.25", type1["tail_min"] >= 0.25, type1["tail_min"]))
        lim = type1["mu2_limit"]
        checks.append(Check("μ²/(T-t) limit", 3.7 <= lim <= 12.3, lim))
    return checks


def alignment_checks(
    rows: collections.abc.Sequence[collections.abc.Mapping[str, float]],
) -> list[Check]:
    """Convergence of the blow-up sequence to the soliton."""
    if not rows:
        return []
    dists = [row["dist"] for row in rows]
    tail = dists[-3:]
    return [
        Check(
            "blow-up distance nonincreasing",
            all(b <= a for a, b in zip(tail, tail[1:], strict=False)),
            tail[-1] - tail[0],
        ),
        Check("blow-up distance ≤ 0.05", dists[-1] <= 0.05, dists[-1]),
    ]


@command()
def report(config: RunConfig, args: argparse.Namespace) -> int:
    """Evaluate acceptance checks on the artifacts of the output directory."""
    dest = _destination(config, args)
    checks: list[Check] = []
    if (dest / "series.csv").is_file() and (dest / "trajectory.json").is_file():
        summary = json.loads((dest / "trajectory.json").read_text(encoding="utf-8"))
        nodes = summary.get("node_count") or config["grid"]["nodes"]
        series = read_series(dest / "series.csv")
        checks += series_checks(series, summary["delta"], SpatialGrid(nodes).h)
        checks += summary_checks(summary)
    if (dest / "alignments.json").is_file():
        rows = json.loads((dest / "alignments.json").read_text(encoding="utf-8"))
        checks += alignment_checks(rows)
    if (dest / "soliton.json").is_file():
        sol = json.loads((dest / "soliton.json").read_text(encoding="utf-8"))
        checks += [Check(f"soliton {k}", c["ok"], c["value"]) for k, c in sol["checks"].items()]
    if (dest / "twin.json").is_file():
        tw = json.loads((dest / "twin.json").read_text(encoding="utf-8"))
        tol = SpatialGrid(tw["node_count"]).tol
        checks.append(Check("twin deviation", tw["max_deviation"] <= tol, tw["max_deviation"]))
    if not checks:
        logger.warning("No artifacts to check in %s", dest)
    for c in checks:
        print_check(c.name, c.ok, f"{c.value:.6g}" + ("" if c.gate else " (informational)"))
    writer = ManifestWriter.open(dest)
    writer.write_json("report.json", [dataclasses.asdict(c) for c in checks])
    writer.close()
    failed = [c.name for c in checks if c.gate and not c.ok]
    if failed and (args.strict or config["report"]["strict_gates"]):
        return 1
    return 0


def _sweep_one(config_text: str, nodes: int) -> dict[str, float]:
    config = parse_config(config_text)
    params = _kahler_params(config)
    profile = construct_initial_metric(params, config.grid(nodes))
    stop = dataclasses.replace(config.stop_criteria(), mu_stop_fraction=0.5)
    trajectory = run(profile, params.delta, stop, config.stepping())
    return {
        "nodes": nodes,
        "h": profile.grid.h,
        "F_mu_max": max(r.F_max_abs / r.mu for r in trajectory.series),
        "t_end": trajectory.series[-1].t,
    }


def convergence_orders(
    rows: collections.abc.Sequence[collections.abc.Mapping[str, float]],
) -> list[float]:
    """Measured orders between successive refinements, ``nan`` for the first."""
    orders = [math.nan]
    for a, b in zip(rows, rows[1:], strict=False):
        orders.append(math.log(a["F_mu_max"] / b["F_mu_max"]) / math.log(a["h"] / b["h"]))
    return orders


@command()
def sweep(config: RunConfig, args: argparse.Namespace) -> int:
    """Run Kähler refinements concurrently and tabulate convergence of F/μ.

    The seed is forced to ``ε = 0`` with constant ``φ``, where ``F`` vanishes
    in the continuum and its discrete size measures the truncation error.
    """
    grids = sorted(args.grid or [])
    if len(grids) < 2:
        raise ValueError("Sweep needs at least two node counts in --grid")
    text = config.dumps()
    with concurrent.futures.ProcessPoolExecutor() as pool:
        rows = list(pool.map(_sweep_one, [text] * len(grids), grids))
    for row, order in zip(rows, convergence_orders(rows), strict=True):
        row["order"] = order
        print_row(
            f"N={row['nodes']:6d} h={row['h']:.4e} "
            f"max F/μ={row['F_mu_max']:.4e} order={order:.3f}"
        )
    dest = _destination(config, args)
    writer = ManifestWriter.open(dest)
    writer.write_json("sweep.json", rows)
    writer.close()
    return 0
