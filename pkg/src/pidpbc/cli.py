"""Command-line front end: configs in, trajectory CSVs and check reports out.

Exit codes: 0 success, 1 configuration error, 2 diverged run, 3 solver
failure, 4 certificate-check violation, 5 equilibrium not assignable.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
import tempfile
from importlib import resources

import numpy as np

from . import verify as verify_mod
from .controller import PIDGains, xi_star
from .engine import (
    RunSummary,
    Scenario,
    SolverAbort,
    StepRecord,
    Trajectory,
    run_scenario,
    scenario_hash,
    sweep,
)
from .discretize import StepperSettings
from .errors import ConfigError, NotAssignableError, PidPbcError
from .model import BuckBoostParams, buck_boost_model, buck_boost_reference

SCHEMA = "pidpbc-trajectory-v1"

CSV_COLUMNS = ("k", "t", "x1", "x2", "i", "v", "u", "y", "H", "Hc", "V", "dV", "newton_iters")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_SOLVER = 3
EXIT_CHECK = 4
EXIT_NOT_ASSIGNABLE = 5

_SECTION_KEYS = {
    "model": {
        "required": {"v_in", "inductance", "capacitance", "load_resistance"},
        "optional": set(),
    },
    "gains": {"required": {"kp", "ki", "kd"}, "optional": set()},
    "simulation": {
        "required": {"delta", "t_final", "mode"},
        "optional": {
            "x0_flux",
            "x0_charge",
            "xi0",
            "record_every",
            "blowup_norm",
            "clamp_duty",
        },
    },
    "schedule": None,  # free-form time = volts entries
    "solver": {
        "required": set(),
        "optional": {"newton_tol", "newton_max_iter", "substeps"},
    },
}


def bundled_config_names() -> list[str]:
    root = resources.files("pidpbc").joinpath("configs")
    return sorted(p.name[: -len(".cfg")] for p in root.iterdir() if p.name.endswith(".cfg"))


def bundled_config_path(name: str) -> str:
    path = resources.files("pidpbc").joinpath("configs", f"{name}.cfg")
    if not path.is_file():
        raise ConfigError(
            f"no bundled config named {name!r}; available: {', '.join(bundled_config_names())}"
        )
    return str(path)


def _float(section: str, key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: not a number: {raw!r}") from exc


def load_config(path: str) -> Scenario:
    """Parse a sectioned key=value scenario file; unknown keys are rejected."""
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";")
    )
    try:
        with open(path, "r", encoding="utf-8") as handle:
            parser.read_file(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc

    for section in parser.sections():
        if section not in _SECTION_KEYS:
            raise ConfigError(f"unknown section [{section}]")
    for section, spec in _SECTION_KEYS.items():
        if spec is None:
            continue
        if spec["required"] and not parser.has_section(section):
            raise ConfigError(f"missing section [{section}]")
        if not parser.has_section(section):
            continue
        keys = set(parser[section])
        unknown = keys - spec["required"] - spec["optional"]
        if unknown:
            raise ConfigError(
                f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}"
            )
        missing = spec["required"] - keys
        if missing:
            raise ConfigError(
                f"missing key(s) in [{section}]: {', '.join(sorted(missing))}"
            )
    if not parser.has_section("schedule") or not parser["schedule"]:
        raise ConfigError("missing section [schedule] with at least one entry")

    mdl = parser["model"]
    params = BuckBoostParams(
        v_in=_float("model", "v_in", mdl["v_in"]),
        inductance=_float("model", "inductance", mdl["inductance"]),
        capacitance=_float("model", "capacitance", mdl["capacitance"]),
        load_resistance=_float("model", "load_resistance", mdl["load_resistance"]),
    )
    gn = parser["gains"]
    gains = PIDGains.from_scalars(
        _float("gains", "kp", gn["kp"]),
        _float("gains", "ki", gn["ki"]),
        _float("gains", "kd", gn["kd"]),
    )
    sim = parser["simulation"]
    mode = sim["mode"].strip()
    schedule = tuple(
        sorted(
            (_float("schedule", key, key), _float("schedule", key, value))
            for key, value in parser["schedule"].items()
        )
    )
    x0 = np.array(
        [
            _float("simulation", "x0_flux", sim.get("x0_flux", "0")),
            _float("simulation", "x0_charge", sim.get("x0_charge", "0")),
        ]
    )
    solver = parser["solver"] if parser.has_section("solver") else {}
    delta = _float("simulation", "delta", sim["delta"])
    stepper = StepperSettings(
        delta=delta,
        newton_tol=_float("solver", "newton_tol", solver.get("newton_tol", "1e-12")),
        newton_max_iter=int(
            _float("solver", "newton_max_iter", solver.get("newton_max_iter", "50"))
        ),
        substeps=int(_float("solver", "substeps", solver.get("substeps", "100"))),
    )
    try:
        return Scenario(
            gains=gains,
            delta=delta,
            t_final=_float("simulation", "t_final", sim["t_final"]),
            reference_schedule=schedule,
            mode=mode,
            params=params,
            x0=x0,
            xi0=np.array([_float("simulation", "xi0", sim.get("xi0", "0"))]),
            stepper=stepper,
            record_every=int(
                _float("simulation", "record_every", sim.get("record_every", "1"))
            ),
            blowup_norm=_float(
                "simulation", "blowup_norm", sim.get("blowup_norm", "1e6")
            ),
            clamp_duty=sim.get("clamp_duty", "false").strip().lower()
            in ("1", "true", "yes"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _fmt(value: float) -> str:
    return f"{value:.16e}"


def write_trajectory_csv(traj: Trajectory, path: str) -> None:
    """Serialize a trajectory; written atomically (temp file + rename)."""
    if traj.params is None:
        raise ValueError("CSV serialization targets buck-boost trajectories")
    cap = traj.params.capacitance
    ind = traj.params.inductance
    lines = [
        f"# schema={SCHEMA}",
        f"# scenario={traj.scenario_hash}",
        f"# mode={traj.mode}",
        f"# delta={_fmt(traj.delta)}",
        ",".join(CSV_COLUMNS),
    ]
    for rec in traj.records:
        lines.append(
            ",".join(
                [
                    str(rec.k),
                    _fmt(rec.t),
                    _fmt(rec.x[0]),
                    _fmt(rec.x[1]),
                    _fmt(rec.x[0] / ind),
                    _fmt(rec.x[1] / cap),
                    _fmt(float(rec.u[0])),
                    _fmt(float(rec.y[0])),
                    _fmt(rec.h),
                    _fmt(rec.h_c),
                    _fmt(rec.v_lyap),
                    _fmt(rec.dv),
                    str(rec.newton_iters),
                ]
            )
        )
    k_end = traj.records[-1].k + 1 if traj.records else 0
    x = traj.final_x
    lines.append(
        ",".join(
            [
                str(k_end),
                _fmt(k_end * traj.delta),
                _fmt(x[0]),
                _fmt(x[1]),
                _fmt(x[0] / ind),
                _fmt(x[1] / cap),
                "nan",
                "nan",
                "nan",
                "nan",
                "nan",
                "nan",
                "0",
            ]
        )
    )
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write("\n".join(lines) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_trajectory_csv(path: str) -> tuple[dict, np.ndarray]:
    """Return (header metadata, data matrix) from a trajectory CSV."""
    meta: dict[str, str] = {}
    rows = []
    try:
        with open(path, "r", encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    key, _, value = line.lstrip("# ").partition("=")
                    meta[key.strip()] = value.strip()
                    continue
                if line.startswith("k,"):
                    if line != ",".join(CSV_COLUMNS):
                        raise ConfigError(f"unexpected CSV column header in {path}")
                    continue
                rows.append([float(v) for v in line.split(",")])
    except OSError as exc:
        raise ConfigError(f"cannot read trajectory {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"malformed trajectory row in {path}: {exc}") from exc
    if meta.get("schema") != SCHEMA:
        raise ConfigError(f"{path} does not carry schema {SCHEMA}")
    if not rows:
        raise ConfigError(f"{path} holds no data rows")
    return meta, np.array(rows)


def _reconstruct_trajectory(scenario: Scenario, data: np.ndarray) -> Trajectory:
    """Rebuild an in-memory trajectory from CSV rows for offline checks.

    The midpoint state is recovered as (x_k + x_{k+1})/2 (exact for
    dt-midpoint trajectories) and the integrator sequence is replayed from
    xi0 through the recorded outputs.
    """
    from .engine import Segment, _build_segments, _summarize  # local to avoid cycle

    model = buck_boost_model(scenario.params)
    segments = _build_segments(scenario, model)
    col = {name: i for i, name in enumerate(CSV_COLUMNS)}
    xs = data[:, [col["x1"], col["x2"]]]
    midpoint = scenario.mode == "dt-midpoint"
    records = []
    xi = (
        np.zeros(model.m)
        if scenario.xi0 is None
        else np.atleast_1d(np.asarray(scenario.xi0, float))
    )
    seg_idx = 0
    for k in range(data.shape[0] - 1):
        while seg_idx + 1 < len(segments) and segments[seg_idx + 1].start_step <= k:
            seg_idx += 1
        eq = segments[seg_idx].eq
        z = 0.5 * (xs[k] + xs[k + 1]) if midpoint else None
        y = np.array([data[k, col["y"]]])
        records.append(
            StepRecord(
                k=int(data[k, col["k"]]),
                t=data[k, col["t"]],
                x=xs[k],
                z=z,
                u=np.array([data[k, col["u"]]]),
                y=y,
                xi=xi,
                h=data[k, col["H"]],
                h_c=data[k, col["Hc"]],
                v_lyap=data[k, col["V"]],
                dv=data[k, col["dV"]],
                newton_iters=int(data[k, col["newton_iters"]]),
            )
        )
        xi = xi + scenario.delta * (y - eq.y_star)
    final_x = xs[-1]
    summary = _summarize(scenario, records, final_x, segments, None)
    return Trajectory(
        mode=scenario.mode,
        delta=scenario.delta,
        records=tuple(records),
        final_x=final_x,
        final_xi=xi,
        segments=tuple(segments),
        summary=summary,
        scenario_hash=scenario_hash(scenario),
        params=scenario.params,
        record_every=scenario.record_every,
    )


def _print_summary(traj: Trajectory, out=sys.stdout) -> None:
    s = traj.summary
    settle = "never" if s.settling_time is None else f"{s.settling_time:.4g}s"
    print(f"scenario {traj.scenario_hash} mode={traj.mode} delta={traj.delta:g}", file=out)
    print(
        f"steps={s.steps} final_v={s.final_v:.6g}V settling(1%)={settle} "
        f"overshoot={s.overshoot:.4g}V max|u|={s.max_abs_u:.4g}",
        file=out,
    )
    print(
        f"dV range [{s.min_dv:.3e}, {s.max_dv:.3e}] diverged={s.diverged}"
        + (f" at step {s.diverged_step}" if s.diverged else ""),
        file=out,
    )


def cmd_simulate(config_path: str, out_path: str, mode_override: str | None = None) -> int:
    try:
        scenario = load_config(config_path)
        if mode_override is not None:
            import dataclasses

            scenario = dataclasses.replace(scenario, mode=mode_override)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        traj = run_scenario(scenario)
    except SolverAbort as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except NotAssignableError as exc:
        print(f"equilibrium error: {exc}", file=sys.stderr)
        return EXIT_NOT_ASSIGNABLE
    except PidPbcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_trajectory_csv(traj, out_path)
    _print_summary(traj)
    print(f"wrote {out_path}")
    return EXIT_DIVERGED if traj.summary.diverged else EXIT_OK


def cmd_verify(trajectory_csv: str, config_path: str) -> int:
    try:
        scenario = load_config(config_path)
        meta, data = read_trajectory_csv(trajectory_csv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    expected = scenario_hash(scenario)
    if meta.get("scenario") != expected:
        print(
            f"scenario hash mismatch: CSV carries {meta.get('scenario')!r}, "
            f"config gives {expected!r}",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    traj = _reconstruct_trajectory(scenario, data)
    model = buck_boost_model(scenario.params)
    reports = verify_mod.run_all_checks(traj, model, scenario.gains)
    failed = False
    for report in reports:
        print(report)
        if not report.skipped and not report.passed:
            failed = True
    return EXIT_CHECK if failed else EXIT_OK


def _parse_sweep_values(axis: str, text: str):
    items = [t for t in (s.strip() for s in text.split(",")) if t]
    if not items:
        raise ConfigError("sweep needs a nonempty value list")
    if axis == "gains":
        values = []
        for item in items:
            parts = item.split(":")
            if len(parts) != 3:
                raise ConfigError(f"gain triple must be kp:ki:kd, got {item!r}")
            values.append(tuple(float(p) for p in parts))
        return values
    return [float(item) for item in items]


def cmd_sweep(config_path: str, axis: str, values_text: str, out_dir: str) -> int:
    try:
        scenario = load_config(config_path)
        values = _parse_sweep_values(axis, values_text)
        if axis not in ("delta", "gains", "reference"):
            raise ConfigError(f"unknown sweep axis {axis!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    os.makedirs(out_dir, exist_ok=True)
    results = sweep(scenario, axis, values)
    header = "value,final_v,settling_time,overshoot,max_abs_u,min_dv,max_dv,diverged,error"
    lines = [header]
    code = EXIT_OK
    for i, res in enumerate(results):
        if res.trajectory is not None:
            name = os.path.join(out_dir, f"run_{i:02d}.csv")
            write_trajectory_csv(res.trajectory, name)
        if res.error is not None:
            lines.append(f"{res.value},,,,,,,,{res.error}")
            code = max(code, EXIT_SOLVER)
            continue
        s = res.summary
        settle = "" if s.settling_time is None else f"{s.settling_time:.6g}"
        lines.append(
            f"{res.value},{s.final_v:.6g},{settle},{s.overshoot:.6g},"
            f"{s.max_abs_u:.6g},{s.min_dv:.6e},{s.max_dv:.6e},{int(s.diverged)},"
        )
        if s.diverged:
            code = max(code, EXIT_DIVERGED)
    table = "\n".join(lines) + "\n"
    with open(os.path.join(out_dir, f"sweep_{axis}.csv"), "w", encoding="utf-8") as f:
        f.write(table)
    print(table, end="")
    return code


def cmd_equilibrium(config_path: str, v_star: float) -> int:
    try:
        scenario = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        eq = buck_boost_reference(scenario.params, v_star)
    except NotAssignableError as exc:
        print(f"not assignable: {exc}", file=sys.stderr)
        return EXIT_NOT_ASSIGNABLE
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    model = buck_boost_model(scenario.params)
    report = verify_mod.damping_injection(model, eq, scenario.gains)
    xi_ref = xi_star(scenario.gains, eq)
    print(f"v_star     = {v_star:g} V")
    print(f"x_star     = [{eq.x_star[0]:.12g}, {eq.x_star[1]:.12g}]  (Wb, C)")
    print(f"i_star     = {eq.x_star[0] / scenario.params.inductance:.12g} A")
    print(f"u_star     = {eq.u_star[0]:.12g}")
    print(f"y_star     = {eq.y_star[0]:.12g}")
    print(f"xi_star    = {xi_ref[0]:.12g}")
    print(f"C_mat      = [{eq.C_mat[0, 0]:.12g}, {eq.C_mat[0, 1]:.12g}]")
    print(f"residual   = {eq.residual:.3e}")
    print(f"damping alpha = {report.alpha:.6g} (satisfied={report.satisfied})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pidpbc",
        description="Discrete-time PID passivity-based control of power converters",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a scenario and write a trajectory CSV")
    p_sim.add_argument("config")
    p_sim.add_argument("-o", "--out", required=True)
    p_sim.add_argument("--mode", choices=("dt-midpoint", "dt-euler", "emulation"))

    p_ver = sub.add_parser("verify", help="re-check certificates on a trajectory CSV")
    p_ver.add_argument("trajectory")
    p_ver.add_argument("config")

    p_swp = sub.add_parser("sweep", help="run a scenario along one axis")
    p_swp.add_argument("config")
    p_swp.add_argument("--axis", required=True, choices=("delta", "gains", "reference"))
    p_swp.add_argument("--values", required=True, help="comma list; gains as kp:ki:kd")
    p_swp.add_argument("--out-dir", required=True)

    p_eq = sub.add_parser("equilibrium", help="print the operating point for v_star")
    p_eq.add_argument("config")
    p_eq.add_argument("v_star", type=float)

    p_cfg = sub.add_parser("config-path", help="print the path of a bundled config")
    p_cfg.add_argument("name", nargs="?")
    p_cfg.add_argument("--list", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        return cmd_simulate(args.config, args.out, args.mode)
    if args.command == "verify":
        return cmd_verify(args.trajectory, args.config)
    if args.command == "sweep":
        return cmd_sweep(args.config, args.axis, args.values, args.out_dir)
    if args.command == "equilibrium":
        return cmd_equilibrium(args.config, args.v_star)
    if args.command == "config-path":
        if args.list or args.name is None:
            for name in bundled_config_names():
                print(name)
            return EXIT_OK
        try:
            print(bundled_config_path(args.name))
            return EXIT_OK
        except ConfigError as exc:
            print(str(exc), file=sys.stderr)
            return EXIT_CONFIG
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
