"""Command-line front end: one JSON config in, one CSV or JSON artifact out.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import re
import sys
from importlib import resources
from typing import Optional, Sequence

import jsonschema
import numpy as np

from .constants import CSV_FLOAT_FORMAT, DEFAULT_CHI, DEFAULT_OFFSETS, TOL
from .core import DensityState, UnitaryOp, hermitian_eigendecompose
from .errors import NumericalError, QNDMError, ValidationError
from .macrorealism import certify_mr
from .protocol import lambda_grid
from .quasiprob import QuasiProbDistribution, amplitudes_from_schedule, collapse
from .scenarios import (
    DampingScenario,
    LGQubitScenario,
    NoiseConfig,
    WorkScenario,
    cyclic_qubit_work,
    damping_experiment,
    decode_matrix,
    lg_sweep,
    noisy_lg_vs_qndm,
    shots_distribution,
    work_quasiprob,
    work_schedule,
)

__all__ = ["main", "run", "load_schema", "validate_config", "config_hash", "read_csv_table",
           "distributions_from_long_csv", "parse_angle", "expand_grid"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(QNDMError):
    pass


def load_schema() -> dict:
    text = resources.files("qndm").joinpath("schema/run_config.schema.json").read_text()
    return json.loads(text)


def _field_name(err: jsonschema.ValidationError) -> str:
    path = ".".join(str(p) for p in err.absolute_path)
    return path or "<root>"


def validate_config(cfg) -> None:
    if not isinstance(cfg, dict) or not cfg:
        raise ConfigError("config is empty; required fields: command, scenario, output_path")
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (len(list(e.absolute_path)), str(e.message)))
    if errors:
        # the deepest error usually names the offending field most precisely
        err = max(errors, key=lambda e: len(list(e.absolute_path)))
        raise ConfigError(f"invalid field '{_field_name(err)}': {err.message}")


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


_ANGLE = re.compile(r"^\s*(-)?\s*(?:([0-9]*\.?[0-9]+)\s*\*?\s*)?pi\s*(?:/\s*([0-9]*\.?[0-9]+))?\s*$")


def parse_angle(v) -> float:
    """Numbers pass through; strings such as 'pi/7', '2*pi', '-0.5pi' are expanded."""
    if isinstance(v, (int, float)):
        return float(v)
    m = _ANGLE.match(str(v))
    if not m:
        raise ConfigError(f"cannot parse angle {v!r}")
    sign = -1.0 if m.group(1) else 1.0
    num = float(m.group(2)) if m.group(2) else 1.0
    den = float(m.group(3)) if m.group(3) else 1.0
    return sign * num * np.pi / den


def expand_grid(g) -> np.ndarray:
    if isinstance(g, list):
        return np.array([float(x) for x in g])
    start, stop = float(g["start"]), float(g["stop"])
    if "num" in g:
        return np.linspace(start, stop, int(g["num"]))
    step = float(g["step"])
    n = int(np.floor((stop - start) / step + 1e-9))
    pts = start + step * np.arange(n + 1)
    # snap the last point onto stop when it lands there up to round-off
    if abs(pts[-1] - stop) <= 1e-9 * max(1.0, abs(stop)):
        pts[-1] = stop
    return pts


def _f(x) -> str:
    return CSV_FLOAT_FORMAT.format(float(x))


def _writer(buf):
    return csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)


def _header(cfg: dict) -> str:
    return f"# config_sha256={config_hash(cfg)} seed={cfg.get('seed', 0)}\n"


def _lambdas(sc: dict, default_max: float, default_step: float) -> np.ndarray:
    return lambda_grid(float(sc.get("lambda_max", default_max)), float(sc.get("lambda_step", default_step)))


def _sub_seed(seed: int, idx: int) -> int:
    return int(np.random.SeedSequence([seed, idx]).generate_state(1)[0])


def _long_rows(wr, key: float, dist: QuasiProbDistribution):
    for d, w, t in zip(dist.deltas, dist.weights, dist.tags):
        wr.writerow([_f(key), _f(d), _f(w), t])


# -- commands -----------------------------------------------------------------------


def _cmd_lg_sweep(cfg: dict) -> str:
    grid = expand_grid(cfg["scenario"]["omega_tau"])
    buf = io.StringIO()
    wr = _writer(buf)
    wr.writerow(["omega_tau", "C01", "C12", "C02", "K", "K_closed", "K_cl", "K_q1", "K_q2", "violation_flag"])
    for row in lg_sweep(grid):
        r = row.result
        wr.writerow([_f(row.omega_tau), _f(r.C01), _f(r.C12), _f(r.C02), _f(r.K), _f(row.K_closed),
                     _f(r.K_cl), _f(r.K_q1), _f(r.K_q2), int(row.violation)])
    return buf.getvalue()


def _cmd_qndm_sweep(cfg: dict) -> str:
    sc = cfg["scenario"]
    grid = expand_grid(sc["omega_tau"])
    offsets = tuple(sc.get("offsets", (0.0, 0.0, 0.0)))
    shots = cfg.get("mode", "exact") == "shots"
    seed = int(cfg.get("seed", 0))
    buf = io.StringIO()
    wr = _writer(buf)
    wr.writerow(["omega_tau", "delta", "weight", "tag"])
    for gi, x in enumerate(grid):
        sched = LGQubitScenario(float(x)).schedule(offsets)
        dist = collapse(amplitudes_from_schedule(sched))
        if shots:
            dist = shots_distribution(sched, dist, int(sc.get("n_shots", 100)), _sub_seed(seed, gi),
                                      _lambdas(sc, 100.0, 1.0))
        _long_rows(wr, x, dist)
    return buf.getvalue()


def _cmd_certify(cfg: dict) -> str:
    sc = cfg["scenario"]
    if "lg_qubit" in sc:
        lg = LGQubitScenario(parse_angle(sc["lg_qubit"]["omega_tau"]))
        rho0, u1, u2, a = lg.rho0, lg.unitary, lg.unitary, lg.observable
    else:
        rho0 = DensityState(decode_matrix(sc["rho0"]))
        u1 = UnitaryOp(decode_matrix(sc["U1"]))
        u2 = UnitaryOp(decode_matrix(sc["U2"]))
        a = hermitian_eigendecompose(decode_matrix(sc["A"]))
    verdict = certify_mr(
        rho0, u1, u2, a,
        lambda_base=float(sc.get("lambda_base", 1.0)),
        deltas=tuple(sc.get("deltas", DEFAULT_OFFSETS)),
        chi=parse_angle(sc.get("chi", DEFAULT_CHI)),
        threshold=float(sc.get("threshold", TOL.exact_negativity)),
        random_chi=bool(sc.get("random_chi", False)),
        seed=int(cfg.get("seed", 0)),
    )
    doc = verdict.to_dict()
    doc["_provenance"] = {"config_sha256": config_hash(cfg), "seed": int(cfg.get("seed", 0))}
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _cmd_work_dist(cfg: dict) -> str:
    sc = cfg["scenario"]
    if "cyclic_qubit" in sc:
        cq = sc["cyclic_qubit"]
        psi = [complex(*z) if isinstance(z, list) else complex(z) for z in cq.get("psi", [1.0, 1.0])]
        ws = cyclic_qubit_work(float(cq.get("omega", 1.0)), parse_angle(cq.get("theta", np.pi / 2)), psi)
    else:
        ws = WorkScenario.from_dict(sc)
    dist = work_quasiprob(ws)
    if cfg.get("mode", "exact") == "shots":
        dist = shots_distribution(work_schedule(ws), dist, int(sc.get("n_shots", 1000)),
                                  int(cfg.get("seed", 0)), _lambdas(sc, 100.0, 0.1))
    return dist.to_csv()


def _cmd_damping_scan(cfg: dict) -> str:
    sc = dict(cfg["scenario"])
    ps = expand_grid(sc.pop("p"))
    shots = cfg.get("mode", "exact") == "shots"
    n_shots = int(sc.pop("n_shots", 1000))
    lam = _lambdas(sc, 100.0, 0.1)
    sc.pop("lambda_max", None)
    sc.pop("lambda_step", None)
    seed = int(cfg.get("seed", 0))
    buf = io.StringIO()
    wr = _writer(buf)
    wr.writerow(["p", "delta", "weight", "tag"])
    for gi, p in enumerate(ps):
        s = DampingScenario(**{k: float(v) for k, v in sc.items()}, p=float(p))
        if shots:
            dist = damping_experiment(s, "shots", n_shots, _sub_seed(seed, gi), lam)
        else:
            dist = damping_experiment(s)
        _long_rows(wr, p, dist)
    return buf.getvalue()


def _cmd_shots_compare(cfg: dict) -> str:
    sc = cfg["scenario"]
    seed = int(cfg.get("seed", 0))
    n_seeds = int(sc.get("n_seeds", 20))
    seeds = [int(x) for x in np.random.SeedSequence(seed).generate_state(n_seeds)]
    grid = expand_grid(sc["omega_tau"]) if "omega_tau" in sc else None
    rep = noisy_lg_vs_qndm(
        n_shots_lg=int(sc.get("n_shots_lg", 10_000)),
        n_shots_qndm=int(sc.get("n_shots_qndm", 100)),
        lambda_grid=_lambdas(sc, 100.0, 1.0),
        noise=NoiseConfig.from_dict(sc.get("noise", {})),
        seeds=seeds,
        omega_tau_grid=grid,
        qndm=bool(sc.get("qndm", True)),
    )
    summary = (f"# N_LG={rep.n_lg} N_QNDM={rep.n_qndm} lgi_fraction={_f(rep.lgi_fraction)} "
               f"ideal_lgi_fraction={_f(rep.ideal_lgi_fraction)} qndm_fraction={_f(rep.qndm_fraction)}\n")
    return summary + rep.to_csv()


COMMANDS = {
    "lg-sweep": _cmd_lg_sweep,
    "qndm-sweep": _cmd_qndm_sweep,
    "certify": _cmd_certify,
    "work-dist": _cmd_work_dist,
    "damping-scan": _cmd_damping_scan,
    "shots-compare": _cmd_shots_compare,
}


def run(cfg: dict, out_dir: Optional[str] = None) -> str:
    """Validate ``cfg``, run its command and write the artifact. Returns the written path."""
    validate_config(cfg)
    cfg = {"seed": 0, "mode": "exact", **cfg}
    try:
        body = COMMANDS[cfg["command"]](cfg)
    except ValidationError as exc:
        raise ConfigError(f"invalid field 'scenario': {exc}") from None
    text = body if cfg["command"] == "certify" else _header(cfg) + body
    path = cfg["output_path"]
    if out_dir is not None and not os.path.isabs(path):
        path = os.path.join(out_dir, path)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


# -- readers ------------------------------------------------------------------------


def read_csv_table(path) -> tuple:
    """(comment lines, header, rows) of a CSV artifact."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    rows = list(csv.reader(body))
    return comments, rows[0], rows[1:]


def distributions_from_long_csv(path, key: str, norm: Optional[float] = 1.0) -> dict:
    """Split a (key, delta, weight, tag) table into one distribution per key value."""
    _, header, rows = read_csv_table(path)
    ki, di, wi, ti = (header.index(c) for c in (key, "delta", "weight", "tag"))
    groups: dict = {}
    for r in rows:
        groups.setdefault(float(r[ki]), []).append(r)
    out = {}
    for k, rs in groups.items():
        out[k] = QuasiProbDistribution(
            np.array([float(r[di]) for r in rs]),
            np.array([float(r[wi]) for r in rs]),
            tuple(r[ti] for r in rs),
            norm=norm,
        )
    return out


# -- entry point --------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qndm", description="Run a quasi-probability experiment from a JSON config.")
    p.add_argument("--config", required=True, help="path to the JSON run configuration")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="directory for relative output paths")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        with open(args.config) as fh:
            text = fh.read()
        cfg = json.loads(text) if text.strip() else {}
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("invalid field 'seed': must be non-negative")
            if isinstance(cfg, dict):
                cfg["seed"] = args.seed
        path = run(cfg, args.out)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
