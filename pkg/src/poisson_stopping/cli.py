"""Command line: ``solve | boundary | simulate | verify | sweep``.

Every command writes ``metadata.json`` (resolved configuration, tool version,
solver diagnostics) next to its CSV output. Wall-clock timings go to
``timing.json`` alone, so all other files are byte-identical across repeated
runs with the same seed.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .boundary import extract_boundary
from .checks import run_battery
from .config import ConfigError, RunConfig, parse_config, to_document
from .pde import SolverError, ValueChain, solve_chain
from .simulation import estimate_value

_PLOT_SCRIPT = '''"""Plot the CSV outputs of this run directory (needs pandas and matplotlib)."""
from pathlib import Path

import matplotlib.pyplot as plt
import pandas as pd

here = Path(__file__).parent
for name in {files!r}:
    path = here / name
    if not path.exists():
        continue
    df = pd.read_csv(path)
    fig, ax = plt.subplots()
    x, y, group = {columns!r}[name]
    sub = df if "t" not in df or x == "t" else df[df["t"] == df["t"].min()]
    for key, part in sub.groupby(group):
        ax.plot(part[x], part[y], label=f"{{group}}={{key}}")
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    ax.legend()
    fig.savefig(here / (path.stem + ".png"), dpi=150)
'''


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else _fmt(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.outputs)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write_probe"
    try:
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc
    return out


def _metadata(command: str, config: RunConfig, **extra) -> dict:
    meta = {"tool": "poisson_stopping", "version": __version__, "command": command,
            "config": to_document(config)}
    meta.update(extra)
    return meta


def _diagnostics(chain: ValueChain) -> tuple[list[dict], list[float]]:
    diags = [{k: v for k, v in d.items() if k != "seconds"} for d in chain.diagnostics]
    return diags, [d["seconds"] for d in chain.diagnostics]


def _solve(config: RunConfig, lam: float | None = None) -> ValueChain:
    params = config.market if lam is None else config.market.replace(lam=lam)
    tol = config.tolerances
    return solve_chain(params, config.grid, tol=tol.policy_tol, max_iter=tol.max_iter,
                       convection=tol.convection)


def _write_surfaces(path: Path, chain: ValueChain) -> None:
    # repr keeps full round-trip precision
    t, s = chain.t, chain.s
    with open(path, "w") as fh:
        fh.write("level,t,s,value\n")
        s_txt = [repr(float(x)) for x in s]
        for i in range(chain.k + 1):
            surf = chain.levels[i]
            for j, tj in enumerate(t):
                prefix = f"{i},{float(tj)!r},"
                fh.write("".join(f"{prefix}{st},{float(v)!r}\n" for st, v in zip(s_txt, surf[j])))


def _boundary_rows(chain: ValueChain, tol: float):
    for i in range(chain.k + 1):
        b = extract_boundary(chain, i, tol)
        for j, tj in enumerate(b.times):
            yield i, float(tj), float(b.b[j]) if b.defined[j] else "", int(b.defined[j])


def cmd_solve(config: RunConfig) -> int:
    out = _out_dir(config)
    t0 = time.perf_counter()
    chain = _solve(config)
    _write_surfaces(out / "surfaces.csv", chain)
    diags, secs = _diagnostics(chain)
    _write_json(out / "metadata.json", _metadata("solve", config, diagnostics=diags))
    _write_json(out / "timing.json", {"wall_seconds": time.perf_counter() - t0, "level_seconds": secs})
    (out / "plot.py").write_text(_PLOT_SCRIPT.format(
        files=["surfaces.csv"], columns={"surfaces.csv": ("s", "value", "level")}))
    return 0


def cmd_boundary(config: RunConfig) -> int:
    out = _out_dir(config)
    t0 = time.perf_counter()
    chain = _solve(config)
    _write_csv(out / "boundary.csv", ["level", "t", "boundary_s", "defined_flag"],
               _boundary_rows(chain, config.tolerances.boundary_tol))
    diags, _ = _diagnostics(chain)
    _write_json(out / "metadata.json", _metadata("boundary", config, diagnostics=diags))
    _write_json(out / "timing.json", {"wall_seconds": time.perf_counter() - t0})
    (out / "plot.py").write_text(_PLOT_SCRIPT.format(
        files=["boundary.csv"], columns={"boundary.csv": ("t", "boundary_s", "level")}))
    return 0


def cmd_simulate(config: RunConfig) -> int:
    out = _out_dir(config)
    t0 = time.perf_counter()
    chain = _solve(config)
    rate = config.market.r_low
    est = estimate_value(chain, config.sim, rate)
    e = est.ensemble
    rows = ((n, float(e.tau[n]), int(e.level[n]) if e.stopped[n] else "matured",
             float(e.payoff[n]), float(e.discounted_payoff[n])) for n in range(est.n_paths))
    _write_csv(out / "ensemble.csv", ["path_id", "tau", "stop_level", "payoff", "discounted_payoff"], rows)
    summary = {
        "mean": est.mean,
        "stderr": est.stderr,
        "n_paths": est.n_paths,
        "reliable": est.reliable,
        "histogram": est.histogram,
        "discount_rate": rate,
        "pde_value": float(chain.interpolate(0, 0.0, config.market.s0)),
    }
    if not est.reliable:
        print("warning: fewer than 30 paths, statistics unreliable", file=sys.stderr)
    _write_json(out / "summary.json", summary)
    diags, _ = _diagnostics(chain)
    _write_json(out / "metadata.json", _metadata("simulate", config, diagnostics=diags))
    _write_json(out / "timing.json", {"wall_seconds": time.perf_counter() - t0})
    return 0


def cmd_verify(config: RunConfig) -> int:
    out = _out_dir(config)
    t0 = time.perf_counter()
    results = run_battery(config.market, config.grid, config.tolerances.convection)
    report = [{k: v for k, v in r.as_dict().items() if k != "seconds"} for r in results]
    _write_json(out / "verify_report.json", {"checks": report, "passed": all(r.passed for r in results)})
    lines = [r.line() for r in results]
    (out / "verify_report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    _write_json(out / "metadata.json", _metadata("verify", config))
    _write_json(out / "timing.json", {"wall_seconds": time.perf_counter() - t0,
                                      "check_seconds": {r.name: r.seconds for r in results}})
    return 0 if all(r.passed for r in results) else 1


def cmd_sweep(config: RunConfig, workers: int = 4) -> int:
    if not config.sweep:
        raise ConfigError("sweep requires a list of lambda values (config 'sweep' or --lambda)")
    out = _out_dir(config)
    t0 = time.perf_counter()
    lams = sorted(config.sweep)
    with ThreadPoolExecutor(max_workers=max(1, min(workers, len(lams)))) as pool:
        chains = list(pool.map(lambda lam: _solve(config, lam), lams))
    k = config.market.k

    def value_rows():
        for lam, chain in zip(lams, chains):
            for sm, v in zip(chain.s, chain.levels[k][0]):
                yield float(lam), float(sm), float(v)

    _write_csv(out / "sweep_values.csv", ["lambda", "s", "value"], value_rows())

    def boundary_rows():
        for lam, chain in zip(lams, chains):
            b = extract_boundary(chain, k, config.tolerances.boundary_tol)
            for j, tj in enumerate(b.times):
                yield float(lam), float(tj), float(b.b[j]) if b.defined[j] else "", int(b.defined[j])

    _write_csv(out / "sweep_boundaries.csv", ["lambda", "t", "boundary_s", "defined_flag"], boundary_rows())
    diags = {repr(lam): _diagnostics(chain)[0] for lam, chain in zip(lams, chains)}
    _write_json(out / "metadata.json", _metadata("sweep", config, diagnostics=diags))
    _write_json(out / "timing.json", {"wall_seconds": time.perf_counter() - t0})
    (out / "plot.py").write_text(_PLOT_SCRIPT.format(
        files=["sweep_values.csv", "sweep_boundaries.csv"],
        columns={"sweep_values.csv": ("s", "value", "lambda"),
                 "sweep_boundaries.csv": ("t", "boundary_s", "lambda")}))
    return 0


COMMANDS = {
    "solve": cmd_solve,
    "boundary": cmd_boundary,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poisson-stopping", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, help="YAML run configuration")
    parser.add_argument("--out", help="output directory (overrides 'outputs')")
    parser.add_argument("--seed", type=int, help="simulation seed (unsigned 64-bit)")
    parser.add_argument("--lambda", dest="lams", help="comma-separated lambda list for sweep")
    return parser


def load_config(args) -> RunConfig:
    text = args.config.read_text() if args.config else ""
    config = parse_config(text)
    if args.out:
        config = replace(config, outputs=args.out)
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        config = replace(config, sim=replace(config.sim, seed=args.seed))
    if args.lams:
        try:
            lams = tuple(float(x) for x in args.lams.split(",") if x.strip())
        except ValueError as exc:
            raise ConfigError(f"--lambda: {exc}") from exc
        if not lams or any(not x > 0 for x in lams):
            raise ConfigError("--lambda needs positive values")
        config = replace(config, sweep=lams)
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
        return COMMANDS[args.command](config)
    except (ConfigError, SolverError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # anything unexpected still ends with a nonzero status
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
