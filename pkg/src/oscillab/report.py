"""Run orchestration and output files (CSV, SVG, verdicts, manifest)."""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
import platform
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from .config import SWEEPS, ExperimentConfig
from .geometry import check_hypotheses
from .homogenization import (UnsupportedProfile, cauchy_verdict, gamma_closed_form, gamma_csv,
                             gamma_empirical)
from .plotting import sweep_figure
from .sweeps import Lab, run_sweep

SCHEMA_VERSION = 1
_PACKAGES = ("oscillab", "numpy", "scipy", "matplotlib", "triangle", "tomli")


def versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in _PACKAGES:
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunOutcome:
    out_dir: Path
    results: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    verdicts: list = field(default_factory=list)
    files: list = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return 2 if self.errors else 0


def write_manifest(out_dir: Path, cfg: ExperimentConfig, files: list, extra: dict | None = None,
                   command: str = "run") -> Path:
    """manifest.json: config echo, versions and the sha256 of every listed output file."""
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "command": command,
        "config": cfg.to_dict(),
        "versions": versions(),
        "outputs": {p.name: sha256(p) for p in sorted(files)},
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def gamma_tables(cfg: ExperimentConfig) -> tuple[str, list]:
    """Closed-form versus empirical gamma on every oscillating side.

    Returns printable text and the list of fields for the CSV table.
    """
    fam = cfg.family()
    g = cfg.gamma
    lines, fields = [], []
    for side in fam.oscillating:
        ch = fam.chart(side)
        emp = gamma_empirical(fam, ch, g.windows, g.eps, g.nodes_per_period)
        lines.append(f"[{side}] profile={fam.profile.kind} windows={g.windows} eps={g.eps:g}")
        try:
            cf = gamma_closed_form(fam.profile, ch)
        except UnsupportedProfile as exc:
            cf = None
            lines.append(f"  closed form: unsupported ({exc})")
        if cf is not None:
            fields.append(cf)
            lines.append(f"  closed form: {cf.values[0]:.8f}")
        fields.append(emp)
        lines.append("  cell                      empirical      gap")
        for k in range(len(emp.values)):
            ref = cf(0.5 * (emp.edges[k] + emp.edges[k + 1])) if cf is not None else np.nan
            gap = abs(emp.values[k] - ref) if cf is not None else np.nan
            lines.append(f"  [{emp.edges[k]:.4f}, {emp.edges[k + 1]:.4f}]  {emp.values[k]:.8f}  {gap:.2e}")
        if cf is None:
            cv = cauchy_verdict(fam, ch, g.windows)
            gaps = ", ".join(f"{x:.2e}" for x in cv["gaps"])
            lines.append(f"  Cauchy gaps along epsilons: {gaps} -> "
                         f"{'converged' if cv['converged'] else 'not converged'}")
    if not fam.oscillating:
        lines.append("no oscillating side: gamma = 1 everywhere")
    return "\n".join(lines), fields


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path, threads: int = 1, echo=print) -> RunOutcome:
    """Execute the selected sweeps in dependency order and write all outputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = RunOutcome(out)
    fam = cfg.family()
    hyp = check_hypotheses(fam)
    if not hyp.ok:
        echo("warning: " + "; ".join(hyp.notes))
    text, fields = gamma_tables(cfg)
    gpath = out / "gamma.csv"
    gpath.write_text(gamma_csv(fields) if fields else "chart,cell_left,cell_right,gamma_value,provenance\n")
    res.files.append(gpath)
    lab = Lab(cfg, threads)
    for name in [s for s in SWEEPS if s in cfg.sweeps]:
        try:
            r = run_sweep(lab, name)
        except Exception as exc:  # a failed sweep is reported, the rest still run
            res.errors[name] = f"{type(exc).__name__}: {exc}"
            line = f"{name}: aborted ({res.errors[name]})"
        else:
            res.results[name] = r
            csv_path = out / f"{name}.csv"
            csv_path.write_text(r.to_csv())
            res.files += [csv_path, sweep_figure(r, out / f"{name}.svg")]
            line = r.verdict_line()
        res.verdicts.append(line)
        echo(line)
    eqs = getattr(lab, "limit_equilibria", None)
    if eqs is not None:
        p = out / "equilibria_limit.csv"
        p.write_text(eqs.to_csv())
        res.files.append(p)
    vpath = out / "verdicts.txt"
    vpath.write_text("\n".join(res.verdicts) + "\n")
    res.files.append(vpath)
    write_manifest(out, cfg, res.files, {"threads": threads, "errors": res.errors,
                                         "hypotheses_ok": bool(hyp.ok)})
    return res
