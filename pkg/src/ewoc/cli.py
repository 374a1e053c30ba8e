"""Command-line interface: design validation, file-backed trial conduct,
simulation studies, and the HTTP service."""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from . import simulator, trial
from .errors import ConfigError, EwocError
from .models import TwoParamState
from .store import TrialStore

DEFAULT_DATA_DIR = os.environ.get("EWOC_DATA_DIR", "./ewoc-data")


def _load_config(path: str) -> trial.TrialConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise click.ClickException(f"cannot read config {path}: {exc}") from exc
    return trial.config_from_dict(doc)


def _covariates_option(value: str | None):
    if not value:
        return None
    return tuple(float(v) for v in value.split(","))


@click.group()
def main():
    """Escalation with overdose control: dose-finding trials and simulations."""


# ---------------------------------------------------------------------------
# design
# ---------------------------------------------------------------------------

@main.group()
def design():
    """Design-time checks."""


@design.command("validate")
@click.option("--config", "config_path", required=True, help="Trial config JSON file.")
def design_validate(config_path):
    """Validate a configuration file and report field-level problems."""
    try:
        config = _load_config(config_path)
    except ConfigError as exc:
        click.echo("INVALID")
        for field, message in exc.field_errors.items():
            click.echo(f"  {field}: {message}")
        sys.exit(1)
    click.echo(f"OK {config.label or config_path}")


# ---------------------------------------------------------------------------
# trial conduct (file-backed)
# ---------------------------------------------------------------------------

@main.group("trial")
def trial_group():
    """Conduct a trial against a local data directory."""


@trial_group.command("new")
@click.option("--config", "config_path", required=True)
@click.option("--data-dir", default=DEFAULT_DATA_DIR, show_default=True)
@click.option("--covariates", default=None, help="Comma-separated baseline covariates for patient 1.")
def trial_new(config_path, data_dir, covariates):
    """Create a trial and print its id and the first assigned dose."""
    config = _load_config(config_path)
    store = TrialStore(data_dir)
    record = store.create(config, covariates=_covariates_option(covariates))
    first = record.state.patients[0]
    click.echo(f"trial {record.id} created")
    click.echo(f"patient {first.patient_id} assigned dose {first.dose:g}")


@trial_group.command("next")
@click.option("--id", "trial_id", required=True)
@click.option("--data-dir", default=DEFAULT_DATA_DIR, show_default=True)
@click.option("--covariates", default=None)
def trial_next(trial_id, data_dir, covariates):
    """Enroll the next patient at the recommended dose."""
    store = TrialStore(data_dir)
    try:
        record = store.enroll(trial_id, covariates=_covariates_option(covariates))
    except EwocError as exc:
        raise click.ClickException(str(exc)) from exc
    p = record.state.patients[-1]
    click.echo(f"patient {p.patient_id} assigned dose {p.dose:g} "
               f"(continuous {p.recommended:g}, alpha {trial.alpha_at(record.state):g})")
    if p.advisory:
        click.echo("advisory: no configured level satisfied the tolerances; "
                   "lowest level assigned")


@trial_group.command("outcome")
@click.option("--id", "trial_id", required=True)
@click.option("--patient", "patient_id", required=True)
@click.option("--dlt", type=click.IntRange(0, 1), required=True)
@click.option("--data-dir", default=DEFAULT_DATA_DIR, show_default=True)
def trial_outcome(trial_id, patient_id, dlt, data_dir):
    """Record a resolved DLT assessment."""
    store = TrialStore(data_dir)
    try:
        record = store.resolve(trial_id, patient_id, dlt)
    except EwocError as exc:
        raise click.ClickException(str(exc)) from exc
    state = record.state
    click.echo(f"patient {patient_id} resolved dlt={dlt}")
    if state.halted:
        click.echo(f"TRIAL HALTED: {state.halt_reason}")
    else:
        click.echo(f"alpha now {trial.alpha_at(state):g}; version {state.version}")


@trial_group.command("report")
@click.option("--id", "trial_id", required=True)
@click.option("--data-dir", default=DEFAULT_DATA_DIR, show_default=True)
@click.option("--covariates", default=None, help="Report the MTD at this covariate value.")
def trial_report(trial_id, data_dir, covariates):
    """Posterior summary and MTD estimate for a trial."""
    store = TrialStore(data_dir)
    try:
        record = store.get(trial_id)
    except EwocError as exc:
        raise click.ClickException(str(exc)) from exc
    state = record.state
    click.echo(f"trial {record.id} ({state.config.label or 'unlabelled'})")
    click.echo(f"patients {len(state.patients)}, resolved {state.resolved_count}, "
               f"halted {state.halted}")
    for p in state.patients:
        status = f"dlt={p.dlt}" if p.resolved else "pending"
        click.echo(f"  {p.patient_id}: dose {p.dose:g} {status}")
    try:
        est = trial.final_mtd(state, w=_covariates_option(covariates))
    except EwocError as exc:
        click.echo(f"estimate unavailable: {exc}")
        return
    click.echo(f"MTD estimate {est.point:g} (alpha {est.alpha_used:g}, "
               f"risk {est.loss_risk:g})")
    click.echo(f"95% HPD [{est.hpd95[0]:g}, {est.hpd95[1]:g}]")


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

@main.group()
def simulate():
    """Operating characteristics, consistency, and sample-size studies."""


def _write_output(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
        click.echo(f"wrote {out}")
    else:
        click.echo(text)


@simulate.command("oc")
@click.option("--config", "config_path", required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--reps", type=int, default=200, show_default=True)
@click.option("--n", "n_patients", type=int, default=30, show_default=True)
@click.option("--scenarios", "scenarios_path", default=None,
              help="JSON list of scenario documents; defaults to the built-in suite.")
@click.option("--out", default=None, help="CSV output path; JSON mirror written alongside.")
def simulate_oc(config_path, seed, reps, n_patients, scenarios_path, out):
    """Operating characteristics over a scenario suite."""
    config = _load_config(config_path)
    if scenarios_path:
        docs = json.loads(Path(scenarios_path).read_text())
        scenarios = [simulator.scenario_from_dict(d) for d in docs]
    else:
        scenarios = simulator.default_scenarios()
    results = []
    for i, scen in enumerate(scenarios):
        oc = simulator.operating_chars(scen, config, n_patients, reps, seed)
        results.append(oc)
        click.echo(f"[{i + 1}/{len(scenarios)}] {oc.scenario}: "
                   f"dlt {oc.dlt_fraction:.3f}, overdose {oc.overdose_fraction:.3f}, "
                   f"mae {oc.mean_abs_error:.1f}")
    csv_text = simulator.oc_to_csv(results)
    if out:
        Path(out).write_text(csv_text)
        mirror = Path(out).with_suffix(".json")
        mirror.write_text(simulator.oc_to_json(results))
        click.echo(f"wrote {out} and {mirror}")
    else:
        click.echo(csv_text)


@simulate.command("consistency")
@click.option("--config", "config_path", required=True,
              help="Config with a uniform_1p prior.")
@click.option("--beta0", type=float, required=True, help="True slope inside the prior support.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--reps", type=int, default=500, show_default=True)
@click.option("--n-max", type=int, default=200, show_default=True)
@click.option("--out", default=None)
def simulate_consistency(config_path, beta0, seed, reps, n_max, out):
    """Convergence of the assigned log-dose toward its target."""
    config = _load_config(config_path)
    try:
        table = simulator.consistency_check(beta0, config, n_max, reps, seed)
    except EwocError as exc:
        raise click.ClickException(str(exc)) from exc
    doc = {"beta0": table.beta0, "target_z": table.target_z,
           "n_replicates": table.n_replicates, "rows": table.rows()}
    _write_output(json.dumps(doc, indent=2), out)


@simulate.command("samplesize")
@click.option("--config", "config_path", required=True)
@click.option("--scenario", "scenario_path", default=None,
              help="Scenario JSON document; defaults to a mid-range on-model truth.")
@click.option("--n-list", default="5,10,20,40", show_default=True)
@click.option("--margin", type=float, default=None, help="Target average posterior sd.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--reps", type=int, default=200, show_default=True)
@click.option("--out", default=None)
def simulate_samplesize(config_path, scenario_path, n_list, margin, seed, reps, out):
    """Average posterior spread by sample size."""
    config = _load_config(config_path)
    if scenario_path:
        scen = simulator.scenario_from_dict(json.loads(Path(scenario_path).read_text()))
    else:
        constants = config.constants
        mid = 0.5 * (constants.x_min + constants.x_max)
        scen = simulator.Scenario(
            label="mid-range default",
            two_param=TwoParamState(rho0=constants.theta / 4, gamma=mid),
        )
    ns = tuple(int(v) for v in n_list.split(","))
    try:
        table = simulator.sample_size_table(config, scen, ns, reps, seed, sd_margin=margin)
    except EwocError as exc:
        raise click.ClickException(str(exc)) from exc
    doc = {"n_replicates": table.n_replicates, "sd_margin": table.sd_margin,
           "smallest_n_within_margin": table.smallest_n_within_margin,
           "rows": table.rows()}
    if table.sd_margin is not None:
        verdict = (f"smallest n with avg sd <= {table.sd_margin:g}: "
                   f"{table.smallest_n_within_margin}"
                   if table.smallest_n_within_margin is not None else "not reached")
        click.echo(verdict)
    _write_output(json.dumps(doc, indent=2), out)


# ---------------------------------------------------------------------------
# service
# ---------------------------------------------------------------------------

@main.command("serve")
@click.option("--port", type=int, default=lambda: int(os.environ.get("EWOC_PORT", "8000")),
              show_default="EWOC_PORT or 8000")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--data-dir", default=DEFAULT_DATA_DIR, show_default=True)
@click.option("--token", default=None, help="Require this bearer token on /api routes.")
@click.option("--static", "static_dir", default=None,
              help="Directory with the built conduct UI to serve at /.")
def serve(port, host, data_dir, token, static_dir):
    """Run the HTTP service."""
    import uvicorn

    from .api import create_app

    app = create_app(TrialStore(data_dir), token=token, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
