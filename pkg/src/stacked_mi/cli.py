"""Command-line interface.

Exit codes: 0 success, 2 bad input or data, 3 device failure.
"""

from __future__ import annotations

import csv
import itertools
import json
import sys
from pathlib import Path

import click
import numpy as np

from stacked_mi import __version__
from stacked_mi.devices import KINDS, DeviceSpec
from stacked_mi.eomi import eomi_from_omi, eomi_test, q0_quantile_table
from stacked_mi.io import read_imputations
from stacked_mi.omi import estimate_omi
from stacked_mi.reference import DEFAULT_N, METHODS, ReferenceSpec, confidence_mask, mi_test, pvalue_function
from stacked_mi.rng import SEED_ENV_VAR, default_seed
from stacked_mi.stacking import RULE_KINDS, DeviceError, moment_estimates, selection_rule

EXIT_DATA = 2
EXIT_DEVICE = 3

REF_CHOICES = {"t1": "T1", "t2": "T2", "t3": "T3", "t4": "T4", "t4-gamma": "T4_gamma", "f2m": "F_two_moment"}
EXPERIMENTS = ("omi-mse", "sigma-bias", "size-accuracy", "eomi-power", "regression", "meng-rubin")


class Failure(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _run(fn):
    try:
        return fn()
    except DeviceError as exc:
        raise Failure(f"device error: {exc}", EXIT_DEVICE) from exc
    except (ValueError, KeyError, IndexError, OSError, np.linalg.LinAlgError) as exc:
        raise Failure(f"error: {exc}", EXIT_DATA) from exc


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


def _json(doc: dict) -> str:
    return json.dumps(doc, indent=2, allow_nan=False, default=_default) + "\n"


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _params(pairs) -> dict:
    out = {}
    for item in pairs:
        if "=" not in item:
            raise click.BadParameter(f"expected key=value, got {item!r}", param_hint="--param")
        key, value = item.split("=", 1)
        out[key.strip()] = _parse_value(value)
    return out


def _device(kind: str, pairs, command: str | None, k: int | None, column_names):
    params = _params(pairs)
    if kind == "external":
        if command:
            params["command"] = command
        if k is not None:
            params.setdefault("k", k)
    return DeviceSpec(kind.replace("-", "_"), params).build(column_names)


# -- shared options -----------------------------------------------------------

def imps_options(f):
    f = click.option("--imps", "imps_path", required=True, type=click.Path(exists=True),
                     help="Directory of imp_###.csv files or one CSV with an .imp column.")(f)
    f = click.option("--device", "device_kind", required=True,
                     type=click.Choice([k.replace("_", "-") for k in KINDS]), help="Complete-data testing device.")(f)
    f = click.option("--param", "params", multiple=True, metavar="KEY=VALUE",
                     help="Device parameter; VALUE is parsed as JSON when possible. Repeatable.")(f)
    f = click.option("--command", default=None, help="Command line for the external device.")(f)
    f = click.option("--k", "k", type=click.IntRange(min=1), default=None,
                     help="Number of tested constraints (defaults to the device's).")(f)
    f = click.option("--rule", type=click.Choice(RULE_KINDS), default="jack", show_default=True)(f)
    return f


def common_options(f):
    f = click.option("--seed", type=int, default=None,
                     help=f"RNG seed (default: ${SEED_ENV_VAR} or a fixed constant).")(f)
    f = click.option("--threads", type=int, default=1, show_default=True, help="Worker threads; 0 means auto.")(f)
    f = click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write output here, not stdout.")(f)
    return f


def _resolve_k(device, k):
    return device.k if k is None else k


@click.group()
@click.version_option(__version__)
def main():
    """Stacked multiple imputation tests and missing-information estimates."""


@main.command("test")
@imps_options
@click.option("--ref", type=click.Choice(list(REF_CHOICES)), default="t4", show_default=True,
              help="Reference null distribution.")
@click.option("--N", "N", type=click.IntRange(min=1), default=DEFAULT_N, show_default=True,
              help="Monte Carlo size for t4 / t4-gamma.")
@click.option("--add-one", is_flag=True, help="Use (hits + 1)/(N + 1) for Monte Carlo p-values.")
@common_options
def cmd_test(imps_path, device_kind, params, command, k, rule, ref, N, add_one, seed, threads, out):
    """Test H0 from m completed datasets; prints a JSON report."""
    spec = ReferenceSpec(REF_CHOICES[ref], N, default_seed() if seed is None else seed, rule, threads, add_one)

    def go():
        imps = read_imputations(imps_path)
        if spec.needs_sigma2 and imps.m < 3:
            raise ValueError("m ≥ 3 required for σ̂²")
        device = _device(device_kind, params, command, k, imps.column_names)
        return mi_test(device, imps, _resolve_k(device, k), spec)

    result = _run(go)
    _emit(_json(result.to_dict()), out)


@main.command("estimate-omi")
@imps_options
@common_options
def cmd_estimate_omi(imps_path, device_kind, params, command, k, rule, seed, threads, out):
    """Estimate the odds of missing information r_1..r_k."""

    def go():
        imps = read_imputations(imps_path)
        device = _device(device_kind, params, command, k, imps.column_names)
        st = moment_estimates(device, imps, selection_rule(rule, imps.m), _resolve_k(device, k), threads)
        return estimate_omi(st)

    _emit(_json(_run(go).to_dict()), out)


@main.command("eomi")
@click.option("--imps", "imps_path", type=click.Path(exists=True), default=None)
@click.option("--device", "device_kind", type=click.Choice([k.replace("_", "-") for k in KINDS]), default=None)
@click.option("--param", "params", multiple=True, metavar="KEY=VALUE")
@click.option("--command", default=None)
@click.option("--k", "k", type=click.IntRange(min=1), default=None)
@click.option("--rule", type=click.Choice(RULE_KINDS), default="jack", show_default=True)
@click.option("--mu", type=float, default=None, help="Use this mu_hat instead of imputations.")
@click.option("--sigma2", type=float, default=None, help="Raw sigma2_hat paired with --mu.")
@click.option("--m", "m", type=int, default=None, help="Number of imputations paired with --mu.")
@click.option("--N", "N", type=click.IntRange(min=1), default=DEFAULT_N, show_default=True)
@common_options
def cmd_eomi(imps_path, device_kind, params, command, k, rule, mu, sigma2, m, N, seed, threads, out):
    """Test equal odds of missing information."""
    seed = default_seed() if seed is None else seed
    direct = mu is not None or sigma2 is not None
    if direct:
        if None in (mu, sigma2, m, k) or imps_path:
            raise click.UsageError("--mu needs --sigma2, --m and --k, and excludes --imps")
    elif not (imps_path and device_kind):
        raise click.UsageError("give --imps and --device, or --mu/--sigma2/--m/--k")

    def go():
        if direct:
            return eomi_test(mu, sigma2, k, m, N, seed, threads)
        imps = read_imputations(imps_path)
        device = _device(device_kind, params, command, k, imps.column_names)
        st = moment_estimates(device, imps, selection_rule(rule, imps.m), _resolve_k(device, k), threads)
        return eomi_from_omi(estimate_omi(st), N, seed, threads)

    _emit(_json(_run(go).to_dict()), out)


@main.command("quantiles")
@click.option("--m", "ms", type=int, multiple=True, help="Values of m (default 5 10 20 30).")
@click.option("--k-min", type=int, default=2, show_default=True)
@click.option("--k-max", type=int, default=10, show_default=True)
@click.option("--level", type=click.FloatRange(0, 1, min_open=True, max_open=True), default=0.95,
              show_default=True)
@click.option("--N", "N", type=click.IntRange(min=1), default=10**6, show_default=True)
@common_options
def cmd_quantiles(ms, k_min, k_max, level, N, seed, threads, out):
    """Quantile table of the pivotal EOMI null law; rows m, columns k."""
    ms = ms or (5, 10, 20, 30)
    if k_min < 2 or k_max < k_min or min(ms) < 3:
        raise click.UsageError("need 2 <= k-min <= k-max and every m >= 3")
    ks = range(k_min, k_max + 1)
    table = _run(lambda: q0_quantile_table(ms, ks, N, default_seed() if seed is None else seed, level, threads))
    lines = [",".join(["m"] + [f"k={k}" for k in ks])]
    for m in ms:
        lines.append(",".join([str(m)] + [f"{table[(m, k)]:.4f}" for k in ks]))
    _emit("\n".join(lines) + "\n", out)


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs:
        if "=" not in item:
            raise click.BadParameter(f"expected key=value, got {item!r}", param_hint="--set")
        key, value = item.split("=", 1)
        value = _parse_value(value)
        out[key.strip().replace("-", "_")] = tuple(value) if isinstance(value, list) else value
    return out


@main.command("simulate")
@click.argument("experiment", type=click.Choice(EXPERIMENTS))
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Override an experiment setting (JSON value), e.g. --set reps=500 --set ms=[10,20].")
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="CSV path; a manifest is written next to it.")
def cmd_simulate(experiment, overrides, seed, threads, out):
    """Run a simulation study and write CSV plus a manifest."""
    from stacked_mi.sim import experiments as ex
    from stacked_mi.sim.gibbs import RegressionSimConfig

    cfg = _overrides(overrides)
    cfg["seed"] = default_seed() if seed is None else seed

    def go():
        if experiment == "regression":
            reg = RegressionSimConfig(**cfg)
            return ex.experiment_regression_finite_n(reg, threads=threads), {"experiment": experiment, **vars(reg)}
        funcs = {
            "omi-mse": ex.experiment_omi_mse,
            "sigma-bias": ex.experiment_sigma_bias,
            "size-accuracy": ex.experiment_size_accuracy,
            "eomi-power": ex.experiment_eomi_power,
            "meng-rubin": ex.experiment_meng_rubin,
        }
        fn = funcs[experiment]
        kwargs = dict(cfg)
        if experiment != "meng-rubin":
            kwargs["threads"] = threads
        try:
            rows = fn(**kwargs)
        except TypeError as exc:
            raise ValueError(f"bad setting for {experiment}: {exc}") from None
        return rows, {"experiment": experiment, **cfg}

    rows, manifest = _run(go)
    ex.write_experiment(rows, out, manifest)


def _axis(text: str) -> np.ndarray:
    try:
        start, stop, num = text.split(":")
        return np.linspace(float(start), float(stop), int(num))
    except ValueError:
        raise click.BadParameter(f"expected start:stop:num, got {text!r}", param_hint="--axis") from None


@main.command("pvalue-function")
@imps_options
@click.option("--grid-param", default="theta0", show_default=True, help="Device parameter varied over the grid.")
@click.option("--axis", "axes", multiple=True, required=True, metavar="START:STOP:NUM",
              help="One per component of the grid parameter; the grid is their product.")
@click.option("--ref", type=click.Choice(list(REF_CHOICES)), default="t4", show_default=True)
@click.option("--N", "N", type=click.IntRange(min=1), default=DEFAULT_N, show_default=True)
@click.option("--alpha", type=click.FloatRange(0, 1), default=0.05, show_default=True,
              help="Level of the confidence-region mask column.")
@common_options
def cmd_pvalue_function(imps_path, device_kind, params, command, k, rule, grid_param, axes, ref, N, alpha,
                        seed, threads, out):
    """Evaluate the p-value function over a grid; CSV with a confidence-region mask."""
    spec = ReferenceSpec(REF_CHOICES[ref], N, default_seed() if seed is None else seed, rule, threads)
    grid = [tuple(float(v) for v in pt) for pt in itertools.product(*[_axis(a) for a in axes])]

    def go():
        imps = read_imputations(imps_path)
        base = _params(params)
        if command:
            base["command"] = command
        kind = device_kind.replace("-", "_")

        def factory(theta):
            p = dict(base)
            p[grid_param] = list(theta) if len(theta) > 1 else theta[0]
            return DeviceSpec(kind, p).build(imps.column_names)

        kk = k if k is not None else factory(grid[0]).k
        return pvalue_function(factory, imps, kk, spec, grid)

    points = _run(go)
    mask = confidence_mask(points, alpha)
    buf = []
    header = [f"{grid_param}_{i + 1}" for i in range(len(axes))] + ["p_value", "D_hat", "in_region", "error"]
    buf.append(header)
    for pt, inside in zip(points, mask):
        buf.append([repr(v) for v in pt.theta] + [repr(pt.p_value), repr(pt.D_hat), str(int(inside)), pt.error or ""])
    if out:
        fh = open(out, "w", newline="")
    else:
        fh = sys.stdout
    try:
        csv.writer(fh, lineterminator="\n").writerows(buf)
    finally:
        if out:
            fh.close()


def run(argv=None) -> int:
    """Entry point returning the exit code (used by tests)."""
    try:
        main.main(args=argv, standalone_mode=False)
    except Failure as exc:
        click.echo(str(exc), err=True)
        return exc.code
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return EXIT_DATA
    return 0


def entry() -> None:
    sys.exit(run())


if __name__ == "__main__":
    entry()
