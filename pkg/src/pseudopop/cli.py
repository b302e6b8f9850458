"""Command-line interface.

Four subcommands mirror the library pipeline:

* ``weights``  - stage 1: balancing weights and percent ESS.
* ``estimate`` - stage 2: weighted features plus bootstrap collations.
* ``simulate`` - generate one synthetic dataset and its ground truth.
* ``study``    - full simulation study producing a tidy metrics table.

JSON is the canonical output format; ``--format csv`` flattens every
array with explicit 1-based index columns. Exit code 2 flags validation
errors, 3 convergence failures. Results are reproducible: a run without
``--seed`` draws one from system entropy and echoes it in the output.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from .bootstrap import CausalResult, causal_estimate, percentile_ci
from .dataset import CsvSchema, Dataset, load_dataset, write_dataset
from .errors import ConvergenceError, ValidationError
from .estimators import sd_ratio
from .rng import materialize_seed
from .simulate import (
    DEFAULT_METHODS,
    SimConfig,
    gen_dataset,
    run_study,
    true_wates_for_methods,
)
from .weights import METHODS, balancing_weights

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CONVERGENCE = 3


@dataclass
class RunConfig:
    """Fully resolved invocation parameters, echoed in every output."""

    command: str
    input_path: str | None = None
    method: str | None = None
    natural_group_prop: list[float] | None = None
    B: int = 100
    num_random: int = 40
    gamma_min: float = 0.001
    gamma_max: float = 0.999
    seed: int | None = None
    output_path: str | None = None
    format: str = "json"
    threads: int = 1

    def echo(self) -> dict:
        out = {
            "command": self.command,
            "input": self.input_path,
            "method": self.method,
            "naturalGroupProp": self.natural_group_prop,
            "B": self.B,
            "num.random": self.num_random,
            "gammaMin": self.gamma_min,
            "gammaMax": self.gamma_max,
            "seed": self.seed,
            "format": self.format,
        }
        return {k: v for k, v in out.items() if v is not None}


def _default_threads() -> int:
    env = os.environ.get("PSEUDOPOP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _add_shared_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help="RNG seed; omitted draws one from entropy and echoes it")
    p.add_argument("--output", default=None, help="output file (default stdout)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: all cores or $PSEUDOPOP_THREADS)")


def _add_analysis_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="dataset CSV")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--natural-group-prop", default=None,
                   help="comma-separated group prevalences (FLEXOR only)")
    p.add_argument("--num-random", type=int, default=40)
    p.add_argument("--gamma-min", type=float, default=0.001)
    p.add_argument("--gamma-max", type=float, default=0.999)
    p.add_argument("--col-study", default="S")
    p.add_argument("--col-group", default="Z")
    p.add_argument("--covariate-prefix", default="X")
    p.add_argument("--outcome-prefix", default="Y")


def _add_sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-subjects", type=int, default=500)
    p.add_argument("--clusters", type=int, default=12)
    p.add_argument("--r-squared", type=float, default=0.9)
    p.add_argument("--natural-pop-size", type=int, default=100_000)
    p.add_argument("--base-covariates", default=None,
                   help="CSV of base covariate rows to resample from")
    p.add_argument("--num-random", type=int, default=3)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pseudopop",
        description="Balancing-weight meta-analysis of multiple observational studies",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_w = sub.add_parser("weights", help="stage-1 balancing weights and percent ESS")
    _add_analysis_flags(p_w)
    _add_shared_flags(p_w)

    p_e = sub.add_parser("estimate", help="stage-2 weighted features with bootstrap")
    _add_analysis_flags(p_e)
    p_e.add_argument("--B", "--bootstrap", dest="B", type=int, default=100)
    _add_shared_flags(p_e)

    p_s = sub.add_parser("simulate", help="generate one synthetic dataset")
    _add_sim_flags(p_s)
    p_s.add_argument("--truth-output", default=None,
                     help="truth JSON path (default: <output>.truth.json)")
    _add_shared_flags(p_s)

    p_y = sub.add_parser("study", help="simulation study metrics table")
    _add_sim_flags(p_y)
    p_y.add_argument("--replicates", type=int, default=25)
    p_y.add_argument("--B", "--bootstrap", dest="B", type=int, default=50)
    _add_shared_flags(p_y)
    return parser


def _parse_prevalences(text: str | None) -> list[float] | None:
    if text is None:
        return None
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ValidationError(
            f"could not parse --natural-group-prop {text!r} as numbers"
        ) from None


def _schema(args) -> CsvSchema:
    return CsvSchema(
        study=args.col_study,
        group=args.col_group,
        covariate_prefix=args.covariate_prefix,
        outcome_prefix=args.outcome_prefix,
    )


def _flatten_rows(payload: dict) -> list[list]:
    rows = [["name", "i1", "i2", "i3", "i4", "value"]]
    for key, value in payload.items():
        if isinstance(value, dict):
            rows.append([key, "", "", "", "", json.dumps(value)])
            continue
        arr = np.asarray(value)
        if arr.ndim == 0:
            rows.append([key, "", "", "", "", arr.item()])
            continue
        for idx in np.ndindex(arr.shape):
            padded = [i + 1 for i in idx] + [""] * (4 - len(idx))
            rows.append([key, *padded, arr[idx].item()])
    return rows


def _emit(payload: dict, cfg: RunConfig) -> None:
    if cfg.format == "csv":
        import csv as _csv

        rows = _flatten_rows(payload)
        if cfg.output_path:
            with open(cfg.output_path, "w", newline="") as fh:
                _csv.writer(fh).writerows(rows)
        else:
            _csv.writer(sys.stdout).writerows(rows)
        return
    text = json.dumps(payload, indent=2)
    if cfg.output_path:
        with open(cfg.output_path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _dataset_labels(d: Dataset) -> dict:
    return {
        "studyLabels": list(d.study_labels),
        "groupLabels": list(d.group_labels),
    }


def _fmt(v: float) -> str:
    return f"{round(float(v), 2):g}"


def _render_report(res: CausalResult, stream) -> None:
    """Human-readable estimates with 95% percentile intervals."""
    moments = res.moments.values
    coll = res.bootstrap.collated_moments
    n_groups, n_outcomes = moments.shape[1], moments.shape[2]
    print(f"method: {res.method}", file=stream)
    print(f"percentESS: {res.weights.percent_ess:.5f}", file=stream)
    for l in range(n_outcomes):
        print(f"Y {l + 1}", file=stream)
        for z in range(n_groups):
            parts = []
            for st, name in enumerate(("mean", "sd", "median")):
                lo, hi = percentile_ci(coll[st, z, l, :], 0.95)
                parts.append(
                    f"{name} {_fmt(moments[st, z, l])} ({_fmt(lo)},{_fmt(hi)})"
                )
            print(f"  group {z + 1}: " + "  ".join(parts), file=stream)
        if n_groups == 2:
            diff = np.atleast_1d(res.other_features.mean_diffs)[l]
            lo, hi = percentile_ci(
                res.bootstrap.collated_other.reshape(n_outcomes, -1)[l], 0.95
            )
            print(
                f"  mean diff (1-2): {_fmt(diff)} ({_fmt(lo)},{_fmt(hi)})",
                file=stream,
            )
            ratio = sd_ratio(res.moments, 1, 2, l + 1)
            with np.errstate(divide="ignore", invalid="ignore"):
                boot_ratios = coll[1, 0, l, :] / coll[1, 1, l, :]
            boot_ratios = boot_ratios[np.isfinite(boot_ratios)]
            if boot_ratios.size >= 2:
                lo, hi = percentile_ci(boot_ratios, 0.95)
                print(
                    f"  sd ratio (1/2): {_fmt(ratio)} ({_fmt(lo)},{_fmt(hi)})",
                    file=stream,
                )
            else:
                print(f"  sd ratio (1/2): {_fmt(ratio)}", file=stream)


def cmd_weights(args) -> int:
    cfg = RunConfig(
        command="weights",
        input_path=args.input,
        method=args.method,
        natural_group_prop=_parse_prevalences(args.natural_group_prop),
        num_random=args.num_random,
        gamma_min=args.gamma_min,
        gamma_max=args.gamma_max,
        seed=materialize_seed(args.seed),
        output_path=args.output,
        format=args.format,
        threads=args.threads or _default_threads(),
    )
    d = load_dataset(cfg.input_path, _schema(args))
    result = balancing_weights(
        d, cfg.method,
        natural_group_prop=cfg.natural_group_prop,
        num_random=cfg.num_random,
        gamma_min=cfg.gamma_min,
        gamma_max=cfg.gamma_max,
        seed=cfg.seed,
    )
    payload = {
        "wt.v": result.wt.tolist(),
        "percentESS": result.percent_ess,
        "method": cfg.method,
        "seed": cfg.seed,
        "config": {**cfg.echo(), **_dataset_labels(d)},
    }
    _emit(payload, cfg)
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = RunConfig(
        command="estimate",
        input_path=args.input,
        method=args.method,
        natural_group_prop=_parse_prevalences(args.natural_group_prop),
        B=args.B,
        num_random=args.num_random,
        gamma_min=args.gamma_min,
        gamma_max=args.gamma_max,
        seed=materialize_seed(args.seed),
        output_path=args.output,
        format=args.format,
        threads=args.threads or _default_threads(),
    )
    d = load_dataset(cfg.input_path, _schema(args))
    result = causal_estimate(
        d, cfg.method,
        natural_group_prop=cfg.natural_group_prop,
        B=cfg.B,
        num_random=cfg.num_random,
        gamma_min=cfg.gamma_min,
        gamma_max=cfg.gamma_max,
        seed=cfg.seed,
        threads=cfg.threads,
    )
    payload = {
        "percentESS": result.weights.percent_ess,
        "moments.ar": result.moments.values.tolist(),
        "otherFeatures.v": np.asarray(result.other_features.mean_diffs).tolist(),
        "collatedMoments.ar": result.bootstrap.collated_moments.tolist(),
        "collatedOtherFeatures.mt": result.bootstrap.collated_other.tolist(),
        "collatedESS": result.bootstrap.collated_ess.tolist(),
        "method": cfg.method,
        "seed": cfg.seed,
        "nFailedReplicates": result.bootstrap.n_failed,
        "config": {**cfg.echo(), **_dataset_labels(d)},
    }
    _emit(payload, cfg)
    _render_report(result, sys.stdout if cfg.output_path else sys.stderr)
    return EXIT_OK


def _load_base(path: str | None) -> np.ndarray | None:
    if path is None:
        return None
    with open(path) as fh:
        first = fh.readline()
    has_header = False
    for token in first.strip().split(","):
        try:
            float(token)
        except ValueError:
            has_header = True
            break
    return np.loadtxt(path, delimiter=",", skiprows=1 if has_header else 0, ndmin=2)


def _sim_config(args, seed: int) -> SimConfig:
    return SimConfig(
        n_subjects=args.n_subjects,
        n_clusters=args.clusters,
        r_squared_target=args.r_squared,
        natural_pop_size=args.natural_pop_size,
        base_covariates=_load_base(args.base_covariates),
        seed=seed,
    )


def cmd_simulate(args) -> int:
    cfg = RunConfig(
        command="simulate",
        seed=materialize_seed(args.seed),
        num_random=args.num_random,
        output_path=args.output,
        format=args.format,
        threads=args.threads or _default_threads(),
    )
    sim = _sim_config(args, cfg.seed)
    dataset, truth = gen_dataset(sim)
    wates = true_wates_for_methods(sim, truth, DEFAULT_METHODS,
                                   num_random=cfg.num_random)
    out_path = cfg.output_path or "simulated_dataset.csv"
    write_dataset(dataset, out_path)
    truth_payload = {
        "thetaTrue": truth.theta_true.tolist(),
        "piTrue": truth.pi_true.tolist(),
        "omega0": truth.omega0,
        "omega1": truth.omega1,
        "trueWate": {m: w for m, (w, _) in wates.items()},
        "trueWateMcSe": {m: se for m, (_, se) in wates.items()},
        "seed": cfg.seed,
        "config": cfg.echo(),
    }
    truth_path = args.truth_output or (os.path.splitext(out_path)[0] + ".truth.json")
    with open(truth_path, "w") as fh:
        json.dump(truth_payload, fh, indent=2)
        fh.write("\n")
    print(f"dataset: {out_path}\ntruth: {truth_path}")
    return EXIT_OK


def cmd_study(args) -> int:
    cfg = RunConfig(
        command="study",
        B=args.B,
        seed=materialize_seed(args.seed),
        num_random=args.num_random,
        output_path=args.output,
        format=args.format,
        threads=args.threads or _default_threads(),
    )
    sim = _sim_config(args, cfg.seed)
    table = run_study(
        sim, args.replicates, cfg.B,
        seed=cfg.seed, num_random=cfg.num_random, threads=cfg.threads,
    )
    if cfg.output_path:
        table.to_csv(cfg.output_path, index=False)
    else:
        table.to_csv(sys.stdout, index=False)
    print(json.dumps({"config": {**cfg.echo(), "replicates": args.replicates}}))
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "weights": cmd_weights,
        "estimate": cmd_estimate,
        "simulate": cmd_simulate,
        "study": cmd_study,
    }
    try:
        return handlers[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
