"""Command-line front end: ``coupledcd detect | simulate | eval``.

Numeric settings live in a JSON run configuration whose solver keys are the
:class:`~coupledcd.palm.SolverConfig` field names (``lambda`` or ``lam`` for
the l1 weight, ``smoothing`` as a nested object). Paths may be given in the
config or on the command line; the command line wins.

Exit codes: 0 success, 2 bad arguments or configuration, 3 unreadable,
malformed or mismatched data, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from contextlib import nullcontext
from dataclasses import fields
from pathlib import Path

from . import evaluation, raster
from .divergences import SensorModel
from .estimator import CoupledDictionaryChangeDetector
from .exceptions import (CoupledCDError, DataError, DegenerateError, EvalError, FormatError,
                         GeometryError, InitError, InvariantError, NumericalError, ParamError)
from .palm import SolverConfig
from .proximal import SmoothingParams
from .raster import Modality

logger = logging.getLogger("coupledcd")

EXIT_OK, EXIT_ARGS, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4

SOLVER_KEYS = {f.name for f in fields(SolverConfig)} | {"lambda"}
SMOOTHING_KEYS = {f.name for f in fields(SmoothingParams)}
PATH_KEYS = {"input1", "input2", "out_energy", "out_mask", "trace", "out_dir"}
SENSOR_KEYS = {"noise_sigma", "looks"}
DETECTOR_KEYS = {"normalize", "aggregation", "threshold"}
SIMULATION_KEYS = {"scenario", "size", "change_fraction"}
RUN_KEYS = SOLVER_KEYS | PATH_KEYS | SENSOR_KEYS | DETECTOR_KEYS | SIMULATION_KEYS


class UsageError(Exception):
    """Bad command-line arguments or configuration (exit code 2)."""


def load_run_config(path):
    """Read and validate a JSON run configuration; unknown keys are rejected."""
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    return check_run_config(doc)


def check_run_config(doc):
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    unknown = sorted(set(doc) - RUN_KEYS)
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
    smoothing = doc.get("smoothing")
    if smoothing is not None:
        if not isinstance(smoothing, dict):
            raise UsageError("'smoothing' must be an object")
        bad = sorted(set(smoothing) - SMOOTHING_KEYS)
        if bad:
            raise UsageError(f"unknown smoothing key(s): {', '.join(bad)}")
    return dict(doc)


def solver_config(doc, seed=None):
    """Build a :class:`SolverConfig` from the solver keys of a run config."""
    kw = {k: v for k, v in doc.items() if k in SOLVER_KEYS}
    if "lambda" in kw:
        if "lam" in kw:
            raise UsageError("give either 'lambda' or 'lam', not both")
        kw["lam"] = kw.pop("lambda")
    if "smoothing" in kw:
        kw["smoothing"] = SmoothingParams(**kw["smoothing"])
    if seed is not None:
        kw["seed"] = seed
    try:
        return SolverConfig(**kw)
    except TypeError as exc:
        raise UsageError(str(exc)) from exc


def _pick(args, doc, name, required=False):
    v = getattr(args, name, None)
    if v is None:
        v = doc.get(name)
    if required and v is None:
        raise UsageError(f"--{name.replace('_', '-')} is required")
    return v


def _threads(n):
    if n is None:
        return nullcontext()
    if n < 1:
        raise UsageError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


# -- commands ----------------------------------------------------------------

def cmd_detect(args):
    doc = load_run_config(args.config)
    config = solver_config(doc, args.seed)
    in1 = _pick(args, doc, "input1", True)
    in2 = _pick(args, doc, "input2", True)
    out_energy = _pick(args, doc, "out_energy", True)
    out_mask = _pick(args, doc, "out_mask")
    trace = _pick(args, doc, "trace")
    threshold = _pick(args, doc, "threshold")
    if out_mask is not None and threshold is None:
        raise UsageError("--out-mask needs --threshold")
    extra = {k: doc[k] for k in ("normalize", "aggregation") if k in doc}

    y1, y2 = raster.read_raster(in1), raster.read_raster(in2)
    det = CoupledDictionaryChangeDetector.from_config(config, **extra)
    det.fit(y1, y2, trace_path=trace)
    finer = y1 if y1.height * y1.width >= y2.height * y2.width else y2
    raster.write_raster(det.energy_raster(finer.resolution), out_energy)
    logger.info("energy map written to %s (%d iterations)", out_energy, det.n_iter_)
    if threshold is not None:
        mask = det.predict(float(threshold))
        if out_mask is not None:
            raster.write_mask(mask, out_mask)
            logger.info("change mask written to %s", out_mask)
    return EXIT_OK


def cmd_simulate(args):
    doc = load_run_config(args.config)
    scenario = _pick(args, doc, "scenario", True)
    if scenario not in evaluation.SCENARIO_MODALITIES:
        raise UsageError(f"scenario must be 1, 2 or 3, got {scenario}")
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    out_dir = Path(_pick(args, doc, "out_dir", True))
    sensors = {}
    if "noise_sigma" in doc:
        sensors[Modality.OPTICAL] = SensorModel(Modality.OPTICAL, noise_sigma=doc["noise_sigma"])
    if "looks" in doc:
        sensors[Modality.SAR] = SensorModel(Modality.SAR, looks=doc["looks"])
    # scenario 3: even seeds give optical -> SAR, odd seeds SAR -> optical
    pairing = seed % 2 if scenario == 3 else 0
    sim = evaluation.simulate_pair(scenario, seed, size=doc.get("size", 96), pairing=pairing,
                                   change_fraction=doc.get("change_fraction", 0.10),
                                   sensors=sensors)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {
        "reference1.rimg": sim.reference1, "reference2.rimg": sim.reference2,
        "changed1.rimg": sim.reference1, "changed2.rimg": sim.changed2,
        "observed1.rimg": sim.observed1, "observed2.rimg": sim.observed2,
    }
    for name, r in outputs.items():
        raster.write_raster(r, out_dir / name)
    raster.write_mask(sim.truth, out_dir / "truth.pgm")
    logger.info("scenario %d seed %d written to %s", scenario, seed, out_dir)
    return EXIT_OK


def cmd_eval(args):
    doc = load_run_config(args.config)
    energy_path = _pick(args, doc, "input1", True)
    truth_path = _pick(args, doc, "input2", True)
    out_dir = Path(_pick(args, doc, "out_dir", True))
    energy = raster.read_raster(energy_path)
    truth = raster.read_mask(truth_path)
    if energy.bands != 1 or (energy.height, energy.width) != (truth.height, truth.width):
        raise GeometryError(f"energy map {energy.dims} does not match truth "
                            f"({truth.height}, {truth.width})")
    curve = evaluation.roc_curve(energy, truth)
    metrics = {"auc": evaluation.auc(curve), "distance": evaluation.diagonal_distance(curve)}
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "roc.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pfa", "pd"])
        for pfa, pd in zip(curve.pfa, curve.pd):
            w.writerow([repr(float(pfa)), repr(float(pd))])
    with open(out_dir / "metrics.json", "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info("auc=%.4f distance=%.4f", metrics["auc"], metrics["distance"])
    return EXIT_OK


# -- entry point -------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="coupledcd", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help="max BLAS threads (default: all cores)")

    p = sub.add_parser("detect", help="estimate a change-energy map for an image pair")
    common(p)
    p.add_argument("--input1", help="image before (RIMG)")
    p.add_argument("--input2", help="image after (RIMG)")
    p.add_argument("--out-energy", help="output energy map (RIMG)")
    p.add_argument("--out-mask", help="output binary mask (PGM), needs --threshold")
    p.add_argument("--threshold", type=float)
    p.add_argument("--trace", help="per-iteration objective/Lipschitz CSV")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("simulate", help="write a synthetic scenario draw")
    common(p)
    p.add_argument("--scenario", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", help="score an energy map against a truth mask")
    common(p)
    p.add_argument("--input1", help="energy map (RIMG)")
    p.add_argument("--input2", help="truth mask (PGM)")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        with _threads(args.threads):
            return args.func(args)
    except (UsageError, ParamError, InitError) as exc:
        print(f"coupledcd: error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (FormatError, DataError, DegenerateError, GeometryError, EvalError, OSError) as exc:
        print(f"coupledcd: error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (NumericalError, InvariantError) as exc:
        print(f"coupledcd: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CoupledCDError as exc:
        print(f"coupledcd: error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
