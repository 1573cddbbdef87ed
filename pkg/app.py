"""
Coagulation-Fragmentation Toolkit - command-line entry point

Every subcommand resolves a RunConfig (flags > --config JSON > defaults),
runs one operation, prints its JSON result on stdout and writes
{name}-{theta}-{sigma_tag}-{seed}.json/.csv/.config.json to the output
directory. Experiments add a .timing.json sidecar.

Exit codes: 0 pass, 1 failed verdict, 2 usage or configuration error.
"""
import argparse
import json
import logging
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence

from config import settings
from config.run_config import RunConfig, load_config_file, resolve_run_config
from core.errors import CoagFragError, ConfigError, SigmaSpecError
from core.functionals import parse_functional, parse_functionals
from core.kernel import enumerate_transitions
from core.partition import Partition
from core.poisson_dirichlet import sample_pd_poisson, sample_pd_stick
from core.sigma import classify
from experiments.chain_experiments import diagnose_support, estimate_hitting_time, run_cesaro
from experiments.invariance_experiments import (
    check_mk,
    estimate_theta,
    test_increment_identities,
    test_invariance_onestep,
    test_moment_identity,
    test_reversibility,
    test_sampler_agreement,
    test_size_biased_uniformity,
)
from experiments.reports import ExperimentReport, Verdict
from experiments.streams import replica_rng
from storage import ReportRepository, report_stem

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

CSV_COLUMNS = "CSV columns: replica, seed, estimate, steps, plus experiment-specific columns."

# Subcommands that need no randomness run with seed 0 unless one is given
DETERMINISTIC = {"classify-sigma", "enumerate"}


# ==================== Flag parsing ====================

def _int_list(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _str_list(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _float_list(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _vector_list(text: str) -> List[List[int]]:
    """'2;2,1' -> [[2], [2, 1]]"""
    return [_int_list(chunk) for chunk in text.split(";") if chunk.strip()]


def _json_list(text: str) -> List[float]:
    value = json.loads(text)
    if not isinstance(value, list):
        raise argparse.ArgumentTypeError("expected a JSON array")
    return value


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, help="Master seed; all randomness derives from it")
    parser.add_argument("--config", dest="config_file", help="JSON config file (a config echo works)")
    parser.add_argument("--workers", type=int, help="Worker processes for replicas")
    parser.add_argument("--output-dir", help="Directory for reports")
    parser.add_argument("--format", choices=["json", "csv", "both"], help="Report formats to write")
    parser.add_argument("--log-level", default=None, help="Logging level (default from CF_LOG_LEVEL)")


def _add_chain(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--beta-m", type=float, help="Merge probability in (0, 1]")
    parser.add_argument("--beta-s", type=float, help="Split probability in (0, 1]")
    parser.add_argument("--sigma", help='Splitting measure as tagged JSON, e.g. {"type":"uniform"}')


def _add_pd(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--theta", type=float, help="PD parameter (default beta_s/beta_m)")
    parser.add_argument("--truncation", type=float, help="Stick-breaking residual mass cutoff")
    parser.add_argument("--eps", type=float, help="Poisson sampler small-jump cutoff")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coagfrag",
        description="Coagulation-fragmentation chains and Poisson-Dirichlet verification",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def command(name: str, help_text: str, chain: bool = False, pd: bool = False) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=CSV_COLUMNS)
        _add_common(p)
        if chain:
            _add_chain(p)
        if pd:
            _add_pd(p)
        return p

    p = command("sample-pd", "Draw PD(theta) partitions", pd=True)
    p.add_argument("--n", type=int, help="Number of partitions")
    p.add_argument("--sampler", choices=["stick", "poisson"])

    p = command("run-chain", "Cesaro averages from the single-part state", chain=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--functionals", type=_str_list, help="Comma-separated, e.g. Z2,Z3,X0")
    p.add_argument("--abs-tol", type=float, help="Absolute tolerance floor of the verdict")

    p = command("classify-sigma", "Support and recurrence class of a splitting measure", chain=True)
    p.add_argument("--numeric", action="store_true", default=None, help="Use quadrature only")

    p = command("test-invariance", "Paired one-step invariance test under PD(theta)", chain=True, pd=True)
    p.add_argument("--functionals", type=_str_list)
    p.add_argument("--samples", type=int)
    p.add_argument("--control", action="store_true", default=None, help="Run as a negative control")
    p.add_argument("--quadrature-nodes", type=int)

    p = command("test-reversibility", "E[G KF] = E[F KG] under PD(theta)", chain=True, pd=True)
    p.add_argument("--F", dest="f")
    p.add_argument("--G", dest="g")
    p.add_argument("--samples", type=int)
    p.add_argument("--quadrature-nodes", type=int)

    p = command("test-increments", "Expected increments of Z_k and P_n vanish under PD(theta)", chain=True, pd=True)
    p.add_argument("--k-values", type=_int_list, help="e.g. 2,3")
    p.add_argument("--n-vectors", type=_vector_list, help="e.g. '2;2,1'")
    p.add_argument("--thresholds", type=_float_list, help="Part-size thresholds eps, e.g. 0.1,0.05")
    p.add_argument("--samples", type=int)
    p.add_argument("--quadrature-nodes", type=int)

    p = command("estimate-hitting", "Return time to the single-part state", chain=True)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--reference-replicas", type=int)

    p = command("check-mk", "Integral identities of the correlation densities m_k", pd=True)
    p.add_argument("--k", type=int)
    p.add_argument("--points", type=int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--quadrature-nodes", type=int)

    p = command("enumerate", "Exact one-step law from a finite state (atomic sigma)", chain=True)
    p.add_argument("--partition", type=_json_list, help="JSON array of part sizes")

    p = command("diagnose-support", "Part-count window medians along one trajectory", chain=True)
    p.add_argument("--steps", type=int)

    p = command("test-samplers", "Stick-breaking against truncated-Poisson samples", pd=True)
    p.add_argument("--samples", type=int)
    p.add_argument("--significance", type=float)

    p = command("test-moments", "E[Z_j] against quadrature of m_1", pd=True)
    p.add_argument("--j-values", type=_int_list)
    p.add_argument("--samples", type=int)
    p.add_argument("--quadrature-nodes", type=int)

    p = command("test-uniformity", "KS test of the size-biased part", pd=True)
    p.add_argument("--samples", type=int)
    p.add_argument("--significance", type=float)

    p = command("estimate-theta", "Recover theta from the Z_k balance", chain=True, pd=True)
    p.add_argument("--k", type=int)
    p.add_argument("--samples", type=int)

    return parser


# ==================== Subcommand handlers ====================

def _save_output(config: RunConfig, name: str, theta: Optional[float], document: str,
                 rows: List[Dict[str, Any]]) -> None:
    sigma = None if name == "sample-pd" else config.sigma
    stem = report_stem(name, theta, sigma, config.seed)
    ReportRepository(config.output_dir).save_output(stem, document, rows, config.echo(), config.format)


def _run_sample_pd(config: RunConfig) -> int:
    pd = config.pd_params
    rng = replica_rng(config.seed, 0)
    sampler = sample_pd_stick if config.sampler == "stick" else sample_pd_poisson
    partitions = [sampler(pd, rng) for _ in range(config.n)]
    for partition in partitions:
        print(partition.to_json())
    rows = [{"replica": i, "seed": config.seed, "parts": partition.to_json()} for i, partition in enumerate(partitions)]
    _save_output(config, "sample-pd", config.resolved_theta,
                 json.dumps([partition.to_list() for partition in partitions]), rows)
    return EXIT_PASS


def _run_classify(config: RunConfig) -> int:
    payload = classify(config.sigma, numeric=config.numeric).to_dict()
    print(json.dumps(payload))
    _save_output(config, "classify-sigma", None, json.dumps(payload), [payload])
    return EXIT_PASS


def _run_enumerate(config: RunConfig) -> int:
    if config.partition is None:
        raise ConfigError("enumerate needs --partition")
    table = enumerate_transitions(Partition(config.partition), config.kernel_params, config.sigma)
    print(table.to_json())
    rows = [{"p": outcome.to_json(), "prob": prob} for outcome, prob in table.outcomes]
    rows.append({"p": "lazy", "prob": table.lazy_probability})
    _save_output(config, "enumerate", None, table.to_json(), rows)
    return EXIT_PASS


EXPERIMENTS: Dict[str, Callable[[RunConfig], ExperimentReport]] = {
    "run-chain": lambda c: run_cesaro(
        c.kernel_params, c.sigma, c.steps, c.seed, burn_in=c.burn_in,
        functionals=parse_functionals(c.functionals), replicas=c.replicas, stride=c.stride,
        abs_tol=c.abs_tol, workers=c.workers,
    ),
    "estimate-hitting": lambda c: estimate_hitting_time(
        c.kernel_params, c.sigma, c.max_steps, c.replicas, c.seed,
        reference_replicas=c.reference_replicas, workers=c.workers,
    ),
    "diagnose-support": lambda c: diagnose_support(c.kernel_params, c.sigma, c.steps, c.seed),
    "test-invariance": lambda c: test_invariance_onestep(
        c.pd_params, c.kernel_params, c.sigma, parse_functionals(c.functionals), c.samples, c.seed,
        control=c.control, quadrature_nodes=c.quadrature_nodes, workers=c.workers,
    ),
    "test-reversibility": lambda c: test_reversibility(
        c.pd_params, c.kernel_params, parse_functional(c.f), parse_functional(c.g), c.samples, c.seed,
        sigma=c.sigma, quadrature_nodes=c.quadrature_nodes, workers=c.workers,
    ),
    "test-increments": lambda c: test_increment_identities(
        c.pd_params, c.kernel_params, c.sigma, c.k_values, c.n_vectors, c.samples, c.seed,
        quadrature_nodes=c.quadrature_nodes, thresholds=c.thresholds, workers=c.workers,
    ),
    "check-mk": lambda c: check_mk(
        c.resolved_theta, c.k, c.points, c.seed, tolerance=c.tolerance, quadrature_nodes=c.quadrature_nodes,
    ),
    "test-samplers": lambda c: test_sampler_agreement(
        c.pd_params, c.samples, c.seed, significance=c.significance, workers=c.workers,
    ),
    "test-moments": lambda c: test_moment_identity(
        c.pd_params, c.j_values, c.samples, c.seed, quadrature_nodes=c.quadrature_nodes, workers=c.workers,
    ),
    "test-uniformity": lambda c: test_size_biased_uniformity(
        c.pd_params, c.samples, c.seed, significance=c.significance, workers=c.workers,
    ),
    "estimate-theta": lambda c: estimate_theta(
        c.pd_params, c.k, c.samples, c.seed, sigma=c.sigma, workers=c.workers,
    ),
}

SIGMA_FREE = {"check-mk", "test-samplers", "test-moments", "test-uniformity"}

SIMPLE: Dict[str, Callable[[RunConfig], int]] = {
    "sample-pd": _run_sample_pd,
    "classify-sigma": _run_classify,
    "enumerate": _run_enumerate,
}


def run_experiment(config: RunConfig) -> ExperimentReport:
    """Run the experiment a config names and save its outputs"""
    report = EXPERIMENTS[config.subcommand](config)
    sigma = None if config.subcommand in SIGMA_FREE else config.sigma
    stem = report_stem(report.name, config.resolved_theta, sigma, config.seed)
    ReportRepository(config.output_dir).save_report(report, stem, config.echo(), config.format)
    return report


def _exit_code(report: ExperimentReport) -> int:
    if report.verdict is Verdict.INCONCLUSIVE:
        logger.warning(f"{report.name}: negative control did not separate; verdict inconclusive")
    return EXIT_PASS if report.passed else EXIT_FAIL


# ==================== Entry point ====================

def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        from dotenv import load_dotenv
        load_dotenv()
    except ImportError:
        pass

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_PASS

    flags: Dict[str, Any] = vars(args)
    log_level = flags.pop("log_level") or settings.log_level
    config_file = flags.pop("config_file")
    logging.basicConfig(
        level=getattr(logging, str(log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    logging.captureWarnings(True)

    defaults: Dict[str, Any] = {"seed": 0} if flags["subcommand"] in DETERMINISTIC else {}
    try:
        config = resolve_run_config(defaults, load_config_file(config_file), flags)
        if config.subcommand in SIMPLE:
            return SIMPLE[config.subcommand](config)
        report = run_experiment(config)
    except (ConfigError, SigmaSpecError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except CoagFragError as e:
        logger.error(f"{flags['subcommand']} failed: {e}")
        return EXIT_USAGE

    print(report.to_json())
    return _exit_code(report)


if __name__ == "__main__":
    sys.exit(main())
