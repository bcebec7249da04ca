"""
Command-Line Entry Point
Runs adaptive primal-dual computations and writes their convergence history
"""
import argparse
import sys
from typing import List, Optional

from pydantic import ValidationError as PydanticValidationError

from pdafem import __version__
from pdafem.core.config import settings
from pdafem.core.exceptions import AppException, ConfigError, handle_exception
from pdafem.schemas.run import RunConfig
from pdafem.services.afem_service import afem_service
from pdafem.utils.logger import logger


DUAL_SPACES = {"c": "C", "dc": "dC"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="afem",
        description=(
            "Adaptive finite elements driven by primal-dual gap estimators\n"
            "for the p-Laplace and ROF benchmarks."
        ),
        epilog=(
            "examples:\n"
            "  afem --problem plaplace --example lshape --sigma 1.6 --refine adaptive --max-dofs 50000 --out out/lshape\n"
            "  afem --problem rof --example circle --refine uniform --max-dofs 20000 --out out/circle"
        ),
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser.add_argument("--problem", required=True, choices=["plaplace", "rof"])
    parser.add_argument("--example", required=True, choices=["lshape", "square", "circle"],
                        help="benchmark (lshape for plaplace, square/circle for rof)")
    parser.add_argument("--sigma", type=float, default=None, help="p-Laplace exponent in (1, 6)")
    parser.add_argument("--alpha", type=float, default=None,
                        help="ROF fidelity weight (default 100 for square, 10 for circle)")
    parser.add_argument("--refine", required=True, choices=["uniform", "adaptive"])
    parser.add_argument("--theta", type=float, default=0.5, help="Doerfler bulk parameter")
    parser.add_argument("--estimator", choices=["pd", "res", "both"], default="pd",
                        help="estimator driving the marking (res: residual, p-Laplace only)")
    parser.add_argument("--dual-space", type=str.lower, choices=sorted(DUAL_SPACES), default="dc",
                        help="ROF dual space: continuous (c) or hybrid discontinuous (dc)")
    parser.add_argument("--max-dofs", type=int, required=True, help="stop once the mesh has more nodes")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--solver", choices=["admm", "primal_dual"], default="admm",
                        help="ROF primal solver")
    parser.add_argument("--gamma", type=int, choices=[0, 2], default=0,
                        help="exponent of the h_T weights in the ROF splittings")
    parser.add_argument("--initial-refinements", type=int, default=2)
    parser.add_argument("--max-levels", type=int, default=60)
    parser.add_argument("--reference-energy", action="store_true",
                        help="compute (or load) a fine-mesh reference energy")
    parser.add_argument("--no-level-files", action="store_true", help="only write convergence.csv")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Validated RunConfig from parsed arguments"""
    try:
        return RunConfig(
            problem=args.problem,
            benchmark=args.example,
            sigma=args.sigma,
            alpha=args.alpha,
            refine_mode=args.refine,
            theta=args.theta,
            estimator=args.estimator,
            dual_space=DUAL_SPACES[args.dual_space],
            max_dofs=args.max_dofs,
            out_dir=args.out,
            initial_refinements=args.initial_refinements,
            max_levels=args.max_levels,
            rof_weight_gamma=args.gamma,
            solver=args.solver,
            reference_energy=args.reference_energy,
            export_levels=not args.no_level_files
        )
    except PydanticValidationError as e:
        details = "; ".join(err["msg"] for err in e.errors())
        raise ConfigError(f"Invalid run configuration: {details}")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        logger.info(f"{settings.APP_NAME} {__version__}: {config.problem}/{config.benchmark}, {config.refine_mode} refinement")
        records = afem_service.run(config)
        if records:
            last = records[-1]
            logger.info(f"Finished after {len(records)} levels: ndof {last.ndof}, eta {last.eta_pd:.6e}")
        else:
            logger.warning("No level fits into the dof budget")
        return 0
    except AppException as e:
        logger.error(e.message)
        return handle_exception(e)


if __name__ == "__main__":
    sys.exit(main())
