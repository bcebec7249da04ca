"""
Convergence Experiments
Uniform and adaptive runs of every benchmark with fitted convergence rates
"""
import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Tuple

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from pdafem.core.exceptions import AppException
from pdafem.schemas.run import RunConfig
from pdafem.services.afem_service import afem_service
from pdafem.utils.logger import logger


EXPERIMENTS: Dict[str, dict] = {
    "lshape_sigma1.6": {"problem": "plaplace", "benchmark": "lshape", "sigma": 1.6, "estimator": "both"},
    "lshape_sigma1.2": {"problem": "plaplace", "benchmark": "lshape", "sigma": 1.2, "estimator": "both"},
    "square_dC": {"problem": "rof", "benchmark": "square", "dual_space": "dC"},
    "square_C": {"problem": "rof", "benchmark": "square", "dual_space": "C"},
    "circle_dC": {"problem": "rof", "benchmark": "circle", "dual_space": "dC"},
    "circle_C": {"problem": "rof", "benchmark": "circle", "dual_space": "C"},
}


def run_one(name: str, mode: str, max_dofs: int, out_root: str) -> Tuple[str, str, Dict[str, float]]:
    """Run one experiment and fit the rates of its estimator and error columns"""
    config = RunConfig(
        **EXPERIMENTS[name],
        refine_mode=mode,
        max_dofs=max_dofs,
        out_dir=Path(out_root) / f"{name}_{mode}",
        export_levels=False
    )
    records = afem_service.run(config)
    rates = {}
    for field in ("eta_pd", "eta_res", "error", "ubar_error"):
        try:
            rates[field] = afem_service.fit_rate(records, field)
        except AppException:
            continue
    return name, mode, rates


def main():
    parser = argparse.ArgumentParser(description="Reproduce the convergence experiments")
    parser.add_argument("--max-dofs", type=int, default=50_000)
    parser.add_argument("--out", default="experiments")
    parser.add_argument("--only", nargs="*", choices=sorted(EXPERIMENTS), default=None)
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args()

    names = args.only or sorted(EXPERIMENTS)
    jobs: List[Tuple[str, str]] = [(name, mode) for name in names for mode in ("uniform", "adaptive")]

    logger.info("=" * 60)
    logger.info(f"Running {len(jobs)} experiments up to {args.max_dofs} dofs")
    logger.info("=" * 60)

    with ProcessPoolExecutor(max_workers=args.workers) as pool:
        futures = [pool.submit(run_one, name, mode, args.max_dofs, args.out) for name, mode in jobs]
        results = [f.result() for f in futures]

    for name, mode, rates in results:
        summary = ", ".join(f"{field} {rate:+.3f}" for field, rate in rates.items())
        logger.info(f"{name:>16} {mode:>8}: {summary}")


if __name__ == "__main__":
    main()
