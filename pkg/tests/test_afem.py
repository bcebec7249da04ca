"""
Tests for the adaptive loop, rate fitting, reference energies and the CLI
"""
from functools import lru_cache

import numpy as np
import pytest

from pdafem.core.exceptions import ConfigError, ValidationError
from pdafem.fem.mesh import uniform_refine
from pdafem.main import build_parser, config_from_args, main
from pdafem.problems.benchmarks import RofBenchmark
from pdafem.problems.plaplace import PLaplaceProblem
from pdafem.problems.registry import problem_registry
from pdafem.problems.rof import RofProblem
from pdafem.schemas.run import ConvergenceRecord, RunConfig
from pdafem.services.afem_service import ROF_OSC_CONSTANT, afem_service, fitted_slope
from pdafem.services.reference_service import REFINEMENT_FACTOR, ReferenceService, reference_service


REQUIRED_COLUMNS = [
    "level", "ndof", "hbar", "E_primal", "D_dual", "eta_pd", "eta_res",
    "error", "osc", "iters_primal", "iters_dual",
]


def synthetic_records(ndofs, etas):
    return [
        ConvergenceRecord(level=i, ndof=n, hbar=n ** -0.5, E_primal=1.0, D_dual=0.5, eta_pd=eta)
        for i, (n, eta) in enumerate(zip(ndofs, etas))
    ]


class TestRateFitting:

    def test_power_law(self):
        ndofs = [100, 250, 800, 2000, 7000, 20000]
        records = synthetic_records(ndofs, [3.0 * n ** -0.5 for n in ndofs])
        assert afem_service.fit_rate(records) == pytest.approx(-0.5, abs=1e-12)

    def test_two_points(self):
        assert fitted_slope([100, 400], [0.1, 0.05]) == pytest.approx(np.log(0.5) / np.log(4.0))

    def test_constant_field(self):
        records = synthetic_records([10, 20, 40, 80], [0.3] * 4)
        assert afem_service.fit_rate(records) == pytest.approx(0.0, abs=1e-12)

    def test_uses_last_half(self):
        ndofs = [10, 20, 40, 80, 160, 320]
        etas = [1.0, 1.0, 1.0, 80 ** -1.0, 160 ** -1.0, 320 ** -1.0]
        assert afem_service.fit_rate(synthetic_records(ndofs, etas)) == pytest.approx(-1.0, abs=1e-12)

    def test_too_few_records(self):
        with pytest.raises(ValidationError):
            afem_service.fit_rate(synthetic_records([10, 20, 40], [1.0, 0.5, 0.25]))

    def test_unknown_and_missing_fields(self):
        records = synthetic_records([10, 20, 40, 80], [1.0, 0.5, 0.25, 0.125])
        with pytest.raises(ValidationError):
            afem_service.fit_rate(records, "nonsense")
        with pytest.raises(ValidationError):
            afem_service.fit_rate(records, "eta_res")

    def test_nonpositive_values(self):
        with pytest.raises(ValidationError):
            fitted_slope([10, 20], [1.0, 0.0])


class TestRegistry:

    def test_benchmarks(self):
        assert problem_registry.get_benchmarks() == ["circle", "lshape", "square"]

    def test_create(self):
        config = RunConfig(problem="rof", benchmark="square", dual_space="C", initial_refinements=1)
        mesh = problem_registry.initial_mesh(config)
        problem = problem_registry.create(config, mesh)
        assert isinstance(problem, RofProblem)
        assert problem.dual_kind == "C"
        assert problem.alpha == 100.0
        assert mesh.n_elements == 4

        config = RunConfig(problem="plaplace", benchmark="lshape", sigma=1.6, initial_refinements=0)
        problem = problem_registry.create(config, problem_registry.initial_mesh(config))
        assert isinstance(problem, PLaplaceProblem)
        assert problem.benchmark.sigma == 1.6


class TestAdaptiveLoop:

    def test_uniform_rof_circle(self):
        config = RunConfig(problem="rof", benchmark="circle", refine_mode="uniform", max_dofs=100)
        records = afem_service.run(config)
        assert len(records) >= 3
        assert [r.level for r in records] == list(range(len(records)))
        for before, after in zip(records, records[1:]):
            assert after.n_elements == 2 * before.n_elements
            assert after.ndof > before.ndof
        for record in records:
            assert record.ndof <= 100
            assert record.E_primal >= record.D_dual - 1e-10
            assert record.eta_pd ** 2 == pytest.approx(record.E_primal - record.D_dual, rel=1e-6, abs=1e-10)
            assert record.error is not None and record.ubar_error is not None
            assert record.jump is not None
            assert record.eta_res is None
            assert record.error ** 2 <= record.eta_pd ** 2 + ROF_OSC_CONSTANT * record.osc

    def test_adaptive_plaplace_reports_both_estimators(self):
        config = RunConfig(
            problem="plaplace", benchmark="lshape", sigma=1.6, estimator="both",
            initial_refinements=1, max_dofs=120
        )
        results = list(afem_service.iterate(config))
        assert len(results) >= 2
        for result in results:
            record = result.record
            assert record.eta_res is not None and record.eta_res > 0
            assert record.eta_com == min(record.eta_pd, record.eta_res)
            assert record.eta_res >= record.eta_pd
            assert record.error is not None
            assert record.p_norm is not None and record.p_norm > 0
            assert result.marked is not None and 0 < len(result.marked) <= result.mesh.n_elements
        # adaptive steps refine only part of the mesh
        assert any(len(r.marked) < r.mesh.n_elements for r in results)

    def test_max_levels(self):
        config = RunConfig(problem="rof", benchmark="square", refine_mode="uniform", max_dofs=10_000, max_levels=2)
        assert len(afem_service.run(config)) == 2

    def test_budget_below_first_mesh(self):
        config = RunConfig(problem="rof", benchmark="square", max_dofs=5)
        assert afem_service.run(config) == []

    def test_primal_dual_solver(self):
        config = RunConfig(problem="rof", benchmark="square", solver="primal_dual", max_dofs=9)
        records = afem_service.run(config)
        assert len(records) == 1
        assert records[0].eta_pd >= 0

    def test_plaplace_energy_reliability_on_every_level(self, monkeypatch, tmp_path):
        monkeypatch.setattr(reference_service, "cache_dir", tmp_path)
        config = RunConfig(
            problem="plaplace", benchmark="lshape", sigma=1.6, initial_refinements=1,
            max_dofs=40, reference_energy=True
        )
        records = afem_service.run(config)
        assert len(records) >= 2
        for record in records:
            assert record.E_ref is not None
            assert record.E_primal - record.E_ref <= record.eta_pd ** 2 + 1e-8
            assert record.D_dual <= record.E_ref + 1e-8

        entries = sorted(
            reference_service.load(path.stem).n_elements for path in tmp_path.glob("*.json")
        )
        assert entries == sorted(REFINEMENT_FACTOR * record.n_elements for record in records)

    def test_circle_reference_energy_is_exact(self):
        config = RunConfig(problem="rof", benchmark="circle", reference_energy=True, max_dofs=9)
        records = afem_service.run(config)
        assert records[0].E_ref == pytest.approx(0.8 * np.pi)

    def test_csv_and_level_files(self, tmp_path):
        config = RunConfig(problem="rof", benchmark="square", refine_mode="uniform", max_dofs=30, out_dir=tmp_path)
        records = afem_service.run(config)
        lines = (tmp_path / "convergence.csv").read_text().splitlines()
        assert lines[0].split(",")[:len(REQUIRED_COLUMNS)] == REQUIRED_COLUMNS
        assert len(lines) == len(records) + 1
        for level in range(len(records)):
            assert (tmp_path / f"mesh_{level:03d}.txt").exists()
            assert (tmp_path / f"level_{level:03d}.vtk").exists()

    def test_rerun_is_byte_identical(self, tmp_path):
        contents = []
        for name in ("first", "second"):
            config = RunConfig(
                problem="rof", benchmark="circle", refine_mode="adaptive", max_dofs=60,
                out_dir=tmp_path / name, export_levels=False
            )
            afem_service.run(config)
            contents.append((tmp_path / name / "convergence.csv").read_bytes())
        assert contents[0] == contents[1]
        assert not list((tmp_path / "first").glob("*.vtk"))


class TestReferenceService:

    def test_cached_on_disk(self, tmp_path):
        service = ReferenceService(cache_dir=tmp_path)
        problem = RofProblem.from_benchmark(RofBenchmark("square"))
        energy = service.reference_energy(problem, target_elements=2)
        files = list(tmp_path.glob("*.json"))
        assert len(files) == 1

        entry = service.load(files[0].stem)
        assert entry.energy == energy
        assert entry.n_elements >= 16 * 2
        assert service.reference_energy(problem, target_elements=2) == energy

    def test_corrupted_cache_is_recomputed(self, tmp_path):
        service = ReferenceService(cache_dir=tmp_path)
        problem = RofProblem.from_benchmark(RofBenchmark("square"))
        energy = service.reference_energy(problem, target_elements=1)
        path = next(tmp_path.glob("*.json"))
        path.write_text("{not json")
        assert service.load(path.stem) is None
        assert service.reference_energy(problem, target_elements=1) == pytest.approx(energy)

    def test_key_depends_on_mesh(self):
        service = ReferenceService()
        problem = RofProblem.from_benchmark(RofBenchmark("square"))
        finer = problem.on_mesh(uniform_refine(problem.mesh, 1))
        assert service.cache_key(problem, 3) != service.cache_key(finer, 3)
        assert service.cache_key(problem, 3) != service.cache_key(problem, 4)

    def test_key_depends_on_data(self, fine_lshape):
        service = ReferenceService()
        sourced = PLaplaceProblem(fine_lshape, 2.0, source=lambda x: np.ones(x.shape[:-1]))
        plain = PLaplaceProblem(fine_lshape, 2.0)
        assert service.cache_key(sourced, 2) != service.cache_key(plain, 2)


class TestCli:

    def test_success(self, tmp_path):
        code = main([
            "--problem", "rof", "--example", "square", "--refine", "uniform",
            "--max-dofs", "30", "--out", str(tmp_path), "--dual-space", "C"
        ])
        assert code == 0
        header = (tmp_path / "convergence.csv").read_text().splitlines()[0]
        assert header.startswith(",".join(REQUIRED_COLUMNS))

    @pytest.mark.parametrize("extra", [
        ["--problem", "rof", "--example", "square", "--sigma", "1.6"],
        ["--problem", "plaplace", "--example", "lshape"],
        ["--problem", "plaplace", "--example", "square", "--sigma", "1.6"],
        ["--problem", "rof", "--example", "circle", "--alpha", "-1"],
        ["--problem", "rof", "--example", "circle", "--theta", "1.5"],
    ])
    def test_config_errors(self, tmp_path, extra):
        code = main(extra + ["--refine", "adaptive", "--max-dofs", "50", "--out", str(tmp_path)])
        assert code == 2

    def test_config_error_type(self, tmp_path):
        args = build_parser().parse_args([
            "--problem", "plaplace", "--example", "lshape", "--refine", "uniform",
            "--max-dofs", "10", "--out", str(tmp_path)
        ])
        with pytest.raises(ConfigError):
            config_from_args(args)

    def test_dual_space_case_insensitive(self, tmp_path):
        args = build_parser().parse_args([
            "--problem", "rof", "--example", "circle", "--refine", "uniform",
            "--max-dofs", "10", "--out", str(tmp_path), "--dual-space", "DC"
        ])
        assert config_from_args(args).dual_space == "dC"

    def test_unknown_choice_exits(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            main(["--problem", "heat", "--example", "square", "--refine", "uniform",
                  "--max-dofs", "10", "--out", str(tmp_path)])
        assert info.value.code == 2


@lru_cache(maxsize=None)
def benchmark_records(benchmark, refine_mode, sigma=None, dual_space="dC", max_dofs=20_000):
    """Records of one benchmark run, shared by the rate tests"""
    if benchmark == "lshape":
        config = RunConfig(
            problem="plaplace", benchmark=benchmark, sigma=sigma, estimator="both",
            refine_mode=refine_mode, max_dofs=max_dofs
        )
    else:
        config = RunConfig(
            problem="rof", benchmark=benchmark, dual_space=dual_space, refine_mode=refine_mode, max_dofs=max_dofs
        )
    return tuple(afem_service.run(config))


@pytest.mark.slow
class TestConvergenceRates:

    @pytest.mark.parametrize("sigma", [1.6, 1.2])
    def test_lshape_adaptive_rate(self, sigma):
        records = benchmark_records("lshape", "adaptive", sigma, max_dofs=50_000)
        assert afem_service.fit_rate(records, "eta_pd") == pytest.approx(-0.5, abs=0.07)
        assert afem_service.fit_rate(records, "error") == pytest.approx(-0.5, abs=0.07)

    @pytest.mark.parametrize("sigma", [1.6, 1.2])
    def test_lshape_uniform_rate_is_worse(self, sigma):
        adaptive = benchmark_records("lshape", "adaptive", sigma, max_dofs=50_000)
        uniform = benchmark_records("lshape", "uniform", sigma, max_dofs=50_000)
        for field in ("eta_pd", "error"):
            assert afem_service.fit_rate(uniform, field) >= afem_service.fit_rate(adaptive, field) + 0.08

    @pytest.mark.parametrize("sigma", [1.6, 1.2])
    def test_lshape_residual_estimator_is_larger(self, sigma):
        for record in benchmark_records("lshape", "adaptive", sigma, max_dofs=50_000):
            assert record.eta_res >= record.eta_pd

    @pytest.mark.parametrize("sigma", [1.6, 1.2])
    def test_lshape_efficiency_index_stays_bounded(self, sigma):
        records = benchmark_records("lshape", "adaptive", sigma, max_dofs=50_000)[3:]
        ratios = np.array([record.eta_pd / record.error for record in records])
        assert ratios.max() <= 4.0 * ratios.min()

    @pytest.mark.parametrize("sigma", [1.6, 1.2])
    def test_lshape_energy_reliability(self, sigma, monkeypatch, tmp_path):
        monkeypatch.setattr(reference_service, "cache_dir", tmp_path)
        config = RunConfig(problem="plaplace", benchmark="lshape", sigma=sigma, max_dofs=600, reference_energy=True)
        records = afem_service.run(config)
        assert len(records) >= 4
        for record in records:
            assert record.E_primal - record.E_ref <= record.eta_pd ** 2 + 1e-8

    def test_marking_concentrates_at_reentrant_corner(self):
        config = RunConfig(problem="plaplace", benchmark="lshape", sigma=1.2, max_dofs=3000)
        near = total = 0
        for result in afem_service.iterate(config):
            mesh = result.mesh
            centroids = mesh.nodes[mesh.elements[result.marked.indices]].mean(axis=1)
            near += int((np.hypot(centroids[:, 0], centroids[:, 1]) < 0.25).sum())
            total += len(result.marked)
        assert total > 0
        assert near >= 0.5 * total

    @pytest.mark.parametrize("refine_mode", ["adaptive", "uniform"])
    def test_circle_energy_bracket_and_reliability(self, refine_mode):
        exact = 0.8 * np.pi
        for record in benchmark_records("circle", refine_mode):
            assert record.E_primal >= exact - ROF_OSC_CONSTANT * record.osc
            assert record.D_dual <= exact + ROF_OSC_CONSTANT * record.osc
            assert record.error ** 2 <= record.eta_pd ** 2 + ROF_OSC_CONSTANT * record.osc

    def test_circle_rates(self):
        assert afem_service.fit_rate(benchmark_records("circle", "adaptive"), "error") == pytest.approx(-0.31, abs=0.06)
        assert afem_service.fit_rate(benchmark_records("circle", "uniform"), "error") == pytest.approx(-0.22, abs=0.06)

    def test_circle_ubar_error_decreases(self):
        errors = [record.ubar_error for record in benchmark_records("circle", "adaptive")[-4:]]
        assert all(after < before for before, after in zip(errors, errors[1:]))

    def test_square_rates(self):
        continuous = afem_service.fit_rate(benchmark_records("square", "adaptive", dual_space="C"))
        hybrid = afem_service.fit_rate(benchmark_records("square", "adaptive", dual_space="dC"))
        uniform = afem_service.fit_rate(benchmark_records("square", "uniform"))
        assert continuous == pytest.approx(-0.38, abs=0.06)
        assert hybrid == pytest.approx(-0.40, abs=0.06)
        assert abs(continuous - hybrid) <= 0.05
        assert uniform == pytest.approx(-0.24, abs=0.05)
