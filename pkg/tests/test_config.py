"""
Tests for settings, run schemas, exceptions and helpers
"""
import warnings

import numpy as np
import pytest
from pydantic import ValidationError as PydanticValidationError

from pdafem.core.config import Settings
from pdafem.core.exceptions import (
    AppException, ConfigError, ExportError, IncompatibleDataError, InfeasibleError, MeshError,
    SolverError, SpaceMismatchError, ValidationError, handle_exception,
)
from pdafem.schemas.run import ConvergenceRecord, RunConfig
from pdafem.schemas.solver import AdmmConfig
from pdafem.utils.helpers import as_index_array, chunk_ranges, format_float, format_optional, hash_arrays


class TestSettings:

    def test_defaults(self, monkeypatch):
        monkeypatch.delenv("AFEM_THREADS", raising=False)
        settings = Settings(_env_file=None)
        assert settings.AFEM_THREADS == 1
        assert settings.ADMM_ADAPT == "residual_balance"
        assert settings.TOL_FACTOR == 1.0

    def test_environment_override(self, monkeypatch):
        monkeypatch.setenv("AFEM_THREADS", "4")
        monkeypatch.setenv("ADMM_MAX_ITERS", "123")
        settings = Settings(_env_file=None)
        assert settings.AFEM_THREADS == 4
        assert settings.ADMM_MAX_ITERS == 123

    def test_model_config(self):
        assert Settings.model_config["env_file"] == ".env"
        assert Settings.model_config["case_sensitive"] is True
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            Settings(_env_file=None)


class TestRunConfig:

    def test_rof_alpha_defaults(self):
        assert RunConfig(problem="rof", benchmark="square").alpha == 100.0
        assert RunConfig(problem="rof", benchmark="circle").alpha == 10.0
        assert RunConfig(problem="rof", benchmark="circle", alpha=3.0).alpha == 3.0

    def test_plaplace_needs_sigma(self):
        with pytest.raises(PydanticValidationError):
            RunConfig(problem="plaplace", benchmark="lshape")
        config = RunConfig(problem="plaplace", benchmark="lshape", sigma=1.6)
        assert config.alpha is None
        assert config.theta == 0.5

    @pytest.mark.parametrize("kwargs", [
        dict(problem="plaplace", benchmark="circle", sigma=1.6),
        dict(problem="rof", benchmark="lshape"),
        dict(problem="rof", benchmark="square", sigma=2.0),
        dict(problem="plaplace", benchmark="lshape", sigma=1.6, alpha=1.0),
        dict(problem="plaplace", benchmark="lshape", sigma=1.0),
        dict(problem="plaplace", benchmark="lshape", sigma=1.6, solver="primal_dual"),
        dict(problem="rof", benchmark="square", estimator="res"),
        dict(problem="rof", benchmark="square", theta=0.0),
        dict(problem="rof", benchmark="square", theta=1.0),
        dict(problem="rof", benchmark="square", max_dofs=0),
        dict(problem="rof", benchmark="square", rof_weight_gamma=1),
        dict(problem="rof", benchmark="square", dual_space="X"),
    ])
    def test_rejected(self, kwargs):
        with pytest.raises(PydanticValidationError):
            RunConfig(**kwargs)

    def test_record_rows_follow_csv_fields(self):
        record = ConvergenceRecord(level=0, ndof=4, hbar=0.5, E_primal=1.0, D_dual=0.9, eta_pd=0.3)
        assert list(record.csv_row()) == ConvergenceRecord.CSV_FIELDS
        assert record.get("eta_res") is None
        with pytest.raises(PydanticValidationError):
            ConvergenceRecord(level=0, ndof=4, hbar=0.5, E_primal=1.0, D_dual=0.9, eta_pd=-0.1)


class TestAdmmConfig:

    def test_frozen(self):
        assert AdmmConfig.model_config["frozen"] is True
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            config = AdmmConfig(tol=1e-6)
        with pytest.raises(PydanticValidationError):
            config.tol = 1e-3

    def test_bounds(self):
        with pytest.raises(PydanticValidationError):
            AdmmConfig(tau0=0.0)
        with pytest.raises(PydanticValidationError):
            AdmmConfig(adapt="sometimes")
        with pytest.raises(PydanticValidationError):
            AdmmConfig(balance_factor=1.0)


class TestExceptions:

    @pytest.mark.parametrize("exc, code", [
        (ConfigError(), 2),
        (ValidationError(), 2),
        (MeshError(), 2),
        (IncompatibleDataError(), 2),
        (InfeasibleError(), 3),
        (SolverError(), 3),
        (SpaceMismatchError(), 1),
        (ExportError(), 1),
    ])
    def test_exit_codes(self, exc, code):
        assert isinstance(exc, AppException)
        assert handle_exception(exc) == code

    def test_export_error_names_path(self):
        error = ExportError("Cannot write", path="/tmp/out")
        assert error.message == "Cannot write: /tmp/out"
        assert error.path == "/tmp/out"

    def test_infeasible_details(self):
        error = InfeasibleError("too long", worst_index=7, violation=0.25)
        assert error.worst_index == 7
        assert error.violation == 0.25


class TestHelpers:

    def test_format_float_round_trip(self, rng):
        for value in rng.normal(scale=1e3, size=100):
            assert float(format_float(value)) == value
        assert format_optional(None) == ""

    def test_hash_arrays(self):
        a = np.arange(6.0)
        assert hash_arrays(a, "x", 3) == hash_arrays(a.copy(), "x", 3)
        assert hash_arrays(a, "x", 3) != hash_arrays(a.reshape(2, 3), "x", 3)
        assert hash_arrays(a, "x", 3) != hash_arrays(a.astype(np.float32), "x", 3)

    def test_chunk_ranges(self):
        assert chunk_ranges(10, 4) == [(0, 4), (4, 8), (8, 10)]
        assert chunk_ranges(0, 4) == []
        assert chunk_ranges(3, 0) == [(0, 1), (1, 2), (2, 3)]

    def test_as_index_array(self):
        assert as_index_array({3, 1, 2}).tolist() == [1, 2, 3]
        assert as_index_array([4, 4, 0]).dtype == np.int64
