# FILE: test_certificates.py

import math

import pytest

from src.certificates import CHECKS, check_euler, numeric_lift_consistency, run_check
from src.model_library import ModelLibrary, load_model


@pytest.mark.parametrize('check', CHECKS)
@pytest.mark.parametrize('name', ModelLibrary().names())
def test_bundled_models_pass_every_check(name, check):
    result = run_check(load_model(name), check)
    assert result.passed, result.details


@pytest.mark.parametrize('N', [32, 64])
def test_boussinesq_trajectories_stay_within_growth_budget(N):
    out = numeric_lift_consistency(load_model('boussinesq'), N=N)
    assert out['growth_bound'] <= math.e * (1 + 1e-12)
    assert out['spectral_radius'] * out['steps'] * out['dt'] <= 1.0 + 1e-12
    assert out['passed'], out['relative_error']


@pytest.mark.parametrize('name', ['elastic_rod', 'allen_cahn'])
def test_euler_check_on_models_with_symmetric_initial_states(name):
    result = check_euler(load_model(name))
    assert result.passed, result.details
