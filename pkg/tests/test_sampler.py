import math

import numpy as np
import pytest

from spheredam.energy import KernelSpec, lsr_energy
from spheredam.geometry import SphereState, alignments, sample_patterns
from spheredam.oracle import OracleSpec, phi_eq
from spheredam.sampler import (
    TrialConfig,
    TrialResult,
    TrialSetupError,
    accept,
    proposal_sigma,
    propose,
    run_trial,
    run_trial_batch,
)

LSE = KernelSpec.lse(1.0)


def _seed(tag: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(1234, spawn_key=(tag,))


def test_trial_config_validation():
    with pytest.raises(ValueError):
        TrialConfig(temperature=0.0, seed=1)
    with pytest.raises(ValueError):
        TrialConfig(temperature=1.0, seed=1, n_samp=0)
    with pytest.raises(ValueError):
        TrialConfig(temperature=1.0, seed=1, n_eq=-1)
    with pytest.raises(ValueError):
        TrialConfig(temperature=1.0, seed=1, phi_init_range=(0.0, 0.5))
    with pytest.raises(ValueError):
        TrialConfig(temperature=1.0, seed=1, phi_init_range=(0.9, 1.2))


def test_proposal_sigma_formula():
    assert proposal_sigma(1.0, 100) == pytest.approx(0.24)
    assert proposal_sigma(0.5, 25) == pytest.approx(2.4 * 0.5 / 5.0)


def test_propose_stays_on_sphere_and_scales_with_sigma():
    rng = np.random.default_rng(0)
    n = 100
    state = sample_patterns(n, 1, seed=9).pattern(0)
    t = 1e-3
    sigma = proposal_sigma(t, n)
    moves = []
    for _ in range(200):
        cand = propose(state, t, rng)
        assert abs(float(np.sum(cand.components**2)) / n - 1.0) <= 1e-10
        moves.append(float(np.linalg.norm(cand.components - state.components)))
    # displacement is O(sigma * sqrt(N))
    assert 0.5 * sigma * math.sqrt(n) < np.mean(moves) < 1.5 * sigma * math.sqrt(n)


def test_propose_renormalization_drift_bounded():
    rng = np.random.default_rng(4)
    n = 50
    state = sample_patterns(n, 1, seed=12).pattern(0)
    for _ in range(100_000):
        state = propose(state, 0.5, rng)
    assert abs(float(np.sum(state.components**2)) / n - 1.0) <= 1e-8


def test_accept_certain_cases():
    rng = np.random.default_rng(2)
    assert all(accept(0.0, 1.0, True, rng) for _ in range(100))
    assert all(accept(-5.0, 0.3, True, rng) for _ in range(100))
    assert not any(accept(-5.0, 1.0, False, rng) for _ in range(100))


def test_accept_probability_half_at_t_log2():
    rng = np.random.default_rng(7)
    t = 0.7
    draws = 100_000
    hits = sum(accept(t * math.log(2.0), t, True, rng) for _ in range(draws))
    p = hits / draws
    sigma3 = 3.0 * math.sqrt(0.25 / draws)
    assert abs(p - 0.5) <= sigma3


def test_zero_temperature_trial_pins_alignment():
    patterns = sample_patterns(40, 1, seed=3)
    cfg = TrialConfig(temperature=1e-6, seed=_seed(1), n_eq=500, n_samp=500,
                      phi_init_range=(0.999, 0.9995))
    result = run_trial(patterns, LSE, cfg)
    assert result.mean_alignment > 0.999
    assert result.wall_rejections == 0


def test_trial_mean_matches_boltzmann_oracle():
    # N=3, single pattern: long chain against the quadrature prediction
    patterns = sample_patterns(3, 1, seed=21)
    cfg = TrialConfig(temperature=0.5, seed=_seed(2), n_eq=10_000, n_samp=200_000)
    result = run_trial(patterns, LSE, cfg)
    reference = phi_eq(OracleSpec(n=3, temperature=0.5, kernel=LSE))
    assert abs(result.mean_alignment - reference) < 0.02


def test_batch_is_bitwise_equal_to_solo_runs():
    n, m = 20, 50
    sets = [sample_patterns(n, m, seed=100 + i) for i in range(3)]
    configs = [
        TrialConfig(temperature=t, seed=_seed(10 + i), n_eq=200, n_samp=100)
        for i, t in enumerate((0.2, 0.7, 1.5))
    ]
    batch = run_trial_batch(sets, LSE, configs)
    for ps, cfg, from_batch in zip(sets, configs, batch):
        solo = run_trial(ps, LSE, cfg)
        assert solo == from_batch  # exact float equality, field by field


def test_batch_with_shared_patterns_is_bitwise_stable():
    n, m = 15, 30
    shared = sample_patterns(n, m, seed=5)
    configs = [TrialConfig(temperature=0.4, seed=_seed(20 + i), n_eq=150, n_samp=50)
               for i in range(4)]
    batch = run_trial_batch(shared, LSE, configs)
    for cfg, from_batch in zip(configs, batch):
        assert run_trial(shared, LSE, cfg) == from_batch


def test_batch_of_one_equals_run_trial():
    ps = sample_patterns(12, 8, seed=6)
    cfg = TrialConfig(temperature=0.9, seed=_seed(30), n_eq=100, n_samp=40)
    assert run_trial_batch(ps, LSE, [cfg]) == [run_trial(ps, LSE, cfg)]


def test_lsr_setup_error_after_retries():
    # phi_c = 0.98 but phi_init is capped far below it: no valid start
    spec = KernelSpec.lsr(b=50.0)
    ps = sample_patterns(60, 5, seed=8)
    cfg = TrialConfig(temperature=0.5, seed=_seed(40), n_eq=10, n_samp=10,
                      phi_init_range=(0.75, 0.76))
    with pytest.raises(TrialSetupError) as err:
        run_trial(ps, spec, cfg)
    assert err.value.attempts == 100
    assert "b = 50" in str(err.value)
    assert "phi_c = 0.98" in str(err.value)


def test_batch_continues_past_failed_trial():
    spec = KernelSpec.lsr(b=50.0)
    ps = sample_patterns(60, 5, seed=9)
    bad = TrialConfig(temperature=0.5, seed=_seed(41), n_eq=20, n_samp=20,
                      phi_init_range=(0.75, 0.76))
    good = TrialConfig(temperature=0.5, seed=_seed(42), n_eq=20, n_samp=20,
                       phi_init_range=(0.995, 1.0))
    out = run_trial_batch(ps, spec, [bad, good])
    assert isinstance(out[0], TrialSetupError)
    assert isinstance(out[1], TrialResult)
    # the surviving trial is unaffected by its failed batch mate
    assert out[1] == run_trial(ps, spec, good)


def test_lsr_chain_stays_in_support():
    spec = KernelSpec.lsr(b=3.41)
    ps = sample_patterns(50, 200, seed=10)
    probes = []
    cfg = TrialConfig(temperature=1.0, seed=_seed(50), n_eq=500, n_samp=500)
    result = run_trial(ps, spec, cfg,
                       trace=lambda step, phi1, ev, acc, state:
                           probes.append(state.copy()) if step % 250 == 0 else None)
    assert result.wall_rejections > 0  # the wall actually engaged at this load
    for state in probes:
        a = alignments(SphereState(state), ps)
        assert lsr_energy(a, 50, spec).in_support


def test_energy_bookkeeping_matches_recomputation():
    ps = sample_patterns(30, 100, seed=11)
    spec = KernelSpec.lse(1.0)
    captured = {}

    def hook(step, phi1, energy_value, accepted, state):
        if step == 400:
            captured["state"] = state.copy()
            captured["energy"] = energy_value

    run_trial(ps, spec, TrialConfig(temperature=0.6, seed=_seed(60),
                                    n_eq=300, n_samp=200), trace=hook)
    from spheredam.energy import lse_energy
    a = alignments(SphereState(captured["state"]), ps)
    recomputed = lse_energy(a, 30, spec).value
    assert recomputed == pytest.approx(captured["energy"], rel=1e-8)


def test_trace_row_count_and_fields():
    ps = sample_patterns(10, 3, seed=13)
    rows = []
    cfg = TrialConfig(temperature=0.5, seed=_seed(70), n_eq=25, n_samp=17)
    run_trial(ps, LSE, cfg,
              trace=lambda *args: rows.append(args))
    assert len(rows) == 25 + 17
    assert [r[0] for r in rows] == list(range(1, 43))
    assert all(np.isfinite(r[1]) and np.isfinite(r[2]) for r in rows)


def test_acceptance_rate_decreases_with_temperature():
    n, m = 50, 1
    k = 32
    rates = {}
    for t in (0.1, 2.0):
        configs = [TrialConfig(temperature=t, seed=_seed(80 + i), n_eq=200, n_samp=100)
                   for i in range(k)]
        results = run_trial_batch(
            lambda i: sample_patterns(n, m, seed=200 + i), LSE, configs)
        rates[t] = np.mean([r.acceptance_rate for r in results])
    assert rates[0.1] > rates[2.0]


def test_mean_alignment_within_bounds():
    ps = sample_patterns(25, 40, seed=14)
    cfg = TrialConfig(temperature=1.0, seed=_seed(90), n_eq=100, n_samp=300)
    result = run_trial(ps, LSE, cfg)
    assert -1.0 <= result.mean_alignment <= 1.0
    assert 0.0 <= result.acceptance_rate <= 1.0
