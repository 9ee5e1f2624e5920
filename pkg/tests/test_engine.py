import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skmsaa.engine import (
    CompositeLoss, IterationState, StepSchedule, StepSizeWarning, ergodic_fpr, km_step, regret, run,
)
from skmsaa.errors import CapabilityError, ShapeError, ValidationError
from skmsaa.operators import (
    GradStep, Identity, L1Norm, LeastSquares, Operator, Reflect, Sample, SquaredLoss,
    ZeroIndicator, build_algorithm,
)
from skmsaa.processes import ArProcess, ArProcessSpec, SamplingStrategy, draw_training_set, split_rng


def lasso_instance(seed, d, n=30, lam=0.1):
    rng = np.random.default_rng(seed)
    data = LeastSquares(rng.normal(size=(n, d)), rng.normal(size=n))
    return data, L1Norm(lam)


def deterministic_pgd(data, pen):
    return build_algorithm("PGD", data, pen, 1.0 / data.smoothness())


def soft(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


# -- schedule and single steps --------------------------------------------------

def test_step_schedule():
    s = StepSchedule(0.5)
    assert s(1) == s(1000) == 0.5
    assert s.total(4) == 2.0 and s.tau_min(4) == 0.25
    seq = StepSchedule(sequence=(0.2, 0.5))
    assert seq(1) == 0.2 and seq(2) == seq(9) == 0.5
    assert seq.tau_min(3) == pytest.approx(0.16)
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ValidationError):
            StepSchedule(bad)
    with pytest.raises(ValidationError):
        StepSchedule(sequence=(0.5, 1.0))


@pytest.mark.parametrize("mode", ["raw", "averaged-anchor"])
def test_km_step_identity_leaves_iterate(mode):
    state = IterationState.initial([1.0, -2.0])
    new = km_step(state, Identity(), None, 0.3, mode)
    np.testing.assert_array_equal(new.x, state.x)
    assert new.last_fpr == 0.0 and new.k == 1 and new.samples_consumed == 1


def test_km_step_reflection_through_origin():
    new = km_step(IterationState.initial([4.0]), Reflect(ZeroIndicator(), 1.0), None, 0.5)
    np.testing.assert_array_equal(new.x, [0.0])
    assert new.last_fpr == 64.0


def test_km_step_fixed_anchor():
    s = Sample([1.0, 0.0], 2.0)
    state = IterationState.initial([2.0, 5.0])
    new = km_step(state, GradStep(SquaredLoss(), 0.1), s, 0.5)
    np.testing.assert_array_equal(new.x, state.x)


def test_km_step_validation():
    state = IterationState.initial([1.0])
    with pytest.raises(ValidationError):
        km_step(state, Identity(), None, 1.0)
    with pytest.raises(ValidationError):
        km_step(state, Identity(), None, 0.5, "other")
    with pytest.raises(ShapeError):
        km_step(state, Identity(), Sample([1.0, 2.0], 0.0), 0.5)


def test_modes_agree_on_first_step():
    rng = np.random.default_rng(0)
    s = Sample(rng.normal(size=3), 1.0)
    T = build_algorithm("PGD", SquaredLoss(), L1Norm(0.1), 0.1)
    state = IterationState.initial(rng.normal(size=3))
    a, b = km_step(state, T, s, 0.5, "raw"), km_step(state, T, s, 0.5, "averaged-anchor")
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.x_bar, b.x_bar)


def test_averaged_anchor_uses_ergodic_average():
    T = Reflect(ZeroIndicator(), 1.0)  # T(x) = -x
    state = IterationState(2, np.array([4.0]), np.array([1.0]))
    new = km_step(state, T, None, 0.25, "averaged-anchor")
    np.testing.assert_array_equal(new.x, [0.5])  # anchor 1, (1 - 2 lam) * 1
    np.testing.assert_array_equal(new.x_bar, [1.0 + (0.5 - 1.0) / 3])


# -- run --------------------------------------------------------------------------

def ar_samples(K=200, d=10, seed=0):
    spec = ArProcessSpec.random(d, 3, split_rng(seed, 0))
    samples, _ = draw_training_set(ArProcess(spec), SamplingStrategy("SP"), K, seed)
    return samples, spec.x_true


@pytest.mark.parametrize("mode", ["raw", "averaged-anchor"])
def test_x_bar_is_running_mean(mode):
    samples, x_true = ar_samples()
    T = build_algorithm("PGD", SquaredLoss(), L1Norm(0.01), 0.05)
    state = IterationState.initial(np.zeros(10))
    xs = []
    for s in samples:
        state = km_step(state, T, s, 0.5, mode)
        xs.append(state.x)
    np.testing.assert_allclose(state.x_bar, np.mean(xs, axis=0), rtol=0, atol=5e-13 * len(xs))


def test_run_stops_when_delta_exceeds_initial_fpr():
    samples, _ = ar_samples(50)
    rec = run(build_algorithm("PGD", SquaredLoss(), L1Norm(0.01), 0.05), samples, np.zeros(10), delta=1e6)
    assert rec.status == "converged" and len(rec) == 1 and list(rec.k) == [1]


def test_run_full_budget_without_delta():
    samples, x_true = ar_samples(50)
    rec = run(build_algorithm("PGD", SquaredLoss(), L1Norm(0.01), 0.05), samples, np.zeros(10),
              delta=None, x_true=x_true)
    assert rec.status == "budget-exhausted" and len(rec) == 50
    np.testing.assert_array_equal(rec.k, np.arange(1, 51))
    np.testing.assert_array_equal(rec.samples, np.arange(1, 51))
    assert np.all(np.isnan(rec.regret)) and np.all(np.isfinite(rec.dist))


def test_run_validation():
    with pytest.raises(ValidationError):
        run(Identity(), [], np.zeros(1), delta=0.0)
    with pytest.raises(ValidationError):
        run(Identity(), [], np.zeros(1), radius=-1.0)
    with pytest.raises(ValidationError):
        run(Identity(), [], np.zeros(1), max_iter=0)


def test_run_respects_max_iter_and_draw_counts():
    samples, _ = ar_samples(30)
    rec = run(build_algorithm("SGD", SquaredLoss(), gamma=0.01), samples, np.zeros(10), delta=None,
              max_iter=10, draw_counts=SamplingStrategy.parse("MR-3").cumulative_draws(30))
    assert len(rec) == 10
    np.testing.assert_array_equal(rec.samples, 3 * np.arange(1, 11))


def test_projection_keeps_iterates_in_ball():
    samples, _ = ar_samples(300)
    r = 0.5
    T = build_algorithm("SGD", SquaredLoss(), gamma=0.2)
    rec = run(T, samples, np.full(10, 3.0), radius=r, delta=None, warn_step=False)
    assert np.linalg.norm(rec.x_final) <= r * (1 + 1e-12)
    assert np.linalg.norm(rec.x_bar_final) <= r * (1 + 1e-12)
    assert rec.radius == r


class _Exploding(Operator):
    def __call__(self, x, sample=None):
        if sample.index >= 3:
            raise ValidationError("boom")
        return x + 1.0


def test_run_error_keeps_partial_record():
    samples = [Sample([0.0], 0.0, k) for k in range(1, 6)]
    rec = run(_Exploding(), samples, np.zeros(1), delta=None)
    assert rec.status == "error" and "boom" in rec.message
    assert len(rec) == 2


def test_run_with_builder_and_step_warning():
    samples = [Sample([3.0, 0.0], 1.0, k) for k in range(1, 4)]
    with pytest.warns(StepSizeWarning):
        run(lambda s: GradStep(SquaredLoss(), 0.5), samples, np.zeros(2), delta=None)


def test_run_is_reproducible():
    def once():
        samples, x_true = ar_samples(100, seed=3)
        data = LeastSquares.from_samples(samples)
        loss = CompositeLoss(data, g=L1Norm(0.01))
        return run(build_algorithm("rPRS", SquaredLoss(), L1Norm(0.01), 0.05, 0.7), samples, np.zeros(10),
                   delta=None, x_true=x_true, regret_fn=loss)
    a, b = once(), once()
    for key in ("fpr", "regret", "dist", "samples", "x_final"):
        assert getattr(a, key).tobytes() == getattr(b, key).tobytes()


def test_orthonormal_lasso_reaches_soft_threshold():
    A = np.array([[1.0, 0.0], [0.0, 1.0]]) * math.sqrt(2)  # gram = I
    b = np.array([1.3, -0.2]) * math.sqrt(2)
    data, pen = LeastSquares(A, b), L1Norm(0.5)
    # minimiser of |x|^2 - 2 m'x + 0.5 |x|_1 with m = A'b/n is soft(m, 0.25)
    expect = soft(data.moment, 0.25)
    T = deterministic_pgd(data, pen)
    sample = Sample(np.zeros(2), 0.0)
    rec = run(T, [sample] * 500, np.zeros(2), schedule=StepSchedule(0.9), delta=1e-30)
    assert len(rec) <= 500
    state = IterationState.initial(np.zeros(2))
    for _ in range(500):
        state = km_step(state, T, None, 0.9)
    np.testing.assert_allclose(state.x, expect, atol=1e-8, rtol=0)
    np.testing.assert_allclose(rec.x_final, expect, atol=1e-8, rtol=0)


@pytest.mark.parametrize("seed", range(10))
def test_deterministic_km_fpr_is_monotone(seed):
    d = 2 + seed % 9
    data, pen = lasso_instance(seed, d)
    for T in (deterministic_pgd(data, pen),
              build_algorithm("DRS", data, pen, 0.3),
              build_algorithm("rPRS", data, pen, 0.3, 0.8)):
        rec = run(T, [Sample(np.zeros(d), 0.0)] * 300, np.ones(d), delta=None)
        assert np.all(np.diff(rec.fpr) <= 1e-13 * (1 + rec.fpr[:-1]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_jensen_bound(seed, d):
    data, pen = lasso_instance(seed, d)
    loss = CompositeLoss(data, g=pen)
    samples, _ = draw_training_set(ArProcess(ArProcessSpec.random(d, 1, split_rng(seed))),
                                   SamplingStrategy("SP"), 40, seed)
    T = build_algorithm("PGD", SquaredLoss(), pen, 0.05)
    state = IterationState.initial(np.zeros(d))
    xs = []
    for s in samples:
        state = km_step(state, T, s, 0.5)
        xs.append(state.x)
    assert loss(state.x_bar) <= np.mean([loss(x) for x in xs]) + 1e-9


# -- ergodic FPR and regret ----------------------------------------------------

def test_ergodic_fpr_examples():
    samples = [Sample([0.0], 0.0, k) for k in (1, 2)]
    rec = run(Identity(), samples, np.zeros(1), delta=None, store_residuals=True)
    assert ergodic_fpr(rec) == 0.0
    rec.residuals = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert ergodic_fpr(rec, StepSchedule(0.5)) == pytest.approx(math.sqrt(2) / 2, abs=1e-15)
    rec.residuals = np.array([[3.0, 4.0], [3.0, 4.0]])
    assert ergodic_fpr(rec, StepSchedule(sequence=(0.2, 0.7))) == pytest.approx(5.0, abs=1e-14)
    with pytest.raises(CapabilityError):
        ergodic_fpr(run(Identity(), samples, np.zeros(1), delta=None))


def test_ergodic_fpr_uses_recorded_residuals():
    samples, _ = ar_samples(20)
    rec = run(build_algorithm("PGD", SquaredLoss(), L1Norm(0.01), 0.05), samples, np.zeros(10),
              delta=None, store_residuals=True)
    np.testing.assert_allclose((rec.residuals ** 2).sum(axis=1), rec.fpr, rtol=1e-12)


def test_regret_examples():
    s = [Sample([1.0], 1.0)]
    assert regret([0.0], s, x_ref=[1.0]) == 1.0
    assert regret([0.3], s, x_ref=[0.3]) == 0.0
    with pytest.raises(ValidationError):
        regret([0.0], s)
    with pytest.raises(ValidationError):
        regret([0.0], [], x_ref=[0.0])


def test_regret_nonnegative_against_minimiser():
    from skmsaa.harness.reference import solve_reference

    data, pen = lasso_instance(4, 5)
    x_ref = solve_reference(data, g=pen).x_ref
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert regret(rng.normal(size=5), data, g=pen, x_ref=x_ref) >= -1e-9


def test_composite_loss_matches_direct_sum():
    rng = np.random.default_rng(1)
    samples = [Sample(rng.normal(size=3), rng.normal()) for _ in range(7)]
    loss = CompositeLoss(samples, g=L1Norm(0.4))
    X = rng.normal(size=(5, 3))
    direct = [np.mean([SquaredLoss().value(x, s) for s in samples]) + 0.4 * np.abs(x).sum() for x in X]
    np.testing.assert_allclose(loss(X), direct, rtol=1e-12)
    assert loss(X[0]) == pytest.approx(direct[0], rel=1e-12)
    with pytest.raises(ShapeError):
        loss(np.zeros(2))
    with pytest.raises(CapabilityError):
        CompositeLoss(samples, g=ZeroIndicator())


def test_deviation_measurements():
    samples, _ = ar_samples(40)
    T = build_algorithm("PGD", SquaredLoss(), L1Norm(0.01), 0.05)
    rec = run(T, samples, np.zeros(10), delta=None, x_star=np.zeros(10))
    # recompute sum |T_lam(x^{k-1}) - T_lam(0)| independently
    x, total, biggest = np.zeros(10), 0.0, 0.0
    for s in samples:
        nxt = x + 0.5 * (T(x, s) - x)
        total += np.linalg.norm(nxt - 0.5 * T(np.zeros(10), s))
        biggest = max(biggest, np.linalg.norm(nxt - x))
        x = nxt
    assert rec.deviation_sum == pytest.approx(total, rel=1e-12)
    assert rec.max_step == pytest.approx(biggest, rel=1e-12)
    assert run(T, samples, np.zeros(10), delta=None).deviation_sum is None


# -- CSV ----------------------------------------------------------------------------

def test_run_record_csv(tmp_path):
    samples, x_true = ar_samples(25)
    rec = run(build_algorithm("PGD", SquaredLoss(), L1Norm(0.01), 0.05), samples, np.zeros(10),
              delta=None, x_true=x_true)
    path = tmp_path / "run.csv"
    rec.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["k", "fpr", "regret", "dist", "samples"]
    assert len(rows) == 26
    assert float(rows[-1][1]) == rec.fpr[-1] and float(rows[-1][3]) == rec.dist[-1]
    assert [int(r[0]) for r in rows[1:]] == list(range(1, 26))
    assert open(f"{path}.status").read().startswith("status=budget-exhausted iterations=25")


@pytest.mark.slow
def test_paper_scale_run():
    spec = ArProcessSpec.random(1000, 50, split_rng(0, 0))
    samples, raw = draw_training_set(ArProcess(spec), SamplingStrategy("SP"), 1000, 0)
    rec = run(build_algorithm("PGD", SquaredLoss(), L1Norm(0.01), 0.05), samples, np.zeros(1000),
              delta=None, x_true=spec.x_true, radius=10 * np.linalg.norm(spec.x_true))
    assert rec.status == "budget-exhausted" and len(rec) == 1000 and raw == 1000
    assert rec.dist[-1] < rec.dist[0]
