import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventcausal.data import EventDataset, SubjectPath
from eventcausal.simulation import (
    builtin_two_group,
    constant_intensity,
    intervene,
    simulate_system,
)
from eventcausal.weighting import (
    CumulativeHazard,
    EmptyGroup,
    NegativeRho,
    NonPositiveBandwidth,
    RatioProcess,
    RhoBoundExceeded,
    TruncatedWeights,
    WeightTrajectory,
    combined_weights,
    dataset_exact_weights,
    default_bandwidth,
    estimate_weights_ahw,
    exact_weights,
    likelihood_contribution,
    nelson_aalen,
    theta_ratio,
    weight_diagnostics,
    write_weights_csv,
)


def make_dataset(first_times, censor_times=None, horizon=5.0, group=None):
    paths = []
    for i, t in enumerate(first_times):
        c = () if censor_times is None or not np.isfinite(censor_times[i]) else (censor_times[i],)
        jumps = {"N": () if not np.isfinite(t) else (t,), "C": c}
        paths.append(SubjectPath(i, {} if group is None else {"G": group[i]}, jumps))
    return EventDataset.from_paths(paths, horizon, "C")


# -- Nelson-Aalen -------------------------------------------------------------------------


def test_nelson_aalen_single_subject():
    A = nelson_aalen(make_dataset([1.0]), "N")
    assert A(0.999) == 0 and A(1.0) == 1 and A(3.0) == 1


def test_nelson_aalen_two_subjects():
    A = nelson_aalen(make_dataset([1.0, 2.0]), "N")
    assert A.times.tolist() == [1.0, 2.0]
    assert A.increments.tolist() == [0.5, 1.0]


def test_nelson_aalen_no_events():
    A = nelson_aalen(make_dataset([np.inf, np.inf]), "N")
    assert A(10.0) == 0 and len(A.times) == 0


def test_nelson_aalen_censoring_removes_from_risk_set():
    # subject 1 censored at 0.5 leaves only subject 0 at risk at 1.0
    A = nelson_aalen(make_dataset([1.0, 2.0], [np.inf, 0.5]), "N")
    assert A.times.tolist() == [1.0] and A.increments.tolist() == [1.0]


def test_nelson_aalen_empty_group():
    with pytest.raises(EmptyGroup):
        nelson_aalen(make_dataset([1.0]), "N", np.zeros(1, dtype=bool))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0.01, 5.0), st.floats(0.01, 6.0)), min_size=1, max_size=30),
       st.randoms(use_true_random=False), st.integers(2, 4))
def test_nelson_aalen_order_and_duplication(rows, rnd, k):
    first = [r[0] for r in rows]
    cens = [r[1] for r in rows]
    ds = make_dataset(first, cens)
    A = nelson_aalen(ds, "N")
    perm = list(range(len(rows)))
    rnd.shuffle(perm)
    Ap = nelson_aalen(ds.take(perm), "N")
    Ad = nelson_aalen(ds.take(np.tile(np.arange(len(rows)), k)), "N")
    np.testing.assert_array_equal(A.times, Ap.times)
    np.testing.assert_allclose(A.increments, Ap.increments, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(A.times, Ad.times)
    np.testing.assert_allclose(A.increments, Ad.increments, rtol=1e-15)


# -- theta ---------------------------------------------------------------------------------


def test_theta_identical_hazards():
    A = CumulativeHazard([0.1, 0.4, 0.7], [0.2, 0.3, 0.1])
    th = theta_ratio(A, A, 0.25)
    s = np.array([0.2, 0.45, 0.8])
    assert np.all(th(s) == 1.0) and np.all(th.left(s) == 1.0)


def test_theta_double_increments():
    A_hat = CumulativeHazard([0.1, 0.4], [0.2, 0.3])
    A_tilde = CumulativeHazard([0.1, 0.4], [0.4, 0.6])
    th = theta_ratio(A_tilde, A_hat, 0.2)
    assert th(0.45) == pytest.approx(2.0) and th.left(0.5) == pytest.approx(2.0)


def test_theta_gap_flagged():
    A_hat = CumulativeHazard([0.1, 0.9], [0.2, 0.3])
    A_tilde = CumulativeHazard([0.5], [0.4])
    th = theta_ratio(A_tilde, A_hat, 0.2)
    s = np.array([0.15, 0.5, 0.6, 0.95])
    assert th.flagged(s, left=False).tolist() == [False, True, True, False]
    assert th(0.5) == 1.0


def test_theta_needs_positive_bandwidth():
    A = CumulativeHazard([0.1], [1.0])
    with pytest.raises(NonPositiveBandwidth):
        theta_ratio(A, A, 0.0)


def test_default_bandwidth():
    assert default_bandwidth(10_000) == pytest.approx(0.1)
    assert default_bandwidth(16, 2.0) == pytest.approx(1.0)


# -- likelihood contributions ----------------------------------------------------------


def test_likelihood_constant_rate_no_jump():
    lam = constant_intensity("N", 1.7, max_jumps=1)
    path = SubjectPath(0, {}, {"N": ()})
    assert likelihood_contribution(path, lam, 0.8) == pytest.approx(math.exp(-1.7 * 0.8), rel=1e-12)


def test_likelihood_constant_rate_one_jump():
    lam = constant_intensity("N", 1.7, max_jumps=1)
    path = SubjectPath(0, {}, {"N": (0.3,)})
    assert likelihood_contribution(path, lam, 0.8) == pytest.approx(1.7 * math.exp(-1.7 * 0.3), rel=1e-12)


def test_likelihood_quadrature_for_smooth_rate():
    from eventcausal.simulation import IntensityModel

    lam = IntensityModel("N", lambda t, b, h: 0.0 if h["N"] else 1.0 + t, {"N"}, bound=3.0, max_jumps=1)
    path = SubjectPath(0, {}, {"N": (0.5,)})
    want = 1.5 * math.exp(-(0.5 + 0.125))
    assert likelihood_contribution(path, lam, 2.0) == pytest.approx(want, rel=1e-10)


# -- exact weights -------------------------------------------------------------------


def test_unit_ratio_gives_unit_weights():
    lam = constant_intensity("N", 2.0, max_jumps=1)
    path = SubjectPath(0, {}, {"N": (0.3,), "M": (0.6,)})
    w = exact_weights(path, lam, RatioProcess.constant(1.0), [0.25, 0.5, 1.0])
    assert np.all(w.values == 1.0) and np.all(w.left == 1.0)


def test_constant_ratio_no_jumps():
    lam = constant_intensity("N", 2.0, max_jumps=1)
    path = SubjectPath(0, {}, {"N": ()})
    grid = [0.25, 0.5, 1.0]
    w = exact_weights(path, lam, RatioProcess.constant(0.5), grid)
    np.testing.assert_allclose(w(np.array(grid)), np.exp(0.5 * 2.0 * np.array(grid)), rtol=1e-13)


def test_constant_ratio_with_jump():
    lam = constant_intensity("N", 2.0, max_jumps=1)
    path = SubjectPath(0, {}, {"N": (0.4,)})
    w = exact_weights(path, lam, RatioProcess.constant(3.0), [1.0])
    before = math.exp(-2.0 * 2.0 * 0.4)
    assert w.left_limit(0.4) == pytest.approx(before, rel=1e-13)
    assert w(0.4) == pytest.approx(3.0 * before, rel=1e-13)
    assert w(1.0) == pytest.approx(3.0 * before, rel=1e-13)
    # log-linear interpolation is exact for constant integrands
    assert w(0.2) == pytest.approx(math.exp(-4.0 * 0.2), rel=1e-13)


def test_weights_freeze_after_stop():
    lam = constant_intensity("N", 1.0, max_jumps=1)
    path = SubjectPath(0, {}, {"N": ()}, 0.5)
    w = exact_weights(path, lam, RatioProcess.constant(2.0), [0.25, 1.0], stop=0.5)
    assert w(1.0) == pytest.approx(math.exp(-0.5), rel=1e-13) and w(0.75) == w(0.5)


def test_negative_rho_rejected():
    with pytest.raises(NegativeRho):
        RatioProcess.constant(-1.0)
    rho = RatioProcess(lambda t, b, h: -0.5, bound=1.0, piecewise_constant=True)
    lam = constant_intensity("N", 1.0, max_jumps=1)
    with pytest.raises(NegativeRho):
        exact_weights(SubjectPath(0, {}, {"N": ()}), lam, rho, [1.0])


def test_ratio_above_bound_rejected():
    rho = RatioProcess(lambda t, b, h: 5.0, bound=1.0, piecewise_constant=True)
    lam = constant_intensity("N", 1.0, max_jumps=1)
    with pytest.raises(RhoBoundExceeded):
        exact_weights(SubjectPath(0, {}, {"N": ()}), lam, rho, [1.0])


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0.0, 3.0), st.floats(0.0, 3.0),
       st.booleans(), st.booleans())
def test_combined_is_product_of_factors(tx, tc, rx, rc, jx, jc):
    lam_x = constant_intensity("X", 1.3, max_jumps=1)
    lam_c = constant_intensity("C", 0.7, max_jumps=1)
    path = SubjectPath(0, {}, {"X": (tx,) if jx else (), "C": (tc,) if jc else ()}, tc if jc else math.inf)
    grid = [0.1, 0.3, 0.5, 0.7, 0.9, 1.0]
    both = combined_weights(path, lam_c, RatioProcess.constant(rc), lam_x, RatioProcess.constant(rx), grid, end=1.0)
    stop = path.censor_time
    wc = exact_weights(path, lam_c, RatioProcess.constant(rc), grid, stop=stop, end=1.0)
    wx = exact_weights(path, lam_x, RatioProcess.constant(rx), grid, stop=stop, end=1.0)
    t = np.array(grid)
    np.testing.assert_allclose(both(t), wc(t) * wx(t), rtol=1e-12, atol=0)
    if rc == 1.0:
        np.testing.assert_allclose(both(t), wx(t), rtol=1e-12, atol=0)


def test_trajectory_product_and_jump_factors():
    a = WeightTrajectory([0.0, 0.5, 1.0], [1.0, 2.0, 2.0], [1.0, 1.0, 2.0], "step")
    b = WeightTrajectory([0.0, 0.25], [1.0, 3.0], [1.0, 1.0], "step")
    ab = a * b
    assert ab(0.3) == 3.0 and ab(0.5) == 6.0 and ab.left_limit(0.5) == 3.0
    assert a.jump_factors().tolist() == [1.0, 2.0, 1.0]


# -- estimated weights ------------------------------------------------------------------


def two_group_data(n, seed):
    return simulate_system(builtin_two_group(), n, seed=seed)


def naive_ahw(ds, b):
    """Step-by-step recursion of the weight equation on the pooled time grid."""
    tmask = ds.baseline["G"] == 1
    rmask = ~tmask
    tau = ds.observed_first_jump("Nx")
    exits = ds.exit_times("Nx")

    def increments(mask):
        ev = tau[mask & np.isfinite(tau)]
        ex = exits[mask]
        out = {}
        for s in sorted(set(ev.tolist())):
            out[s] = np.sum(ev == s) / np.sum(ex >= s)
        return out

    d_hat, d_tilde = increments(tmask), increments(rmask)
    grid = sorted(set(d_hat) | set(d_tilde))

    def window(d, s):
        return sum(v for u, v in d.items() if s - b <= u < s)

    end = ds.end_of_observation()
    W = np.ones((ds.n, len(grid)))
    for i in np.flatnonzero(tmask):
        w = 1.0
        for k, s in enumerate(grid):
            if s <= end[i]:
                if tau[i] == s:
                    num, den = window(d_tilde, s), window(d_hat, s)
                    th = num / den if den > 0 else 1.0
                    w = w + w * (th - 1.0) - w * (d_tilde.get(s, 0.0) - d_hat.get(s, 0.0))
                elif tau[i] > s:
                    w = w - w * (d_tilde.get(s, 0.0) - d_hat.get(s, 0.0))
            W[i, k] = w
    return np.array(grid), W


def test_estimated_weights_match_naive_recursion():
    ds = two_group_data(300, seed=31)
    b = 0.3
    grid, W = naive_ahw(ds, b)
    est = estimate_weights_ahw(ds, {"G": 1}, {"G": 0}, "Nx", b)
    np.testing.assert_allclose(est.values(grid), W, rtol=1e-12, atol=1e-15)
    # stored trajectories reproduce the same values at their anchors
    for i in range(ds.n):
        tr = est.trajectory(i)
        np.testing.assert_allclose(tr.values, est.values(tr.times, [i])[0], rtol=1e-12)


def test_identical_groups_give_unit_weights():
    ds = two_group_data(500, seed=2)
    everyone = np.ones(ds.n, dtype=bool)
    est = estimate_weights_ahw(ds, everyone, everyone, "Nx", 0.2)
    assert np.all(est.values(np.linspace(0, 1, 21)) == 1.0)


def test_reference_subjects_have_unit_weight():
    ds = two_group_data(500, seed=2)
    est = estimate_weights_ahw(ds, {"G": 1}, {"G": 0}, "Nx", 0.2)
    ref = np.flatnonzero(ds.baseline["G"] == 0)
    assert np.all(est.values(np.linspace(0, 1, 11), ref) == 1.0)


def test_untreated_weight_reduces_to_hazard_difference():
    ds = two_group_data(500, seed=5)
    est = estimate_weights_ahw(ds, {"G": 1}, {"G": 0}, "Nx", 0.2)
    A_hat = nelson_aalen(ds, "Nx", {"G": 1})
    A_tilde = nelson_aalen(ds, "Nx", {"G": 0})
    grid = np.union1d(A_hat.times, A_tilde.times)
    i = next(i for i in range(ds.n) if ds.baseline["G"][i] == 1 and not np.isfinite(ds.first_jump("Nx")[i])
             and ds.end_of_observation()[i] == ds.horizon)
    want = np.cumprod(1 - A_tilde.increment_at(grid) + A_hat.increment_at(grid))
    np.testing.assert_allclose(est.values(grid, [i])[0], want, rtol=1e-13)


def test_estimated_weights_errors():
    ds = two_group_data(200, seed=5)
    with pytest.raises(EmptyGroup):
        estimate_weights_ahw(ds, {"G": 7}, {"G": 0}, "Nx", 0.2)
    with pytest.raises(NonPositiveBandwidth):
        estimate_weights_ahw(ds, {"G": 1}, {"G": 0}, "Nx", -1.0)


def exact_two_group_weights(ds, alpha=2.0, alpha_ref=1.0, times=(0.5, 1.0)):
    target = ds.baseline["G"] == 1
    tau = ds.observed_first_jump("Nx")
    end = ds.end_of_observation()
    out = []
    for t in times:
        u = np.minimum(np.minimum(tau, end), t)
        jumped = tau <= min(t, 1.0)
        w = np.exp(-(alpha_ref - alpha) * u) * np.where(jumped, alpha_ref / alpha, 1.0)
        out.append(np.where(target, w, 1.0))
    return np.array(out).T


def test_estimated_weights_approach_exact_weights():
    ds = two_group_data(20_000, seed=77)
    times = np.array([0.5, 1.0])
    est = estimate_weights_ahw(ds, {"G": 1}, {"G": 0}, "Nx")
    target = ds.baseline["G"] == 1
    W_hat = est.values(times)[target].mean(axis=0)
    W = exact_two_group_weights(ds, times=times)[target].mean(axis=0)
    assert np.all(np.abs(W_hat / W - 1) <= 0.05)
    # untreated subjects still under observation carry exp((alpha - alpha_ref) t)
    untreated = target & ~np.isfinite(ds.first_jump("Nx")) & (ds.end_of_observation() == ds.horizon)
    assert abs(est.values([0.5], np.flatnonzero(untreated)[:1])[0, 0] / math.exp(0.5) - 1) <= 0.05


def test_exact_weights_reweighting_identity():
    spec = builtin_two_group()
    n = 20_000
    ds = simulate_system(spec, n, seed=101)
    target = ds.baseline["G"] == 1
    lam = spec.intensities["Nx"]
    rho = RatioProcess(lambda t, b, h: 0.5 if b["G"] == 1 else 1.0, bound=1.0, piecewise_constant=True)
    W = dataset_exact_weights(ds, lam, rho, [1.0]).values([1.0])[:, 0]
    # compare with the formula-based weights (second route)
    np.testing.assert_allclose(W, exact_two_group_weights(ds, times=[1.0])[:, 0], rtol=1e-12)
    # mean weight is one and the weighted outcome matches a direct interventional simulation
    m = target.sum()
    assert abs(W[target].mean() - 1) <= 3 * W[target].std(ddof=1) / math.sqrt(m)
    H = (ds.jump_counts("Ny") > 0) & (ds.first_jump("Ny") <= ds.end_of_observation())
    H_obs = W[target] * H[target]
    new = intervene(spec, "Nx", constant_intensity("Nx", 1.0, max_jumps=1))
    direct = simulate_system(new, n, seed=202)
    dt = direct.baseline["G"] == 1
    Hd = ((direct.jump_counts("Ny") > 0) & (direct.first_jump("Ny") <= direct.end_of_observation()))[dt]
    se = math.sqrt(H_obs.var(ddof=1) / m + Hd.var(ddof=1) / dt.sum())
    assert abs(H_obs.mean() - Hd.mean()) <= 3 * se


# -- diagnostics and output --------------------------------------------------------------


def test_truncation_and_diagnostics(tmp_path):
    ds = two_group_data(400, seed=9)
    est = estimate_weights_ahw(ds, {"G": 1}, {"G": 0}, "Nx", 0.3)
    times = [0.25, 0.5, 1.0]
    tw = TruncatedWeights.quantile(est, 0.05, times)
    w = tw.values(times)
    assert w.min() >= tw.lower and w.max() <= tw.upper
    diag = weight_diagnostics(tw, times)
    assert diag["truncated_evaluations"] > 0 and len(diag["mean"]) == 3
    path = tmp_path / "w.csv"
    write_weights_csv(est, path, times)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["subject_id", "time", "weight", "flag"]
    assert len(rows) == 1 + 3 * ds.n
