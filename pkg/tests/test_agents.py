import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oldrm.agents import (
    OLDRM,
    POLICY_NAMES,
    AveragingETC,
    ConsumerPolicy,
    NoDR,
    PerfectInformation,
    brute_force_best_response,
    consumer_consumption,
    default_n_explore,
    make_policy,
    so_decide,
)
from oldrm.engine import standard_consumers
from oldrm.estimator import EstimatorState, SingularDesignError, update
from oldrm.model import (
    ConsumerParams,
    InvalidConfigError,
    MarketConfig,
    correct_baseline,
)

STD = standard_consumers()


def market(**kw):
    return MarketConfig(**{"T": 100, **kw})


def random_case(rng):
    c = ConsumerParams(float(rng.uniform(2, 4)), float(rng.uniform(1, 3)), 0.1)
    mk = MarketConfig(
        p0=1.0,
        c=float(rng.uniform(1.5, 3)),
        delta_p=float(rng.uniform(0.2, 0.8)),
        m=int(rng.integers(1, 4)),
        T=int(rng.integers(12, 30)),
        n_consumers=1,
    )
    t = int(rng.integers(1, mk.T + 1))
    eps = float(rng.normal(0, 0.1))
    past = rng.normal(1, 0.3, t - 1)
    return c, mk, t, eps, past


class TestConsumer:
    def test_myopic_no_shock(self):
        mk = market()
        pol = OLDRM(mk, STD)
        p = pol.prices(mk.T)
        c = STD[2]
        q = consumer_consumption(ConsumerPolicy("myopic"), c, 10, 0.0, mk.p0, p, pol, mk.T)
        assert q == pytest.approx(correct_baseline(c, mk.p0) - p[9] / c.d, abs=1e-15)

    def test_strategic_inflates(self):
        mk = market()
        pol = OLDRM(mk, STD)
        p = pol.prices(mk.T)
        for c in STD:
            my = consumer_consumption(ConsumerPolicy("myopic"), c, 10, 0.0, 1.0, p, pol, mk.T)
            sg = consumer_consumption(ConsumerPolicy("strategic", 3), c, 10, 0.0, 1.0, p, pol, mk.T)
            assert sg > my

    def test_last_day_is_myopic(self):
        mk = market()
        pol = OLDRM(mk, STD)
        p = pol.prices(mk.T)
        c = STD[0]
        my = consumer_consumption(ConsumerPolicy("myopic"), c, mk.T, 0.2, 1.0, p, pol, mk.T)
        sg = consumer_consumption(ConsumerPolicy("strategic", 3), c, mk.T, 0.2, 1.0, p, pol, mk.T)
        assert sg == my

    @settings(max_examples=100)
    @given(t=st.integers(1, 100), eps=st.floats(-1, 1), i=st.integers(0, 4))
    def test_zero_lookahead_bitwise_myopic(self, t, eps, i):
        mk = market()
        pol = OLDRM(mk, STD)
        p = pol.prices(mk.T)
        a = consumer_consumption(ConsumerPolicy("strategic", 0), STD[i], t, eps, 1.0, p, pol, mk.T)
        b = consumer_consumption(ConsumerPolicy("myopic", 3), STD[i], t, eps, 1.0, p, pol, mk.T)
        assert a == b

    def test_bad_kind(self):
        with pytest.raises(InvalidConfigError):
            ConsumerPolicy("greedy")


class TestBruteForce:
    def test_myopic_closed_form(self):
        mk = market()
        p = OLDRM(mk, STD).prices(mk.T)
        c = STD[1]
        q = brute_force_best_response(7, c, 0.05, p, np.zeros(6), 0, mk.T, mk.p0)
        assert q == pytest.approx((c.a + 0.05 - mk.p0 - p[6]) / c.d, abs=1e-10)

    def test_matches_closed_form_seed11(self):
        rng = np.random.default_rng(11)
        c, mk, t, eps, past = random_case(rng)
        mk = MarketConfig(**{**mk.__dict__, "m": 2})
        pol = OLDRM(mk, [c])
        p = pol.prices(mk.T)
        ref = brute_force_best_response(t, c, eps, p, past, 2, mk.T, mk.p0)
        q = consumer_consumption(ConsumerPolicy("strategic", 2), c, t, eps, mk.p0, p, pol, mk.T)
        assert q == pytest.approx(ref, abs=1e-8)

    def test_standard_day_ten(self):
        mk = market(n_consumers=5)
        pol = OLDRM(mk, STD)
        p = pol.prices(mk.T)
        past = np.full(9, 1.0)
        for c in STD:
            ref = brute_force_best_response(10, c, 0.0, p, past, 3, mk.T, mk.p0)
            q = consumer_consumption(ConsumerPolicy("strategic", 3), c, 10, 0.0, mk.p0, p, pol, mk.T)
            assert q == pytest.approx(ref, abs=1e-8)
            assert ref > correct_baseline(c, mk.p0) - p[9] / c.d

    def test_concave_at_optimum(self):
        # the oracle checks the Hessian diagonal itself and raises OracleFailure
        # when it is not negative; d < 0 is the only way to get there
        from oldrm.agents import OracleFailure

        mk = market()
        p = OLDRM(mk, STD).prices(mk.T)
        assert np.isfinite(brute_force_best_response(5, STD[0], 0.0, p, np.ones(4), 2, mk.T, mk.p0))
        convex = ConsumerParams.__new__(ConsumerParams)
        object.__setattr__(convex, "a", 3.0)
        object.__setattr__(convex, "d", -1.0)
        object.__setattr__(convex, "noise_sd", 0.0)
        object.__setattr__(convex, "id", 1)
        with pytest.raises(OracleFailure):
            brute_force_best_response(5, convex, 0.0, p, np.ones(4), 2, mk.T, mk.p0)

    def test_history_length_checked(self):
        mk = market()
        p = OLDRM(mk, STD).prices(mk.T)
        with pytest.raises(ValueError):
            brute_force_best_response(5, STD[0], 0.0, p, np.ones(3), 2, mk.T, mk.p0)


class TestSODecide:
    def test_oldrm_first_day(self):
        mk = market(b_init=0.25)
        pol = OLDRM(mk, STD)
        price, base = so_decide(pol, 1, EstimatorState.empty((5,)))
        assert price == mk.p_star + mk.delta_p * np.exp(-1)
        np.testing.assert_array_equal(base, np.full(5, 0.25))

    def test_oldrm_prices_ignore_history(self):
        mk = market()
        pol = OLDRM(mk, STD)
        s = EstimatorState.empty((5,))
        rng = np.random.default_rng(0)
        for t in range(1, 4):
            s = update(s, pol.prices(mk.T)[t - 1], rng.normal(size=5))
        s2 = update(update(update(EstimatorState.empty((5,)), pol.prices(mk.T)[0], np.ones(5)),
                           pol.prices(mk.T)[1], np.zeros(5)), pol.prices(mk.T)[2], np.ones(5))
        assert so_decide(pol, 4, s)[0] == so_decide(pol, 4, s2)[0] == pol.prices(mk.T)[3]

    def test_oldrm_singular_day(self):
        mk = market(delta_p=0.0)
        pol = OLDRM(mk, STD)
        s = EstimatorState.empty((5,))
        for t in (1, 2):
            s = update(s, pol.prices(mk.T)[t - 1], np.ones(5))
        with pytest.raises(SingularDesignError) as err:
            so_decide(pol, 3, s)
        assert err.value.day == 3

    def test_etc_explore_day(self):
        mk = market()
        pol = AveragingETC(mk, STD, 10)
        price, base = so_decide(pol, 5, EstimatorState.empty((5,)))
        assert price == 0.0
        assert not base.any()
        assert pol.observes(5) and not pol.observes(11)

    def test_etc_commit_noiseless(self):
        mk = market()
        pol = AveragingETC(mk, STD, 10)
        s = EstimatorState.empty((5,))
        b = pol.b_tilde
        for _ in range(10):
            s = update(s, 0.0, b)
        price, base = so_decide(pol, 11, s)
        assert price == mk.p_star
        np.testing.assert_allclose(base, b, rtol=1e-15)

    def test_etc_bounds(self):
        mk = market()
        for n in (0, mk.T):
            with pytest.raises(InvalidConfigError) as err:
                AveragingETC(mk, STD, n)
            assert err.value.field == "n_explore"

    def test_etc_strategic_sensitivity(self):
        pol = AveragingETC(market(), STD, 10)
        assert pol.baseline_sensitivity(9, 2, 100) == pytest.approx(0.1)
        assert pol.baseline_sensitivity(9, 1, 100) == 0.0
        assert pol.baseline_sensitivity(11, 1, 100) == 0.0

    def test_oracle_and_nodr(self):
        mk = market()
        s = EstimatorState.empty((5,))
        p, b = so_decide(PerfectInformation(mk, STD), 7, s)
        assert p == mk.p_star
        np.testing.assert_array_equal(b, [correct_baseline(c, mk.p0) for c in STD])
        p, b = so_decide(NoDR(mk, STD), 7, s)
        assert p == 0.0 and not b.any()


class TestFactory:
    @pytest.mark.parametrize("name", POLICY_NAMES)
    def test_known_names(self, name):
        assert make_policy(name, market(), STD) is not None

    def test_unknown(self):
        with pytest.raises(InvalidConfigError, match="valid"):
            make_policy("bandit", market(), STD)

    @pytest.mark.parametrize(
        "T,e,n", [(1000, 2 / 3, 100), (1000, 1 / 3, 10), (1000, 1 / 2, 32), (8, 2 / 3, 4), (2, 2 / 3, 1)]
    )
    def test_default_n_explore(self, T, e, n):
        assert default_n_explore(T, e) == n


@pytest.mark.parametrize("case", range(50))
def test_closed_form_vs_oracle_random(case):
    rng = np.random.default_rng(1000 + case)
    c, mk, t, eps, past = random_case(rng)
    pol = OLDRM(mk, [c])
    p = pol.prices(mk.T)
    ref = brute_force_best_response(t, c, eps, p, past, mk.m, mk.T, mk.p0)
    q = consumer_consumption(ConsumerPolicy("strategic", mk.m), c, t, eps, mk.p0, p, pol, mk.T)
    assert q == pytest.approx(ref, abs=1e-8)
