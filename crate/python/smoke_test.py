"""Smoke test for the llpp Python extension.

Build and install first:

    pip install maturin
    pip install --no-build-isolation -e crates/python

then run `python python/smoke_test.py`.
"""

import math

import llpp


def close(a, b, tol):
    assert abs(a - b) <= tol, f"{a} vs {b} (tol {tol})"


def main():
    p = llpp.GammaParams(4, 0.066)
    assert (p.k, p.theta) == (4, 0.066)
    close(p.mean(), 0.264, 1e-15)
    close(llpp.erlang_cdf(0.264, p), 0.5665298796332902, 1e-12)
    close(llpp.gamma_antiderivative(0.0, p), -1.0, 1e-15)
    close(llpp.exp_integral_e1(1.0), 0.21938393439552029, 1e-13)

    closed = llpp.margin_probability_closed(0.1, p)
    quad = llpp.margin_probability_quad(0.1, p)
    close(closed["total"], quad, 1e-8)
    mc = llpp.margin_probability_mc(0.1, p, samples=200_000, seed=1)
    close(mc.value, quad, 4 * mc.std_error)

    exp = llpp.GammaParams(1, 0.5)
    close(llpp.margin_probability_closed(0.3, exp)["total"], 1 - math.exp(-0.6), 1e-12)

    phi = llpp.phi_quad(0.1, p)
    close(llpp.phi_closed(0.1, p), phi, 1e-4)
    close(phi, 0.384449, 1e-6)
    est = llpp.phi_mc(0.1, 0.005, p, samples=2_000_000, seed=2)
    close(est.value, phi, 4 * est.std_error)
    grad = llpp.expected_gradient_vector(0.7, [1.0, 2.0], [0.0, 1.0], 0.1, p)
    close(grad[0], 0.7 - phi, 1e-12)

    assert llpp.sampling_probs(3.0, 1.0) == (0.75, 0.25)
    assert llpp.softmax_probs(-2.0, -2.0) == (0.5, 0.5)

    pair = llpp.RankPair(1.0, 2.0, [1.0, 2.0, 1.0], [1.0, 1.0, 1.0], [0.0, 3.0, 0.0])
    assert pair.hinge_loss(1.0) == 4.0
    assert pair.swapped().hinge_loss(1.0) == 4.0
    ordered = llpp.RankPair(2.0, 1.0, [1.0, 2.0, 1.0], [1.0, 1.0, 1.0], [0.0, 3.0, 0.0])
    assert ordered.hinge_loss(1.0) == 0.0
    assert pair.hinge_gradient(1.0).grad_w == [0.0, 1.0, 0.0]
    assert pair.finite_difference_check("kl") <= 1e-6
    try:
        llpp.RankPair(1.0, 2.0, [1.0], [1.0, 2.0], [1.0])
    except ValueError:
        pass
    else:
        raise AssertionError("dimension mismatch not reported")

    xs = llpp.squared_residual_samples(8, 0.5, 20_000, seed=3)
    params, ll, table = llpp.fit_integer_gamma(xs)
    assert params.k == 4, params
    close(params.theta, 0.5, 0.025)
    assert len(table) == 32 and max(t[2] for t in table) == ll

    cfg = llpp.default_sim_config()
    cfg.update(cycles=1, init_labeled=40, batch=20, pool_size=200, holdout_size=50)
    cfg["train"].update(hidden=8, epochs=20)
    records = llpp.run_simulation(cfg)
    assert [r["strategy"] for r in records] == ["random", "hinge_ll", "llpp"] * 2
    assert records == llpp.run_simulation(cfg)
    print("smoke test passed")


if __name__ == "__main__":
    main()
