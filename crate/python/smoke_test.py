# Copyright 2026 The photonbox Authors
# SPDX-License-Identifier: Apache-2.0
"""Smoke test for the photonbox Python extension.

Build and install first:
    pip install --no-build-isolation ./crates/python
"""

import math

import photonbox as pb


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    space = pb.FockSpace()
    assert space.dim == 11

    d = space.displacement(0.5j)
    for i in range(11):
        for j in range(11):
            s = sum(d[i][k] * d[j][k].conjugate() for k in range(11))
            assert close(s, 1.0 if i == j else 0.0, 1e-12)

    rho0 = space.coherent_state(math.sqrt(3))
    assert close(rho0.population(3), 4.5 * math.exp(-3), 1e-3)  # truncated to dim 11

    lam, argmax, per_n = pb.open_loop_exponent(space)
    assert argmax == 10 and close(lam, -0.029757, 1e-6), (lam, argmax)
    assert len(per_n) == 10

    ctl = pb.Controller(space, n_bar=3, delay=2)
    eq = ctl.equilibrium()
    assert close(ctl.predicted_fidelity(eq), 1.0, 1e-14)
    alpha, branch = ctl.feedback(eq)
    assert branch == "tracking" and abs(alpha) < 1e-15

    chi = ctl.at_rest(rho0)
    nxt, outcome, alpha = ctl.step(chi, 7, 0)
    assert outcome in ("g", "e") and nxt.betas[0] == alpha

    gap_fid, gap_v = ctl.lemma1_suite(50, 1)
    assert gap_fid >= -1e-10 and gap_v >= -1e-10

    closed = ctl.run_closed(chi, 200, 8, seed=3)
    assert closed.n_traj == 8 and len(closed.k) == 201
    assert closed.mean_final_fidelity() > 0.9
    again = ctl.run_closed(chi, 200, 8, seed=3)
    assert closed.csv() == again.csv()

    filt = ctl.run_filter(rho0, space.maximally_mixed(), 100, 4, seed=5)
    assert filt.mean_frob_dist is not None

    opened = pb.run_open(space, rho0, 100, 16, seed=2)
    assert close(opened.mean_fidelity[0], rho0.population(3), 1e-12)

    cfg = pb.Config("mode = openloop\nsteps = 20\nn_traj = 3\n")
    assert cfg.mode == "openloop" and cfg.run().n_traj == 3
    assert "steps = 20" in str(cfg)

    try:
        pb.Config("nonsense = 1")
    except ValueError as e:
        assert "line 1" in str(e)
    else:
        raise AssertionError("unknown key accepted")

    print("photonbox smoke test passed: Lambda = %.6f, closed-loop fidelity %.4f"
          % (lam, closed.mean_final_fidelity()))


if __name__ == "__main__":
    main()
