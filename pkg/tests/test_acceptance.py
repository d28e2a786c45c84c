"""End-to-end acceptance checks; each prints one PASS/FAIL line."""

import csv
import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

import synth
from pottsseg import cli, ml, observation, ppm
from pottsseg import posterior_lbp as post
from pottsseg import potts_prior as pp
from pottsseg.exact import enumerate_states, transfer_matrix_chain
from pottsseg.grid import Graph, build_grid

TABLE = {
    5: [(0.0155, 3.2218), (0.0382, 2.8367), (0.0631, 2.6397),
        (0.2775, 2.1932), (0.1440, 2.3559), (0.1496, 2.3444)],
    8: [(0.0278, 3.2480), (0.0510, 3.0055), (0.1166, 2.7186),
        (0.3371, 2.5050), (0.1767, 2.6050), (0.1949, 2.5826)],
}
COARSE = np.round(np.arange(0.0, 4.0 + 1e-9, 0.02), 10)


def _secant_gap(K, f, at):
    """One-sided secant slopes at the grid point nearest ``at``; their gap and the grid noise.

    The noise is the median of the same gap over the rest of the grid.
    """
    h = K[1] - K[0]
    gaps = np.abs(f[2:] - 2 * f[1:-1] + f[:-2]) / h
    mid = K[1:-1]
    j = int(np.argmin(np.abs(mid - at)))
    noise = float(np.median(gaps[np.abs(mid - at) > 3 * h]))
    return float(gaps[j]), noise


# --------------------------------------------------------------------------
# criteria 1 and 2: prior transition


def test_criterion_1_transition_points(record):
    ok = True
    parts = []
    for q, expected in ((5, 2.1972), (8, 2.5871)):
        t0 = time.perf_counter()
        out = subprocess.run([sys.executable, "-m", "pottsseg", "transition", "--labels", str(q)],
                             capture_output=True, text=True, check=True)
        elapsed = time.perf_counter() - t0
        res = json.loads(out.stdout)
        ok &= res["kind"] == "first_order" and abs(res["K_C"] - expected) <= 0.005 and elapsed < 5
        parts.append(f"q={q}: K_C={res['K_C']:.6f} (target {expected}), {elapsed:.2f} s")
    record(1, ok, "; ".join(parts))
    assert ok


def test_criterion_2_ising_control(record):
    res = pp.transition_point(2)
    rows = pp.free_energy_curve(2, COARSE)
    K = np.array([r[0] for r in rows])
    f = np.array([r[1] for r in rows])
    gap, noise = _secant_gap(K, f, math.log(4))
    # the same measure does flag the first-order q = 5 crossing
    rows5 = pp.free_energy_curve(5, COARSE)
    gap5, noise5 = _secant_gap(K, np.array([r[1] for r in rows5]), synth.bethe_transition(5))
    ok = (res.kind == "none_detected" and res.K_C is None
          and abs(res.onset - math.log(4)) <= 0.001 and gap < 10 * noise and gap5 > 10 * noise5)
    record(2, ok, f"kind={res.kind}, onset={res.onset:.6f} (ln4={math.log(4):.6f}), "
                  f"slope gap {gap:.2e} vs 10*noise {10 * noise:.2e} "
                  f"(q=5 control: {gap5:.2e} vs {10 * noise5:.2e})")
    assert ok


# --------------------------------------------------------------------------
# criterion 3: alpha(u) against published reference pairs


def test_criterion_3_alpha_table(record):
    worst = 0.0
    for q, pairs in TABLE.items():
        for u, alpha in pairs:
            worst = max(worst, abs(pp.solve_alpha_for_u(q, u) - alpha))
    ok = worst <= 0.02
    record(3, ok, f"12 pairs, max |alpha - table| = {worst:.4f}")
    assert ok


# --------------------------------------------------------------------------
# criterion 4: exactness on trees

MAX_ENUMERATED = 2 ** 20


def _tree_case(rng):
    q = int(rng.integers(2, 5))
    chain = bool(rng.integers(2))
    n = int(rng.integers(2, 13))
    if not chain:
        n = min(n, int(math.log(MAX_ENUMERATED) / math.log(q)))
    g = Graph.chain(n) if chain else Graph.random_tree(n, rng)
    K = float(rng.uniform(0.0, 4.0))
    table = rng.normal(scale=1.5, size=(n, q))
    return g, q, K, table, chain


def _oracle(g, q, K, table, chain):
    if chain:
        return transfer_matrix_chain(g.n_nodes, q, K, table)
    return enumerate_states(g, q, K, table)


def test_criterion_4_tree_exactness(record):
    rng = np.random.default_rng(2024)
    worst = 0.0
    n_chain = 0
    for _ in range(100):
        g, q, K, table, chain = _tree_case(rng)
        n_chain += chain
        for tab in (np.zeros_like(table), table):
            ex = _oracle(g, q, K, tab, chain)
            st = post.solve_posterior_fixed_point(g, q, K, tab, tol=1e-14)
            errs = [abs(st.bethe_log_partition - ex.log_partition),
                    np.abs(st.node_marginals - ex.node_marginals).max(),
                    np.abs(st.edge_marginals() - ex.edge_marginals).max()]
            if not tab.any():
                prior = pp.solve_prior_fixed_point(g, q, K, tol=1e-14)
                errs.append(abs(-prior.free_energy * g.n_nodes - ex.log_partition))
                errs.append(abs(prior.disagreement - ex.disagreement))
            worst = max(worst, *errs)
    ok = worst < 1e-9
    record(4, ok, f"100 cases ({n_chain} chains, {100 - n_chain} random trees), "
                  f"prior and posterior, max error {worst:.2e}")
    assert ok


# --------------------------------------------------------------------------
# criterion 5: analytic anchors at K = 0


def test_criterion_5_zero_coupling_anchors(record):
    f_err = d_err = 0.0
    h = 1e-4
    for q in (2, 3, 5, 8):
        for g in (None, build_grid(8, 8, "periodic")):
            f = [pp.prior_free_energy(g, q, k * h, tol=1e-14) for k in range(3)]
            f_err = max(f_err, abs(f[0] + math.log(q)))
            slope = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
            d_err = max(d_err, abs(slope + 1.0 / q))
    img, _ = synth.two_region(size=64, seed=0)
    X = img.reshape(-1, 3)
    params, _ = observation.init_params(X, 2)
    value, _, _ = ml.log_marginal_likelihood(X, build_grid(64, 64), 2, 0.0, params)
    logs = np.column_stack([multivariate_normal(params.means[k], params.covariances[k]).logpdf(X)
                            for k in range(2)])
    ell_err = abs(value - float(np.mean(logsumexp(logs, axis=1) - math.log(2))))
    ok = f_err < 1e-12 and d_err < 1e-6 and ell_err < 1e-10
    record(5, ok, f"|f(0)+ln q|={f_err:.1e}, |df/dK(0)+1/q|={d_err:.1e}, "
                  f"|l(0)-mixture|={ell_err:.1e}")
    assert ok


# --------------------------------------------------------------------------
# criterion 6: Bethe gradient identity


def test_criterion_6_gradient_identity(record):
    h = 1e-4
    worst = 0.0
    count = 0
    for q in (2, 5, 8):
        # q = 2 has no crossing; its onset is excluded for the same reason
        special = math.log(4) if q == 2 else synth.bethe_transition(q)
        for K in COARSE[1:]:
            if abs(K - special) <= 0.05:
                continue
            fp = pp.prior_free_energy(None, q, K + h, tol=1e-14, max_iter=200_000)
            fm = pp.prior_free_energy(None, q, K - h, tol=1e-14, max_iter=200_000)
            rep = pp.solve_prior_fixed_point(None, q, K, tol=1e-14, max_iter=200_000,
                                             resolve_branch=True)
            identity = -0.5 * pp.edge_density(None) * (1.0 - rep.disagreement)
            worst = max(worst, abs((fp - fm) / (2 * h) - identity))
            count += 1
    ok = worst < 1e-4
    record(6, ok, f"{count} grid couplings over q=2,5,8, max deviation {worst:.2e}")
    assert ok


# --------------------------------------------------------------------------
# criteria 7 to 10: CLI runs on synthetic images


def _run_cli(argv):
    t0 = time.perf_counter()
    code = cli.main(argv)
    return code, time.perf_counter() - t0


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept")
    img, truth = synth.two_region(size=64, seed=0)
    ppm.write_ppm(img, root / "two_region.ppm")
    kink, _ = synth.blocky_noise()
    ppm.write_ppm(kink, root / "kink.ppm")
    return root, truth


def _argv(root, name):
    seg = ["segment", "--labels", "2", "--seed", "0", "--input", str(root / "two_region.ppm"),
           "--out", str(root / "seg.ppm"), "--csv", str(root / "seg.csv"),
           "--report", str(root / "seg.json")]
    sweep = ["ml-sweep", "--labels", "2", "--seed", "0", "--input", str(root / "two_region.ppm"),
             "--out", str(root / "ml.ppm"), "--csv", str(root / "ml.csv"),
             "--report", str(root / "ml.json")]
    kink = ["ml-sweep", "--labels", "5", "--boundary", "periodic", "--tol", "1e-5", "--seed", "0",
            "--input", str(root / "kink.ppm"), "--csv", str(root / "kink.csv"),
            "--report", str(root / "kink.json")]
    return {"seg": seg, "ml": sweep, "kink": kink}[name]


OUTPUTS = {"seg": ("seg.ppm", "seg.csv", "seg.json"), "ml": ("ml.ppm", "ml.csv", "ml.json"),
           "kink": ("kink.csv", "kink.json")}


@pytest.fixture(scope="module")
def runs(workspace):
    """Every CLI scenario twice; keeps exit codes, timings and output bytes."""
    root, _ = workspace
    result = {}
    for name in ("seg", "ml", "kink"):
        for rep in (0, 1):
            code, elapsed = _run_cli(_argv(root, name))
            files = {f: (root / f).read_bytes() for f in OUTPUTS[name]}
            result[name, rep] = (code, elapsed, files)
    return result


def test_criterion_7_cme_recovery(workspace, runs, record):
    root, truth = workspace
    code, elapsed, files = runs["seg", 0]
    report = json.loads(files["seg.json"])
    seg = ppm.decode_ppm(files["seg.ppm"])
    means = np.array(report["theta"]["means"])
    # labels from the painted output: the nearer of the two fitted mean colours
    labels = np.argmin(((seg[..., None, :] - means) ** 2).sum(-1), axis=-1)
    acc = synth.best_permutation_accuracy(labels, truth, 2)
    mean_err = float(np.abs(np.sort(means[:, 0]) - np.array(synth.MEANS_2)).max())
    mean_err = max(mean_err, float(np.abs(means - means[:, :1]).max()))
    target = synth.boundary_fraction(truth)
    u_err = abs(report["u_hat"] - target)
    ok = (code == 0 and report["converged"] and report["iterations"] <= 200 and acc >= 0.99
          and mean_err <= 0.02 and u_err <= 0.05 and elapsed < 60)
    record(7, ok, f"accuracy {acc:.4f}, mean error {mean_err:.4f}, u_hat {report['u_hat']:.5f} "
                  f"vs boundary fraction {target:.5f}, {report['iterations']} outer iterations, "
                  f"{elapsed:.1f} s")
    assert ok


def test_criterion_8_method_equivalence(runs, record):
    seg = json.loads(runs["seg", 0][2]["seg.json"])
    code, _, files = runs["ml", 0]
    est = json.loads(files["ml.json"])
    diff = abs(est["K_hat"] - seg["alpha_hat"])
    ok = code == 0 and diff < 0.02 and abs(est["residual"]) < 1e-3
    record(8, ok, f"K_hat {est['K_hat']:.4f} vs alpha(u_hat) {seg['alpha_hat']:.4f} "
                  f"(diff {diff:.4f}), residual {est['residual']:.2e}")
    assert ok


def test_criterion_9_kink_regime(runs, record):
    code, _, files = runs["kink", 0]
    est = json.loads(files["kink.json"])
    rows = list(csv.reader(files["kink.csv"].decode().splitlines()))[1:]
    K = np.array([float(r[0]) for r in rows])
    ll = np.array([float(r[1]) for r in rows])
    K_C = est["K_C"]
    i = int(np.argmin(np.abs(K - K_C)))
    left, right = est["slopes"]
    gap = abs(right - left)
    # continuity: extrapolate each side linearly to K_C and compare with l(K_C)
    from_left = ll[i - 1] + (ll[i - 1] - ll[i - 2]) / (K[i - 1] - K[i - 2]) * (K[i] - K[i - 1])
    from_right = ll[i + 1] - (ll[i + 2] - ll[i + 1]) / (K[i + 2] - K[i + 1]) * (K[i + 1] - K[i])
    h = K[i + 1] - K[i]
    jump = max(abs(from_left - ll[i]), abs(from_right - ll[i]))
    continuous = jump < 0.05 * gap * h
    ok = (code == 0 and est["kink_detected"] and K_C is not None
          and abs(K_C - synth.bethe_transition(5)) < 0.005 and abs(est["K_hat"] - K_C) < 1e-9
          and gap > 10 * est["noise"] and continuous)
    record(9, ok, f"kink_detected={est['kink_detected']}, K_hat={est['K_hat']:.5f}, "
                  f"K_C={K_C:.5f}, slope gap {gap:.3f} vs 10*noise {10 * est['noise']:.2e}, "
                  f"extrapolation mismatch {jump:.1e}")
    assert ok


def test_criterion_10_determinism(runs, record):
    same = {name: runs[name, 0][2] == runs[name, 1][2] for name in ("seg", "ml", "kink")}
    codes = all(runs[key][0] == 0 for key in runs)
    ok = codes and all(same.values())
    record(10, ok, "byte-identical reruns: " + ", ".join(f"{k}={v}" for k, v in same.items()))
    assert ok
