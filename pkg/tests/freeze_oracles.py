"""Regenerate tests/data/oracle_values.json from the reference oracles.

Run from the repository root: ``python3 tests/freeze_oracles.py``. The
frozen values pin the oracles themselves, so a later edit to an oracle that
changes its answers shows up as a test failure rather than silently moving
the goalposts.
"""
import json
import math
from pathlib import Path

import numpy as np

import oracles as o

OUT = Path(__file__).with_name("data") / "oracle_values.json"


def l1_instance():
    pairs = o.nearest_pairs(6)
    a = o.incidence(pairs, 6)
    x = np.array([0.7, -1.3, 2.1, 0.4, -0.9])
    b = a @ x
    b[4] += 2 * np.pi
    xs, k, res = o.integer_ambiguity_solve(a, b)
    return {"pairs": pairs, "x_true": x.tolist(), "b": b.tolist(), "x_oracle": xs.tolist(),
            "k_oracle": k.tolist(), "residual": res}


def emi_instance():
    rng = np.random.default_rng(7)
    n, looks = 5, 40
    t = np.arange(n) * 12.0
    gamma = np.exp(-np.abs(t[:, None] - t[None, :]) / 60.0)
    phase = rng.uniform(-np.pi, np.pi, n)
    phase[0] = 0
    l = np.linalg.cholesky(gamma)
    w = l @ (rng.standard_normal((n, looks)) + 1j * rng.standard_normal((n, looks))) / np.sqrt(2)
    z = w * np.exp(1j * phase)[:, None]
    c = z @ z.conj().T / looks
    d = np.sqrt(np.real(np.diag(c)))
    c = c / np.outer(d, d)
    vec, lam = o.emi_dense(c)
    return {"coh_re": c.real.tolist(), "coh_im": c.imag.tolist(), "phase": np.angle(vec).tolist(),
            "eigenvalue": lam, "tcoh": o.temporal_coherence_loop(c, np.angle(vec))}


def main():
    doc = {
        "l1_nearest3_n6": l1_instance(),
        "l1_median": {"a": [[1], [1], [1]], "b": [1, 2, 10],
                      "x": float(o.l1_scan(np.ones((3, 1)), np.array([1.0, 2, 10]),
                                           np.linspace(-20, 20, 400001)))},
        "crlb_two_dates": {str(g): o.crlb_two_dates(g, 25) for g in (0.3, 0.6, 0.9)},
        "emi_n5": emi_instance(),
        "single_pass_stats": dict(zip(("mean", "var"), (v.tolist() for v in o.single_pass_stats(
            np.array([[2.0], [4.0]]))))),
        "rayleigh_dispersion": math.sqrt(4 / math.pi - 1),
    }
    OUT.write_text(json.dumps(doc, indent=1) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
