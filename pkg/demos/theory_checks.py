"""The two information-theoretic results, checked numerically.

1. Does occluding a shared feature lower the mutual information between the
   data and the label? Sweep the (gamma, p, alpha, C) grid and print where
   the exact computation disagrees with the inequality.
2. A feature with positive logit attribution can still lower the target
   probability. Build one such instance and fuzz many more.

    python demos/theory_checks.py
"""

from collections import Counter

import numpy as np

from attreval import theory


def sweep():
    gammas = np.round(np.arange(0.05, 0.451, 0.05), 2)
    alphas = np.round(np.arange(0.1, 0.91, 0.1), 1)
    rows = theory.theorem1_grid(gammas, True, alphas, (2, 5, 10))
    bad = [r for r in rows if not r["holds"]]
    print(f"{len(rows)} grid points, {len(bad)} where I_tilde <= I")
    print("  counterexamples by alpha:", dict(Counter(r["alpha"] for r in bad)))
    if bad:
        worst = max(bad, key=lambda r: r["I"] - r["I_tilde"])
        print("  largest violation:", {k: round(v, 4) if isinstance(v, float) else v for k, v in worst.items()})
        delta = [r["p"] * (1 - r["alpha"]) for r in bad]
        print(f"  smallest p(1-alpha) among them: {min(delta):.3f}")


def weak_contributor():
    # class 0 gains a little logit, class 1 gains much more
    a = theory.LogitAttribution(context_logits=(0.0, 0.0, 0.0), xi=(0.1, 2.0, 0.0), target=0)
    print("\nWPC condition:", theory.wpc_condition(a))
    print("sign check:", theory.theorem2_check(a))
    print("fuzz:", theory.wpc_fuzz(100_000, seed=0))


if __name__ == "__main__":
    sweep()
    weak_contributor()
