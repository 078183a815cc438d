"""Path methods on f(x1, x2) = (x1 - x2)^2.

Along the straight path from (0, 0) to (1, 1) the difference x1 - x2 stays
zero, so every gradient on it vanishes and IG assigns nothing. SIG adds
noise to the path points, which moves them off the diagonal; the expected
attribution is still zero, but a single Monte-Carlo estimate is not.

    python demos/cancellation.py
"""

import numpy as np

from attreval import explainers as ex
from attreval import nn


def main():
    net = nn.cancellation_net()
    x = np.array([1.0, 1.0])
    print("f(1,1) =", float(nn.forward(net, x)[0]), "  f(0,1) =", round(float(nn.forward(net, np.array([0.0, 1.0]))[0]), 4))
    for k in (8, 64, 512):
        ig = ex.explain_ig(net, x, 0, ex.ExplainerConfig("IG", k=k, head="logit")).values
        print(f"IG   k={k:<4} {ig}")
    for k in (32, 512, 4096):
        mags = [np.abs(ex.explain_sig(net, x, 0, ex.ExplainerConfig("SIG", k=k, sigma=0.3, head="logit", seed=s))
                       .values).sum() for s in range(50)]
        print(f"SIG  k={k:<4} mean |xi1|+|xi2| over 50 seeds {np.mean(mags):.3f}  (seed 0: {mags[0]:.3f})")


if __name__ == "__main__":
    main()
