"""KAFT-C vs RAFT-C-abs on an MNIST MLP, with the area between the curves.

Trains (or loads) a 784-256-10 MLP, explains it with IG, SG, VG and a random
baseline, and prints both degradation curves and the delta-acc score with
its spread over repetitions. About eight minutes on one core.

    MNIST_DIR=/path/to/idx python demos/mnist_delta_acc.py [--checkpoint model.aevnet] [--target label]
"""

import argparse
import time

from attreval import explainers as ex
from attreval import nn, schemes
from attreval.data import default_mnist_path, load_mnist


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--checkpoint")
    ap.add_argument("--target", choices=schemes.TARGETS, default="predicted")
    args = ap.parse_args()

    train, test = load_mnist(default_mnist_path())
    if args.checkpoint:
        net = nn.read_network(args.checkpoint)
    else:
        net, _ = nn.train(nn.mlp(784, (256,), 10, seed=0), train, schemes.base_train_config())
    print(f"test accuracy {nn.accuracy(net, test):.4f}")

    cfgs = [ex.default_config(k) for k in ("IG", "SG", "VG", "Random")]
    cache = {}
    runs = {}
    for name in ("KAFT-C", "RAFT-C-abs"):
        t0 = time.perf_counter()
        runs[name] = schemes.evaluate(net, train, test, cfgs, schemes.preset(name, target=args.target), cache)
        print(f"\n{name} ({time.perf_counter() - t0:.0f}s)")
        for e in runs[name].explainers:
            print(f"  {e:>6} " + " ".join(f"{m:.3f}" for m in runs[name].mean(e)))

    print()
    rows = schemes.compare_report(list(runs.values()))
    for row in rows:
        print(f"delta-acc {row['explainer']:>6}: {row['delta_acc']:.4f} ± {row['delta_acc_std']:.4f}")


if __name__ == "__main__":
    main()
