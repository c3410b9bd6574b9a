"""Run every method on Cora with the preset settings and print a comparison table.

Usage: python3 scripts/cora_methods.py [--dataset data/cora] [--seeds 3 4 5] [--out out/cora]
"""

import argparse
import logging
from pathlib import Path

from fairleak.io import write_json
from fairleak.pipeline import METHODS, Runner, cora_preset, prepare_graph


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dataset", default="data/cora")
    ap.add_argument("--seeds", type=int, nargs="+", default=[3, 4, 5])
    ap.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    ap.add_argument("--out", default="out/cora")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    cfg = cora_preset(args.dataset, seeds=args.seeds)
    runner = Runner(prepare_graph(cfg, cfg.seeds[0]), cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print(f"{'method':8s} {'acc':>7s} {'bias':>9s} {'AUC':>7s} {'d_acc':>8s} {'d_bias':>8s} "
          f"{'d_risk':>8s} {'delta':>8s} {'r':>6s} {'time':>6s}")
    for method in args.methods:
        rep = runner.run(method)
        write_json(out / f"{method}.json", rep.to_json(), validate=True)
        m, d = rep.mean, rep.delta
        r = rep.to_json()["influence_r"]
        cols = ["", "", "", ""] if d is None else [f"{d.delta_acc:+.2%}", f"{d.delta_bias:+.2%}",
                                                   f"{d.delta_risk:+.2%}", f"{d.delta:+.4f}"]
        print(f"{method:8s} {m.accuracy:7.4f} {m.bias:9.2f} {m.mean_auc:7.4f} "
              + " ".join(f"{c:>8s}" for c in cols)
              + f" {'' if r is None else f'{r:+.2f}':>6s} {rep.runtime_s:5.0f}s")


if __name__ == "__main__":
    main()
