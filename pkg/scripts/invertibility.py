"""Round-trip errors of randomized models for each fusion depth.

    python3 scripts/invertibility.py [--layers 1 2 3 4] [--scale 0.02]
"""

import argparse

from mrag.acceptance import invertibility_suite


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--layers", type=int, nargs="+", default=[1, 2, 3, 4])
    ap.add_argument("--scale", type=float, default=0.02, help="parameter noise std")
    ap.add_argument("--inputs", type=int, default=1000)
    args = ap.parse_args()
    print(f"{'layers':>6} {'coupling64':>11} {'coupling32':>11} {'stack32':>10} {'seconds':>8}")
    for k in args.layers:
        r = invertibility_suite(fusion_layers=k, inputs=args.inputs, scale=args.scale)
        print(f"{k:>6} {r.coupling[64]:>11.2e} {r.coupling[32]:>11.2e} {r.fusion_stack:>10.2e} {r.seconds:>8.1f}")


if __name__ == "__main__":
    main()
