"""Print the pair potential along an axis next to its c*ln(r) asymptote."""
import argparse
import math

from torimem.potential import CouplingParams, compute_table


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--L", type=int, default=128)
    ap.add_argument("--z", type=int, default=1)
    ap.add_argument("--g-omega", type=float, default=1.0)
    ap.add_argument("--v-omega", type=float, default=1.0)
    args = ap.parse_args()
    p = CouplingParams(g_omega=args.g_omega, v_omega=args.v_omega, z=args.z)
    table = compute_table(args.L, p)
    print(f"# L={args.L} z={args.z} c={p.c:.6f} T*={p.t_star:.6f}")
    print("r,u(r,0),c*ln(r),u(r,r),c*ln(r*sqrt2)")
    for r in range(1, args.L // 2 + 1):
        print(f"{r},{table(r, 0):.6f},{p.c * math.log(r):.6f},{table(r, r):.6f},"
              f"{p.c * math.log(r * math.sqrt(2)):.6f}")


if __name__ == "__main__":
    main()
