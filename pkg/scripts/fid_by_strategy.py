"""Toy-FID of every strategy on ring-100 and ring-1000 (median over seeds)."""

from _common import median_table, parser, run_grid

VARIANTS = ["fakeclr", "instance_perturbation", "instance_fake", "instance_real", "baseline"]

if __name__ == "__main__":
    p = parser(__doc__, iterations=3000, seeds=[0, 1, 2])
    p.add_argument("--sizes", type=int, nargs="+", default=[100, 1000])
    args = p.parse_args()
    rows = run_grid(args, {"strategy.variant": VARIANTS, "dataset.n_samples": args.sizes})
    print(median_table(rows, ["dataset.n_samples", "strategy.variant"], ["toy_fid", "toy_kid"]))
