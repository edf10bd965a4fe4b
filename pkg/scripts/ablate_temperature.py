"""Forgetting temperature sweep for fakeclr on ring-1000."""

from _common import median_table, parser, run_grid

if __name__ == "__main__":
    p = parser(__doc__, iterations=3000, seeds=[0, 1, 2])
    p.add_argument("--tau-m", type=float, nargs="+", default=[1.0, 0.1, 0.01, 0.001])
    args = p.parse_args()
    rows = run_grid(args, {"contrastive.tau_m": args.tau_m}, **{"dataset.n_samples": 1000})
    print(median_table(rows, ["contrastive.tau_m"], ["toy_fid", "ppl_w_mean"]))
