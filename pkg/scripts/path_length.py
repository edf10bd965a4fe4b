"""Path length in z and w of baseline versus fakeclr on ring-1000."""

from _common import median_table, parser, run_grid

if __name__ == "__main__":
    args = parser(__doc__, iterations=3000, seeds=[0, 1, 2]).parse_args()
    rows = run_grid(args, {"strategy.variant": ["baseline", "fakeclr"]}, **{"dataset.n_samples": 1000})
    print(median_table(rows, ["strategy.variant"], ["ppl_z_mean", "ppl_w_mean", "ppl_w_std", "toy_fid"]))
