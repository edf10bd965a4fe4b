"""Switch forgetting and the shrinking queue on top of instance_perturbation."""

from _common import median_table, parser, run_grid

if __name__ == "__main__":
    p = parser(__doc__, iterations=3000, seeds=[0, 1, 2])
    p.add_argument("--n", type=int, default=100)
    args = p.parse_args()
    rows = run_grid(args, {"strategy.variant": ["instance_perturbation"],
                           "strategy.forgetting": [False, True],
                           "strategy.diversity_queue": [False, True]}, **{"dataset.n_samples": args.n})
    print(median_table(rows, ["strategy.forgetting", "strategy.diversity_queue"], ["toy_fid"]))
