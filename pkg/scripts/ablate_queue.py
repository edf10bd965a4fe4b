"""Initial queue size and shrink fraction sweep for fakeclr on ring-100."""

from _common import median_table, parser, run_grid

if __name__ == "__main__":
    p = parser(__doc__, iterations=3000, seeds=[0, 1, 2])
    p.add_argument("--n0", type=int, nargs="+", default=[128, 512, 1000, 2000])
    p.add_argument("--final-fraction", type=float, nargs="+", default=[1.0, 0.5, 0.1])
    args = p.parse_args()
    rows = run_grid(args, {"queue.n0": args.n0, "queue.final_fraction": args.final_fraction})
    print(median_table(rows, ["queue.n0", "queue.final_fraction"], ["toy_fid", "queue_size"]))
