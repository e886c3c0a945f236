"""Command-line entry points: dataset generation, training, evaluation, runs."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import dataset as ds
from . import experiments as ex
from . import network as net


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("VOFML_WORKERS", "1")))
    except ValueError:
        return 1


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split(",") if tok)


def cmd_gen_dataset(args) -> int:
    counts = _parse_int_list(args.counts)
    if len(counts) != 4:
        raise SystemExit("--counts needs four comma-separated values")
    spec = ds.DatasetSpec(
        counts=counts,
        beta_range=(0.0, args.beta_max),
        augment=not args.no_augment,
        seed=args.seed,
        surface_points=args.surface_points,
    )
    samples = ds.build(spec, workers=_worker_count())
    ds.write(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def _split_from_file(path, split_seed, naive=False):
    samples = ds.read(path)
    return ds.split(samples, seed=split_seed, group_aware=not naive)


def cmd_train(args) -> int:
    train_part, val_part, test_part = _split_from_file(args.dataset, args.split_seed, args.naive_split)
    switch = not args.no_switch_augment
    x_train, y_train = ds.to_arrays(train_part, switch_augmented=switch)
    x_val, y_val = ds.to_arrays(val_part, switch_augmented=switch)
    print(f"partitions: train {len(x_train)}, val {len(x_val)}, test {len(test_part)}")
    schedule = net.TrainingSchedule(
        adam_steps=args.epochs_adam,
        quasi_newton_steps=args.steps_lbfgs,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        full_bfgs=args.full_bfgs,
        train_wrapped=args.train_wrapped,
        seed=args.seed,
        log_every=args.log_every,
    )
    w0 = net.init_weights(seed=args.seed)
    weights = net.train(w0, x_train, y_train, x_val, y_val, schedule)
    for phase, it, tr, va in schedule.history:
        print(f"  {phase:5s} {it:6d}  train {tr:.6e}  val {va:.6e}")
    net.save_weights(weights, args.out)
    x_test, y_test = ds.to_arrays(test_part)
    if len(x_test):
        mse, mae = net.metrics(weights, x_test, y_test)
        print(f"test partition: MSE {mse:.4e}  MAE {mae:.4e}")
    print(f"wrote weights to {args.out}")
    return 0


def cmd_eval_net(args) -> int:
    weights = net.load_weights(args.weights)
    if args.split == "all":
        part = ds.read(args.dataset)
    else:
        parts = dict(zip(("train", "val", "test"), _split_from_file(args.dataset, args.split_seed)))
        part = parts[args.split]
    inputs, targets = ds.to_arrays(part)
    table = net.evaluate_predictors(weights, inputs, targets)
    print(f"flux reconstruction on {args.split} partition ({len(part)} samples)")
    print(f"{'scheme':>8s} {'MSE':>12s} {'MAE':>12s}")
    for name in ("uw", "ld", "vofml"):
        print(f"{name:>8s} {table[name]['mse']:12.4e} {table[name]['mae']:12.4e}")
    return 0


def cmd_run_test(args) -> int:
    weights = net.load_weights(args.weights) if args.weights else None
    nh_list = ex.FULL_NH if args.full else _parse_int_list(args.nh)
    for scheme in args.scheme.split(","):
        cfg = ex.ExperimentConfig(
            test_id=args.test,
            scheme=scheme,
            nh_list=nh_list,
            weights=weights,
            eps_mark=args.eps_mark,
            n_sub=args.n_sub,
            track_extrema=args.track_extrema,
            out_dir=args.out,
        )
        for report in ex.run(cfg):
            print(
                f"test {report.test_id} {report.scheme:6s} nh {report.n_cells:4d}: "
                f"E {report.error:.4e}  Rmix(T)/Rmix(0) {report.r_mix_ratio:7.2f}  "
                f"drift {report.conservation_drift:.2e}  {report.wall_time:7.1f}s"
            )
    return 0


def cmd_convergence(args) -> int:
    import glob

    rows = []
    for path in sorted(glob.glob(os.path.join(args.in_dir, "summary_test*.csv"))):
        rows.extend(read_with_test_id(path))
    if not rows:
        raise SystemExit(f"no summary files found in {args.in_dir}")
    by_key = {}
    for test_id, nh, scheme, error in rows:
        by_key.setdefault((test_id, scheme), []).append((nh, error))
    out_path = os.path.join(args.in_dir, "rates.csv")
    with open(out_path, "w") as fh:
        fh.write("test,scheme,rate\n")
        for (test_id, scheme), pts in sorted(by_key.items()):
            pts.sort()
            rate, _ = ex.convergence([p[0] for p in pts], [p[1] for p in pts])
            print(f"test {test_id} {scheme:6s}: rate {rate:.3f} over nh {[p[0] for p in pts]}")
            fh.write(f"{test_id},{scheme},{rate:.6f}\n")
    print(f"wrote {out_path}")
    return 0


def read_with_test_id(path):
    base = os.path.basename(path)
    # summary_test{T}_{scheme}.csv
    test_id = int(base.split("_")[1].removeprefix("test"))
    return [(test_id, nh, scheme, err) for nh, scheme, err in ex.read_summary_csv(path)]


def cmd_plots(args) -> int:
    import glob

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = []
    for path in sorted(glob.glob(os.path.join(args.in_dir, "summary_test*.csv"))):
        rows.extend(read_with_test_id(path))
    if not rows:
        raise SystemExit(f"no summary files found in {args.in_dir}")
    tests = sorted({r[0] for r in rows})
    fig, axes = plt.subplots(1, len(tests), figsize=(5 * len(tests), 4), squeeze=False)
    for ax, test_id in zip(axes[0], tests):
        for scheme in ex.SCHEME_NAMES:
            pts = sorted((nh, err) for t, nh, s, err in rows if t == test_id and s == scheme)
            if len(pts) < 3:
                continue
            nh = np.array([p[0] for p in pts], dtype=float)
            err = np.array([p[1] for p in pts], dtype=float)
            rate, intercept = ex.convergence(nh, err)
            ax.loglog(nh, err, "o-", label=f"{scheme} ({rate:.2f})")
            ax.loglog(nh, np.exp(intercept) * nh ** (-rate), "--", alpha=0.5)
        ax.set_xlabel("cells per direction")
        ax.set_ylabel("relative L1 error")
        ax.set_title(f"test {test_id}")
        ax.legend()
        ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vofml", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="generate the synthetic flux dataset")
    p.add_argument("--counts", default="3000,6000,9000,6000",
                   help="base configurations per family (planes 1..3, ellipsoid)")
    p.add_argument("--beta-max", type=float, default=0.6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--surface-points", type=int, default=10000)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("train", help="train the flux network on a dataset file")
    p.add_argument("--dataset", required=True)
    p.add_argument("--epochs-adam", type=int, default=5000)
    p.add_argument("--steps-lbfgs", type=int, default=5000)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--naive-split", action="store_true",
                   help="split rows instead of augmentation groups")
    p.add_argument("--no-switch-augment", action="store_true",
                   help="train without the material-switched twin rows")
    p.add_argument("--full-bfgs", action="store_true",
                   help="dense quasi-Newton phase instead of limited memory")
    p.add_argument("--train-wrapped", action="store_true",
                   help="train through the symmetry wrappers (ablation)")
    p.add_argument("--log-every", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-net", help="flux errors of all schemes on a dataset")
    p.add_argument("--weights", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_eval_net)

    p = sub.add_parser("run-test", help="advect a benchmark shape and report errors")
    p.add_argument("--test", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--scheme", default="uw,ld,vofml",
                   help="comma separated subset of uw, ld, vofml")
    p.add_argument("--nh", default=",".join(str(n) for n in ex.DEFAULT_NH))
    p.add_argument("--full", action="store_true",
                   help="use the full mesh list up to 105 cells (hours)")
    p.add_argument("--weights", default=None)
    p.add_argument("--eps-mark", type=float, default=ex.DEFAULT_EPS_MARK)
    p.add_argument("--n-sub", type=int, default=ex.DEFAULT_N_SUB)
    p.add_argument("--track-extrema", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run_test)

    p = sub.add_parser("convergence", help="fit convergence rates from summary files")
    p.add_argument("--in", dest="in_dir", required=True)
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("plots", help="log-log error plots from summary files")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", default="errors.png")
    p.set_defaults(func=cmd_plots)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
