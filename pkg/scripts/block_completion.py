"""Blockwise versus global completion of a tensor that is only locally low rank."""
import argparse

from bayes_tucker import FitConfig
from bayes_tucker.btc import fit_btc
from bayes_tucker.evaluation import block_complete, gen_blockwise_synthetic, rrse


def parse_dims(text):
    return tuple(int(v) for v in text.split("x"))


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--shape", type=parse_dims, default=(20, 20, 20))
    p.add_argument("--block", type=parse_dims, default=(10, 10, 10))
    p.add_argument("--rank", type=parse_dims, default=(2, 2, 2), help="rank inside each block")
    p.add_argument("--snr", type=float, default=20.0)
    p.add_argument("--mr", type=float, default=0.3)
    p.add_argument("--global-init", type=parse_dims, default=(10, 10, 10))
    p.add_argument("--block-init", type=parse_dims, default=(8, 8, 8))
    p.add_argument("--seeds", type=int, default=3)
    args = p.parse_args()

    print("seed global_rank rrse_global rrse_block")
    for seed in range(args.seeds):
        y, x, obs = gen_blockwise_synthetic(args.shape, args.block, args.rank, args.snr, args.mr, seed)
        _, _, whole, rep = fit_btc(y, obs, FitConfig(init_rank=args.global_init))
        blocks = block_complete(y, obs, args.block, FitConfig(init_rank=args.block_init))
        print(f"{seed} {'x'.join(map(str, rep.inferred_rank))} "
              f"{rrse(whole.mean, x):.5f} {rrse(blocks.mean, x):.5f}", flush=True)


if __name__ == "__main__":
    main()
