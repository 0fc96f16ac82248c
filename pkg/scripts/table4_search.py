"""Annealing search over 107 candidates (5 covariates, X2^2, X1*X5, 100 noise)."""

import argparse

from tailcombo.simstudy import CORE, SimConfig, contains_core, generate, run_automated_search, search_candidates


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--chains", type=int, default=8)
    ap.add_argument("--budget", type=int, default=250, help="proposals per chain")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--checkpoint", default=None)
    ap.add_argument("--resume", action="store_true")
    args = ap.parse_args()
    cfg = SimConfig(seed=args.seed, n_noise_covariates=100)
    rec = run_automated_search(cfg, args.chains, args.budget, workers=args.workers,
                               checkpoint_path=args.checkpoint, resume=args.resume)
    cands = search_candidates(generate(cfg))
    print(f"{len(rec.visited)} strings scored")
    for rank, (bits, cv) in enumerate(rec.best_list[:10], 1):
        names = [cands[i].name for i, b in enumerate(bits) if b == "1"]
        core = "core" if contains_core(cands, bits) else "    "
        print(f"{rank:2d} {cv:.4f} {core} {' '.join(names)}")
    print("core:", ", ".join(CORE))


if __name__ == "__main__":
    main()
