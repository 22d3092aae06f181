"""Held-out rollout accuracy of the learned models versus training length.

    PYTHONPATH=src python3 scripts/sysid_fidelity.py --epochs 500 2000 20000

Trains NNSEM and the hybrid model on 6 m/s-wind maneuver data and prints the 50 s open-loop MAE on
the held-out tail next to the perturbed simplified-dynamics prior.
"""
import argparse

from helmkeeper.models import HybridModel, MlpModel, SDModel
from helmkeeper.sysid import TrainConfig, evaluate_mae, generate_maneuvers, holdout_loss, holdout_split, train
from helmkeeper.vessel import VesselParams, Wind

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, nargs="+", default=[500, 2000])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    plant = VesselParams()
    data = generate_maneuvers(plant, [Wind(6.0, 0.7)], seed=args.seed)
    prior = plant.perturbed(0.2, args.seed)
    base = TrainConfig(seed=args.seed)
    _, test_d = holdout_split(data, base.holdout_fraction)

    print(f"{'model':<8} {'epochs':>7} {'MAE u':>8} {'MAE v':>8} {'MAE r':>8} {'SEM loss':>10}")
    mae = evaluate_mae(SDModel(prior), test_d, base.eval_horizon_s)
    loss = holdout_loss(SDModel(prior), test_d, base.window, base.dt)
    print(f"{'prior':<8} {0:>7} {mae[0]:8.4f} {mae[1]:8.4f} {mae[2]:8.4f} {loss:10.4g}")
    for epochs in args.epochs:
        cfg = TrainConfig(epochs=epochs, seed=args.seed)
        for name, model in (("nnsem", MlpModel.init(seed=args.seed)),
                            ("hybrid", HybridModel(prior, MlpModel.init(seed=args.seed)))):
            _, rep = train(model, data, cfg)
            print(f"{name:<8} {epochs:>7} {rep.mae[0]:8.4f} {rep.mae[1]:8.4f} {rep.mae[2]:8.4f} {rep.holdout_loss:10.4g}",
                  flush=True)
