"""Train the desk-scale model on the templated corpus and report validation scores.

    python3 scripts/overfit_demo.py --seed 13 --epochs 200
"""

import argparse
import time

from hnn4ort.corpus import split
from hnn4ort.evaluation import categorize_errors, pr_curve, prf
from hnn4ort.model import ModelConfig, gold_extraction, predict_records
from hnn4ort.synthetic import templated_records
from hnn4ort.training import train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sentences", type=int, default=64)
    ap.add_argument("--seed", type=int, default=13)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--dropout", type=float, default=0.0)
    args = ap.parse_args()

    records = templated_records(args.sentences, seed=0)
    train_recs, val_recs = split(records, 0.172, seed=13)
    cfg = ModelConfig.desk(seed=args.seed, max_epochs=args.epochs, dropout_p=args.dropout)
    print(f"{len(train_recs)} train / {len(val_recs)} val records")

    start = time.perf_counter()
    model, history = train(
        cfg, train_recs, val_recs,
        on_epoch=lambda s: print(f"epoch {s.epoch:3d}  train {s.train_loss:.4f}  val {s.val_loss:.4f}  "
                                 f"f1 {s.val_f1:.3f}  lr {s.lr:.0e}") if s.epoch % 10 == 0 else None,
    )
    print(f"trained {len(history)} epochs in {time.perf_counter() - start:.0f}s")

    preds = predict_records(model, val_recs)
    golds = [gold_extraction(r) for r in val_recs]
    report = prf(preds, golds, "exact_span")
    print(f"P {report.precision:.3f}  R {report.recall:.3f}  F1 {report.f1:.3f}  "
          f"AUC {pr_curve(preds, golds, 'exact_span').auc:.3f}")
    print("errors", categorize_errors(preds, golds, "exact_span"))


if __name__ == "__main__":
    main()
