"""
Ten-fold benchmark with train-versus-test uncertainty
======================================================

The fixed-seed benchmark behind the acceptance floors. Takes roughly 12
minutes single-threaded.
"""

from afvae import benchmark as B
from afvae.dataset import make_folds
from afvae.train import aggregate_metrics, cross_validate
from afvae.uncertainty import fold_summary_csv, train_vs_test_report

X, y = B.arrays()
results = cross_validate(X, y, B.MODEL, B.TRAIN, out_dir="benchmark_run")
for r in results:
    print("fold %d  sens %.3f spec %.3f acc %.3f" % (r.fold_index, r.sensitivity, r.specificity, r.accuracy))
print("mean", aggregate_metrics(results))

plan = make_folds(len(X), B.TRAIN.k_folds, B.TRAIN.seed)
print(fold_summary_csv(train_vs_test_report(results, X, plan, 5, seed=B.SEED)))
