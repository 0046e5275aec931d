"""A small end-to-end continual run: the full method against the plain-SGD
baseline on a reduced stream, evaluated under both protocols at every task
boundary. Takes a couple of minutes on a laptop CPU.

Run:  python demos/05_online_training_run.py
"""

import time

from cvt import ExperimentConfig, emit_report, run_methods
from cvt.trainer import TrainConfig

config = ExperimentConfig(
    dataset="synthetic-10",
    num_tasks=5,
    buffer_capacity=150,
    seeds=(0,),
    output_dir="demo_results",
    train=TrainConfig(),
    train_per_class=250,  # reduced from the stock 500 to keep the demo quick
    test_per_class=50,
)

start = time.time()
summaries = run_methods(config, ["cvt", "sgd_baseline"])
print(f"\ntrained both methods in {time.time() - start:.0f}s\n")

for method, summary in summaries.items():
    tf = summary["protocols"]["task_free"]
    ta = summary["protocols"]["task_aware"]
    print(f"{method:12s} task-free A_T {tf['overall_accuracy']['mean']:5.1f}  "
          f"F_T {tf['forgetting']['mean']:5.1f}   "
          f"task-aware A_T {ta['overall_accuracy']['mean']:5.1f}")

print("\nper-boundary task-free accuracy (tasks observed so far):")
for method, summary in summaries.items():
    curve = [f"{pb['A_i']:.0f}" for pb in
             summary["per_seed"][0]["task_free"]["per_boundary"]]
    print(f"  {method:12s} {' -> '.join(curve)}")

paths = emit_report("demo_results")
print(f"\nwrote {paths['report']}, {paths['accuracy_plot'].name}, "
      f"{paths['forgetting_plot'].name}")
