"""
Bin size and spatial stride
===========================

Small bins cut quantisation error but spread noisy votes thin; large bins
are robust but coarse. The best size sits in between. Subsampling the flow
grid trades little accuracy for a large speed-up, since runtime is linear in
the number of flows.
"""

from rotvote.evaluation import sweep_bin_size, sweep_csv, sweep_stride, synthetic_dataset

noisy = synthetic_dataset(n_sequences=1, frames=10, seed=0, noise_sigma=0.3, stride=15)
rows = sweep_bin_size(noisy, [0.005, 0.01, 0.02, 0.04, 0.057, 0.1, 0.2, 0.4], repeats=1)
print("bin size sweep, flow noise 0.3 px")
print(sweep_csv(rows, "bin_deg"))

clean = synthetic_dataset(n_sequences=1, frames=3, seed=1, stride=1)
rows = sweep_stride(clean, [1, 5, 15, 40, 80], repeats=1)
print("stride sweep, noiseless rotation")
print(sweep_csv(rows, "stride"))
