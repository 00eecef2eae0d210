#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "rsdh/checkpoint.hpp"
#include "rsdh/data.hpp"
#include "rsdh/network.hpp"

namespace rsdh {

struct TrainConfig {
  double lr_init = 2e-4;
  double lr_min = 1e-6;
  std::uint64_t total_steps = 1000;
  std::size_t batch = 4;
  std::size_t patch = 64;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  /// Write a checkpoint every this many steps; 0 disables periodic ones.
  std::uint64_t checkpoint_interval = 0;
  /// Checkpoints go here as step_<n>.rsdh and final.rsdh; empty disables them.
  std::filesystem::path checkpoint_dir;
  /// Append-only CSV (step,lr,loss,wallclock); empty disables it.
  std::filesystem::path log_path;

  void validate() const;
};

/// lr_min + (lr_init - lr_min) * (1 + cos(pi * step / total_steps)) / 2.
/// Both endpoints are returned exactly.
double cosine_lr(std::uint64_t step, const TrainConfig& cfg);

struct OptimState {
  ParamSet<float> m;
  ParamSet<float> v;
  std::uint64_t step = 0;

  static OptimState zeros_like(const ParamSet<float>& params);
};

/// One bias-corrected Adam update. `grads` must hold an entry for every
/// parameter with the same shape. Throws NumericError naming the parameter
/// on a non-finite gradient, before anything is modified.
void adam_step(ParamSet<float>& params, const ParamSet<float>& grads, OptimState& state, double lr, const TrainConfig& cfg);

struct TrainState {
  Model<float> model;
  OptimState optim;
};

TrainState fresh_state(const ModelConfig& cfg, std::uint64_t seed);

TensorArchive to_archive(const TrainState& state);
TrainState from_archive(const TensorArchive& archive);
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

struct StepRecord {
  std::uint64_t step = 0;  // 1-based count of completed steps
  double lr = 0.0;
  double loss = 0.0;
  double wallclock = 0.0;  // seconds since train_loop started
};

/// L1 loss and parameter gradients for one batch.
double loss_and_grads(const Model<float>& model, const Batch& batch, ParamSet<float>& grads);

/// Runs steps state.optim.step .. cfg.total_steps - 1. Step s trains on
/// sample_patches(data, patch, batch, derive_seed(seed, s)) with
/// cosine_lr(s), so a run resumed from a checkpoint matches an uninterrupted
/// one bit for bit. Throws NumericError on a non-finite loss or gradient;
/// checkpoints already written are left in place.
std::vector<StepRecord> train_loop(TrainState& state, const std::vector<ImagePair>& data, const TrainConfig& cfg,
                                   const std::function<void(const StepRecord&)>& on_step = {});

}  // namespace rsdh
