#include "rsdh/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace rsdh {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (!(lr_init >= 0.0) || !std::isfinite(lr_init)) throw std::invalid_argument("TrainConfig: lr_init must be finite and >= 0");
  if (!(lr_min >= 0.0) || !(lr_min <= lr_init)) throw std::invalid_argument("TrainConfig: need 0 <= lr_min <= lr_init");
  if (total_steps < 1) throw std::invalid_argument("TrainConfig: total_steps must be >= 1");
  if (batch < 1) throw std::invalid_argument("TrainConfig: batch must be >= 1");
  if (patch == 0 || patch % 4 != 0) throw std::invalid_argument("TrainConfig: patch must be a positive multiple of 4");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("TrainConfig: betas must be in [0,1)");
  if (!(eps > 0.0)) throw std::invalid_argument("TrainConfig: eps must be positive");
}

double cosine_lr(std::uint64_t step, const TrainConfig& cfg) {
  if (step > cfg.total_steps) {
    throw std::out_of_range("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(cfg.total_steps) + "]");
  }
  const double f = 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(cfg.total_steps)));
  return cfg.lr_init * f + cfg.lr_min * (1.0 - f);
}

OptimState OptimState::zeros_like(const ParamSet<float>& params) {
  OptimState s;
  for (const auto& [name, t] : params.entries()) {
    s.m.add(name, Tensor<float>::zeros(t.shape()));
    s.v.add(name, Tensor<float>::zeros(t.shape()));
  }
  return s;
}

void adam_step(ParamSet<float>& params, const ParamSet<float>& grads, OptimState& state, double lr, const TrainConfig& cfg) {
  for (const auto& [name, p] : params.entries()) {
    const Tensor<float>& g = grads.at(name);
    require_shape("adam_step", g.shape(), p.shape());
    require_shape("adam_step", state.m.at(name).shape(), p.shape());
    require_shape("adam_step", state.v.at(name).shape(), p.shape());
    if (!all_finite(g)) throw NumericError("adam_step: non-finite gradient for parameter '" + name + "'");
  }
  const std::uint64_t t = state.step + 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& [name, p] : params.entries()) {
    const auto g = grads.at(name).data();
    auto m = state.m.at(name).data();
    auto v = state.v.at(name).data();
    auto w = p.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      m[i] = static_cast<float>(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi);
      v[i] = static_cast<float>(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi);
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      w[i] = static_cast<float>(w[i] - lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
  state.step = t;
}

TrainState fresh_state(const ModelConfig& cfg, std::uint64_t seed) {
  TrainState s{build_model(cfg, seed), {}};
  s.optim = OptimState::zeros_like(s.model.params);
  return s;
}

// Step counts are stored as two floats (high and low 16 bits) so every value
// below 2^40 is exact.
TensorArchive to_archive(const TrainState& state) {
  TensorArchive a;
  a.add("model.config", state.model.config.encode());
  const std::uint64_t step = state.optim.step;
  a.add("train.step", Tensor<float>({2}, {static_cast<float>(step >> 16), static_cast<float>(step & 0xFFFF)}));
  for (const auto& [name, t] : state.model.params.entries()) a.add("model." + name, t);
  for (const auto& [name, t] : state.optim.m.entries()) a.add("adam_m." + name, t);
  for (const auto& [name, t] : state.optim.v.entries()) a.add("adam_v." + name, t);
  return a;
}

TrainState from_archive(const TensorArchive& a) {
  TrainState s{build_model(ModelConfig::decode(a.at("model.config")), 0), {}};
  s.optim = OptimState::zeros_like(s.model.params);
  auto restore = [&](ParamSet<float>& set, const std::string& prefix, bool required) {
    for (auto& [name, t] : set.entries()) {
      const std::string key = prefix + name;
      if (!a.contains(key)) {
        if (required) throw ArchiveError("checkpoint is missing '" + key + "'");
        continue;
      }
      const Tensor<float>& stored = a.at(key);
      if (stored.shape() != t.shape()) {
        throw ArchiveError("checkpoint entry '" + key + "' has shape " + shape_to_string(stored.shape()) + ", model expects " +
                           shape_to_string(t.shape()));
      }
      t = stored;
    }
  };
  restore(s.model.params, "model.", true);
  const bool has_optim = a.contains("train.step");
  restore(s.optim.m, "adam_m.", has_optim);
  restore(s.optim.v, "adam_v.", has_optim);
  if (has_optim) {
    const Tensor<float>& st = a.at("train.step");
    if (st.shape() != Shape{2}) throw ArchiveError("checkpoint entry 'train.step' is malformed");
    s.optim.step = (static_cast<std::uint64_t>(st[0]) << 16) + static_cast<std::uint64_t>(st[1]);
  }
  return s;
}

void save_checkpoint(const fs::path& path, const TrainState& state) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = fs::path(path).concat(".tmp");
  to_archive(state).save(tmp);
  fs::rename(tmp, path);
}

TrainState load_checkpoint(const fs::path& path) { return from_archive(TensorArchive::load(path)); }

double loss_and_grads(const Model<float>& model, const Batch& batch, ParamSet<float>& grads) {
  Tape<float> tape;
  const auto bound = BoundParams<float>::track(tape, model.params);
  const Var<float> pred = forward(ParamScope<float>(bound), model.config, Var<float>(batch.hazy));
  const Var<float> loss = l1_loss(pred, Var<float>(batch.clear));
  const double value = loss.value().item();
  if (!std::isfinite(value)) throw NumericError("training loss is not finite");
  const GradMap<float> g = backward(tape, loss);
  grads = ParamSet<float>();
  for (const auto& [name, _] : model.params.entries()) grads.add(name, g.by_name(name));
  return value;
}

std::vector<StepRecord> train_loop(TrainState& state, const std::vector<ImagePair>& data, const TrainConfig& cfg,
                                   const std::function<void(const StepRecord&)>& on_step) {
  cfg.validate();
  if (state.optim.step > cfg.total_steps) {
    throw std::invalid_argument("train_loop: state is at step " + std::to_string(state.optim.step) + ", beyond total_steps");
  }
  std::ofstream log;
  if (!cfg.log_path.empty()) {
    if (cfg.log_path.has_parent_path()) fs::create_directories(cfg.log_path.parent_path());
    const bool fresh = !fs::exists(cfg.log_path) || fs::file_size(cfg.log_path) == 0;
    log.open(cfg.log_path, std::ios::app);
    if (!log) throw std::runtime_error("cannot open training log '" + cfg.log_path.string() + "'");
    if (fresh) log << "step,lr,loss,wallclock\n";
  }
  const auto start = std::chrono::steady_clock::now();
  std::vector<StepRecord> records;
  ParamSet<float> grads;
  while (state.optim.step < cfg.total_steps) {
    const std::uint64_t s = state.optim.step;
    const double lr = cosine_lr(s, cfg);
    const Batch batch = sample_patches(data, cfg.patch, cfg.batch, derive_seed(cfg.seed, s));
    const double loss = loss_and_grads(state.model, batch, grads);
    adam_step(state.model.params, grads, state.optim, lr, cfg);

    StepRecord rec{state.optim.step, lr, loss, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
    records.push_back(rec);
    if (log) {
      char line[128];
      std::snprintf(line, sizeof line, "%llu,%.9g,%.9g,%.3f\n", static_cast<unsigned long long>(rec.step), rec.lr, rec.loss, rec.wallclock);
      log << line << std::flush;
    }
    if (on_step) on_step(rec);
    if (!cfg.checkpoint_dir.empty() && cfg.checkpoint_interval > 0 && rec.step % cfg.checkpoint_interval == 0 &&
        rec.step != cfg.total_steps) {
      save_checkpoint(cfg.checkpoint_dir / ("step_" + std::to_string(rec.step) + ".rsdh"), state);
    }
  }
  if (!cfg.checkpoint_dir.empty()) save_checkpoint(cfg.checkpoint_dir / "final.rsdh", state);
  return records;
}

}  // namespace rsdh
