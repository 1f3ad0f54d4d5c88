#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchtts/model.hpp"
#include "patchtts/params.hpp"

namespace patchtts {

struct TrainConfig {
  int steps = 3000;
  int warmup_steps = 100;
  double lr_start = 5e-4;
  double lr_end = 2.5e-5;
  double beta1 = 0.9;
  double beta2 = 0.995;
  double weight_decay = 2e-2;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  int batch_size = 16;
  uint64_t seed = 0;
  double flux_beta = 0.01;
  double flux_eps = 1e-3;
  int checkpoint_every = 0;  // 0: only at the end

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Linear 0 -> lr_start over warmup_steps, then linear to lr_end at `steps`,
/// constant lr_end afterwards.
double lr_at(const TrainConfig& cfg, int step);

/// Adam moments with decoupled weight decay:
///   m = b1 m + (1-b1) g,  v = b2 v + (1-b2) g^2
///   p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)   (wd only where decay)
class AdamW {
 public:
  AdamW(double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}
  explicit AdamW(const TrainConfig& c) : AdamW(c.beta1, c.beta2, c.adam_eps, c.weight_decay) {}

  void step(ParamStore& params, double lr);
  int steps_taken() const { return t_; }

 private:
  double beta1_, beta2_, eps_, wd_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before scaling.
double clip_grad_norm(ParamStore& params, double max_norm);

struct StepLog {
  int step = 0;
  double lr = 0.0;
  double ce = 0.0;
  double flux = 0.0;
  double total = 0.0;
};

struct TrainHooks {
  std::function<void(const StepLog&)> on_step;
  /// Called every checkpoint_every steps and at the end with the number of
  /// completed updates. On abort it is called once more with the last good
  /// state and `last_good = true`.
  std::function<void(int completed, bool last_good)> checkpoint;
};

struct TrainResult {
  std::vector<StepLog> log;
  bool aborted = false;
  std::string error;
  int completed = 0;
};

/// Minibatch AdamW on forward_loss. Batches come from a seeded per-epoch
/// shuffle (derive_seed(seed, "train")). The update at step s uses
/// lr_at(s + 1). A non-finite loss or gradient stops training with the
/// parameters left at the last good update.
TrainResult train(Model& model, std::span<const Example> data, const TrainConfig& cfg, const TrainHooks& hooks = {});

/// CSV with header step,lr,ce,flux,total; values printed with 17 significant
/// digits so reruns compare bitwise.
void write_log_csv(const std::filesystem::path& path, std::span<const StepLog> log);

}  // namespace patchtts
