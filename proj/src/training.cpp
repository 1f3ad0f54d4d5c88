#include "patchtts/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "patchtts/rng.hpp"

namespace patchtts {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (steps < 1) fail("steps must be >= 1");
  if (warmup_steps < 0 || warmup_steps >= steps) fail("warmup_steps must be in [0, steps)");
  if (!(lr_start > 0.0) || lr_end < 0.0 || lr_end > lr_start) fail("need 0 <= lr_end <= lr_start, lr_start > 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) fail("betas must be in [0, 1)");
  if (weight_decay < 0.0) fail("weight_decay must be >= 0");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(clip_norm > 0.0)) fail("clip_norm must be positive");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (flux_beta < 0.0) fail("flux_beta must be >= 0");
  if (!(flux_eps > 0.0)) fail("flux_eps must be positive");
  if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"steps", c.steps},
                     {"warmup_steps", c.warmup_steps},
                     {"lr_start", c.lr_start},
                     {"lr_end", c.lr_end},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"weight_decay", c.weight_decay},
                     {"adam_eps", c.adam_eps},
                     {"clip_norm", c.clip_norm},
                     {"batch_size", c.batch_size},
                     {"seed", c.seed},
                     {"flux_beta", c.flux_beta},
                     {"flux_eps", c.flux_eps},
                     {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("steps", d.steps);
  get("warmup_steps", d.warmup_steps);
  get("lr_start", d.lr_start);
  get("lr_end", d.lr_end);
  get("beta1", d.beta1);
  get("beta2", d.beta2);
  get("weight_decay", d.weight_decay);
  get("adam_eps", d.adam_eps);
  get("clip_norm", d.clip_norm);
  get("batch_size", d.batch_size);
  get("seed", d.seed);
  get("flux_beta", d.flux_beta);
  get("flux_eps", d.flux_eps);
  get("checkpoint_every", d.checkpoint_every);
  c = d;
}

double lr_at(const TrainConfig& cfg, int step) {
  if (step <= 0) return 0.0;
  if (step < cfg.warmup_steps) return cfg.lr_start * step / cfg.warmup_steps;
  if (step >= cfg.steps) return cfg.lr_end;
  const double frac = static_cast<double>(step - cfg.warmup_steps) / (cfg.steps - cfg.warmup_steps);
  return cfg.lr_start + (cfg.lr_end - cfg.lr_start) * frac;
}

void AdamW::step(ParamStore& params, double lr) {
  if (m_.empty()) {
    for (const Parameter& p : params) {
      m_.emplace_back(p.value.size(), 0.0);
      v_.emplace_back(p.value.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw std::logic_error("AdamW: parameter set changed between steps");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    auto& m = m_[i];
    auto& v = v_[i];
    const double wd = p.decay ? wd_ : 0.0;
    for (size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad.data[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
      const double update = (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps_);
      p.value.data[k] -= lr * (update + wd * p.value.data[k]);
    }
  }
}

double clip_grad_norm(ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (const Parameter& p : params)
    for (double g : p.grad.data) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (Parameter& p : params)
      for (double& g : p.grad.data) g *= s;
  }
  return norm;
}

TrainResult train(Model& model, std::span<const Example> data, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train: dataset is empty");
  Rng rng(derive_seed(cfg.seed, "train"));
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), size_t{0});
  size_t cursor = order.size();  // forces a shuffle before the first batch

  AdamW opt(cfg);
  ParamStore& params = model.params();
  TrainResult result;
  std::vector<Example> batch;
  for (int s = 0; s < cfg.steps; ++s) {
    batch.clear();
    while (static_cast<int>(batch.size()) < cfg.batch_size) {
      if (cursor == order.size()) {
        for (size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
        cursor = 0;
      }
      batch.push_back(data[order[cursor++]]);
    }

    StepLog row;
    row.step = s;
    row.lr = lr_at(cfg, s + 1);
    try {
      params.zero_grad();
      Graph g;
      const LossParts loss = model.forward_loss(g, batch, cfg.flux_beta, cfg.flux_eps);
      row.ce = loss.ce.value().item();
      row.flux = loss.flux.value().item();
      row.total = loss.total.value().item();
      g.backward(loss.total);
      const double norm = clip_grad_norm(params, cfg.clip_norm);
      if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm at step " + std::to_string(s));
    } catch (const NumericError& e) {
      result.aborted = true;
      result.error = e.what();
      if (hooks.checkpoint) hooks.checkpoint(result.completed, true);
      return result;
    }
    opt.step(params, row.lr);
    result.completed = s + 1;
    result.log.push_back(row);
    if (hooks.on_step) hooks.on_step(row);
    if (hooks.checkpoint && cfg.checkpoint_every > 0 && result.completed % cfg.checkpoint_every == 0 &&
        result.completed != cfg.steps)
      hooks.checkpoint(result.completed, false);
  }
  if (hooks.checkpoint) hooks.checkpoint(result.completed, false);
  return result;
}

void write_log_csv(const std::filesystem::path& path, std::span<const StepLog> log) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "step,lr,ce,flux,total\n";
  char buf[256];
  for (const StepLog& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", r.step, r.lr, r.ce, r.flux, r.total);
    os << buf;
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace patchtts
