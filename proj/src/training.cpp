#include "crann/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>

#include "crann/crann.hpp"
#include "crann/error.hpp"

namespace crann {

std::size_t TrainConfig::effective_decay_patience() const {
  return decay_patience > 0 ? decay_patience : std::max<std::size_t>(1, patience / 2);
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!(initial_lr > 0.0) || !std::isfinite(initial_lr)) throw ConfigError("initial_lr must be positive");
  if (!(decay_factor > 0.0 && decay_factor < 1.0)) throw ConfigError("decay_factor must lie in (0, 1)");
  if (max_epochs == 0) throw ConfigError("max_epochs must be at least 1");
  if (mode != "joint" && mode != "pretrain") throw ConfigError("training mode must be joint or pretrain");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size}, {"initial_lr", initial_lr},     {"max_epochs", max_epochs},
          {"patience", patience},     {"decay_factor", decay_factor}, {"decay_patience", decay_patience},
          {"seed", seed},             {"mode", mode},                 {"freeze_pretrained", freeze_pretrained}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.initial_lr = j.value("initial_lr", c.initial_lr);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.decay_factor = j.value("decay_factor", c.decay_factor);
  c.decay_patience = j.value("decay_patience", c.decay_patience);
  c.seed = j.value("seed", c.seed);
  c.mode = j.value("mode", c.mode);
  c.freeze_pretrained = j.value("freeze_pretrained", c.freeze_pretrained);
  c.validate();
  return c;
}

std::vector<double> TrainReport::train_curve(const std::string& phase) const {
  std::vector<double> v;
  for (const auto& e : epochs)
    if (e.phase == phase) v.push_back(e.train_loss);
  return v;
}

std::vector<double> TrainReport::validation_curve(const std::string& phase) const {
  std::vector<double> v;
  for (const auto& e : epochs)
    if (e.phase == phase) v.push_back(e.validation_loss);
  return v;
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json ep = nlohmann::json::array();
  for (const auto& e : epochs)
    ep.push_back({{"phase", e.phase},
                  {"epoch", e.epoch},
                  {"train_loss", e.train_loss},
                  {"validation_loss", e.validation_loss},
                  {"lr", e.lr}});
  return {{"epochs", ep},
          {"stopping_epoch", stopping_epoch},
          {"best_epoch", best_epoch},
          {"best_validation_loss", best_validation_loss},
          {"seconds", seconds},
          {"metrics", metrics}};
}

namespace {

using LossFn = std::function<Tensor(const Batch&, bool)>;

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> order, std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + size)));
  // a lone trailing sample would give batch norm a degenerate batch
  if (out.size() > 1 && out.back().size() == 1) out.pop_back();
  return out;
}

double mean_loss(const LossFn& loss, const SpotDataset& data, std::span<const std::size_t> samples,
                 std::size_t batch_size) {
  NoGradGuard guard;
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); i += batch_size) {
    auto chunk = samples.subspan(i, std::min(batch_size, samples.size() - i));
    total += loss(make_batch(data, chunk), false).item() * static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(samples.size());
}

struct PhaseResult {
  std::size_t epochs = 0, best_epoch = 0;
  double best = 0.0;
};

PhaseResult run_phase(const std::string& phase, Forecaster& model, const LossFn& loss, ParameterSet& trained,
                      const SpotDataset& data, const Fold& fold, const TrainConfig& cfg, TrainReport& report) {
  Rng rng = Rng(cfg.seed).split("shuffle").split(phase);
  AdamState adam;
  double lr = cfg.initial_lr;
  auto& all = model.parameters();
  std::vector<double> best_state = all.snapshot();
  PhaseResult r;
  r.best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0, since_decay = 0;
  std::vector<std::size_t> order(fold.train.begin(), fold.train.end());
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double total = 0.0;
    std::size_t seen = 0;
    for (const auto& idx : make_batches(order, cfg.batch_size)) {
      all.zero_grad();
      auto l = loss(make_batch(data, idx), true);
      const double v = l.item();
      if (!std::isfinite(v))
        throw TrainingError("training loss became non-finite in " + phase + " epoch " + std::to_string(epoch));
      backward(l);
      adam_step(trained.tensors(), adam, lr);
      total += v * static_cast<double>(idx.size());
      seen += idx.size();
    }
    const double val = mean_loss(loss, data, fold.validation, 128);
    if (!std::isfinite(val))
      throw TrainingError("validation loss became non-finite in " + phase + " epoch " + std::to_string(epoch));
    report.epochs.push_back({phase, epoch, total / static_cast<double>(seen), val, lr});
    r.epochs = epoch;
    if (val < r.best) {
      r.best = val;
      r.best_epoch = epoch;
      best_state = all.snapshot();
      since_best = since_decay = 0;
    } else {
      ++since_best;
      if (++since_decay >= cfg.effective_decay_patience()) {
        lr *= cfg.decay_factor;
        since_decay = 0;
      }
    }
    if (since_best >= cfg.patience) break;
  }
  all.restore(best_state);
  all.zero_grad();
  return r;
}

}  // namespace

TrainReport train(Forecaster& model, const SpotDataset& data, const Fold& fold, const TrainConfig& cfg) {
  cfg.validate();
  TrainReport report;
  if (!model.trainable()) return report;
  if (fold.train.empty()) throw ContractError("training set is empty");
  if (fold.validation.empty()) throw ContractError("validation set is empty; early stopping needs one");
  const auto start = std::chrono::steady_clock::now();

  PhaseResult last;
  if (cfg.mode == "pretrain") {
    auto* crann = dynamic_cast<CrannModel*>(&model);
    if (!crann) throw ConfigError("pretrain mode applies to the crann model only");
    for (const std::string phase : {"temporal", "spatial"}) {
      LossFn fn = [crann, phase](const Batch& b, bool training) { return crann->phase_loss(b, phase, training); };
      run_phase(phase, model, fn, crann->phase_parameters(phase), data, fold, cfg, report);
    }
    LossFn joint = [&model](const Batch& b, bool training) { return model.loss(b, training); };
    if (cfg.freeze_pretrained) {
      crann->phase_parameters("temporal").set_requires_grad(false);
      crann->phase_parameters("spatial").set_requires_grad(false);
      last = run_phase("joint", model, joint, crann->phase_parameters("dense"), data, fold, cfg, report);
      crann->phase_parameters("temporal").set_requires_grad(true);
      crann->phase_parameters("spatial").set_requires_grad(true);
    } else {
      last = run_phase("joint", model, joint, model.parameters(), data, fold, cfg, report);
    }
  } else {
    LossFn joint = [&model](const Batch& b, bool training) { return model.loss(b, training); };
    last = run_phase("joint", model, joint, model.parameters(), data, fold, cfg, report);
  }
  report.stopping_epoch = last.epochs;
  report.best_epoch = last.best_epoch;
  report.best_validation_loss = last.best;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

double validation_loss(Forecaster& model, const SpotDataset& data, std::span<const std::size_t> samples,
                       std::size_t batch_size) {
  if (samples.empty()) throw ContractError("no samples to evaluate");
  return mean_loss([&model](const Batch& b, bool training) { return model.loss(b, training); }, data, samples,
                   batch_size);
}

namespace {

void require_normalization(const NormalizationParams& norm, std::size_t sensors) {
  if (norm.traffic.size() != sensors)
    throw ContractError("normalization parameters cover " + std::to_string(norm.traffic.size()) + " of " +
                        std::to_string(sensors) + " sensors; cannot denormalize");
  for (std::size_t s = 0; s < sensors; ++s) {
    const auto& m = norm.traffic[s];
    if (!std::isfinite(m.min) || !std::isfinite(m.max) || !(m.max > m.min))
      throw ContractError("normalization range for sensor " + std::to_string(s) + " is unusable");
  }
}

}  // namespace

std::vector<Matrix> predict(Forecaster& model, const SpotDataset& data, std::span<const std::size_t> samples) {
  return predict(model, data, samples, data.params());
}

MetricResult evaluate(Forecaster& model, const SpotDataset& data, std::span<const std::size_t> samples) {
  return evaluate(model, data, samples, data.params());
}

std::vector<Matrix> predict(Forecaster& model, const SpotDataset& data, std::span<const std::size_t> samples,
                            const NormalizationParams& norm, std::size_t batch_size) {
  const auto S = data.n_sensors(), T = data.window().horizon;
  require_normalization(norm, S);
  NoGradGuard guard;
  std::vector<Matrix> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); i += batch_size) {
    auto chunk = samples.subspan(i, std::min(batch_size, samples.size() - i));
    auto pred = model.forward(make_batch(data, chunk), false);
    if (pred.shape() != Shape{chunk.size(), T, S})
      throw DimensionError(model.kind() + " returned " + shape_str(pred.shape()) + " instead of [" +
                           std::to_string(chunk.size()) + "x" + std::to_string(T) + "x" + std::to_string(S) + "]");
    const auto& v = pred.values();
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      Matrix m(T, S);
      for (std::size_t h = 0; h < T; ++h)
        for (std::size_t s = 0; s < S; ++s) m(h, s) = norm.invert(s, v[(b * T + h) * S + s]);
      out.push_back(std::move(m));
    }
  }
  return out;
}

MetricResult evaluate(Forecaster& model, const SpotDataset& data, std::span<const std::size_t> samples,
                      const NormalizationParams& norm, std::size_t batch_size) {
  if (samples.empty()) throw ContractError("no samples to evaluate");
  const auto preds = predict(model, data, samples, norm, batch_size);
  MetricAccumulator acc;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto target = data.sample(samples[i]).target;
    for (std::size_t h = 0; h < target.rows(); ++h)
      for (std::size_t s = 0; s < target.cols(); ++s) target(h, s) = data.params().invert(s, target(h, s));
    acc.add(preds[i], target);
  }
  return acc.result();
}

}  // namespace crann
