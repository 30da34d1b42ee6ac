#include "crann/interpretability.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "crann/error.hpp"

namespace crann {

namespace {

void require_samples(std::span<const std::size_t> samples, const char* what) {
  if (samples.empty()) throw ContractError(std::string(what) + " needs at least one sample");
}

template <typename Fn>
void for_batches(const SpotDataset& data, std::span<const std::size_t> samples, std::size_t batch_size, Fn&& fn) {
  for (std::size_t i = 0; i < samples.size(); i += batch_size)
    fn(make_batch(data, samples.subspan(i, std::min(batch_size, samples.size() - i))));
}

}  // namespace

Matrix temporal_attention_summary(CrannModel& model, const SpotDataset& data, std::span<const std::size_t> samples,
                                  std::size_t batch_size) {
  require_samples(samples, "temporal attention summary");
  NoGradGuard guard;
  const auto T = model.settings().temporal.horizon, L = model.settings().temporal.lookback;
  Matrix sum(T, L);
  for_batches(data, samples, batch_size, [&](const Batch& b) {
    auto att = model.temporal.forward(b.temporal, false).attention;
    const auto& v = att.values();
    for (std::size_t n = 0; n < b.size; ++n)
      for (std::size_t k = 0; k < T * L; ++k) sum.data()[k] += v[n * T * L + k];
  });
  for (auto& x : sum.data()) x /= static_cast<double>(samples.size());
  return sum;
}

double seasonal_lag_weight(const Matrix& summary, std::size_t period) {
  const auto T = summary.rows(), L = summary.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < T; ++i) {
    double mass = 0.0;
    std::size_t count = 0;
    // step i is i + L - j hours after encoder position j
    for (std::size_t j = 0; j < L; ++j)
      if ((i + L - j) % period == 0) {
        mass += summary(i, j);
        ++count;
      }
    total += count ? mass / static_cast<double>(count) : 0.0;
  }
  return total / static_cast<double>(T);
}

std::vector<double> spatial_attention_tensor(CrannModel& model, const SpotDataset& data,
                                             std::span<const std::size_t> samples, std::size_t batch_size) {
  require_samples(samples, "spatial attention summary");
  NoGradGuard guard;
  const auto S = model.n_sensors(), T = model.settings().spatial.lags;
  std::vector<double> sum(T * S * S, 0.0);
  for_batches(data, samples, batch_size, [&](const Batch& b) {
    auto att = model.spatial.forward(b.spatial, false).attention;
    const auto& v = att.values();
    for (std::size_t n = 0; n < b.size; ++n)
      for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += v[n * sum.size() + k];
  });
  for (auto& x : sum) x /= static_cast<double>(samples.size());
  return sum;
}

SpatialAttentionSummary spatial_attention_summary(CrannModel& model, const SpotDataset& data,
                                                  std::span<const std::size_t> samples, std::size_t batch_size) {
  const auto full = spatial_attention_tensor(model, data, samples, batch_size);
  const auto S = model.n_sensors(), T = model.settings().spatial.lags;
  SpatialAttentionSummary s;
  s.sensor_ids = data.params().sensor_ids;
  s.pairwise = Matrix(S, S);
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t jk = 0; jk < S * S; ++jk) s.pairwise.data()[jk] += full[i * S * S + jk] / static_cast<double>(T);
  s.per_sensor.assign(S, 0.0);
  for (std::size_t j = 0; j < S; ++j)
    for (std::size_t k = 0; k < S; ++k) s.per_sensor[k] += s.pairwise(j, k) / static_cast<double>(S);
  return s;
}

nlohmann::json ShapleyConfig::to_json() const {
  return {{"permutations", permutations}, {"seed", seed}, {"background", background}};
}

ShapleyConfig ShapleyConfig::from_json(const nlohmann::json& j) {
  ShapleyConfig c;
  c.permutations = j.value("permutations", c.permutations);
  c.seed = j.value("seed", c.seed);
  c.background = j.value("background", c.background);
  if (c.permutations == 0) throw ConfigError("shapley permutations must be at least 1");
  if (c.background != "mean" && c.background != "sample")
    throw ConfigError("shapley background must be mean or sample");
  return c;
}

nlohmann::json AttributionReport::to_json() const {
  nlohmann::json g = nlohmann::json::array();
  for (std::size_t i = 0; i < groups.size(); ++i) g.push_back({{"group", groups[i]}, {"mean_abs_shap", mean_abs[i]}});
  return {{"groups", g}, {"permutations", permutations}, {"samples", samples}, {"outputs", outputs}};
}

AttributionReport shapley_mc(const FeatureFn& fn, const Matrix& background, const Matrix& explain,
                             const std::vector<FeatureGroup>& groups, const ShapleyConfig& cfg) {
  if (background.rows() == 0) throw ContractError("shapley needs a non-empty background set");
  if (explain.rows() == 0) throw ContractError("shapley needs at least one sample to explain");
  if (cfg.permutations == 0) throw ConfigError("shapley permutations must be at least 1");
  const auto F = background.cols(), G = groups.size(), P = cfg.permutations;
  if (explain.cols() != F) throw DimensionError("background and explained samples have different feature counts");
  for (const auto& g : groups)
    for (auto i : g.indices)
      if (i >= F) throw DimensionError("feature group '" + g.name + "' indexes past the feature vector");

  std::vector<double> mean(F, 0.0);
  for (std::size_t r = 0; r < background.rows(); ++r)
    for (std::size_t f = 0; f < F; ++f) mean[f] += background(r, f);
  for (auto& m : mean) m /= static_cast<double>(background.rows());

  Rng rng = Rng(cfg.seed).split("shapley");
  std::vector<std::vector<std::size_t>> perms(P, std::vector<std::size_t>(G));
  std::vector<std::size_t> refs(P, 0);
  for (std::size_t p = 0; p < P; ++p) {
    std::iota(perms[p].begin(), perms[p].end(), 0);
    std::shuffle(perms[p].begin(), perms[p].end(), rng.engine());
    if (cfg.background == "sample") refs[p] = rng.index(background.rows());
  }

  NoGradGuard guard;
  AttributionReport rep;
  rep.permutations = P;
  rep.samples = explain.rows();
  rep.mean_abs.assign(G, 0.0);
  for (const auto& g : groups) rep.groups.push_back(g.name);
  std::size_t outputs = 0;
  for (std::size_t n = 0; n < explain.rows(); ++n) {
    // all coalitions of every permutation in one batch: P * (G + 1) rows
    std::vector<double> rows(P * (G + 1) * F);
    for (std::size_t p = 0; p < P; ++p) {
      double* z = rows.data() + p * (G + 1) * F;
      if (cfg.background == "sample") {
        for (std::size_t f = 0; f < F; ++f) z[f] = background(refs[p], f);
      } else {
        std::copy(mean.begin(), mean.end(), z);
      }
      for (std::size_t step = 0; step < G; ++step) {
        double* next = z + (step + 1) * F;
        std::copy(z + step * F, z + (step + 1) * F, next);
        for (auto i : groups[perms[p][step]].indices) next[i] = explain(n, i);
      }
    }
    auto out = fn(Tensor::from({P * (G + 1), F}, std::move(rows)));
    const auto& y = out.values();
    const auto O = out.numel() / (P * (G + 1));
    outputs = O;
    std::vector<double> phi(G * O, 0.0);
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t step = 0; step < G; ++step) {
        const double* before = y.data() + (p * (G + 1) + step) * O;
        const double* after = before + O;
        double* dst = phi.data() + perms[p][step] * O;
        for (std::size_t o = 0; o < O; ++o) dst[o] += after[o] - before[o];
      }
    for (std::size_t g = 0; g < G; ++g) {
      double s = 0.0;
      for (std::size_t o = 0; o < O; ++o) s += std::abs(phi[g * O + o] / static_cast<double>(P));
      rep.mean_abs[g] += s / static_cast<double>(O);
    }
  }
  for (auto& v : rep.mean_abs) v /= static_cast<double>(explain.rows());
  rep.outputs = outputs;
  return rep;
}

Matrix crann_features(CrannModel& model, const SpotDataset& data, std::span<const std::size_t> samples,
                      std::size_t batch_size) {
  NoGradGuard guard;
  const auto F = model.layout().size();
  Matrix out(samples.size(), F);
  std::size_t row = 0;
  for_batches(data, samples, batch_size, [&](const Batch& b) {
    auto f = model.forward_detailed(b, false).features;
    std::copy(f.values().begin(), f.values().end(), out.data().begin() + static_cast<std::ptrdiff_t>(row * F));
    row += b.size;
  });
  return out;
}

AttributionReport explain_dense(CrannModel& model, const SpotDataset& data,
                                std::span<const std::size_t> background_samples,
                                std::span<const std::size_t> explain_samples, const ShapleyConfig& cfg) {
  if (background_samples.empty()) throw ContractError("shapley needs a non-empty background set");
  require_samples(explain_samples, "shapley");
  const auto background = crann_features(model, data, background_samples);
  const auto explain = crann_features(model, data, explain_samples);
  return shapley_mc([&model](const Tensor& x) { return model.dense_stage(x); }, background, explain,
                    model.layout().groups(data.params().sensor_ids), cfg);
}

void write_temporal_csv(std::ostream& out, const Matrix& summary) {
  const auto L = summary.cols();
  out << "horizon";
  for (std::size_t j = 0; j < L; ++j) out << ",t-" << (L - j);
  out << '\n';
  out.precision(17);
  for (std::size_t i = 0; i < summary.rows(); ++i) {
    out << "t+" << i;
    for (std::size_t j = 0; j < L; ++j) out << ',' << summary(i, j);
    out << '\n';
  }
}

void write_pairwise_csv(std::ostream& out, const SpatialAttentionSummary& s) {
  out << "target";
  for (const auto& id : s.sensor_ids) out << ',' << id;
  out << '\n';
  out.precision(17);
  for (std::size_t j = 0; j < s.pairwise.rows(); ++j) {
    out << s.sensor_ids.at(j);
    for (std::size_t k = 0; k < s.pairwise.cols(); ++k) out << ',' << s.pairwise(j, k);
    out << '\n';
  }
}

void write_per_sensor_csv(std::ostream& out, const SpatialAttentionSummary& s) {
  out << "sensor_id,mean_attention\n";
  out.precision(17);
  for (std::size_t k = 0; k < s.per_sensor.size(); ++k) out << s.sensor_ids.at(k) << ',' << s.per_sensor[k] << '\n';
}

void write_attribution_csv(std::ostream& out, const AttributionReport& r) {
  out << "group,mean_abs_shap\n";
  out.precision(17);
  for (std::size_t g = 0; g < r.groups.size(); ++g) out << r.groups[g] << ',' << r.mean_abs[g] << '\n';
}

}  // namespace crann
