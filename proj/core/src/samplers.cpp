#include "confopt/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace confopt {

std::string sampler_kind_name(SamplerKind k) {
  switch (k) {
    case SamplerKind::kDarts:
      return "darts";
    case SamplerKind::kGdas:
      return "gdas";
    case SamplerKind::kDrnas:
      return "drnas";
    case SamplerKind::kFairdarts:
      return "fairdarts";
  }
  throw std::invalid_argument("unknown sampler kind");
}

SamplerKind parse_sampler_kind(const std::string& s) {
  if (s == "darts") return SamplerKind::kDarts;
  if (s == "gdas") return SamplerKind::kGdas;
  if (s == "drnas") return SamplerKind::kDrnas;
  if (s == "fairdarts") return SamplerKind::kFairdarts;
  throw std::invalid_argument("unknown sampler kind: " + s);
}

double gdas_tau(const SamplerConfig& cfg, int epoch, int total_epochs) {
  if (total_epochs <= 1) return cfg.tau_end;
  double frac = static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
  frac = std::clamp(frac, 0.0, 1.0);
  return cfg.tau_start + frac * (cfg.tau_end - cfg.tau_start);
}

std::vector<double> darts_weights(const std::vector<double>& alpha_row) {
  double mx = *std::max_element(alpha_row.begin(), alpha_row.end());
  std::vector<double> w(alpha_row.size());
  double z = 0.0;
  for (size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp(alpha_row[i] - mx);
    z += w[i];
  }
  for (auto& v : w) v /= z;
  return w;
}

std::vector<double> fairdarts_weights(const std::vector<double>& alpha_row) {
  std::vector<double> w(alpha_row.size());
  for (size_t i = 0; i < w.size(); ++i) {
    double a = alpha_row[i];
    w[i] = a >= 0 ? 1.0 / (1.0 + std::exp(-a)) : std::exp(a) / (1.0 + std::exp(a));
  }
  return w;
}

double sample_gamma(double a, Philox& rng) {
  if (a <= 0.0) throw std::invalid_argument("sample_gamma: a > 0 required");
  if (a < 1.0) {
    // boost shape by one, then scale by u^(1/a)
    double z = sample_gamma(a + 1.0, rng);
    double u;
    do {
      u = rng.uniform();
    } while (u <= 0.0);
    return z * std::pow(u, 1.0 / a);
  }
  double d = a - 1.0 / 3.0;
  double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::vector<double> drnas_sample_plain(const std::vector<double>& log_conc_row, Philox& rng) {
  std::vector<double> z(log_conc_row.size());
  double s = 0.0;
  for (size_t i = 0; i < z.size(); ++i) {
    double lc = log_conc_row[i];
    if (!std::isfinite(lc)) throw std::invalid_argument("drnas_sample: non-finite concentration");
    z[i] = std::max(sample_gamma(std::exp(lc), rng), 1e-20);
    s += z[i];
  }
  for (auto& v : z) v /= s;
  return z;
}

GdasDraw gdas_draw(const std::vector<double>& alpha_row, double tau, Philox& rng,
                   const std::vector<double>* noise_override) {
  if (tau <= 0.0) throw std::invalid_argument("gdas: tau must be positive");
  std::vector<double> noisy(alpha_row.size());
  for (size_t i = 0; i < noisy.size(); ++i) {
    noisy[i] = (alpha_row[i] + (noise_override ? (*noise_override)[i] : rng.gumbel())) / tau;
  }
  GdasDraw draw;
  draw.soft = darts_weights(noisy);
  draw.chosen_index = static_cast<int>(
      std::max_element(draw.soft.begin(), draw.soft.end()) - draw.soft.begin());
  return draw;
}

std::vector<double> ranking_weights(SamplerKind kind, const std::vector<double>& alpha_row) {
  switch (kind) {
    case SamplerKind::kFairdarts:
      return fairdarts_weights(alpha_row);
    case SamplerKind::kDrnas: {
      // Dirichlet mean: exp(alpha) / sum exp(alpha) == softmax(alpha)
      return darts_weights(alpha_row);
    }
    case SamplerKind::kDarts:
    case SamplerKind::kGdas:
      return darts_weights(alpha_row);
  }
  throw std::invalid_argument("unknown sampler kind");
}

}  // namespace confopt
