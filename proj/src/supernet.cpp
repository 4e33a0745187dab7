#include "mxq/supernet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <sstream>

#include "mxq/ops.hpp"

namespace mxq {

ArchState ArchState::uniform(std::vector<std::string> unit_names, std::vector<int> candidate_bits) {
  if (candidate_bits.empty()) throw Error("arch: empty candidate set");
  if (!std::is_sorted(candidate_bits.begin(), candidate_bits.end()) ||
      std::adjacent_find(candidate_bits.begin(), candidate_bits.end()) != candidate_bits.end()) {
    throw Error("arch: candidate bit-widths must be strictly ascending");
  }
  ArchState a;
  a.candidate_bits = std::move(candidate_bits);
  a.unit_names = std::move(unit_names);
  for (std::size_t u = 0; u < a.unit_names.size(); ++u)
    a.logits.push_back(Tensor::zeros({a.candidate_bits.size()}, true));
  a.last_sample.resize(a.unit_names.size());
  return a;
}

std::uint64_t ArchState::logits_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor& t : logits) {
    for (double v : t.data()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

SizeModel SizeModel::from_model(const Model& model, SearchGranularity g,
                                std::vector<int> candidate_bits, bool count_overhead,
                                bool count_scales) {
  SizeModel s;
  s.candidate_bits = std::move(candidate_bits);
  std::size_t quantized = 0;
  for (const SearchUnit& u : model.search_units(g)) {
    s.unit_params.push_back(u.param_count);
    quantized += u.param_count;
  }
  if (count_overhead) {
    const std::size_t rest = model.total_parameters() - quantized;
    s.overhead_bits = 32.0 * static_cast<double>(rest);
    if (model.config().quantize_frontend) {
      // Front-end and head matrices are stored at 8 bits in that mode.
      const std::size_t fe =
          model.frontend_weight().master.numel() + model.head_weight().master.numel();
      s.overhead_bits -= 24.0 * static_cast<double>(fe);
    }
  }
  if (count_scales) s.overhead_bits += 32.0 * static_cast<double>(model.encoder_weights().size());
  return s;
}

std::vector<double> gumbel_noise(std::size_t n, Rng& rng) {
  std::vector<double> g(n);
  for (double& v : g) v = -std::log(-std::log(rng.uniform_open()));
  return g;
}

std::vector<double> gumbel_softmax_values(std::span<const double> logits,
                                          std::span<const double> gumbel, double temperature) {
  if (!(temperature > 0.0)) throw Error("gumbel_softmax: temperature must be positive");
  if (logits.size() != gumbel.size()) throw ShapeError("gumbel_softmax: noise size mismatch");
  std::vector<double> z(logits.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = (logits[i] + gumbel[i]) / temperature;
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) sum += (v = std::exp(v - mx));
  for (double& v : z) v /= sum;
  return z;
}

Tensor gumbel_softmax(const Tensor& logits, std::span<const double> gumbel, double temperature) {
  if (!(temperature > 0.0)) throw Error("gumbel_softmax: temperature must be positive");
  if (logits.numel() != gumbel.size()) throw ShapeError("gumbel_softmax: noise size mismatch");
  for (double v : logits.data())
    if (!std::isfinite(v)) throw NonFiniteValue("gumbel_softmax: non-finite logit");
  Tensor noise(logits.shape(), std::vector<double>(gumbel.begin(), gumbel.end()));
  return ops::softmax(ops::scale(ops::add(logits, noise), 1.0 / temperature));
}

void sample_arch(ArchState& arch, Rng& rng) {
  arch.last_sample.resize(arch.logits.size());
  for (std::size_t u = 0; u < arch.logits.size(); ++u) {
    const auto g = gumbel_noise(arch.candidate_bits.size(), rng);
    arch.last_sample[u] = gumbel_softmax(arch.logits[u], g, arch.temperature);
  }
}

void argmax_arch(ArchState& arch) {
  arch.last_sample.resize(arch.logits.size());
  for (std::size_t u = 0; u < arch.logits.size(); ++u) {
    auto v = arch.logits[u].data();
    const auto best = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
    std::vector<double> one_hot(v.size(), 0.0);
    one_hot[best] = 1.0;
    arch.last_sample[u] = Tensor({v.size()}, std::move(one_hot));
  }
}

Tensor mix_layer(const Tensor& input,
                 std::span<const std::function<Tensor(const Tensor&)>> candidates,
                 const Tensor& lambda) {
  if (candidates.size() != lambda.numel()) {
    throw ShapeError("mix_layer: " + std::to_string(candidates.size()) + " candidates, " +
                     std::to_string(lambda.numel()) + " weights");
  }
  Tensor acc;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    Tensor term = ops::mul(candidates[i](input), ops::slice(lambda, 0, i, i + 1));
    acc = acc.defined() ? ops::add(acc, term) : term;
  }
  return acc;
}

NetworkPlan mixed_plan(const Model& model, const ArchState& arch, SearchGranularity g) {
  NetworkPlan plan;
  plan.granularity = g;
  if (model.search_units(g).size() != arch.num_units()) {
    throw Error("mixed_plan: arch has " + std::to_string(arch.num_units()) +
                " units, model has " + std::to_string(model.search_units(g).size()));
  }
  for (std::size_t u = 0; u < arch.num_units(); ++u) {
    if (!arch.last_sample[u].defined()) throw Error("mixed_plan: unit " + arch.unit_names[u] + " not sampled");
    plan.units.push_back(UnitPrecision::mixed(arch.last_sample[u], arch.candidate_bits));
  }
  plan.frontend_bits = model.config().quantize_frontend ? 8 : kFullPrecisionBits;
  return plan;
}

Tensor expected_size_bits(std::span<const Tensor> lambdas, const SizeModel& size) {
  if (lambdas.size() != size.unit_params.size()) {
    throw ShapeError("expected_size_bits: " + std::to_string(lambdas.size()) + " samples for " +
                     std::to_string(size.unit_params.size()) + " units");
  }
  std::vector<double> cost(size.candidate_bits.size());
  Tensor total = Tensor::scalar(size.overhead_bits);
  for (std::size_t u = 0; u < lambdas.size(); ++u) {
    for (std::size_t i = 0; i < cost.size(); ++i)
      cost[i] = static_cast<double>(size.candidate_bits[i]) *
                static_cast<double>(size.unit_params[u]);
    Tensor c({cost.size()}, cost);
    total = ops::add(total, ops::reduce_sum(ops::mul(lambdas[u], c)));
  }
  return total;
}

double average_bits(std::span<const int> unit_bits, std::span<const std::size_t> unit_params) {
  double num = 0.0, den = 0.0;
  for (std::size_t u = 0; u < unit_bits.size(); ++u) {
    num += static_cast<double>(unit_bits[u]) * static_cast<double>(unit_params[u]);
    den += static_cast<double>(unit_params[u]);
  }
  return den > 0.0 ? num / den : 0.0;
}

BitAssignment finalize_bitwidths(const ArchState& arch, std::span<const std::size_t> unit_params) {
  if (unit_params.size() != arch.num_units()) throw Error("finalize_bitwidths: unit count mismatch");
  BitAssignment out;
  for (const Tensor& l : arch.logits) {
    auto v = l.data();
    // max_element returns the first maximum; candidates are ascending.
    const auto best = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
    out.unit_bits.push_back(arch.candidate_bits[best]);
  }
  out.average_bits = average_bits(out.unit_bits, unit_params);
  return out;
}

double temperature_at(std::size_t step, std::size_t total_steps, double t_start, double t_end) {
  if (total_steps <= 1) return t_end;
  const double progress =
      std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps - 1));
  return t_start * std::pow(t_end / t_start, progress);
}

std::string bitwidth_report(const ArchState& arch, const BitAssignment& bits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "unit,bits";
  for (int b : arch.candidate_bits) os << ",alpha_" << b;
  os << '\n';
  for (std::size_t u = 0; u < arch.num_units(); ++u) {
    os << arch.unit_names[u] << ',' << bits.unit_bits[u];
    auto v = arch.logits[u].data();
    const double mx = *std::max_element(v.begin(), v.end());
    double z = 0.0;
    for (double x : v) z += std::exp(x - mx);
    for (double x : v) os << ',' << std::exp(x - mx) / z;
    os << '\n';
  }
  os << "average_bits," << bits.average_bits << '\n';
  return os.str();
}

}  // namespace mxq
