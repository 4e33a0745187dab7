#include "mxq/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "mxq/ops.hpp"
#include "mxq/rng.hpp"

namespace mxq {
namespace {

constexpr std::uint64_t kBatchStream = 0x6261746368ULL;
constexpr std::uint64_t kArchStream = 0x61726368ULL;

using Batch = std::vector<const Utterance*>;

struct StepOutcome {
  LossBreakdown loss;
  std::optional<double> size_mbits;
  std::optional<double> expected_avg_bits;
  std::optional<int> sampled_bits;
};

using Objective = std::function<StepOutcome(std::size_t step, const Batch& batch)>;

std::vector<ParamSlot> model_slots(const Model& model, const TrainConfig& cfg) {
  std::vector<ParamSlot> slots;
  for (const NamedParam& p : model.named_parameters()) {
    ParamSlot s;
    s.tensor = p.tensor;
    switch (p.kind) {
      case ParamKind::Weight:
        s.decay = true;
        break;
      case ParamKind::Scale:
        s.lr_scale = cfg.scale_lr_scale;
        s.floor = 1e-8;
        s.snap_float32 = true;
        break;
      default:
        break;
    }
    slots.push_back(std::move(s));
  }
  return slots;
}

Tensor sum_or(const std::optional<Tensor>& acc, const Tensor& t) {
  return acc ? ops::add(*acc, t) : t;
}

MetricsRow make_row(std::size_t step, double lr, double temperature, const StepOutcome& o,
                    double grad_norm) {
  MetricsRow r;
  r.step = step;
  r.lr = lr;
  r.temperature = temperature;
  r.loss = o.loss.total.item();
  r.grad_norm = grad_norm;
  r.size_mbits = o.size_mbits;
  r.expected_avg_bits = o.expected_avg_bits;
  r.sampled_bits = o.sampled_bits;
  r.ctc_student = o.loss.ctc_student;
  r.kl_student = o.loss.kl_student;
  return r;
}

PassResult train_loop(std::vector<ParamSlot> slots, const TrainConfig& cfg, const Dataset& data,
                      const RunOptions& opts, const Objective& objective,
                      const std::function<double(std::size_t)>& temperature_of,
                      const std::function<void(MetricsRow&, const StepOutcome&)>& fill_terms) {
  cfg.validate();
  if (data.empty()) throw Error("train: empty dataset");
  const auto start = std::chrono::steady_clock::now();
  AdamW opt(std::move(slots), cfg.adamw);
  TrainState state;
  if (opts.resume) {
    state = *opts.resume;
    if (state.first_moments.size() != opt.params().size()) {
      throw Error("resume: state holds " + std::to_string(state.first_moments.size()) +
                  " moment buffers, optimizer has " + std::to_string(opt.params().size()));
    }
    opt.first_moments() = state.first_moments;
    opt.second_moments() = state.second_moments;
    opt.set_steps_taken(state.optimizer_steps);
  }
  opt.zero_grad();

  PassResult result;
  const std::size_t end = std::min(cfg.steps, opts.stop_at);
  for (std::size_t step = state.step; step < end; ++step) {
    const double lr = lr_at(step, cfg.steps, cfg.learning_rate, cfg.warmup_fraction);
    Batch batch;
    for (std::size_t i : batch_indices(cfg.seed, step, cfg.batch_size, data.size()))
      batch.push_back(&data[i]);

    StepOutcome out;
    try {
      out = objective(step, batch);
    } catch (const NonFiniteValue& e) {
      opt.zero_grad();
      throw NonFiniteError(step, e.what());
    }
    const double loss = out.loss.total.item();
    if (!std::isfinite(loss)) {
      opt.zero_grad();
      throw NonFiniteError(step, "non-finite loss");
    }
    out.loss.total.backward();
    const double norm = opt.clip_grad_norm(cfg.grad_clip);
    if (!std::isfinite(norm)) {
      opt.zero_grad();
      throw NonFiniteError(step, "non-finite gradient norm");
    }
    opt.step(lr);
    opt.zero_grad();

    MetricsRow row = make_row(step, lr, temperature_of(step), out, norm);
    fill_terms(row, out);
    state.loss_sum += loss;
    ++state.loss_count;
    state.temperature = row.temperature;
    if (opts.on_step) opts.on_step(row);
    result.metrics.push_back(std::move(row));
    state.step = step + 1;
  }
  state.optimizer_steps = opt.steps_taken();
  state.first_moments = opt.first_moments();
  state.second_moments = opt.second_moments();
  result.state = std::move(state);
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void fill_common(MetricsRow& row, const StepOutcome& o, bool has_fp, bool has_mp, bool has_kl) {
  if (has_fp) row.ctc_fp = o.loss.ctc_fp;
  if (has_mp) row.ctc_mp = o.loss.ctc_mp;
  if (has_kl) row.kl_mp = o.loss.kl_mp;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  std::string problems;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) problems += (problems.empty() ? "" : "; ") + msg;
  };
  need(steps > 0, "steps must be positive");
  need(warmup_fraction >= 0.0 && warmup_fraction < 1.0, "warmup_fraction must be in [0, 1)");
  need(batch_size > 0, "batch_size must be positive");
  need(learning_rate >= 0.0, "learning_rate must be non-negative");
  need(temperature_start > 0.0 && temperature_end > 0.0, "temperatures must be positive");
  need(!candidate_bits.empty(), "candidate_bits must be non-empty");
  need(std::is_sorted(candidate_bits.begin(), candidate_bits.end()) &&
           std::adjacent_find(candidate_bits.begin(), candidate_bits.end()) ==
               candidate_bits.end(),
       "candidate_bits must be strictly ascending");
  for (int b : candidate_bits) need(b >= 2 && b <= 8, "candidate bit-width outside [2, 8]");
  need(grad_clip > 0.0, "grad_clip must be positive");
  need(size_unit_bits > 0.0, "size_unit_bits must be positive");
  try {
    coeffs.validate();
  } catch (const Error& e) {
    need(false, e.what());
  }
  if (!problems.empty()) throw Error("train config: " + problems);
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t step,
                                       std::size_t batch_size, std::size_t dataset_size) {
  Rng rng(derive_seed(seed, {kBatchStream, step}));
  std::vector<std::size_t> idx(dataset_size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t n = std::min(batch_size, dataset_size);
  for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.below(dataset_size - i)]);
  idx.resize(n);
  return idx;
}

std::vector<std::string> metrics_columns(const std::vector<int>& candidate_bits) {
  std::vector<std::string> cols = {"step", "lr", "temperature", "loss", "ctc_fp", "ctc_mp"};
  for (int b : candidate_bits) cols.push_back("ctc_" + std::to_string(b));
  cols.push_back("kl_mp");
  for (int b : candidate_bits) cols.push_back("kl_" + std::to_string(b));
  for (const char* c : {"size_mbits", "expected_avg_bits", "grad_norm", "sampled_bits"})
    cols.emplace_back(c);
  return cols;
}

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows,
                       const std::vector<int>& candidate_bits) {
  const auto cols = metrics_columns(candidate_bits);
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
  auto in_map = [](const std::map<int, double>& m, int b) {
    auto it = m.find(b);
    return it == m.end() ? std::string() : fmt(it->second);
  };
  for (const MetricsRow& r : rows) {
    os << r.step << ',' << fmt(r.lr) << ',' << fmt(r.temperature) << ',' << fmt(r.loss) << ','
       << opt(r.ctc_fp) << ',' << opt(r.ctc_mp);
    for (int b : candidate_bits) os << ',' << in_map(r.ctc_student, b);
    os << ',' << opt(r.kl_mp);
    for (int b : candidate_bits) os << ',' << in_map(r.kl_student, b);
    os << ',' << opt(r.size_mbits) << ',' << opt(r.expected_avg_bits) << ',' << fmt(r.grad_norm)
       << ',' << (r.sampled_bits ? std::to_string(*r.sampled_bits) : std::string()) << '\n';
  }
}

ArchState make_arch_state(const Model& model, const TrainConfig& cfg) {
  std::vector<std::string> names;
  for (const SearchUnit& u : model.search_units(cfg.granularity)) names.push_back(u.name);
  ArchState a = ArchState::uniform(std::move(names), cfg.candidate_bits);
  a.temperature = cfg.temperature_start;
  return a;
}

PassResult run_pass1(Model& model, ArchState& arch, const TrainConfig& cfg, const Dataset& data,
                     const RunOptions& opts) {
  cfg.validate();
  if (arch.candidate_bits != cfg.candidate_bits) throw Error("pass 1: arch candidates differ from config");
  model.ensure_scales(cfg.candidate_bits);
  const auto units = model.search_units(cfg.granularity);
  const SizeModel size = SizeModel::from_model(model, cfg.granularity, cfg.candidate_bits,
                                               cfg.size_counts_overhead, cfg.size_counts_scales);
  std::vector<std::size_t> unit_params;
  for (const auto& u : units) unit_params.push_back(u.param_count);
  const double quantized_total =
      std::accumulate(unit_params.begin(), unit_params.end(), 0.0,
                      [](double a, std::size_t b) { return a + static_cast<double>(b); });

  auto slots = model_slots(model, cfg);
  for (const Tensor& l : arch.logits) {
    ParamSlot s;
    s.tensor = l;
    s.lr_scale = cfg.arch_lr_scale;
    slots.push_back(std::move(s));
  }

  auto temperature_of = [&cfg](std::size_t step) {
    return temperature_at(step, cfg.steps, cfg.temperature_start, cfg.temperature_end);
  };

  Objective objective = [&](std::size_t step, const Batch& batch) {
    arch.temperature = temperature_of(step);
    Rng rng(derive_seed(cfg.seed, {kArchStream, step}));
    sample_arch(arch, rng);
    const NetworkWeights w_mp = model.materialize(mixed_plan(model, arch, cfg.granularity));
    std::optional<NetworkWeights> w_fp;
    std::map<int, NetworkWeights> w_students;
    StepOutcome out;
    if (cfg.kl_regularization) {
      w_fp = model.materialize(model.full_precision_plan());
      std::vector<int> students = cfg.candidate_bits;
      if (cfg.subnet_sampling) {
        const int b = cfg.candidate_bits[rng.below(cfg.candidate_bits.size())];
        students = {b};
        out.sampled_bits = b;
      }
      for (int b : students) w_students.emplace(b, model.materialize(model.uniform_plan(b, cfg.granularity)));
    }

    std::optional<Tensor> ctc_fp, ctc_mp, kl_mp;
    std::map<int, std::optional<Tensor>> ctc_st, kl_st;
    for (const Utterance* u : batch) {
      const Tensor lp_mp = model.forward(u->features, w_mp);
      ctc_mp = sum_or(ctc_mp, ctc_loss(lp_mp, u->target));
      if (!w_fp) continue;
      const Tensor lp_fp = model.forward(u->features, *w_fp);
      ctc_fp = sum_or(ctc_fp, ctc_loss(lp_fp, u->target));
      kl_mp = sum_or(kl_mp, kl_regularizer(lp_fp, lp_mp));
      for (const auto& [b, w] : w_students) {
        const Tensor lp = model.forward(u->features, w);
        ctc_st[b] = sum_or(ctc_st[b], ctc_loss(lp, u->target));
        kl_st[b] = sum_or(kl_st[b], kl_regularizer(lp_fp, lp));
      }
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    NetworkLosses terms;
    terms.ctc_mp = ops::scale(*ctc_mp, inv_b);
    if (ctc_fp) terms.ctc_fp = ops::scale(*ctc_fp, inv_b);
    if (kl_mp) terms.kl_mp = ops::scale(*kl_mp, inv_b);
    for (auto& [b, t] : ctc_st) terms.ctc_student.emplace(b, ops::scale(*t, inv_b));
    for (auto& [b, t] : kl_st) terms.kl_student.emplace(b, ops::scale(*t, inv_b));

    const Tensor size_bits = expected_size_bits(arch.last_sample, size);
    const Tensor size_mbits = ops::scale(size_bits, 1.0 / cfg.size_unit_bits);
    out.loss = composite_loss(terms, cfg.coeffs, size_mbits, cfg.strict_coefficients);
    out.size_mbits = size_mbits.item();
    double bits_num = 0.0;
    for (std::size_t u = 0; u < arch.num_units(); ++u) {
      auto lam = arch.last_sample[u].data();
      for (std::size_t i = 0; i < lam.size(); ++i)
        bits_num += lam[i] * arch.candidate_bits[i] * static_cast<double>(unit_params[u]);
    }
    out.expected_avg_bits = bits_num / quantized_total;
    return out;
  };

  const bool kl = cfg.kl_regularization;
  PassResult r = train_loop(std::move(slots), cfg, data, opts, objective, temperature_of,
                            [kl](MetricsRow& row, const StepOutcome& o) {
                              fill_common(row, o, kl, true, kl);
                            });
  if (r.state.step == cfg.steps) r.bits = finalize_bitwidths(arch, unit_params);
  return r;
}

PassResult run_pass2(Model& model, const BitAssignment& frozen, const TrainConfig& cfg,
                     const Dataset& data, const RunOptions& opts) {
  std::set<int> used(frozen.unit_bits.begin(), frozen.unit_bits.end());
  used.erase(kFullPrecisionBits);
  model.ensure_scales(std::vector<int>(used.begin(), used.end()));
  const NetworkPlan plan = model.fixed_plan(frozen.unit_bits, cfg.granularity);
  const double avg = frozen.average_bits;

  Objective objective = [&](std::size_t, const Batch& batch) {
    const NetworkWeights w = model.materialize(plan);
    std::optional<NetworkWeights> w_fp;
    if (cfg.kl_regularization) w_fp = model.materialize(model.full_precision_plan());
    std::optional<Tensor> ctc_fp, ctc_mp, kl_mp;
    for (const Utterance* u : batch) {
      const Tensor lp = model.forward(u->features, w);
      ctc_mp = sum_or(ctc_mp, ctc_loss(lp, u->target));
      if (!w_fp) continue;
      const Tensor lp_fp = model.forward(u->features, *w_fp);
      ctc_fp = sum_or(ctc_fp, ctc_loss(lp_fp, u->target));
      kl_mp = sum_or(kl_mp, kl_regularizer(lp_fp, lp));
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    NetworkLosses terms;
    terms.ctc_mp = ops::scale(*ctc_mp, inv_b);
    if (ctc_fp) terms.ctc_fp = ops::scale(*ctc_fp, inv_b);
    if (kl_mp) terms.kl_mp = ops::scale(*kl_mp, inv_b);
    StepOutcome out;
    out.loss = composite_loss(terms, cfg.coeffs, std::nullopt);
    out.expected_avg_bits = avg;
    return out;
  };
  const bool kl = cfg.kl_regularization;
  return train_loop(model_slots(model, cfg), cfg, data, opts, objective,
                    [](std::size_t) { return 0.0; },
                    [kl](MetricsRow& row, const StepOutcome& o) {
                      fill_common(row, o, kl, true, kl);
                    });
}

PassResult run_uniform_baseline(Model& model, int bits, const TrainConfig& cfg,
                                const Dataset& data, const RunOptions& opts) {
  if (bits != kFullPrecisionBits) {
    IntGrid::make(bits);  // validates the bit-width
    model.ensure_scales({bits});
  }
  const bool fp = bits == kFullPrecisionBits;
  const NetworkPlan plan = model.uniform_plan(bits, cfg.granularity);
  Objective objective = [&](std::size_t, const Batch& batch) {
    const NetworkWeights w = model.materialize(plan);
    std::optional<Tensor> ctc;
    for (const Utterance* u : batch) ctc = sum_or(ctc, ctc_loss(model.forward(u->features, w), u->target));
    NetworkLosses terms;
    const Tensor mean = ops::scale(*ctc, 1.0 / static_cast<double>(batch.size()));
    if (fp) {
      terms.ctc_fp = mean;
    } else {
      terms.ctc_mp = mean;
    }
    StepOutcome out;
    out.loss = composite_loss(terms, cfg.coeffs, std::nullopt);
    out.expected_avg_bits = static_cast<double>(bits);
    return out;
  };
  return train_loop(model_slots(model, cfg), cfg, data, opts, objective,
                    [](std::size_t) { return 0.0; },
                    [fp](MetricsRow& row, const StepOutcome& o) {
                      fill_common(row, o, fp, !fp, false);
                    });
}

Model pass2_initial_model(const Model& starting_point, const Model& pass1_model, Pass2Init init) {
  if (init == Pass2Init::Pass1Weights) return pass1_model.clone();
  Model m = starting_point.clone();
  // Scales learned in Pass 1 are not part of the starting point; they are
  // re-initialized from the starting-point weights.
  return m;
}

}  // namespace mxq
