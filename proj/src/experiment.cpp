#include "mxq/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "mxq/checkpoint.hpp"

namespace mxq {
namespace {

namespace fs = std::filesystem;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string join_bits(const std::vector<int>& bits) {
  std::string s;
  for (int b : bits) s += (s.empty() ? "" : " ") + std::to_string(b);
  return s;
}

class Outputs {
 public:
  explicit Outputs(std::string dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  std::string path(const std::string& name) const { return (fs::path(dir_) / name).string(); }

  void metrics(const std::string& phase, const PassResult& r, const std::vector<int>& bits) const {
    std::ostringstream os;
    write_metrics_csv(os, r.metrics, bits);
    write_file_atomic(path("metrics_" + phase + ".csv"), os.str());
  }

  void checkpoint(const std::string& phase, const Model& m, const ArchState* arch,
                  const TrainState& s) const {
    write_file_atomic(path(phase + ".ckpt"), serialize(capture(m, arch, s, phase)));
  }

  /// Packed checkpoint, report, summary row.
  SummaryRow system(const std::string& name, const std::string& mode, const Model& m,
                    const NetworkPlan& plan, const ArchState* arch, const Datasets& data,
                    const RunConfig& cfg, double seconds, std::size_t steps) const {
    write_file_atomic(path(name + ".mxq"), serialize(pack_model(m, plan)));
    const CompressionReport rep = emit_report(m, plan, arch, cfg.train.size_counts_scales);
    write_file_atomic(path("report_" + name + ".txt"), rep.text());
    write_file_atomic(path("report_" + name + ".json"), rep.json());
    const EvalResult dev = evaluate(m, plan, data.dev);
    const EvalResult test = evaluate(m, plan, data.test);
    SummaryRow row;
    row.system = name;
    row.mode = mode;
    row.bits = rep.average_encoder_bits;
    row.cnn_bits = plan.frontend_bits;
    row.comp_ratio = rep.ratio;
    row.train_time_s = seconds;
    row.dev_loss = dev.mean_ctc_loss;
    row.dev_token_error = dev.token_error;
    row.test_loss = test.mean_ctc_loss;
    row.test_token_error = test.token_error;
    row.steps = steps;
    row.seed = cfg.seed;
    row.unit_bits = join_bits(rep.unit_bits);
    return row;
  }

 private:
  std::string dir_;
};

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig t = cfg.train;
  t.seed = cfg.seed;
  return t;
}

std::vector<std::size_t> unit_params_of(const Model& m, SearchGranularity g) {
  std::vector<std::size_t> out;
  for (const SearchUnit& u : m.search_units(g)) out.push_back(u.param_count);
  return out;
}

}  // namespace

std::vector<std::string> summary_columns() {
  return {"system",    "mode",           "bits",      "cnn_bits",        "comp_ratio",
          "train_time_s", "dev_loss",    "dev_token_error", "test_loss", "test_token_error",
          "steps",     "seed",           "unit_bits"};
}

bool is_timing_column(const std::string& column) { return column == "train_time_s"; }

void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
  os << "# " << kSummarySchemaVersion << '\n';
  const auto cols = summary_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  for (const SummaryRow& r : rows) {
    os << r.system << ',' << r.mode << ',' << num(r.bits) << ',' << r.cnn_bits << ','
       << num(r.comp_ratio) << ',' << num(r.train_time_s) << ',' << num(r.dev_loss) << ','
       << num(r.dev_token_error) << ',' << num(r.test_loss) << ',' << num(r.test_token_error)
       << ',' << r.steps << ',' << r.seed << ',' << r.unit_bits << '\n';
  }
}

std::vector<SummaryRow> read_summary_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open summary " + path);
  std::string line;
  std::vector<SummaryRow> rows;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line != std::string("# ") + kSummarySchemaVersion)
        throw Error(path + ": unsupported summary schema \"" + line + "\"");
      continue;
    }
    const auto f = split(line, ',');
    if (!header) {
      if (f != summary_columns()) throw Error(path + ": unexpected summary columns");
      header = true;
      continue;
    }
    if (f.size() != summary_columns().size()) throw Error(path + ": malformed row \"" + line + "\"");
    SummaryRow r;
    r.system = f[0];
    r.mode = f[1];
    r.bits = std::stod(f[2]);
    r.cnn_bits = std::stoi(f[3]);
    r.comp_ratio = std::stod(f[4]);
    r.train_time_s = std::stod(f[5]);
    r.dev_loss = std::stod(f[6]);
    r.dev_token_error = std::stod(f[7]);
    r.test_loss = std::stod(f[8]);
    r.test_token_error = std::stod(f[9]);
    r.steps = std::stoull(f[10]);
    r.seed = std::stoull(f[11]);
    r.unit_bits = f[12];
    rows.push_back(std::move(r));
  }
  if (!header) throw Error(path + ": no header");
  return rows;
}

Datasets make_datasets(const RunConfig& cfg) {
  Datasets d;
  d.train = generate_dataset(cfg.data);
  DataSpec dev = cfg.data;
  dev.num_utterances = cfg.dev_utterances;
  dev.seed = cfg.dev_seed;
  d.dev = generate_dataset(dev);
  DataSpec test = cfg.data;
  test.num_utterances = cfg.test_utterances;
  test.seed = cfg.test_seed;
  d.test = generate_dataset(test);
  return d;
}

Model make_starting_point(const RunConfig& cfg, const Dataset& train, double* seconds) {
  Model m(cfg.model, cfg.seed);
  if (seconds) *seconds = 0.0;
  if (!cfg.starting_point.empty()) {
    restore(parse_training(read_file(cfg.starting_point)), m, nullptr);
    return m;
  }
  if (cfg.pretrain_steps > 0) {
    TrainConfig t = train_config(cfg);
    t.steps = cfg.pretrain_steps;
    t.learning_rate = cfg.pretrain_learning_rate;
    const PassResult r = run_uniform_baseline(m, kFullPrecisionBits, t, train);
    if (seconds) *seconds = r.wall_seconds;
  }
  return m;
}

std::vector<std::vector<double>> measure_sensitivity(const std::map<int, Model>& uniform_models,
                                                     const std::vector<int>& candidate_bits,
                                                     SearchGranularity g, const Dataset& data) {
  const std::size_t units = uniform_models.begin()->second.search_units(g).size();
  std::vector<std::vector<double>> delta(units, std::vector<double>(candidate_bits.size()));
  for (std::size_t i = 0; i < candidate_bits.size(); ++i) {
    const int b = candidate_bits[i];
    const Model& m = uniform_models.at(b);
    const double base = evaluate(m, m.full_precision_plan(), data).mean_ctc_loss;
    for (std::size_t u = 0; u < units; ++u) {
      NetworkPlan plan;
      plan.granularity = g;
      plan.units.assign(units, UnitPrecision::full());
      plan.units[u] = UnitPrecision::fixed(b);
      delta[u][i] = evaluate(m, plan, data).mean_ctc_loss - base;
    }
  }
  return delta;
}

BitAssignment assign_by_threshold(const std::vector<std::vector<double>>& delta,
                                  const std::vector<int>& candidate_bits,
                                  const std::vector<std::size_t>& unit_params,
                                  double target_average_bits) {
  std::set<double> thresholds;
  for (const auto& row : delta) thresholds.insert(row.begin(), row.end());
  BitAssignment best;
  for (double tau : thresholds) {
    BitAssignment a;
    for (const auto& row : delta) {
      int b = candidate_bits.back();
      for (std::size_t i = 0; i < candidate_bits.size(); ++i) {
        if (row[i] <= tau) {
          b = candidate_bits[i];
          break;
        }
      }
      a.unit_bits.push_back(b);
    }
    a.average_bits = average_bits(a.unit_bits, unit_params);
    best = a;
    if (a.average_bits <= target_average_bits) break;
  }
  return best;
}

ExperimentResult run_experiment(const RunConfig& cfg) {
  const Outputs out(cfg.out_dir);
  write_file_atomic(out.path("config.json"), cfg.source_text);
  write_file_atomic(out.path("effective_config.json"), to_json(cfg));

  const Datasets data = make_datasets(cfg);
  ExperimentResult res;
  const Model start = make_starting_point(cfg, data.train, &res.pretrain_seconds);
  if (cfg.starting_point.empty()) out.checkpoint("starting_point", start, nullptr, TrainState{});

  const TrainConfig tc = train_config(cfg);
  const SearchGranularity g = tc.granularity;
  const std::string mode = mode_name(cfg.mode);

  auto uniform_run = [&](int b, std::map<int, Model>* keep) {
    Model m = start.clone();
    const std::string phase = b == kFullPrecisionBits ? "full_precision" : "uniform_" + std::to_string(b);
    const PassResult r = run_uniform_baseline(m, b, tc, data.train);
    out.metrics(phase, r, tc.candidate_bits);
    out.checkpoint(phase, m, nullptr, r.state);
    const NetworkPlan plan = b == kFullPrecisionBits ? m.full_precision_plan() : m.uniform_plan(b, g);
    res.rows.push_back(out.system(phase, mode, m, plan, nullptr, data, cfg, r.wall_seconds, tc.steps));
    if (keep) keep->emplace(b, std::move(m));
    return r.wall_seconds;
  };

  switch (cfg.mode) {
    case QuantMode::FullPrecision:
      res.train_seconds = uniform_run(kFullPrecisionBits, nullptr);
      break;
    case QuantMode::Uniform:
      res.train_seconds = uniform_run(cfg.bits, nullptr);
      break;
    case QuantMode::MixedSearch: {
      Model m = start.clone();
      ArchState arch = make_arch_state(m, tc);
      const PassResult p1 = run_pass1(m, arch, tc, data.train);
      out.metrics("pass1", p1, tc.candidate_bits);
      out.checkpoint("pass1", m, &arch, p1.state);
      write_file_atomic(out.path("bitwidths_pass1.txt"), bitwidth_report(arch, *p1.bits));
      res.bits = p1.bits;
      res.train_seconds = p1.wall_seconds;
      res.rows.push_back(out.system("pass1", mode, m, m.fixed_plan(p1.bits->unit_bits, g), &arch,
                                    data, cfg, res.train_seconds, tc.steps));
      if (cfg.run_pass2) {
        TrainConfig t2 = tc;
        if (cfg.pass2_steps > 0) t2.steps = cfg.pass2_steps;
        Model m2 = pass2_initial_model(start, m, t2.pass2_init);
        const PassResult p2 = run_pass2(m2, *p1.bits, t2, data.train);
        out.metrics("pass2", p2, tc.candidate_bits);
        out.checkpoint("pass2", m2, nullptr, p2.state);
        res.train_seconds += p2.wall_seconds;
        res.rows.push_back(out.system("pass2", mode, m2, m2.fixed_plan(p1.bits->unit_bits, g),
                                      nullptr, data, cfg, res.train_seconds, tc.steps + t2.steps));
      }
      break;
    }
    case QuantMode::TwoStageBaseline: {
      std::map<int, Model> uniform;
      double seconds = 0.0;
      for (int b : tc.candidate_bits) seconds += uniform_run(b, &uniform);
      const auto t0 = std::chrono::steady_clock::now();
      Dataset probe(data.train.begin(),
                    data.train.begin() + static_cast<std::ptrdiff_t>(
                                             std::min(cfg.sensitivity_utterances, data.train.size())));
      const auto delta = measure_sensitivity(uniform, tc.candidate_bits, g, probe);
      const BitAssignment bits = assign_by_threshold(delta, tc.candidate_bits,
                                                     unit_params_of(start, g), cfg.target_average_bits);
      seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::ostringstream sens;
      sens << "unit";
      for (int b : tc.candidate_bits) sens << ",delta_" << b;
      sens << ",assigned\n";
      const auto units = start.search_units(g);
      for (std::size_t u = 0; u < units.size(); ++u) {
        sens << units[u].name;
        for (double d : delta[u]) sens << ',' << num(d);
        sens << ',' << bits.unit_bits[u] << '\n';
      }
      write_file_atomic(out.path("sensitivity.csv"), sens.str());

      Model m = start.clone();
      const PassResult r = run_pass2(m, bits, tc, data.train);
      out.metrics("two_stage", r, tc.candidate_bits);
      out.checkpoint("two_stage", m, nullptr, r.state);
      seconds += r.wall_seconds;
      res.bits = bits;
      res.train_seconds = seconds;
      res.rows.push_back(out.system("two_stage", mode, m, m.fixed_plan(bits.unit_bits, g), nullptr,
                                    data, cfg, seconds, tc.steps * (tc.candidate_bits.size() + 1)));
      break;
    }
  }

  std::ostringstream summary;
  write_summary_csv(summary, res.rows);
  write_file_atomic(out.path("summary.csv"), summary.str());
  return res;
}

ExperimentResult run_experiment(const std::string& config_path) {
  return run_experiment(load_run_config(config_path));
}

std::string compare_summaries(
    const std::vector<std::pair<std::string, std::vector<SummaryRow>>>& runs) {
  std::ostringstream os;
  os << std::left << std::setw(28) << "run/system" << std::right << std::setw(8) << "bits"
     << std::setw(6) << "cnn" << std::setw(8) << "ratio" << std::setw(10) << "time_s"
     << std::setw(10) << "dev_ter" << std::setw(10) << "test_ter" << std::setw(12)
     << "d_test_ter" << '\n';
  if (runs.empty()) return os.str();
  const double ref = runs.front().second.empty() ? 0.0 : runs.front().second.back().test_token_error;
  os << std::fixed;
  for (const auto& [name, rows] : runs) {
    for (const SummaryRow& r : rows) {
      os << std::left << std::setw(28) << (name + "/" + r.system) << std::right << std::setprecision(2)
         << std::setw(8) << r.bits << std::setw(6) << r.cnn_bits << std::setprecision(1)
         << std::setw(7) << r.comp_ratio << 'x' << std::setprecision(1) << std::setw(10)
         << r.train_time_s << std::setprecision(4) << std::setw(10) << r.dev_token_error
         << std::setw(10) << r.test_token_error << std::showpos << std::setw(12)
         << r.test_token_error - ref << std::noshowpos << '\n';
    }
  }
  return os.str();
}

}  // namespace mxq
