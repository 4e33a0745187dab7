// Acceptance checks. Usage: mxq_acceptance <criterion> [work_dir]
// Prints one [PASS]/[FAIL] line per check; exits non-zero on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>

#include "mxq/checkpoint.hpp"
#include "mxq/compression.hpp"
#include "mxq/config.hpp"
#include "mxq/experiment.hpp"
#include "mxq/packing.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace mxq;
namespace tu = mxq::testing;

namespace {

int failures = 0;
fs::path work_dir = "acceptance_runs";

void check(const std::string& what, bool ok, const std::string& detail = "") {
  std::printf("[%s] %s%s%s\n", ok ? "PASS" : "FAIL", what.c_str(), detail.empty() ? "" : ": ",
              detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

RunConfig e2e_config() {
  RunConfig c = load_run_config(std::string(MXQ_SOURCE_DIR) + "/configs/e2e.json");
  return c;
}

RunConfig variant(RunConfig c, const std::string& name, QuantMode mode, int bits = 8) {
  c.name = name;
  c.mode = mode;
  c.bits = bits;
  c.out_dir = (work_dir / name).string();
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

// ---------------------------------------------------------------------------

void table1_ratios() {
  const double f = 0.90;
  const std::vector<std::tuple<std::string, double, double, double>> rows{
      {"uniform 8-bit", 8, 32, 3.1}, {"uniform 6-bit", 6, 32, 3.7}, {"uniform 5-bit", 5, 32, 4.2},
      {"uniform 4-bit", 4, 32, 4.7}, {"uniform 2-bit", 2, 32, 6.4}, {"mixed 4.6-bit, rest 32-bit", 4.6, 32, 4.4}};
  for (const auto& [name, bits, rest, published] : rows) {
    const double r = compression_ratio(f, bits, rest);
    check("ratio " + name, std::abs(r - published) <= 0.05,
          fmt("%.4f vs published %.1f (tol 0.05)", r, published));
  }
}

void table1_eight_bit_rest() {
  const double r = compression_ratio(0.90, 4.6, 8);
  check("ratio mixed 4.6-bit, rest 8-bit", std::abs(r - 6.4) <= 0.05,
        fmt("%.4f vs published 6.4 (tol 0.05)", r));
}

void ctc_oracle() {
  Rng rng(2024);
  std::size_t instances = 0;
  double worst_value = 0.0, worst_grad = 0.0;
  for (int V = 2; V <= 4; ++V) {
    for (const auto& target : tu::all_targets(V, 3)) {
      for (std::size_t T = ctc_min_frames(target); T <= 6; ++T) {
        Tensor x = tu::random_tensor({T, static_cast<std::size_t>(V)}, rng, -3, 3);
        Tensor lp;
        {
          NoGradGuard g;
          lp = ops::log_softmax(x);
        }
        worst_value = std::max(worst_value, std::abs(ctc_loss(lp, target).item() - tu::brute_force_ctc(lp, target)));
        worst_grad = std::max(worst_grad, tu::gradient_error(
                                              [&](auto& v) { return ctc_loss(ops::log_softmax(v[0]), target); }, {x}));
        ++instances;
      }
    }
  }
  check("ctc value equals brute-force path sum", worst_value <= 1e-6,
        fmt("max |diff| %.3g over %.0f instances (tol 1e-6)", worst_value, double(instances)));
  check("ctc gradient equals finite differences", worst_grad <= 1e-4,
        fmt("max relative error %.3g (tol 1e-4)", worst_grad));
}

void quantizer() {
  std::size_t cases = 0, mismatches = 0;
  for (int b : {2, 3, 4}) {
    for (GridKind kind : {GridKind::TwosComplement, GridKind::Symmetric}) {
      const IntGrid g = IntGrid::make(b, kind);
      for (double s : {0.125, 0.25, 0.5, 1.0, 2.0}) {
        for (int k = -4 * (1 << b); k <= 4 * (1 << b); ++k) {
          const double w = k * s / 8.0;
          ++cases;
          if (fake_quantize_values(std::vector<double>{w}, s, g)[0] != tu::brute_force_quantize(w, s, g)) ++mismatches;
        }
      }
    }
  }
  check("fake_quantize equals nearest-grid brute force on exact ties", mismatches == 0,
        fmt("%.0f mismatches in %.0f cases, b in {2,3,4}", double(mismatches), double(cases)));

  Rng draw(17);
  cases = mismatches = 0;
  for (int b : {2, 3, 4}) {
    const IntGrid g = IntGrid::make(b);
    for (double s : {0.07, 0.3, 0.9}) {
      for (int i = 0; i < 2000; ++i, ++cases) {
        const double w = draw.uniform(-(1 << b) * s, (1 << b) * s);
        const double got = fake_quantize_values(std::vector<double>{w}, s, g)[0];
        const double want = tu::brute_force_quantize(w, s, g);
        if (std::abs(got - want) > 4 * std::numeric_limits<double>::epsilon() * std::abs(want)) ++mismatches;
      }
    }
  }
  check("fake_quantize equals nearest-grid brute force at arbitrary scales", mismatches == 0,
        fmt("%.0f mismatches in %.0f cases", double(mismatches), double(cases)));

  std::size_t mask_errors = 0, mask_cases = 0;
  for (int b : {2, 3, 4}) {
    const IntGrid g = IntGrid::make(b);
    const double s = 0.5;
    for (double edge : {double(g.q_min), double(g.q_max)}) {
      for (double d : {-0.75, -0.5, -1e-9, 0.0, 1e-9, 0.5, 0.75}) {
        const double w = (edge + d) * s, u = w / s;
        const auto r = ste_backward(std::vector<double>{1.0}, std::vector<double>{w}, s, g);
        const bool inside = u > g.q_min && u < g.q_max;
        const double ds = inside ? round_half_away(u) - u : (u <= g.q_min ? double(g.q_min) : double(g.q_max));
        ++mask_cases;
        if (r.grad_w[0] != (inside ? 1.0 : 0.0) || r.grad_scale_raw != ds) ++mask_errors;
      }
    }
  }
  check("STE masks exact on boundary-straddling inputs", mask_errors == 0,
        fmt("%.0f errors in %.0f cases", double(mask_errors), double(mask_cases)));

  Rng rng(21);
  double worst = 0.0;
  for (int b = 2; b <= 8; ++b) {
    const IntGrid g = IntGrid::make(b);
    const double s = rng.uniform(0.01, 1.0);
    std::vector<double> w(5000);
    for (double& x : w) x = rng.uniform(g.q_min * s, g.q_max * s);
    const auto q = fake_quantize_values(w, s, g);
    for (std::size_t i = 0; i < w.size(); ++i) worst = std::max(worst, std::abs(q[i] - w[i]) / s);
  }
  check("in-range quantization error at most s/2", worst <= 0.5 + 1e-12, fmt("max |q - w| / s = %.6f", worst));
}

void gumbel() {
  Rng rng(1);
  double worst = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double T = 0.03 + rng.uniform() * 2.0;
    std::vector<double> logit{rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4)};
    double s = 0.0;
    for (double l : gumbel_softmax_values(logit, gumbel_noise(3, rng), T)) s += l;
    worst = std::max(worst, std::abs(s - 1.0));
  }
  check("lambda sums to 1", worst <= 1e-9, fmt("max |sum - 1| %.3g (tol 1e-9)", worst));

  const std::vector<double> p{0.5, 0.3, 0.2};
  std::vector<double> logit;
  for (double x : p) logit.push_back(std::log(x));
  std::vector<int> counts(3, 0);
  for (int i = 0; i < 10000; ++i) {
    const auto l = gumbel_softmax_values(logit, gumbel_noise(3, rng), 1.0);
    ++counts[std::max_element(l.begin(), l.end()) - l.begin()];
  }
  double dev = 0.0;
  for (int k = 0; k < 3; ++k) dev = std::max(dev, std::abs(counts[k] / 10000.0 - p[k]));
  check("argmax frequencies at T=1 match softmax", dev <= 0.02, fmt("max deviation %.4f (tol 0.02)", dev));

  const auto sharp = gumbel_softmax_values(std::vector<double>{std::log(2.0), 0.0, 0.0}, std::vector<double>(3, 0.0), 0.03);
  const double top = *std::max_element(sharp.begin(), sharp.end());
  check("T=0.03 is near one-hot", top >= 1 - 1e-6, fmt("max lambda %.10f", top));
}

void kl() {
  Rng rng(9);
  double most_negative = 0.0, worst_self = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t T = 1 + rng.below(4), V = 2 + rng.below(6);
    Tensor p, q;
    {
      NoGradGuard g;
      p = ops::log_softmax(tu::random_tensor({T, V}, rng, -3, 3, false));
      q = ops::log_softmax(tu::random_tensor({T, V}, rng, -3, 3, false));
    }
    most_negative = std::min(most_negative, kl_regularizer(p, q).item());
    worst_self = std::max(worst_self, std::abs(kl_regularizer(p, p).item()));
  }
  check("KL non-negative on 1000 pairs", most_negative >= 0.0, fmt("min %.3g", most_negative));
  check("KL zero at equality", worst_self <= 1e-9, fmt("max %.3g (tol 1e-9)", worst_self));

  Tensor teacher = tu::random_tensor({4, 6}, rng), student = tu::random_tensor({4, 6}, rng);
  kl_regularizer(ops::log_softmax(teacher), ops::log_softmax(student)).backward();
  double student_norm = 0.0;
  for (double g : student.grad()) student_norm += g * g;
  check("teacher-side gradient exactly zero", !teacher.has_grad() && student_norm > 0.0,
        teacher.has_grad() ? "teacher received a gradient" : "teacher untouched, student gradient nonzero");
}

void end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig base = e2e_config();
  const ExperimentResult mixed = run_experiment(variant(base, "e2e_mixed", QuantMode::MixedSearch));
  RunConfig from_start = base;
  from_start.starting_point = (work_dir / "e2e_mixed" / "starting_point.ckpt").string();
  from_start.pretrain_steps = 0;
  const ExperimentResult fp = run_experiment(variant(from_start, "e2e_fp", QuantMode::FullPrecision));
  const ExperimentResult u8 = run_experiment(variant(from_start, "e2e_uniform8", QuantMode::Uniform, 8));
  const ExperimentResult u2 = run_experiment(variant(from_start, "e2e_uniform2", QuantMode::Uniform, 2));
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;

  const SummaryRow& f = fp.rows.back();
  const SummaryRow& p2 = mixed.rows.back();
  const double ter_fp = f.test_token_error, ter_8 = u8.rows.back().test_token_error,
               ter_2 = u2.rows.back().test_token_error, ter_mp = p2.test_token_error;
  std::printf("  test token error: fp %.4f, uniform-8 %.4f, uniform-2 %.4f, pass2 %.4f at %.3f bits (%s)\n",
              ter_fp, ter_8, ter_2, ter_mp, p2.bits, p2.unit_bits.c_str());
  check("(a) full precision token error <= 5%", ter_fp <= 0.05, fmt("%.4f", ter_fp));
  check("(b) uniform 8-bit within 2% of full precision", ter_8 - ter_fp <= 0.02,
        fmt("%.4f vs %.4f", ter_8, ter_fp));
  check("(c) pass 1 + pass 2 at <= 4.6 bits within 2% of full precision",
        p2.bits <= 4.6 && ter_mp - ter_fp <= 0.02, fmt("%.4f vs %.4f at %.3f bits", ter_mp, ter_fp, p2.bits));
  check("(d) uniform 2-bit strictly worse than uniform 8-bit", ter_2 > ter_8, fmt("%.4f vs %.4f", ter_2, ter_8));
  check("runtime within 20 minutes", minutes <= 20.0, fmt("%.1f min", minutes));
}

void eta_trend() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig base = e2e_config();
  base.run_pass2 = false;
  const double eta0 = base.train.coeffs.eta;
  std::vector<double> avg;
  std::string start;
  for (double scale : {0.0, 1.0, 10.0}) {
    RunConfig c = variant(base, "eta_x" + fmt("%g", scale), QuantMode::MixedSearch);
    c.train.coeffs.eta = eta0 * scale;
    if (!start.empty()) {
      c.starting_point = start;
      c.pretrain_steps = 0;
    }
    const ExperimentResult r = run_experiment(c);
    if (start.empty()) start = (fs::path(c.out_dir) / "starting_point.ckpt").string();
    avg.push_back(r.bits->average_bits);
    std::printf("  eta %.4g: average %.3f bits (%s)\n", c.train.coeffs.eta, avg.back(), r.rows.back().unit_bits.c_str());
  }
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  check("average bit-width non-increasing in eta", avg[0] >= avg[1] && avg[1] >= avg[2],
        fmt("%.3f >= %.3f >= %.3f", avg[0], avg[1], avg[2]));
  check("runtime within 30 minutes", minutes <= 30.0, fmt("%.1f min", minutes));
}

void one_pass_cost() {
  RunConfig base = e2e_config();
  base.train.kl_regularization = false;
  base.train.steps = 1000;
  const ExperimentResult mixed = run_experiment(variant(base, "cost_mixed", QuantMode::MixedSearch));
  base.starting_point = (work_dir / "cost_mixed" / "starting_point.ckpt").string();
  base.pretrain_steps = 0;
  const ExperimentResult two = run_experiment(variant(base, "cost_two_stage", QuantMode::TwoStageBaseline));
  std::printf("  mixed_search %.1f s (pass 1 + pass 2), two_stage_baseline %.1f s (%zu uniform runs + assignment + fixed run)\n",
              mixed.train_seconds, two.train_seconds, base.train.candidate_bits.size());
  check("mixed_search faster than two_stage_baseline", mixed.train_seconds < two.train_seconds,
        fmt("%.1f s vs %.1f s, speed-up %.2fx", mixed.train_seconds, two.train_seconds,
            two.train_seconds / mixed.train_seconds));
}

void bit_exact_io() {
  Rng rng(3);
  std::size_t bad = 0;
  for (int i = 0; i < 10000; ++i) {
    const int bits = std::vector<int>{2, 4, 8}[i % 3];
    const IntGrid g = IntGrid::make(bits);
    std::vector<std::int32_t> v(1 + rng.below(300));
    for (auto& x : v) x = g.q_min + static_cast<std::int32_t>(rng.below(g.q_max - g.q_min + 1));
    if (unpack_tensor(pack_tensor(v, bits), bits, v.size()) != v) ++bad;
  }
  check("pack/unpack identity on 10000 tensors", bad == 0, fmt("%.0f mismatches", double(bad)));

  // a briefly trained mixed-precision model
  RunConfig c = load_run_config(std::string(MXQ_SOURCE_DIR) + "/configs/smoke.json");
  c.model.quantize_frontend = true;
  c = variant(c, "io", QuantMode::MixedSearch);
  const ExperimentResult r = run_experiment(c);
  const fs::path dir = c.out_dir;

  const auto packed = read_file((dir / "pass2.mxq").string());
  const PackedCheckpoint ckpt = parse_packed(packed);
  check("packed checkpoint load -> save byte-identical", serialize(ckpt) == packed,
        fmt("%.0f bytes", double(packed.size())));
  const auto training = read_file((dir / "pass1.ckpt").string());
  check("training checkpoint load -> save byte-identical", serialize(parse_training(training)) == training,
        fmt("%.0f bytes", double(training.size())));

  Model m(c.model, c.seed);
  restore(parse_training(read_file((dir / "pass2.ckpt").string())), m, nullptr);
  const NetworkPlan plan = m.fixed_plan(r.bits->unit_bits, c.train.granularity);
  const NetworkWeights w = m.materialize(plan);
  std::size_t compared = 0, differ = 0;
  for (std::size_t i = 0; i < m.encoder_weights().size(); ++i) {
    for (const PackedTensor& t : ckpt.tensors) {
      if (t.name != m.encoder_weights()[i].name) continue;
      const auto values = reconstruct(t);
      for (std::size_t j = 0; j < values.size(); ++j, ++compared)
        if (values[j] != w.encoder[i].at(j)) ++differ;
    }
  }
  for (const auto& [name, tensor] : {std::pair{std::string("frontend.weight"), &w.frontend},
                                     std::pair{std::string("head.weight"), &w.head}}) {
    for (const PackedTensor& t : ckpt.tensors) {
      if (t.name != name) continue;
      const auto values = reconstruct(t);
      for (std::size_t j = 0; j < values.size(); ++j, ++compared)
        if (values[j] != tensor->at(j)) ++differ;
    }
  }
  check("reconstructed weights equal training-time quantized values", differ == 0 && compared > 0,
        fmt("%.0f of %.0f values differ", double(differ), double(compared)));
}

void determinism() {
  for (const char* mode : {"mixed_search", "two_stage_baseline"}) {
    RunConfig c = load_run_config(std::string(MXQ_SOURCE_DIR) + "/configs/smoke.json");
    c.mode = std::string(mode) == "mixed_search" ? QuantMode::MixedSearch : QuantMode::TwoStageBaseline;
    c.target_average_bits = 4.0;
    const std::string a = std::string("det_a_") + mode, b = std::string("det_b_") + mode;
    run_experiment(variant(c, a, c.mode));
    run_experiment(variant(c, b, c.mode));
    std::size_t files = 0, differ = 0;
    for (const auto& e : fs::directory_iterator(work_dir / a)) {
      const std::string name = e.path().filename().string();
      if (name.rfind("metrics_", 0) != 0) continue;
      ++files;
      if (slurp(e.path()) != slurp(work_dir / b / name)) ++differ;
    }
    auto untimed = [](const fs::path& p) {
      std::vector<SummaryRow> rows = read_summary_csv(p.string());
      for (auto& r : rows) r.train_time_s = 0.0;
      std::ostringstream os;
      write_summary_csv(os, rows);
      return os.str();
    };
    check(std::string("identical metrics CSVs, ") + mode, files > 0 && differ == 0,
          fmt("%.0f of %.0f files differ", double(differ), double(files)));
    check(std::string("identical summary without timing, ") + mode,
          untimed(work_dir / a / "summary.csv") == untimed(work_dir / b / "summary.csv"));
  }
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<std::string, std::function<void()>> criteria{
      {"table1", table1_ratios},   {"table1_eight_bit_rest", table1_eight_bit_rest},
      {"ctc", ctc_oracle},         {"quantizer", quantizer},
      {"gumbel", gumbel},          {"kl", kl},
      {"end_to_end", end_to_end},  {"eta_trend", eta_trend},
      {"one_pass_cost", one_pass_cost}, {"bit_exact_io", bit_exact_io},
      {"determinism", determinism}};
  if (argc < 2 || !criteria.count(argv[1])) {
    std::fprintf(stderr, "usage: %s <criterion> [work_dir]\ncriteria:", argv[0]);
    for (const auto& [name, fn] : criteria) std::fprintf(stderr, " %s", name.c_str());
    std::fprintf(stderr, "\n");
    return 2;
  }
  if (argc > 2) work_dir = argv[2];
  try {
    criteria.at(argv[1])();
  } catch (const std::exception& e) {
    check(std::string(argv[1]) + " raised", false, e.what());
  }
  return failures == 0 ? 0 : 1;
}
