#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mxq/config.hpp"
#include "mxq/experiment.hpp"

using namespace mxq;

namespace {

std::string tiny_run(const std::string& mode, const std::string& out, const std::string& extra = "") {
  return R"({
    "name": "t", "mode": ")" + mode + R"(", "bits": 4, "seed": 5, "out_dir": ")" + out + R"(",
    "model": {"num_layers": 2, "d_model": 8, "num_heads": 2, "d_ffn": 12,
              "vocab_size_with_blank": 4, "input_feature_dim": 5},
    "data": {"num_utterances": 12, "vocab_size_with_blank": 4, "input_dim": 5,
             "min_target_len": 2, "max_target_len": 3},
    "dev_utterances": 4, "test_utterances": 4, "pretrain_steps": 3,
    "sensitivity_utterances": 4,
    "train": {"steps": 4, "batch_size": 3, "coefficients": {"eta": 0.5}, "size_unit_bits": 1000})" +
         extra + "}";
}

std::string out_dir(const std::string& name) {
  const auto p = std::filesystem::path(::testing::TempDir()) / ("mxq_" + name);
  std::filesystem::remove_all(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

/// Summary text with timing columns blanked.
std::string untimed(const std::vector<SummaryRow>& rows) {
  std::vector<SummaryRow> copy = rows;
  for (auto& r : copy) r.train_time_s = 0.0;
  std::ostringstream os;
  write_summary_csv(os, copy);
  return os.str();
}

}  // namespace

TEST(Config, ParsesAndRoundTrips) {
  const RunConfig c = parse_run_config(tiny_run("uniform", "x"));
  EXPECT_EQ(c.mode, QuantMode::Uniform);
  EXPECT_EQ(c.bits, 4);
  EXPECT_EQ(c.model.d_model, 8);
  EXPECT_EQ(c.train.coeffs.eta, 0.5);
  EXPECT_EQ(c.train.seed, 5u);
  const RunConfig again = parse_run_config(to_json(c));
  EXPECT_EQ(to_json(again), to_json(c));
}

TEST(Config, ListsEveryViolation) {
  const std::string bad = R"({
    "mode": "sometimes", "bits": "eight", "colour": 1,
    "model": {"d_model": 10, "num_heads": 4},
    "train": {"steps": 0, "warmup_fraction": 1.5, "coefficients": {"eta": -1}}
  })";
  try {
    parse_run_config(bad);
    FAIL();
  } catch (const ConfigError& e) {
    const std::string all = e.what();
    for (const char* key : {"mode", "bits", "colour", "d_model", "steps", "warmup_fraction", "eta"})
      EXPECT_NE(all.find(key), std::string::npos) << key << " in\n" << all;
    EXPECT_GE(e.problems().size(), 5u);
  }
}

TEST(Config, CrossFieldChecks) {
  EXPECT_THROW(parse_run_config(tiny_run("uniform", "x", R"(, "bits": 9)")), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"data": {"vocab_size_with_blank": 5}})"), ConfigError);
  EXPECT_THROW(parse_run_config(tiny_run("two_stage_baseline", "x", R"(, "target_average_bits": 9)")),
               ConfigError);
  EXPECT_THROW(parse_run_config("{not json"), Error);
}

TEST(Sensitivity, ThresholdAssignment) {
  const std::vector<int> bits{2, 4, 8};
  // unit 0 is fragile at 2 bits, unit 1 is not
  const std::vector<std::vector<double>> delta{{1.0, 0.1, 0.0}, {0.05, 0.01, 0.0}};
  const std::vector<std::size_t> n{10, 10};
  EXPECT_EQ(assign_by_threshold(delta, bits, n, 8.0).unit_bits, (std::vector<int>{8, 8}));
  const BitAssignment a = assign_by_threshold(delta, bits, n, 3.0);
  EXPECT_EQ(a.unit_bits, (std::vector<int>{4, 2}));
  EXPECT_DOUBLE_EQ(a.average_bits, 3.0);
  EXPECT_EQ(assign_by_threshold(delta, bits, n, 2.0).unit_bits, (std::vector<int>{2, 2}));
}

TEST(Summary, SchemaIsSharedAcrossModes) {
  const auto cols = summary_columns();
  EXPECT_EQ(cols.front(), "system");
  EXPECT_TRUE(is_timing_column("train_time_s"));
  EXPECT_FALSE(is_timing_column("dev_token_error"));

  std::vector<std::string> headers;
  for (const char* mode : {"full_precision", "uniform", "mixed_search"}) {
    const std::string dir = out_dir(std::string("schema_") + mode);
    const ExperimentResult r = run_experiment(parse_run_config(tiny_run(mode, dir)));
    const std::string text = slurp(dir + "/summary.csv");
    std::istringstream is(text);
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, std::string("# ") + kSummarySchemaVersion);
    std::getline(is, line);
    headers.push_back(line);
    const auto back = read_summary_csv(dir + "/summary.csv");
    ASSERT_EQ(back.size(), r.rows.size());
    EXPECT_EQ(untimed(back), untimed(r.rows));
    if (std::string(mode) == "full_precision") {
      EXPECT_EQ(r.rows.front().comp_ratio, 1.0);
    }
    if (std::string(mode) == "mixed_search") {
      ASSERT_EQ(r.rows.size(), 2u);
      EXPECT_EQ(r.rows[0].system, "pass1");
      EXPECT_EQ(r.rows[1].system, "pass2");
      for (const char* f : {"metrics_pass1.csv", "metrics_pass2.csv", "pass2.mxq", "report_pass2.json",
                            "bitwidths_pass1.txt", "config.json", "effective_config.json"})
        EXPECT_TRUE(std::filesystem::exists(dir + "/" + f)) << f;
    }
  }
  EXPECT_EQ(headers[0], headers[1]);
  EXPECT_EQ(headers[1], headers[2]);
}

TEST(Experiment, TwoStageBaselineRunsEveryStage) {
  const std::string dir = out_dir("two_stage");
  const ExperimentResult r =
      run_experiment(parse_run_config(tiny_run("two_stage_baseline", dir, R"(, "target_average_bits": 4.0)")));
  ASSERT_TRUE(r.bits);
  EXPECT_LE(r.bits->average_bits, 4.0);
  std::vector<std::string> systems;
  for (const auto& row : r.rows) systems.push_back(row.system);
  EXPECT_EQ(systems, (std::vector<std::string>{"uniform_2", "uniform_4", "uniform_8", "two_stage"}));
  EXPECT_TRUE(std::filesystem::exists(dir + "/sensitivity.csv"));
  EXPECT_EQ(r.rows.back().steps, 4u * 4u);
  double parts = 0.0;
  for (std::size_t i = 0; i + 1 < r.rows.size(); ++i) parts += r.rows[i].train_time_s;
  EXPECT_GT(r.rows.back().train_time_s, parts);
}

TEST(Experiment, DeterministicOutputs) {
  for (const char* mode : {"uniform", "mixed_search"}) {
    const std::string a = out_dir(std::string("det_a_") + mode), b = out_dir(std::string("det_b_") + mode);
    const ExperimentResult ra = run_experiment(parse_run_config(tiny_run(mode, a)));
    const ExperimentResult rb = run_experiment(parse_run_config(tiny_run(mode, b)));
    EXPECT_EQ(untimed(ra.rows), untimed(rb.rows));
    for (const auto& entry : std::filesystem::directory_iterator(a)) {
      const std::string name = entry.path().filename().string();
      if (name == "summary.csv" || name == "config.json" || name == "effective_config.json") continue;
      EXPECT_EQ(slurp(entry.path().string()), slurp(b + "/" + name)) << mode << " " << name;
    }
  }
}
