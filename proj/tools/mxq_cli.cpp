// mxq: train, evaluate and inspect mixed-precision toy CTC models.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mxq/checkpoint.hpp"
#include "mxq/compression.hpp"
#include "mxq/config.hpp"
#include "mxq/experiment.hpp"
#include "mxq/packing.hpp"

namespace {

std::vector<int> split_bits(std::string text) {
  for (char& c : text)
    if (c == ',') c = ' ';
  std::vector<int> out;
  std::istringstream is(text);
  for (int b; is >> b;) out.push_back(b);
  if (!is.eof()) throw mxq::Error("cannot parse bit-widths \"" + text + "\"");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixed-precision quantization of a toy Transformer-CTC model"};
  app.require_subcommand(1);

  std::string config_path, out, checkpoint, bits_text;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  bool as_json = false;

  auto* train = app.add_subcommand("train", "run the configured experiment");
  train->add_option("--config", config_path, "run config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "override the training seed");
  train->add_option("--out", out, "override the output directory");
  train->add_option("--steps", steps, "override steps per training run");

  auto* eval = app.add_subcommand("eval", "token error of a packed checkpoint on the dev and test sets");
  eval->add_option("--config", config_path, "run config (JSON)")->required()->check(CLI::ExistingFile);
  eval->add_option("--checkpoint", checkpoint, "packed checkpoint (.mxq)")->required()->check(CLI::ExistingFile);

  auto* report = app.add_subcommand("report", "compression report of a packed checkpoint");
  report->add_option("--config", config_path, "run config (JSON)")->required()->check(CLI::ExistingFile);
  report->add_option("--checkpoint", checkpoint, "packed checkpoint (.mxq)")->required()->check(CLI::ExistingFile);
  report->add_flag("--json", as_json, "print the structured record");

  auto* pack = app.add_subcommand("pack", "pack a training checkpoint at fixed bit-widths");
  pack->add_option("--config", config_path, "run config (JSON)")->required()->check(CLI::ExistingFile);
  pack->add_option("--checkpoint", checkpoint, "training checkpoint (.ckpt)")->required()->check(CLI::ExistingFile);
  pack->add_option("--bits", bits_text, "one bit-width, or one per search unit (comma separated); 32 keeps a unit unquantized")->required();
  pack->add_option("--out", out, "output file (.mxq)")->required();

  auto* unpack = app.add_subcommand("unpack", "dump a packed checkpoint's integer codes as JSON");
  unpack->add_option("--checkpoint", checkpoint, "packed checkpoint (.mxq)")->required()->check(CLI::ExistingFile);
  unpack->add_option("--out", out, "output file (JSON); stdout when omitted");

  std::vector<std::string> summaries;
  auto* compare = app.add_subcommand("compare", "compare summary CSVs of several runs");
  compare->add_option("summaries", summaries, "summary.csv files")->required()->check(CLI::ExistingFile);

  app.add_subcommand("schema", "print the run config schema");

  CLI11_PARSE(app, argc, argv);

  try {
    using namespace mxq;
    if (train->parsed()) {
      RunConfig cfg = load_run_config(config_path);
      if (seed) cfg.seed = cfg.train.seed = *seed;
      if (!out.empty()) cfg.out_dir = out;
      if (steps) {
        if (*steps == 0) throw Error("--steps must be positive");
        cfg.train.steps = *steps;
      }
      const ExperimentResult r = run_experiment(cfg);
      write_summary_csv(std::cout, r.rows);
      std::cout << "outputs in " << cfg.out_dir << '\n';
    } else if (eval->parsed()) {
      const RunConfig cfg = load_run_config(config_path);
      Model m(cfg.model, cfg.seed);
      load_packed(m, parse_packed(read_file(checkpoint)));
      const Datasets data = make_datasets(cfg);
      for (const auto& [name, set] : {std::pair{"dev", &data.dev}, std::pair{"test", &data.test}}) {
        const EvalResult e = evaluate(m, m.full_precision_plan(), *set);
        std::printf("%s: ctc_loss %.6f token_error %.4f (%zu utterances)\n", name, e.mean_ctc_loss,
                    e.token_error, set->size());
      }
    } else if (report->parsed()) {
      const RunConfig cfg = load_run_config(config_path);
      Model m(cfg.model, cfg.seed);
      const PackedCheckpoint ckpt = parse_packed(read_file(checkpoint));
      if (ckpt.config_hash != m.config().hash()) throw Error("checkpoint was written for a different model config");
      const CompressionReport r = emit_report(m, plan_from_packed(m, ckpt), nullptr, cfg.train.size_counts_scales);
      std::cout << (as_json ? r.json() : r.text());
    } else if (pack->parsed()) {
      const RunConfig cfg = load_run_config(config_path);
      Model m(cfg.model, cfg.seed);
      restore(parse_training(read_file(checkpoint)), m, nullptr);
      const auto g = cfg.train.granularity;
      std::vector<int> bits = split_bits(bits_text);
      const std::size_t units = m.search_units(g).size();
      if (bits.size() == 1) bits.assign(units, bits.front());
      if (bits.size() != units) throw Error("--bits needs 1 or " + std::to_string(units) + " values");
      NetworkPlan plan;
      plan.granularity = g;
      bool quantized = false;
      for (int b : bits) {
        plan.units.push_back(b == kFullPrecisionBits ? UnitPrecision::full() : UnitPrecision::fixed(b));
        quantized = quantized || b != kFullPrecisionBits;
      }
      plan.frontend_bits = cfg.model.quantize_frontend && quantized ? 8 : kFullPrecisionBits;
      std::vector<int> needed;
      for (int b : bits)
        if (b != kFullPrecisionBits) needed.push_back(b);
      m.ensure_scales(needed);
      write_file_atomic(out, serialize(pack_model(m, plan)));
      std::cout << emit_report(m, plan, nullptr, cfg.train.size_counts_scales).text();
    } else if (unpack->parsed()) {
      const PackedCheckpoint ckpt = parse_packed(read_file(checkpoint));
      nlohmann::ordered_json j;
      j["version"] = ckpt.version;
      j["config_hash"] = ckpt.config_hash;
      auto& tensors = j["tensors"] = nlohmann::ordered_json::array();
      for (const PackedTensor& t : ckpt.tensors) {
        nlohmann::ordered_json rec;
        rec["name"] = t.name;
        rec["shape"] = t.shape;
        rec["bits"] = t.bits;
        if (t.bits == kFullPrecisionBits) {
          rec["values"] = reconstruct(t);
        } else {
          rec["scale"] = t.scale;
          rec["codes"] = unpack_tensor(t.payload, t.bits, numel_of(t.shape));
        }
        tensors.push_back(std::move(rec));
      }
      const std::string text = j.dump(1) + "\n";
      if (out.empty()) {
        std::cout << text;
      } else {
        write_file_atomic(out, text);
      }
    } else if (compare->parsed()) {
      std::vector<std::pair<std::string, std::vector<SummaryRow>>> runs;
      for (const std::string& p : summaries) runs.emplace_back(p, read_summary_csv(p));
      std::cout << compare_summaries(runs);
    } else {
      std::cout << config_schema();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
