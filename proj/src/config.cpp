#include "mxq/config.hpp"

#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace mxq {
namespace {

using json = nlohmann::ordered_json;

struct Field {
  std::string path;
  std::string type;
  std::string doc;
  std::function<void(RunConfig&, const json&)> set;
  std::function<json(const RunConfig&)> get;
};

struct TypeError {
  std::string what;
};

template <class T>
T convert(const json& j) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) throw TypeError{"expected a boolean"};
    return j.get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!j.is_string()) throw TypeError{"expected a string"};
    return j.get<std::string>();
  } else if constexpr (std::is_same_v<T, double>) {
    if (!j.is_number()) throw TypeError{"expected a number"};
    return j.get<double>();
  } else if constexpr (std::is_same_v<T, int>) {
    if (!j.is_number_integer()) throw TypeError{"expected an integer"};
    const auto v = j.get<std::int64_t>();
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
      throw TypeError{"integer out of range"};
    return static_cast<int>(v);
  } else if constexpr (std::is_unsigned_v<T>) {
    if (!j.is_number_integer() || j.get<std::int64_t>() < 0)
      throw TypeError{"expected a non-negative integer"};
    return static_cast<T>(j.get<std::uint64_t>());
  } else if constexpr (std::is_same_v<T, std::vector<int>>) {
    if (!j.is_array()) throw TypeError{"expected an array of integers"};
    std::vector<int> out;
    for (const json& e : j) out.push_back(convert<int>(e));
    return out;
  } else if constexpr (std::is_same_v<T, std::map<int, double>>) {
    if (!j.is_object()) throw TypeError{"expected an object mapping bit-width to number"};
    std::map<int, double> out;
    for (const auto& [k, v] : j.items()) {
      int b = 0;
      try {
        std::size_t used = 0;
        b = std::stoi(k, &used);
        if (used != k.size()) throw std::invalid_argument(k);
      } catch (const std::exception&) {
        throw TypeError{"key \"" + k + "\" is not a bit-width"};
      }
      out[b] = convert<double>(v);
    }
    return out;
  }
}

template <class T>
json emit(const T& v) {
  if constexpr (std::is_same_v<T, std::map<int, double>>) {
    json o = json::object();
    for (const auto& [b, x] : v) o[std::to_string(b)] = x;
    return o;
  } else {
    return json(v);
  }
}

template <class T>
std::string type_of() {
  if constexpr (std::is_same_v<T, bool>) return "bool";
  else if constexpr (std::is_same_v<T, std::string>) return "string";
  else if constexpr (std::is_same_v<T, double>) return "number";
  else if constexpr (std::is_same_v<T, int>) return "int";
  else if constexpr (std::is_unsigned_v<T>) return "uint";
  else if constexpr (std::is_same_v<T, std::vector<int>>) return "int[]";
  else return "{bits: number}";
}

template <class Get>
Field field(std::string path, std::string doc, Get get) {
  using T = std::remove_cvref_t<decltype(get(std::declval<RunConfig&>()))>;
  Field f;
  f.path = std::move(path);
  f.type = type_of<T>();
  f.doc = std::move(doc);
  f.set = [get](RunConfig& c, const json& j) { get(c) = convert<T>(j); };
  f.get = [get](const RunConfig& c) { return emit(get(const_cast<RunConfig&>(c))); };
  return f;
}

template <class E, class Get>
Field enum_field(std::string path, std::string doc, std::vector<std::pair<std::string, E>> names,
                 Get get) {
  Field f;
  f.path = std::move(path);
  f.doc = std::move(doc);
  f.type = "";
  for (const auto& [n, v] : names) f.type += (f.type.empty() ? "" : "|") + n;
  f.set = [get, names, type = f.type](RunConfig& c, const json& j) {
    if (!j.is_string()) throw TypeError{"expected one of " + type};
    for (const auto& [n, v] : names) {
      if (j.get<std::string>() == n) {
        get(c) = v;
        return;
      }
    }
    throw TypeError{"\"" + j.get<std::string>() + "\" is not one of " + type};
  };
  f.get = [get, names](const RunConfig& c) {
    const E v = get(const_cast<RunConfig&>(c));
    for (const auto& [n, e] : names)
      if (e == v) return json(n);
    return json(nullptr);
  };
  return f;
}

#define MXQ_FIELD(path, doc, member) \
  field(path, doc, [](RunConfig& c) -> auto& { return c.member; })

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back(MXQ_FIELD("name", "run name used in summary rows", name));
    f.push_back(enum_field<QuantMode>(
        "mode", "what to train",
        {{"full_precision", QuantMode::FullPrecision},
         {"uniform", QuantMode::Uniform},
         {"mixed_search", QuantMode::MixedSearch},
         {"two_stage_baseline", QuantMode::TwoStageBaseline}},
        [](RunConfig& c) -> auto& { return c.mode; }));
    f.push_back(MXQ_FIELD("bits", "uniform mode bit-width (2..8)", bits));
    f.push_back(MXQ_FIELD("seed", "training seed", seed));
    f.push_back(MXQ_FIELD("out_dir", "output directory", out_dir));

    f.push_back(MXQ_FIELD("model.num_layers", "encoder layers", model.num_layers));
    f.push_back(MXQ_FIELD("model.d_model", "model width", model.d_model));
    f.push_back(MXQ_FIELD("model.num_heads", "attention heads", model.num_heads));
    f.push_back(MXQ_FIELD("model.d_ffn", "feed-forward width", model.d_ffn));
    f.push_back(MXQ_FIELD("model.vocab_size_with_blank", "output classes including blank",
                          model.vocab_size_with_blank));
    f.push_back(MXQ_FIELD("model.input_feature_dim", "feature dimension", model.input_feature_dim));
    f.push_back(MXQ_FIELD("model.quantize_frontend",
                          "quantize front-end and head at 8 bits in quantized networks",
                          model.quantize_frontend));
    f.push_back(enum_field<GridKind>("model.grid", "integer grid",
                                     {{"twos_complement", GridKind::TwosComplement},
                                      {"symmetric", GridKind::Symmetric}},
                                     [](RunConfig& c) -> auto& { return c.model.grid; }));

    f.push_back(MXQ_FIELD("data.num_utterances", "training utterances", data.num_utterances));
    f.push_back(MXQ_FIELD("data.min_target_len", "shortest target", data.min_target_len));
    f.push_back(MXQ_FIELD("data.max_target_len", "longest target", data.max_target_len));
    f.push_back(MXQ_FIELD("data.vocab_size_with_blank", "classes including blank",
                          data.vocab_size_with_blank));
    f.push_back(MXQ_FIELD("data.input_dim", "feature dimension", data.input_dim));
    f.push_back(MXQ_FIELD("data.min_frames_per_token", "fewest frames per token",
                          data.min_frames_per_token));
    f.push_back(MXQ_FIELD("data.max_frames_per_token", "most frames per token",
                          data.max_frames_per_token));
    f.push_back(MXQ_FIELD("data.noise", "feature noise standard deviation", data.noise));
    f.push_back(MXQ_FIELD("data.task_seed", "class embedding seed", data.task_seed));
    f.push_back(MXQ_FIELD("data.seed", "training utterance seed", data.seed));
    f.push_back(MXQ_FIELD("dev_utterances", "dev set size", dev_utterances));
    f.push_back(MXQ_FIELD("test_utterances", "test set size", test_utterances));
    f.push_back(MXQ_FIELD("dev_seed", "dev utterance seed", dev_seed));
    f.push_back(MXQ_FIELD("test_seed", "test utterance seed", test_seed));

    f.push_back(MXQ_FIELD("starting_point", "training checkpoint to start from", starting_point));
    f.push_back(MXQ_FIELD("pretrain_steps", "full-precision steps when no starting point is given",
                          pretrain_steps));
    f.push_back(MXQ_FIELD("pretrain_learning_rate", "peak learning rate of that pretraining",
                          pretrain_learning_rate));

    f.push_back(MXQ_FIELD("train.steps", "steps per training run", train.steps));
    f.push_back(MXQ_FIELD("train.learning_rate", "peak learning rate", train.learning_rate));
    f.push_back(MXQ_FIELD("train.warmup_fraction", "linear warmup fraction", train.warmup_fraction));
    f.push_back(MXQ_FIELD("train.batch_size", "utterances per step", train.batch_size));
    f.push_back(MXQ_FIELD("train.temperature_start", "Gumbel-Softmax temperature at step 0",
                          train.temperature_start));
    f.push_back(MXQ_FIELD("train.temperature_end", "temperature at the last step",
                          train.temperature_end));
    f.push_back(MXQ_FIELD("train.kl_regularization", "KL-regularized objective",
                          train.kl_regularization));
    f.push_back(MXQ_FIELD("train.subnet_sampling", "one sampled uniform student per step",
                          train.subnet_sampling));
    f.push_back(enum_field<Pass2Init>("train.pass2_init", "Pass 2 initial weights",
                                      {{"pass1_weights", Pass2Init::Pass1Weights},
                                       {"starting_point", Pass2Init::StartingPoint}},
                                      [](RunConfig& c) -> auto& { return c.train.pass2_init; }));
    f.push_back(MXQ_FIELD("train.candidate_bits", "bit-width candidates, ascending",
                          train.candidate_bits));
    f.push_back(enum_field<SearchGranularity>(
        "train.granularity", "one bit-width per layer or per module",
        {{"per_layer", SearchGranularity::PerLayer}, {"per_module", SearchGranularity::PerModule}},
        [](RunConfig& c) -> auto& { return c.train.granularity; }));
    f.push_back(MXQ_FIELD("train.arch_lr_scale", "arch logit learning-rate multiplier",
                          train.arch_lr_scale));
    f.push_back(MXQ_FIELD("train.scale_lr_scale", "quantizer scale learning-rate multiplier",
                          train.scale_lr_scale));
    f.push_back(MXQ_FIELD("train.grad_clip", "global gradient norm bound", train.grad_clip));
    f.push_back(MXQ_FIELD("train.size_unit_bits", "bits per unit of C_size", train.size_unit_bits));
    f.push_back(MXQ_FIELD("train.size_counts_overhead", "C_size counts unquantized parameters",
                          train.size_counts_overhead));
    f.push_back(MXQ_FIELD("train.size_counts_scales", "C_size counts quantizer scales",
                          train.size_counts_scales));
    f.push_back(MXQ_FIELD("train.strict_coefficients",
                          "reject nonzero coefficients of networks not forwarded",
                          train.strict_coefficients));
    f.push_back(MXQ_FIELD("train.adamw.beta1", "Adam beta1", train.adamw.beta1));
    f.push_back(MXQ_FIELD("train.adamw.beta2", "Adam beta2", train.adamw.beta2));
    f.push_back(MXQ_FIELD("train.adamw.eps", "Adam epsilon", train.adamw.eps));
    f.push_back(MXQ_FIELD("train.adamw.weight_decay", "decoupled weight decay",
                          train.adamw.weight_decay));
    f.push_back(MXQ_FIELD("train.coefficients.eta", "size penalty weight per size unit",
                          train.coeffs.eta));
    f.push_back(MXQ_FIELD("train.coefficients.beta_mp", "KL weight of the mixed network",
                          train.coeffs.beta_mp));
    f.push_back(MXQ_FIELD("train.coefficients.beta_kl", "KL weight of the uniform students",
                          train.coeffs.beta_kl));
    f.push_back(MXQ_FIELD("train.coefficients.beta", "per-bit student KL weights",
                          train.coeffs.beta));
    f.push_back(MXQ_FIELD("train.coefficients.lambda", "per-bit student CTC weights",
                          train.coeffs.lambda));

    f.push_back(MXQ_FIELD("run_pass2", "fine-tune with frozen bit-widths after Pass 1", run_pass2));
    f.push_back(MXQ_FIELD("pass2_steps", "Pass 2 steps (0: train.steps)", pass2_steps));
    f.push_back(MXQ_FIELD("target_average_bits", "two-stage baseline average bit-width target",
                          target_average_bits));
    f.push_back(MXQ_FIELD("sensitivity_utterances", "utterances used for sensitivity",
                          sensitivity_utterances));
    return f;
  }();
  return all;
}

#undef MXQ_FIELD

bool is_section(const std::string& path) {
  for (const Field& f : fields())
    if (f.path.size() > path.size() && f.path.compare(0, path.size() + 1, path + ".") == 0)
      return true;
  return false;
}

void walk(const json& obj, const std::string& prefix, RunConfig& cfg,
          std::vector<std::string>& problems) {
  for (const auto& [key, value] : obj.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    const Field* match = nullptr;
    for (const Field& f : fields())
      if (f.path == path) match = &f;
    if (match) {
      try {
        match->set(cfg, value);
      } catch (const TypeError& e) {
        problems.push_back(path + ": " + e.what);
      }
    } else if (key == "schema" && prefix.empty()) {
      if (!value.is_string() || value.get<std::string>() != "mxq-run-v1")
        problems.push_back("schema: expected \"mxq-run-v1\"");
    } else if (is_section(path)) {
      if (value.is_object()) {
        walk(value, path, cfg, problems);
      } else {
        problems.push_back(path + ": expected an object");
      }
    } else {
      problems.push_back(path + ": unknown key");
    }
  }
}

void check(std::vector<std::string>& problems, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    problems.push_back(e.what());
  }
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& p : v) s += "\n  - " + p;
  return s;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : Error("invalid run config:" + join(problems)), problems_(std::move(problems)) {}

std::string mode_name(QuantMode m) {
  switch (m) {
    case QuantMode::FullPrecision: return "full_precision";
    case QuantMode::Uniform: return "uniform";
    case QuantMode::MixedSearch: return "mixed_search";
    case QuantMode::TwoStageBaseline: return "two_stage_baseline";
  }
  return "?";
}

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("not valid JSON: ") + e.what()});
  }
  if (!j.is_object()) throw ConfigError({"top level must be an object"});
  RunConfig cfg;
  std::vector<std::string> problems;
  walk(j, "", cfg, problems);
  cfg.train.seed = cfg.seed;

  check(problems, [&] { cfg.model.validate(); });
  check(problems, [&] { cfg.data.validate(); });
  check(problems, [&] { cfg.train.validate(); });
  if (cfg.data.vocab_size_with_blank != cfg.model.vocab_size_with_blank)
    problems.push_back("data.vocab_size_with_blank differs from model.vocab_size_with_blank");
  if (cfg.data.input_dim != cfg.model.input_feature_dim)
    problems.push_back("data.input_dim differs from model.input_feature_dim");
  if (cfg.mode == QuantMode::Uniform && (cfg.bits < 2 || cfg.bits > 8))
    problems.push_back("bits: uniform mode needs a bit-width in [2, 8]");
  if (cfg.dev_utterances == 0) problems.push_back("dev_utterances must be positive");
  if (cfg.test_utterances == 0) problems.push_back("test_utterances must be positive");
  if (cfg.out_dir.empty()) problems.push_back("out_dir must not be empty");
  if (cfg.mode == QuantMode::TwoStageBaseline) {
    if (cfg.sensitivity_utterances == 0) problems.push_back("sensitivity_utterances must be positive");
    if (!cfg.train.candidate_bits.empty() &&
        (cfg.target_average_bits < cfg.train.candidate_bits.front() ||
         cfg.target_average_bits > cfg.train.candidate_bits.back()))
      problems.push_back("target_average_bits outside the candidate range");
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
  cfg.source_text = text;
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_json(const RunConfig& cfg) {
  json j;
  j["schema"] = "mxq-run-v1";
  for (const Field& f : fields()) {
    std::string ptr = "/" + f.path;
    for (auto& ch : ptr)
      if (ch == '.') ch = '/';
    j[json::json_pointer(ptr)] = f.get(cfg);
  }
  return j.dump(2) + "\n";
}

std::string config_schema() {
  std::ostringstream os;
  os << "schema: \"mxq-run-v1\" (optional)\n";
  const RunConfig defaults;
  for (const Field& f : fields())
    os << f.path << " : " << f.type << " = " << f.get(defaults).dump() << "  # " << f.doc << '\n';
  return os.str();
}

}  // namespace mxq
