#include "mxq/model.hpp"

#include <cmath>

#include "mxq/ops.hpp"
#include "mxq/rng.hpp"

namespace mxq {

void ModelConfig::validate() const {
  std::string problems;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) problems += (problems.empty() ? "" : "; ") + msg;
  };
  need(num_layers > 0, "num_layers must be positive");
  need(d_model > 0, "d_model must be positive");
  need(num_heads > 0, "num_heads must be positive");
  need(d_ffn > 0, "d_ffn must be positive");
  need(vocab_size_with_blank >= 2, "vocab_size_with_blank must be at least 2");
  need(input_feature_dim > 0, "input_feature_dim must be positive");
  if (d_model > 0 && num_heads > 0) {
    need(d_model % num_heads == 0, "d_model " + std::to_string(d_model) +
                                       " is not divisible by num_heads " +
                                       std::to_string(num_heads));
  }
  if (!problems.empty()) throw Error("model config: " + problems);
}

std::uint64_t ModelConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::int64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= static_cast<std::uint64_t>(v >> (8 * i)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  feed(num_layers);
  feed(d_model);
  feed(num_heads);
  feed(d_ffn);
  feed(vocab_size_with_blank);
  feed(input_feature_dim);
  feed(quantize_frontend ? 1 : 0);
  feed(grid == GridKind::TwosComplement ? 0 : 1);
  return h;
}

Tensor& QuantizedWeight::scale(int bits) {
  auto it = scales.find(bits);
  if (it == scales.end()) throw Error(name + ": no scale for " + std::to_string(bits) + " bits");
  return it->second;
}

const Tensor& QuantizedWeight::scale(int bits) const {
  auto it = scales.find(bits);
  if (it == scales.end()) throw Error(name + ": no scale for " + std::to_string(bits) + " bits");
  return it->second;
}

void QuantizedWeight::ensure_scale(int bits, GridKind grid) {
  if (bits == kFullPrecisionBits || scales.count(bits)) return;
  const IntGrid g = IntGrid::make(bits, grid);
  scales.emplace(bits, Tensor::scalar(snap_scale(init_scale(master.data(), g)), true));
}

Tensor QuantizedWeight::quantized(int bits, GridKind grid) const {
  if (bits == kFullPrecisionBits) return master;
  return fake_quantize(master, scale(bits), IntGrid::make(bits, grid));
}

UnitPrecision UnitPrecision::fixed(int bits) {
  UnitPrecision p;
  p.kind = bits == kFullPrecisionBits ? Kind::Full : Kind::Fixed;
  p.bits = bits;
  return p;
}

UnitPrecision UnitPrecision::mixed(Tensor lambda, std::vector<int> candidate_bits) {
  if (lambda.numel() != candidate_bits.size()) {
    throw ShapeError("mixed precision: " + std::to_string(lambda.numel()) + " weights for " +
                     std::to_string(candidate_bits.size()) + " candidates");
  }
  UnitPrecision p;
  p.kind = Kind::Mixed;
  p.lambda = std::move(lambda);
  p.candidate_bits = std::move(candidate_bits);
  return p;
}

namespace {

Tensor xavier(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (double& x : v) x = rng.uniform(-a, a);
  return Tensor({fan_in, fan_out}, std::move(v), true);
}

Tensor zeros_param(std::size_t n) { return Tensor::zeros({n}, true); }
Tensor ones_param(std::size_t n) { return Tensor::full({n}, 1.0, true); }

const char* kWeightNames[Model::kWeightsPerLayer] = {"attn.q", "attn.k",  "attn.v",
                                                    "attn.o", "ffn.in", "ffn.out"};

}  // namespace

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(seed, {0x6d6f64656cULL}));
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto f = static_cast<std::size_t>(cfg.d_ffn);
  const auto in = static_cast<std::size_t>(cfg.input_feature_dim);
  const auto v = static_cast<std::size_t>(cfg.vocab_size_with_blank);

  frontend_ = {"frontend.weight", xavier(rng, in, d), {}};
  frontend_bias_ = zeros_param(d);
  for (int l = 0; l < cfg.num_layers; ++l) {
    const std::string prefix = "encoder." + std::to_string(l) + ".";
    const std::size_t shapes[kWeightsPerLayer][2] = {{d, d}, {d, d}, {d, d},
                                                     {d, d}, {d, f}, {f, d}};
    for (int k = 0; k < kWeightsPerLayer; ++k) {
      encoder_weights_.push_back(
          {prefix + kWeightNames[k] + ".weight", xavier(rng, shapes[k][0], shapes[k][1]), {}});
    }
    layers_.push_back({ones_param(d), zeros_param(d), zeros_param(d), zeros_param(d),
                       zeros_param(d), zeros_param(d), ones_param(d), zeros_param(d),
                       zeros_param(f), zeros_param(d)});
  }
  final_gain_ = ones_param(d);
  final_bias_ = zeros_param(d);
  head_ = {"head.weight", xavier(rng, d, v), {}};
  head_bias_ = zeros_param(v);
}

Model Model::clone() const {
  Model m(cfg_, 0);
  m.copy_from(*this);
  return m;
}

void Model::copy_from(const Model& other) {
  if (other.cfg_.hash() != cfg_.hash()) throw Error("copy_from: model layouts differ");
  auto sync_scales = [this](QuantizedWeight& dst, const QuantizedWeight& src) {
    for (auto it = dst.scales.begin(); it != dst.scales.end();) {
      it = src.scales.count(it->first) ? std::next(it) : dst.scales.erase(it);
    }
    for (const auto& [bits, s] : src.scales) dst.ensure_scale(bits, cfg_.grid);
  };
  sync_scales(frontend_, other.frontend_);
  sync_scales(head_, other.head_);
  for (std::size_t i = 0; i < encoder_weights_.size(); ++i)
    sync_scales(encoder_weights_[i], other.encoder_weights_[i]);

  auto dst = named_parameters();
  auto src = other.named_parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto from = src[i].tensor.data();
    std::copy(from.begin(), from.end(), dst[i].tensor.mutable_data().begin());
    dst[i].tensor.zero_grad();
  }
}

std::vector<NamedParam> Model::named_parameters() const {
  std::vector<NamedParam> out;
  auto add_weight = [&out](const QuantizedWeight& w) {
    out.push_back({w.name, w.master, ParamKind::Weight});
    for (const auto& [bits, s] : w.scales)
      out.push_back({w.name + ".scale" + std::to_string(bits), s, ParamKind::Scale});
  };
  add_weight(frontend_);
  out.push_back({"frontend.bias", frontend_bias_, ParamKind::Bias});
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& L = layers_[l];
    const std::string p = "encoder." + std::to_string(l) + ".";
    const auto* w = &encoder_weights_[l * kWeightsPerLayer];
    out.push_back({p + "ln1.gain", L.ln1_gain, ParamKind::Norm});
    out.push_back({p + "ln1.bias", L.ln1_bias, ParamKind::Norm});
    add_weight(w[0]);
    out.push_back({p + "attn.q.bias", L.bq, ParamKind::Bias});
    add_weight(w[1]);
    out.push_back({p + "attn.k.bias", L.bk, ParamKind::Bias});
    add_weight(w[2]);
    out.push_back({p + "attn.v.bias", L.bv, ParamKind::Bias});
    add_weight(w[3]);
    out.push_back({p + "attn.o.bias", L.bo, ParamKind::Bias});
    out.push_back({p + "ln2.gain", L.ln2_gain, ParamKind::Norm});
    out.push_back({p + "ln2.bias", L.ln2_bias, ParamKind::Norm});
    add_weight(w[4]);
    out.push_back({p + "ffn.in.bias", L.b_ffn_in, ParamKind::Bias});
    add_weight(w[5]);
    out.push_back({p + "ffn.out.bias", L.b_ffn_out, ParamKind::Bias});
  }
  out.push_back({"final_ln.gain", final_gain_, ParamKind::Norm});
  out.push_back({"final_ln.bias", final_bias_, ParamKind::Norm});
  add_weight(head_);
  out.push_back({"head.bias", head_bias_, ParamKind::Bias});
  return out;
}

std::vector<ParameterGroup> Model::groups() const {
  std::vector<ParameterGroup> out;
  auto group_of = [](const std::string& name) -> std::string {
    if (name.rfind("frontend.", 0) == 0) return "frontend";
    if (name.rfind("encoder.", 0) == 0) {
      const auto dot = name.find('.', 8);
      const std::string layer = name.substr(0, dot);
      const bool ffn = name.find(".ffn.") != std::string::npos ||
                       name.find(".ln2.") != std::string::npos;
      return layer + (ffn ? ".ffn" : ".mhsa");
    }
    return "head";
  };
  for (const NamedParam& p : named_parameters()) {
    const std::string g = group_of(p.name);
    if (out.empty() || out.back().name != g) {
      ParameterGroup pg;
      pg.name = g;
      pg.encoder = g.rfind("encoder.", 0) == 0;
      pg.quantizable = pg.encoder || cfg_.quantize_frontend;
      out.push_back(pg);
    }
    ParameterGroup& pg = out.back();
    pg.tensor_names.push_back(p.name);
    if (p.kind == ParamKind::Scale) continue;
    pg.parameter_count += p.tensor.numel();
    if (p.kind == ParamKind::Weight && pg.quantizable) pg.quantized_count += p.tensor.numel();
  }
  return out;
}

std::size_t Model::total_parameters() const {
  std::size_t n = 0;
  for (const auto& g : groups()) n += g.parameter_count;
  return n;
}

std::size_t Model::encoder_parameters() const {
  std::size_t n = 0;
  for (const auto& g : groups())
    if (g.encoder) n += g.parameter_count;
  return n;
}

double Model::encoder_fraction() const {
  return static_cast<double>(encoder_parameters()) / static_cast<double>(total_parameters());
}

std::vector<SearchUnit> Model::search_units(SearchGranularity g) const {
  std::vector<SearchUnit> units;
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const std::string base = "encoder." + std::to_string(l);
    const std::size_t first = static_cast<std::size_t>(l) * kWeightsPerLayer;
    auto make = [&](std::string name, std::size_t from, std::size_t to) {
      SearchUnit u;
      u.name = std::move(name);
      for (std::size_t i = from; i < to; ++i) {
        u.weights.push_back(first + i);
        u.param_count += encoder_weights_[first + i].master.numel();
      }
      units.push_back(std::move(u));
    };
    if (g == SearchGranularity::PerLayer) {
      make(base, 0, kWeightsPerLayer);
    } else {
      make(base + ".mhsa", 0, 4);
      make(base + ".ffn", 4, kWeightsPerLayer);
    }
  }
  return units;
}

void Model::ensure_scales(const std::vector<int>& bits) {
  for (int b : bits) {
    for (auto& w : encoder_weights_) w.ensure_scale(b, cfg_.grid);
  }
  if (cfg_.quantize_frontend) {
    frontend_.ensure_scale(8, cfg_.grid);
    head_.ensure_scale(8, cfg_.grid);
  }
}

NetworkPlan Model::full_precision_plan() const {
  NetworkPlan plan;
  plan.units.assign(search_units(plan.granularity).size(), UnitPrecision::full());
  return plan;
}

NetworkPlan Model::uniform_plan(int bits, SearchGranularity g) const {
  NetworkPlan plan;
  plan.granularity = g;
  plan.units.assign(search_units(g).size(), UnitPrecision::fixed(bits));
  plan.frontend_bits =
      cfg_.quantize_frontend && bits != kFullPrecisionBits ? 8 : kFullPrecisionBits;
  return plan;
}

NetworkPlan Model::fixed_plan(const std::vector<int>& unit_bits, SearchGranularity g) const {
  NetworkPlan plan;
  plan.granularity = g;
  if (unit_bits.size() != search_units(g).size()) {
    throw Error("fixed_plan: " + std::to_string(unit_bits.size()) + " bit-widths for " +
                std::to_string(search_units(g).size()) + " search units");
  }
  for (int b : unit_bits) plan.units.push_back(UnitPrecision::fixed(b));
  plan.frontend_bits = cfg_.quantize_frontend ? 8 : kFullPrecisionBits;
  return plan;
}

NetworkWeights Model::materialize(const NetworkPlan& plan) const {
  const auto units = search_units(plan.granularity);
  if (plan.units.size() != units.size()) {
    throw Error("materialize: plan has " + std::to_string(plan.units.size()) +
                " units, model has " + std::to_string(units.size()));
  }
  NetworkWeights w;
  w.encoder.resize(encoder_weights_.size());
  for (std::size_t u = 0; u < units.size(); ++u) {
    const UnitPrecision& p = plan.units[u];
    for (std::size_t idx : units[u].weights) {
      const QuantizedWeight& qw = encoder_weights_[idx];
      switch (p.kind) {
        case UnitPrecision::Kind::Full:
          w.encoder[idx] = qw.master;
          break;
        case UnitPrecision::Kind::Fixed:
          w.encoder[idx] = qw.quantized(p.bits, cfg_.grid);
          break;
        case UnitPrecision::Kind::Mixed: {
          // Every quantizing module of the unit mixes its candidates with the
          // unit's importance weights; by linearity of the module this equals
          // mixing the candidate module outputs.
          Tensor acc;
          for (std::size_t i = 0; i < p.candidate_bits.size(); ++i) {
            Tensor term = ops::mul(qw.quantized(p.candidate_bits[i], cfg_.grid),
                                   ops::slice(p.lambda, 0, i, i + 1));
            acc = acc.defined() ? ops::add(acc, term) : term;
          }
          w.encoder[idx] = acc;
          break;
        }
      }
    }
  }
  w.frontend = frontend_.quantized(plan.frontend_bits, cfg_.grid);
  w.head = head_.quantized(plan.frontend_bits, cfg_.grid);
  return w;
}

Tensor positional_encoding(std::size_t frames, std::size_t d_model) {
  std::vector<double> v(frames * d_model);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < d_model; ++i) {
      const double rate =
          std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model));
      v[t * d_model + i] = (i % 2 == 0) ? std::sin(t * rate) : std::cos(t * rate);
    }
  }
  return Tensor({frames, d_model}, std::move(v));
}

Tensor Model::encoder_layer(const Tensor& h, std::size_t layer, const NetworkWeights& w) const {
  using namespace ops;
  const Layer& L = layers_[layer];
  const Tensor* W = &w.encoder[layer * kWeightsPerLayer];
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  const auto heads = static_cast<std::size_t>(cfg_.num_heads);
  const std::size_t dh = d / heads;

  Tensor a = layer_norm(h, L.ln1_gain, L.ln1_bias);
  Tensor q = add(matmul(a, W[0]), L.bq);
  Tensor k = add(matmul(a, W[1]), L.bk);
  Tensor v = add(matmul(a, W[2]), L.bv);
  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t hd = 0; hd < heads; ++hd) {
    Tensor qh = slice(q, 1, hd * dh, (hd + 1) * dh);
    Tensor kh = slice(k, 1, hd * dh, (hd + 1) * dh);
    Tensor vh = slice(v, 1, hd * dh, (hd + 1) * dh);
    Tensor attn = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt));
    head_out.push_back(matmul(attn, vh));
  }
  Tensor o = add(matmul(concat(head_out, 1), W[3]), L.bo);
  Tensor x = add(h, o);
  Tensor f = layer_norm(x, L.ln2_gain, L.ln2_bias);
  Tensor ff = add(matmul(gelu(add(matmul(f, W[4]), L.b_ffn_in)), W[5]), L.b_ffn_out);
  return add(x, ff);
}

Tensor Model::forward(const Tensor& features, const NetworkWeights& w) const {
  using namespace ops;
  if (features.rank() != 2 ||
      features.dim(1) != static_cast<std::size_t>(cfg_.input_feature_dim)) {
    throw ShapeError("forward: expected [T x " + std::to_string(cfg_.input_feature_dim) +
                     "] features, got " + shape_str(features.shape()));
  }
  const std::size_t frames = features.dim(0);
  Tensor h = gelu(add(matmul(features, w.frontend), frontend_bias_));
  h = add(h, positional_encoding(frames, static_cast<std::size_t>(cfg_.d_model)));
  for (std::size_t l = 0; l < layers_.size(); ++l) h = encoder_layer(h, l, w);
  h = layer_norm(h, final_gain_, final_bias_);
  Tensor out = log_softmax(add(matmul(h, w.head), head_bias_));
  if (out.has_non_finite()) {
    throw NonFiniteValue("forward: non-finite log-posteriors for input " + shape_str(features.shape()));
  }
  return out;
}

Tensor Model::forward(const Tensor& features) const {
  return forward(features, materialize(full_precision_plan()));
}

}  // namespace mxq
