#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mxq/quantizer.hpp"
#include "mxq/tensor.hpp"

namespace mxq {

struct ModelConfig {
  int num_layers = 4;
  int d_model = 64;
  int num_heads = 4;
  int d_ffn = 128;
  int vocab_size_with_blank = 9;  // index 0 is the CTC blank
  int input_feature_dim = 16;
  /// "8-bit CNNs" mode: quantized networks also quantize the front-end and
  /// output-head weight matrices at 8 bits.
  bool quantize_frontend = false;
  GridKind grid = GridKind::TwosComplement;

  void validate() const;
  /// Stable FNV-1a hash of the architectural fields.
  std::uint64_t hash() const;
};

/// One weight matrix that can be fake-quantized. All bit-width candidates
/// share `master`; each bit-width has its own learnable scale.
struct QuantizedWeight {
  std::string name;
  Tensor master;
  std::map<int, Tensor> scales;

  Tensor& scale(int bits);
  const Tensor& scale(int bits) const;
  void ensure_scale(int bits, GridKind grid);
  /// Master for bits == 32, fake-quantized master otherwise.
  Tensor quantized(int bits, GridKind grid) const;
};

enum class ParamKind { Weight, Bias, Norm, Scale };

struct NamedParam {
  std::string name;
  Tensor tensor;
  ParamKind kind;
};

struct ParameterGroup {
  std::string name;
  std::vector<std::string> tensor_names;
  bool quantizable = false;
  std::size_t parameter_count = 0;
  /// Elements of the quantizable weight matrices within the group.
  std::size_t quantized_count = 0;
  bool encoder = false;
};

enum class SearchGranularity { PerLayer, PerModule };

/// A set of encoder weight matrices sharing one bit-width decision.
struct SearchUnit {
  std::string name;
  std::vector<std::size_t> weights;  // indices into Model::encoder_weights()
  std::size_t param_count = 0;
};

/// Precision of one search unit inside a network instance.
struct UnitPrecision {
  enum class Kind { Full, Fixed, Mixed };
  Kind kind = Kind::Full;
  int bits = kFullPrecisionBits;
  Tensor lambda;  // Mixed: importance weights over candidate_bits
  std::vector<int> candidate_bits;

  static UnitPrecision full() { return {}; }
  static UnitPrecision fixed(int bits);
  static UnitPrecision mixed(Tensor lambda, std::vector<int> candidate_bits);
};

/// How to build the effective weights of one network (fp teacher, a
/// uniform-precision student, or the mixed-precision supernet).
struct NetworkPlan {
  SearchGranularity granularity = SearchGranularity::PerLayer;
  std::vector<UnitPrecision> units;
  int frontend_bits = kFullPrecisionBits;
};

/// Effective weights for one forward pass; computed once per batch.
struct NetworkWeights {
  std::vector<Tensor> encoder;  // aligned with Model::encoder_weights()
  Tensor frontend;
  Tensor head;
};

/// Toy speech encoder: linear+GELU front-end, sinusoidal positions, pre-norm
/// Transformer encoder stack, final LayerNorm and a CTC output head.
class Model {
 public:
  static constexpr int kWeightsPerLayer = 6;  // q, k, v, o, ffn_in, ffn_out

  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  /// Deep copy without shared storage.
  Model clone() const;
  /// Copies parameter values (including scales) from a model of identical layout.
  void copy_from(const Model& other);

  std::vector<QuantizedWeight>& encoder_weights() { return encoder_weights_; }
  const std::vector<QuantizedWeight>& encoder_weights() const { return encoder_weights_; }
  QuantizedWeight& frontend_weight() { return frontend_; }
  QuantizedWeight& head_weight() { return head_; }
  const QuantizedWeight& frontend_weight() const { return frontend_; }
  const QuantizedWeight& head_weight() const { return head_; }

  /// Every trainable tensor exactly once, in a fixed order.
  std::vector<NamedParam> named_parameters() const;
  std::vector<ParameterGroup> groups() const;
  std::size_t total_parameters() const;
  std::size_t encoder_parameters() const;
  double encoder_fraction() const;

  std::vector<SearchUnit> search_units(SearchGranularity g) const;

  /// Creates learnable scales for `bits` on every encoder matrix, and the
  /// 8-bit front-end and head scales when those are quantized.
  void ensure_scales(const std::vector<int>& bits);

  NetworkPlan full_precision_plan() const;
  NetworkPlan uniform_plan(int bits, SearchGranularity g = SearchGranularity::PerLayer) const;
  NetworkPlan fixed_plan(const std::vector<int>& unit_bits, SearchGranularity g) const;

  NetworkWeights materialize(const NetworkPlan& plan) const;

  /// features [T x input_dim] -> log-posteriors [T x vocab].
  Tensor forward(const Tensor& features, const NetworkWeights& weights) const;
  Tensor forward(const Tensor& features) const;

 private:
  struct Layer {
    Tensor ln1_gain, ln1_bias, bq, bk, bv, bo, ln2_gain, ln2_bias, b_ffn_in, b_ffn_out;
  };

  Tensor encoder_layer(const Tensor& h, std::size_t layer, const NetworkWeights& w) const;

  ModelConfig cfg_;
  QuantizedWeight frontend_;
  Tensor frontend_bias_;
  std::vector<Layer> layers_;
  std::vector<QuantizedWeight> encoder_weights_;
  Tensor final_gain_, final_bias_;
  QuantizedWeight head_;
  Tensor head_bias_;
};

/// Sinusoidal positional encoding [T x d].
Tensor positional_encoding(std::size_t frames, std::size_t d_model);

}  // namespace mxq
