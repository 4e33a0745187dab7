#include "mxq/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "mxq/packing.hpp"
#include "mxq/quantizer.hpp"

namespace mxq {
namespace {

constexpr char kPackedMagic[4] = {'M', 'X', 'Q', '1'};
constexpr char kTrainingMagic[4] = {'M', 'X', 'Q', 'T'};

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void doubles(const std::vector<double>& v) {
    u64(v.size());
    for (double d : v) f64(d);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> b, const char* what) : b_(b), what_(what) {}
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > b_.size() - pos_) {
      throw Error(std::string(what_) + ": truncated at byte " + std::to_string(pos_));
    }
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(s[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(s[i]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::string str() {
    auto s = take(u32());
    return std::string(s.begin(), s.end());
  }
  std::vector<double> doubles() {
    const std::uint64_t n = u64();
    if (n > (b_.size() - pos_) / 8) throw Error(std::string(what_) + ": bad array length");
    std::vector<double> v(n);
    for (auto& d : v) d = f64();
    return v;
  }
  void magic(const char (&m)[4]) {
    auto s = take(4);
    if (std::memcmp(s.data(), m, 4) != 0) throw Error(std::string(what_) + ": bad magic");
  }
  void finish() const {
    if (pos_ != b_.size()) {
      throw Error(std::string(what_) + ": " + std::to_string(b_.size() - pos_) +
                  " trailing bytes");
    }
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
  const char* what_;
};

std::size_t expected_payload(const PackedTensor& t) {
  const std::size_t n = numel_of(t.shape);
  return t.bits == kFullPrecisionBits ? n * 4 : packed_size(n, t.bits);
}

bool valid_bits(int b) { return b == kFullPrecisionBits || (b >= 2 && b <= 8); }

}  // namespace

std::vector<std::uint8_t> serialize(const PackedCheckpoint& ckpt) {
  Writer w;
  w.raw(kPackedMagic, 4);
  w.u32(ckpt.version);
  w.u64(ckpt.config_hash);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const PackedTensor& t : ckpt.tensors) {
    if (!valid_bits(t.bits)) throw Error("serialize: " + t.name + " has bit-width " + std::to_string(t.bits));
    if (t.payload.size() != expected_payload(t)) {
      throw Error("serialize: " + t.name + " payload has " + std::to_string(t.payload.size()) +
                  " bytes, expected " + std::to_string(expected_payload(t)));
    }
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) w.u64(d);
    w.u8(static_cast<std::uint8_t>(t.bits));
    if (t.bits != kFullPrecisionBits) w.f32(t.scale);
    w.u64(t.payload.size());
    w.raw(t.payload.data(), t.payload.size());
  }
  return w.take();
}

PackedCheckpoint parse_packed(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "packed checkpoint");
  r.magic(kPackedMagic);
  PackedCheckpoint c;
  c.version = r.u32();
  if (c.version != kPackedFormatVersion) {
    throw Error("packed checkpoint: unsupported version " + std::to_string(c.version));
  }
  c.config_hash = r.u64();
  const std::uint32_t count = r.u32();
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    PackedTensor t;
    t.name = r.str();
    if (!seen.insert(t.name).second) throw Error("packed checkpoint: duplicate tensor " + t.name);
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw Error("packed checkpoint: " + t.name + " has rank " + std::to_string(rank));
    for (std::uint32_t k = 0; k < rank; ++k) {
      t.shape.push_back(r.u64());
      if (t.shape.back() == 0) throw Error("packed checkpoint: " + t.name + " has a zero dimension");
    }
    t.bits = r.u8();
    if (!valid_bits(t.bits)) throw Error("packed checkpoint: " + t.name + " has bit-width " + std::to_string(t.bits));
    if (t.bits != kFullPrecisionBits) {
      t.scale = r.f32();
      if (!(t.scale > 0.0f) || !std::isfinite(t.scale))
        throw Error("packed checkpoint: " + t.name + " has invalid scale");
    }
    const std::uint64_t len = r.u64();
    if (len != expected_payload(t)) {
      throw Error("packed checkpoint: " + t.name + " payload has " + std::to_string(len) +
                  " bytes, expected " + std::to_string(expected_payload(t)));
    }
    auto p = r.take(len);
    t.payload.assign(p.begin(), p.end());
    if (t.bits != kFullPrecisionBits) unpack_tensor(t.payload, t.bits, numel_of(t.shape));
    c.tensors.push_back(std::move(t));
  }
  r.finish();
  return c;
}

std::map<std::string, int> tensor_bits(const Model& model, const NetworkPlan& plan) {
  std::map<std::string, int> bits;
  for (const NamedParam& p : model.named_parameters())
    if (p.kind != ParamKind::Scale) bits[p.name] = kFullPrecisionBits;
  const auto units = model.search_units(plan.granularity);
  if (plan.units.size() != units.size()) throw Error("tensor_bits: plan does not match model");
  for (std::size_t u = 0; u < units.size(); ++u) {
    const UnitPrecision& up = plan.units[u];
    if (up.kind == UnitPrecision::Kind::Mixed) throw Error("tensor_bits: unit " + units[u].name + " is not finalized");
    const int b = up.kind == UnitPrecision::Kind::Full ? kFullPrecisionBits : up.bits;
    for (std::size_t idx : units[u].weights) bits[model.encoder_weights()[idx].name] = b;
  }
  bits[model.frontend_weight().name] = plan.frontend_bits;
  bits[model.head_weight().name] = plan.frontend_bits;
  return bits;
}

PackedCheckpoint pack_model(const Model& model, const NetworkPlan& plan) {
  const auto bits = tensor_bits(model, plan);
  std::map<std::string, const QuantizedWeight*> qweights;
  for (const auto& w : model.encoder_weights()) qweights[w.name] = &w;
  qweights[model.frontend_weight().name] = &model.frontend_weight();
  qweights[model.head_weight().name] = &model.head_weight();

  PackedCheckpoint c;
  c.config_hash = model.config().hash();
  for (const NamedParam& p : model.named_parameters()) {
    if (p.kind == ParamKind::Scale) continue;
    PackedTensor t;
    t.name = p.name;
    t.shape = p.tensor.shape();
    t.bits = bits.at(p.name);
    if (t.bits == kFullPrecisionBits) {
      Writer w;
      for (double v : p.tensor.data()) w.f32(static_cast<float>(v));
      t.payload = w.take();
    } else {
      const QuantizedWeight& qw = *qweights.at(p.name);
      const double s = qw.scale(t.bits).item();
      t.scale = static_cast<float>(s);
      if (static_cast<double>(t.scale) != s) throw Error("pack_model: scale of " + p.name + " is not float32-exact");
      const auto q = quantize_to_int(qw.master.data(), s, IntGrid::make(t.bits, model.config().grid));
      t.payload = pack_tensor(q, t.bits);
    }
    c.tensors.push_back(std::move(t));
  }
  return c;
}

std::vector<double> reconstruct(const PackedTensor& t) {
  const std::size_t n = numel_of(t.shape);
  if (t.bits == kFullPrecisionBits) {
    Reader r(t.payload, "reconstruct");
    std::vector<double> out(n);
    for (auto& v : out) v = static_cast<double>(r.f32());
    r.finish();
    return out;
  }
  return dequantize(unpack_tensor(t.payload, t.bits, n), static_cast<double>(t.scale));
}

NetworkPlan plan_from_packed(const Model& model, const PackedCheckpoint& ckpt) {
  std::map<std::string, int> bits;
  for (const auto& t : ckpt.tensors) bits[t.name] = t.bits;
  auto bits_of = [&](const std::string& name) {
    auto it = bits.find(name);
    if (it == bits.end()) throw Error("plan_from_packed: missing tensor " + name);
    return it->second;
  };
  for (SearchGranularity g : {SearchGranularity::PerLayer, SearchGranularity::PerModule}) {
    NetworkPlan plan;
    plan.granularity = g;
    bool uniform = true;
    for (const SearchUnit& u : model.search_units(g)) {
      const int b = bits_of(model.encoder_weights()[u.weights.front()].name);
      for (std::size_t idx : u.weights) uniform = uniform && bits_of(model.encoder_weights()[idx].name) == b;
      plan.units.push_back(b == kFullPrecisionBits ? UnitPrecision::full() : UnitPrecision::fixed(b));
    }
    plan.frontend_bits = bits_of(model.frontend_weight().name);
    if (bits_of(model.head_weight().name) != plan.frontend_bits)
      throw Error("plan_from_packed: front-end and head bit-widths differ");
    if (uniform) return plan;
  }
  throw Error("plan_from_packed: bit-widths vary inside a module");
}

void load_packed(Model& model, const PackedCheckpoint& ckpt) {
  if (ckpt.config_hash != model.config().hash()) throw Error("load_packed: checkpoint was written for a different model config");
  std::map<std::string, const PackedTensor*> by_name;
  for (const auto& t : ckpt.tensors) by_name[t.name] = &t;
  std::map<std::string, QuantizedWeight*> qweights;
  for (auto& w : model.encoder_weights()) qweights[w.name] = &w;
  qweights[model.frontend_weight().name] = &model.frontend_weight();
  qweights[model.head_weight().name] = &model.head_weight();
  std::size_t used = 0;
  for (NamedParam& p : model.named_parameters()) {
    if (p.kind == ParamKind::Scale) continue;
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw Error("load_packed: missing tensor " + p.name);
    if (it->second->shape != p.tensor.shape()) {
      throw ShapeError("load_packed: " + p.name + " has shape " + shape_str(it->second->shape) +
                       ", model expects " + shape_str(p.tensor.shape()));
    }
    const auto values = reconstruct(*it->second);
    std::copy(values.begin(), values.end(), p.tensor.mutable_data().begin());
    if (const PackedTensor& t = *it->second; t.bits != kFullPrecisionBits) {
      auto q = qweights.find(p.name);
      if (q == qweights.end()) throw Error("load_packed: " + p.name + " is not quantizable but stored at " + std::to_string(t.bits) + " bits");
      q->second->ensure_scale(t.bits, model.config().grid);
      q->second->scale(t.bits).mutable_data()[0] = static_cast<double>(t.scale);
    }
    ++used;
  }
  if (used != ckpt.tensors.size()) throw Error("load_packed: checkpoint has tensors the model does not");
}

TrainingCheckpoint capture(const Model& model, const ArchState* arch, const TrainState& state,
                           const std::string& phase) {
  TrainingCheckpoint c;
  c.config_hash = model.config().hash();
  c.phase = phase;
  std::set<int> bits;
  for (const auto& w : model.encoder_weights())
    for (const auto& [b, s] : w.scales) bits.insert(b);
  c.scale_bits.assign(bits.begin(), bits.end());
  for (const NamedParam& p : model.named_parameters()) {
    c.param_names.push_back(p.name);
    c.param_values.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  }
  if (arch) {
    c.candidate_bits = arch->candidate_bits;
    c.unit_names = arch->unit_names;
    for (const Tensor& l : arch->logits) c.arch_logits.emplace_back(l.data().begin(), l.data().end());
  }
  c.state = state;
  return c;
}

void restore(const TrainingCheckpoint& c, Model& model, ArchState* arch) {
  if (c.config_hash != model.config().hash()) throw Error("restore: checkpoint was written for a different model config");
  model.ensure_scales(c.scale_bits);
  auto params = model.named_parameters();
  if (params.size() != c.param_names.size()) {
    throw Error("restore: checkpoint has " + std::to_string(c.param_names.size()) +
                " tensors, model has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != c.param_names[i] || params[i].tensor.numel() != c.param_values[i].size())
      throw Error("restore: tensor " + c.param_names[i] + " does not match the model");
    std::copy(c.param_values[i].begin(), c.param_values[i].end(), params[i].tensor.mutable_data().begin());
  }
  if (!arch) return;
  if (arch->candidate_bits != c.candidate_bits || arch->unit_names != c.unit_names)
    throw Error("restore: arch layout differs from checkpoint");
  for (std::size_t u = 0; u < arch->logits.size(); ++u) {
    if (arch->logits[u].numel() != c.arch_logits[u].size()) throw Error("restore: arch logits size mismatch");
    std::copy(c.arch_logits[u].begin(), c.arch_logits[u].end(), arch->logits[u].mutable_data().begin());
  }
  arch->temperature = c.state.temperature;
}

std::vector<std::uint8_t> serialize(const TrainingCheckpoint& c) {
  Writer w;
  w.raw(kTrainingMagic, 4);
  w.u32(kTrainingFormatVersion);
  w.u64(c.config_hash);
  w.str(c.phase);
  w.u32(static_cast<std::uint32_t>(c.scale_bits.size()));
  for (int b : c.scale_bits) w.i32(b);
  w.u32(static_cast<std::uint32_t>(c.param_names.size()));
  for (std::size_t i = 0; i < c.param_names.size(); ++i) {
    w.str(c.param_names[i]);
    w.doubles(c.param_values[i]);
  }
  w.u32(static_cast<std::uint32_t>(c.candidate_bits.size()));
  for (int b : c.candidate_bits) w.i32(b);
  w.u32(static_cast<std::uint32_t>(c.unit_names.size()));
  for (std::size_t u = 0; u < c.unit_names.size(); ++u) {
    w.str(c.unit_names[u]);
    w.doubles(c.arch_logits.at(u));
  }
  const TrainState& s = c.state;
  w.u64(s.step);
  w.u64(s.optimizer_steps);
  w.f64(s.temperature);
  w.f64(s.loss_sum);
  w.u64(s.loss_count);
  w.u32(static_cast<std::uint32_t>(s.first_moments.size()));
  for (std::size_t i = 0; i < s.first_moments.size(); ++i) {
    w.doubles(s.first_moments[i]);
    w.doubles(s.second_moments.at(i));
  }
  return w.take();
}

TrainingCheckpoint parse_training(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "training checkpoint");
  r.magic(kTrainingMagic);
  if (const auto v = r.u32(); v != kTrainingFormatVersion)
    throw Error("training checkpoint: unsupported version " + std::to_string(v));
  TrainingCheckpoint c;
  c.config_hash = r.u64();
  c.phase = r.str();
  for (std::uint32_t n = r.u32(); n > 0; --n) c.scale_bits.push_back(r.i32());
  for (std::uint32_t n = r.u32(); n > 0; --n) {
    c.param_names.push_back(r.str());
    c.param_values.push_back(r.doubles());
  }
  for (std::uint32_t n = r.u32(); n > 0; --n) c.candidate_bits.push_back(r.i32());
  for (std::uint32_t n = r.u32(); n > 0; --n) {
    c.unit_names.push_back(r.str());
    c.arch_logits.push_back(r.doubles());
  }
  TrainState& s = c.state;
  s.step = r.u64();
  s.optimizer_steps = r.u64();
  s.temperature = r.f64();
  s.loss_sum = r.f64();
  s.loss_count = r.u64();
  for (std::uint32_t n = r.u32(); n > 0; --n) {
    s.first_moments.push_back(r.doubles());
    s.second_moments.push_back(r.doubles());
  }
  r.finish();
  return c;
}

void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, target);
}

void write_file_atomic(const std::string& path, const std::string& text) {
  write_file_atomic(path, std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace mxq
