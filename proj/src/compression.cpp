#include "mxq/compression.hpp"

#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "mxq/checkpoint.hpp"

namespace mxq {

double compression_ratio(std::span<const GroupBits> groups) {
  double fp = 0.0, packed = 0.0;
  for (const GroupBits& g : groups) {
    if (g.bits != kFullPrecisionBits && (g.bits < 2 || g.bits > 8))
      throw Error("compression_ratio: group " + g.name + " has bit-width " + std::to_string(g.bits));
    fp += 32.0 * static_cast<double>(g.params);
    packed += static_cast<double>(g.bits) * static_cast<double>(g.params);
  }
  if (packed == 0.0) throw Error("compression_ratio: no parameters");
  return fp / packed;
}

double compression_ratio(double f, double encoder_bits, double rest_bits) {
  if (!(f >= 0.0 && f <= 1.0)) throw Error("compression_ratio: fraction outside [0, 1]");
  return 32.0 / (f * encoder_bits + (1.0 - f) * rest_bits);
}

double round_ratio(double ratio) { return std::round(ratio * 10.0) / 10.0; }

CompressionReport emit_report(const Model& model, const NetworkPlan& plan, const ArchState* arch,
                              bool count_scales) {
  const auto bits = tensor_bits(model, plan);
  std::map<std::string, ParamKind> kinds;
  std::map<std::string, std::size_t> sizes;
  for (const NamedParam& p : model.named_parameters()) {
    kinds[p.name] = p.kind;
    sizes[p.name] = p.tensor.numel();
  }
  CompressionReport r;
  r.scales_counted = count_scales;
  std::size_t stored_scales = 0, quantized = 0;
  double enc_bits = 0.0, enc_params = 0.0;
  for (const ParameterGroup& g : model.groups()) {
    // (is weight, bits) -> params
    std::map<std::pair<bool, int>, std::size_t> parts;
    for (const std::string& name : g.tensor_names) {
      const ParamKind k = kinds.at(name);
      if (k == ParamKind::Scale) continue;
      const int b = bits.at(name);
      if (b != kFullPrecisionBits) {
        ++stored_scales;
        quantized += sizes.at(name);
      }
      parts[{k == ParamKind::Weight, b}] += sizes.at(name);
    }
    for (const auto& [key, n] : parts) {
      r.groups.push_back({g.name, n, key.second, g.encoder, key.first});
      if (g.encoder && key.first) {
        enc_bits += static_cast<double>(key.second) * static_cast<double>(n);
        enc_params += static_cast<double>(n);
      }
    }
  }
  for (const GroupBits& g : r.groups) {
    r.total_fp_bits += 32.0 * static_cast<double>(g.params);
    r.total_compressed_bits += static_cast<double>(g.bits) * static_cast<double>(g.params);
  }
  if (count_scales) r.scale_bits = 32.0 * static_cast<double>(stored_scales);
  r.total_compressed_bits += r.scale_bits;
  r.ratio = r.total_fp_bits / r.total_compressed_bits;
  r.quantized_fraction = static_cast<double>(quantized) / static_cast<double>(model.total_parameters());
  r.average_encoder_bits = enc_params > 0.0 ? enc_bits / enc_params : 0.0;

  for (std::size_t u = 0; u < plan.units.size(); ++u) {
    r.unit_bits.push_back(plan.units[u].kind == UnitPrecision::Kind::Full ? kFullPrecisionBits
                                                                          : plan.units[u].bits);
  }
  for (const SearchUnit& u : model.search_units(plan.granularity)) r.unit_names.push_back(u.name);
  if (arch) {
    std::vector<std::size_t> unit_params;
    for (const SearchUnit& u : model.search_units(plan.granularity)) unit_params.push_back(u.param_count);
    r.arch_text = bitwidth_report(*arch, finalize_bitwidths(*arch, unit_params));
  }
  return r;
}

std::string CompressionReport::text() const {
  std::ostringstream os;
  os << std::fixed;
  os << "group                    params  bits  kind\n";
  for (const GroupBits& g : groups) {
    os << std::left << std::setw(22) << g.name << std::right << std::setw(9) << g.params
       << std::setw(6) << g.bits << "  " << (g.weights ? "weights" : "bias/norm") << '\n';
  }
  os << std::setprecision(4);
  os << "quantized fraction f:    " << quantized_fraction << '\n';
  os << "average encoder bits:    " << average_encoder_bits << '\n';
  os << std::setprecision(0);
  os << "full-precision bits:     " << total_fp_bits << '\n';
  os << "compressed bits:         " << total_compressed_bits << '\n';
  os << std::setprecision(4);
  os << "compression ratio:       " << ratio << " (" << std::setprecision(1) << round_ratio(ratio)
     << "x)\n";
  os << "counted: biases and norms at 32 bits; weight matrices at their bit-width; ";
  if (scales_counted) {
    os << "one 32-bit scale per quantized matrix (" << std::setprecision(0) << scale_bits
       << " bits)\n";
  } else {
    os << "scales not counted\n";
  }
  if (!arch_text.empty()) os << '\n' << arch_text;
  return os.str();
}

std::string CompressionReport::json() const {
  nlohmann::ordered_json j;
  j["schema"] = "mxq-report-v1";
  auto& rows = j["groups"] = nlohmann::ordered_json::array();
  for (const GroupBits& g : groups) {
    rows.push_back({{"name", g.name}, {"params", g.params}, {"bits", g.bits},
                    {"encoder", g.encoder}, {"weights", g.weights}});
  }
  j["quantized_fraction"] = quantized_fraction;
  j["average_encoder_bits"] = average_encoder_bits;
  j["total_fp_bits"] = total_fp_bits;
  j["total_compressed_bits"] = total_compressed_bits;
  j["scale_bits"] = scale_bits;
  j["scales_counted"] = scales_counted;
  j["ratio"] = ratio;
  j["ratio_rounded"] = round_ratio(ratio);
  j["unit_names"] = unit_names;
  j["unit_bits"] = unit_bits;
  return j.dump(2) + "\n";
}

}  // namespace mxq
