#include "mxq/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace mxq {

LabelSequence greedy_decode(const Tensor& log_posteriors) {
  if (log_posteriors.rank() != 2) throw ShapeError("greedy_decode: expected [T x V]");
  const std::size_t T = log_posteriors.dim(0), V = log_posteriors.dim(1);
  auto lp = log_posteriors.data();
  LabelSequence out;
  int prev = -1;
  for (std::size_t t = 0; t < T; ++t) {
    const auto row = lp.subspan(t * V, V);
    const int best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best != prev && best != kBlank) out.push_back(best);
    prev = best;
  }
  return out;
}

std::size_t edit_distance(std::span<const int> hyp, std::span<const int> ref) {
  std::vector<std::size_t> row(ref.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= hyp.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= ref.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (hyp[i - 1] == ref[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[ref.size()];
}

double token_error_rate(std::span<const int> hyp, std::span<const int> ref) {
  if (ref.empty()) return hyp.empty() ? 0.0 : static_cast<double>(hyp.size());
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

double corpus_token_error_rate(const std::vector<LabelSequence>& hyps,
                               const std::vector<LabelSequence>& refs) {
  if (hyps.size() != refs.size()) throw Error("token error: hypothesis/reference count mismatch");
  std::size_t edits = 0, total = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    edits += edit_distance(hyps[i], refs[i]);
    total += refs[i].size();
  }
  return total ? static_cast<double>(edits) / static_cast<double>(total) : 0.0;
}

EvalResult evaluate(const Model& model, const NetworkPlan& plan, const Dataset& data) {
  NoGradGuard no_grad;
  const NetworkWeights w = model.materialize(plan);
  std::vector<LabelSequence> hyps, refs;
  double loss = 0.0;
  for (const Utterance& u : data) {
    const Tensor lp = model.forward(u.features, w);
    loss += ctc_loss(lp, u.target).item();
    hyps.push_back(greedy_decode(lp));
    refs.push_back(u.target);
  }
  EvalResult r;
  r.mean_ctc_loss = data.empty() ? 0.0 : loss / static_cast<double>(data.size());
  r.token_error = corpus_token_error_rate(hyps, refs);
  return r;
}

}  // namespace mxq
