#pragma once

#include <span>
#include <vector>

#include "mxq/dataset.hpp"
#include "mxq/losses.hpp"
#include "mxq/model.hpp"

namespace mxq {

/// Best-path decoding: per-frame argmax, collapse repeats, drop blanks.
LabelSequence greedy_decode(const Tensor& log_posteriors);

std::size_t edit_distance(std::span<const int> hyp, std::span<const int> ref);

/// Single-pair token error: edit_distance / |ref|.
double token_error_rate(std::span<const int> hyp, std::span<const int> ref);

/// Corpus token error: total edits over total reference tokens.
double corpus_token_error_rate(const std::vector<LabelSequence>& hyps,
                               const std::vector<LabelSequence>& refs);

struct EvalResult {
  double mean_ctc_loss = 0.0;
  double token_error = 0.0;
};

EvalResult evaluate(const Model& model, const NetworkPlan& plan, const Dataset& data);

}  // namespace mxq
