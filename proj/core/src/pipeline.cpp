#include "podscale/pipeline.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace podscale {

int SequenceBatch::max_length() const {
  int mx = 0;
  for (const auto& e : examples) mx = std::max(mx, e.length);
  return mx;
}

std::vector<SequenceBatch> window_bucketize(
    const std::vector<SequenceExample>& examples, const BucketizerConfig& cfg) {
  if (cfg.window_width < 1) throw std::invalid_argument("window_width must be >= 1");
  if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");

  std::vector<SequenceBatch> out;
  std::map<int, std::vector<SequenceExample>> pending;  // bucket -> arrivals
  for (const auto& ex : examples) {
    if (ex.length < 1 || ex.length > static_cast<int>(ex.tokens.size())) {
      throw std::invalid_argument("invalid sequence length");
    }
    const int bucket = (ex.length - 1) / cfg.window_width;
    auto& slot = pending[bucket];
    slot.push_back(ex);
    if (static_cast<int>(slot.size()) == cfg.batch_size) {
      out.push_back({std::move(slot), bucket, false});
      slot.clear();
    }
  }
  for (auto& [bucket, slot] : pending) {
    if (!slot.empty()) out.push_back({std::move(slot), bucket, true});
  }
  return out;
}

std::vector<std::vector<SequenceBatch>> round_robin_distribute(
    const std::vector<SequenceBatch>& batches, int hosts) {
  if (hosts < 1) throw std::invalid_argument("hosts must be >= 1");
  std::vector<std::vector<SequenceBatch>> per_host(static_cast<size_t>(hosts));
  for (size_t i = 0; i < batches.size(); ++i) {
    per_host[i % static_cast<size_t>(hosts)].push_back(batches[i]);
  }
  return per_host;
}

PaddedEvalSet trim_eval_to_max_real_length(const PaddedEvalSet& eval_set) {
  int max_real = 0;
  for (const auto& ex : eval_set.examples) {
    if (ex.length > static_cast<int>(ex.tokens.size())) {
      throw std::invalid_argument("real length exceeds padded token array");
    }
    max_real = std::max(max_real, ex.length);
  }
  if (eval_set.padded_length < max_real) {
    throw std::invalid_argument("padded_length below max real length");
  }
  PaddedEvalSet out;
  out.padded_length = max_real;
  out.examples.reserve(eval_set.examples.size());
  for (const auto& ex : eval_set.examples) {
    SequenceExample trimmed;
    trimmed.length = ex.length;
    trimmed.tokens.assign(ex.tokens.begin(), ex.tokens.begin() + ex.length);
    trimmed.tokens.resize(static_cast<size_t>(max_real), 0);
    out.examples.push_back(std::move(trimmed));
  }
  return out;
}

double load_balance_metric(
    const std::vector<std::vector<SequenceBatch>>& per_host) {
  if (per_host.empty()) throw std::invalid_argument("empty assignment");
  double total = 0.0, mx = 0.0;
  for (const auto& host : per_host) {
    double cost = 0.0;
    for (const auto& b : host) cost += b.max_length();
    total += cost;
    mx = std::max(mx, cost);
  }
  const double mean = total / static_cast<double>(per_host.size());
  if (mean == 0.0) throw std::invalid_argument("assignment has no work");
  return mx / mean;
}

std::vector<SequenceExample> read_corpus(std::istream& is) {
  std::vector<SequenceExample> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    SequenceExample ex;
    int tok;
    while (ls >> tok) ex.tokens.push_back(tok);
    if (ex.tokens.empty()) continue;
    ex.length = static_cast<int>(ex.tokens.size());
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace podscale
