#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

namespace podscale {

struct SequenceExample {
  std::vector<int> tokens;  // may carry trailing padding
  int length = 0;           // real token count, 1 <= length <= tokens.size()
};

struct BucketizerConfig {
  int window_width = 1;  // w
  int batch_size = 1;
};

struct SequenceBatch {
  std::vector<SequenceExample> examples;
  int bucket_index = 0;
  bool partial = false;

  int max_length() const;
};

// Example with length L goes to bucket floor((L-1)/w); batches are drawn
// per bucket in arrival order, trailing partial batches flushed per bucket
// index ascending. Within any batch max(length) - min(length) < w.
std::vector<SequenceBatch> window_bucketize(
    const std::vector<SequenceExample>& examples, const BucketizerConfig& cfg);

// Batch i goes to host i mod hosts; per-host counts differ by at most 1 and
// per-host order is preserved.
std::vector<std::vector<SequenceBatch>> round_robin_distribute(
    const std::vector<SequenceBatch>& batches, int hosts);

struct PaddedEvalSet {
  std::vector<SequenceExample> examples;  // tokens padded to padded_length
  int padded_length = 0;
};

// Re-pads every example to exactly the maximum real length over the set;
// token content unchanged. Idempotent.
PaddedEvalSet trim_eval_to_max_real_length(const PaddedEvalSet& eval_set);

// Per worker-step cost is the max sequence length in its batch; returns the
// ratio of the max per-worker total cost to the mean per-worker total cost.
double load_balance_metric(
    const std::vector<std::vector<SequenceBatch>>& per_host);

// One example per line, whitespace-separated integer token ids.
std::vector<SequenceExample> read_corpus(std::istream& is);

}  // namespace podscale
