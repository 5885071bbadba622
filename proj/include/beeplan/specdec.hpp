// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "beeplan/codec.hpp" // Bytes

namespace beeplan {

struct CandidateScore {
  int candidate_id = 0;
  // [max(p), p[candidate], H(p) in bits]: peakedness, confidence, uncertainty.
  std::array<double, 3> features{};
  double score = 0.0; // retention score in [0,1]
};

/// Retention-score MLP, 3 -> hidden -> 1, ReLU hidden, sigmoid output.
/// Serialized: magic "BBMS" | u32 in_dim | u32 hidden_dim | u32 out_dim |
/// f32 w1[hidden*in] | f32 b1[hidden] | f32 w2[out*hidden] | f32 b2[out],
/// all little-endian. Trained offline; only loading is supported here.
struct MlpWeights {
  int in_dim = 3;
  int hidden_dim = 16;
  int out_dim = 1;
  std::vector<float> w1, b1, w2, b2;
};

MlpWeights load_mlp_weights(const Bytes& blob);      // throws ShapeMismatch
MlpWeights load_mlp_weights_file(const std::string& path);
Bytes serialize_mlp_weights(const MlpWeights& w);
double mlp_score(const MlpWeights& w, const std::array<double, 3>& features);

struct PruneConfig {
  double tau = 0.5;                 // drop when score < tau
  std::optional<MlpWeights> mlp;    // absent: ConfidenceOnly (score = p[candidate])
};

/// Features and retention scores for the candidate ids under the proxy
/// distribution p_hat. Throws BadDistribution / ShapeMismatch.
std::vector<CandidateScore> score_candidates(std::span<const double> p_hat,
                                             std::span<const int> candidates,
                                             const PruneConfig& cfg);

/// Indices (into scores, order preserved) with score >= tau.
std::vector<std::size_t> prune(const std::vector<CandidateScore>& scores, double tau);

/// Same, but when everything would be dropped the single best-scoring
/// candidate is force-retained so the request keeps making progress.
std::vector<std::size_t> prune_with_fallback(const std::vector<CandidateScore>& scores, double tau);

/// Padding-free layout of retained hidden states: one flat [sum N'_i, D]
/// payload plus per-request start offsets (offsets[0] = 0, last = sum N'_i).
struct PackedBatch {
  std::size_t hidden_dim = 0;
  std::vector<float> payload;
  std::vector<std::uint32_t> offsets;

  std::size_t request_count() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::size_t total_states() const { return offsets.empty() ? 0 : offsets.back(); }
};

using HiddenStates = std::vector<std::vector<float>>; // per-request retained vectors

PackedBatch pack(const std::vector<HiddenStates>& per_request); // throws DimMismatch
std::vector<HiddenStates> unpack(const PackedBatch& batch);     // throws CorruptOffsets

/// Wire encoding: u32 offset count | u32 offsets[] | payload as f32 LE.
/// The receiver supplies hidden_dim from its stage configuration.
Bytes encode_packed(const PackedBatch& batch);
PackedBatch decode_packed(const Bytes& data, std::size_t hidden_dim); // throws CorruptOffsets

/// Three-region KV cache: compact committed prefix, masked holes from
/// rejected draft tokens, and the newly appended region for the current
/// round. Compaction may run on a background thread; all operations
/// linearize through an internal lock.
class KvCache {
public:
  /// Appends n draft tokens, returning their payload ids.
  std::vector<std::uint64_t> append(std::size_t n_tokens);
  void append(std::span<const std::uint64_t> payloads);

  /// accepted: 0-based indices within the new region. Accepted tokens join
  /// the committed sequence in index order; the rest become holes. Throws
  /// IndexOutOfRegion.
  void commit(const std::vector<std::size_t>& accepted);

  /// Physically removes holes; visible content is unchanged.
  void compact();

  /// Payload ids of every non-hole slot in cache order (the attention mask
  /// excludes exactly the holes).
  std::vector<std::uint64_t> visible() const;

  std::size_t prefix_len() const;
  /// Physical slot indices of the holes, ascending.
  std::vector<std::size_t> holes() const;
  std::size_t new_len() const;
  std::size_t size() const;

private:
  enum class SlotState : std::uint8_t { Committed, Hole, New };
  struct Slot {
    std::uint64_t payload;
    SlotState state;
  };

  void compact_locked();

  mutable std::mutex mu_;
  std::vector<Slot> slots_;
  std::size_t prefix_len_ = 0; // leading committed slots already compacted
  std::uint64_t next_token_id_ = 0;
};

} // namespace beeplan
