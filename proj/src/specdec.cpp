// SPDX-License-Identifier: Apache-2.0
#include "beeplan/specdec.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "beeplan/errors.hpp"

namespace beeplan {

namespace {

constexpr double kDistributionTolerance = 1e-6;

void write_u32_le(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t read_u32_le(const Bytes& data, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data[offset + i]) << (8 * i);
  return v;
}

void write_f32_le(Bytes& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  write_u32_le(out, bits);
}

float read_f32_le(const Bytes& data, std::size_t offset) {
  std::uint32_t bits = read_u32_le(data, offset);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

MlpWeights load_mlp_weights(const Bytes& blob) {
  if (blob.size() < 16 || std::memcmp(blob.data(), "BBMS", 4) != 0)
    throw ShapeMismatch("mlp weights: bad or truncated BBMS header");
  MlpWeights w;
  w.in_dim = static_cast<int>(read_u32_le(blob, 4));
  w.hidden_dim = static_cast<int>(read_u32_le(blob, 8));
  w.out_dim = static_cast<int>(read_u32_le(blob, 12));
  if (w.in_dim != 3 || w.out_dim != 1 || w.hidden_dim < 1)
    throw ShapeMismatch("mlp weights: topology must be 3 -> hidden -> 1");
  std::size_t floats = static_cast<std::size_t>(w.hidden_dim) * w.in_dim + w.hidden_dim +
                       static_cast<std::size_t>(w.out_dim) * w.hidden_dim + w.out_dim;
  if (blob.size() != 16 + floats * 4)
    throw ShapeMismatch("mlp weights: payload size does not match the declared dims");
  std::size_t off = 16;
  auto take = [&](std::size_t n) {
    std::vector<float> v(n);
    for (std::size_t i = 0; i < n; ++i, off += 4) v[i] = read_f32_le(blob, off);
    return v;
  };
  w.w1 = take(static_cast<std::size_t>(w.hidden_dim) * w.in_dim);
  w.b1 = take(w.hidden_dim);
  w.w2 = take(static_cast<std::size_t>(w.out_dim) * w.hidden_dim);
  w.b2 = take(w.out_dim);
  return w;
}

MlpWeights load_mlp_weights_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ShapeMismatch("mlp weights: cannot open " + path);
  Bytes blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return load_mlp_weights(blob);
}

Bytes serialize_mlp_weights(const MlpWeights& w) {
  Bytes out;
  for (char c : {'B', 'B', 'M', 'S'}) out.push_back(static_cast<std::uint8_t>(c));
  write_u32_le(out, static_cast<std::uint32_t>(w.in_dim));
  write_u32_le(out, static_cast<std::uint32_t>(w.hidden_dim));
  write_u32_le(out, static_cast<std::uint32_t>(w.out_dim));
  for (float f : w.w1) write_f32_le(out, f);
  for (float f : w.b1) write_f32_le(out, f);
  for (float f : w.w2) write_f32_le(out, f);
  for (float f : w.b2) write_f32_le(out, f);
  return out;
}

double mlp_score(const MlpWeights& w, const std::array<double, 3>& features) {
  std::vector<double> hidden(w.hidden_dim, 0.0);
  for (int h = 0; h < w.hidden_dim; ++h) {
    double acc = w.b1[h];
    for (int i = 0; i < w.in_dim; ++i) acc += w.w1[static_cast<std::size_t>(h) * w.in_dim + i] * features[i];
    hidden[h] = std::max(acc, 0.0);
  }
  double out = w.b2[0];
  for (int h = 0; h < w.hidden_dim; ++h) out += w.w2[h] * hidden[h];
  return sigmoid(out);
}

std::vector<CandidateScore> score_candidates(std::span<const double> p_hat,
                                             std::span<const int> candidates,
                                             const PruneConfig& cfg) {
  if (p_hat.empty()) throw BadDistribution("p_hat: empty distribution");
  double sum = 0.0;
  double peak = 0.0;
  double entropy = 0.0;
  for (double p : p_hat) {
    if (p < 0.0) throw BadDistribution("p_hat: negative probability");
    sum += p;
    peak = std::max(peak, p);
    if (p > 0.0) entropy -= p * std::log2(p);
  }
  if (std::abs(sum - 1.0) > kDistributionTolerance)
    throw BadDistribution("p_hat: probabilities sum to " + std::to_string(sum));

  std::vector<CandidateScore> scores;
  scores.reserve(candidates.size());
  for (int id : candidates) {
    if (id < 0 || static_cast<std::size_t>(id) >= p_hat.size())
      throw ShapeMismatch("candidate id " + std::to_string(id) + " outside the vocabulary");
    CandidateScore cs;
    cs.candidate_id = id;
    cs.features = {peak, p_hat[static_cast<std::size_t>(id)], entropy};
    cs.score = cfg.mlp ? mlp_score(*cfg.mlp, cs.features) : cs.features[1];
    scores.push_back(cs);
  }
  return scores;
}

std::vector<std::size_t> prune(const std::vector<CandidateScore>& scores, double tau) {
  std::vector<std::size_t> retained;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    // Drop strictly below tau; ties at the threshold are retained.
    if (scores[i].score >= tau) retained.push_back(i);
  }
  return retained;
}

std::vector<std::size_t> prune_with_fallback(const std::vector<CandidateScore>& scores,
                                             double tau) {
  std::vector<std::size_t> retained = prune(scores, tau);
  if (retained.empty() && !scores.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
      if (scores[i].score > scores[best].score) best = i;
    retained.push_back(best);
  }
  return retained;
}

PackedBatch pack(const std::vector<HiddenStates>& per_request) {
  PackedBatch batch;
  batch.offsets.push_back(0);
  for (const HiddenStates& states : per_request) {
    for (const std::vector<float>& vec : states) {
      if (batch.hidden_dim == 0) batch.hidden_dim = vec.size();
      if (vec.size() != batch.hidden_dim)
        throw DimMismatch("pack: hidden vectors must share one dimension");
      batch.payload.insert(batch.payload.end(), vec.begin(), vec.end());
    }
    batch.offsets.push_back(batch.offsets.back() + static_cast<std::uint32_t>(states.size()));
  }
  return batch;
}

std::vector<HiddenStates> unpack(const PackedBatch& batch) {
  if (batch.offsets.empty() || batch.offsets.front() != 0)
    throw CorruptOffsets("unpack: offsets must start at 0");
  for (std::size_t i = 1; i < batch.offsets.size(); ++i)
    if (batch.offsets[i] < batch.offsets[i - 1])
      throw CorruptOffsets("unpack: offsets must be non-decreasing");
  std::size_t total = batch.offsets.back();
  if (batch.hidden_dim == 0 ? !batch.payload.empty()
                            : batch.payload.size() != total * batch.hidden_dim)
    throw CorruptOffsets("unpack: payload length does not match offsets");

  std::vector<HiddenStates> result;
  result.reserve(batch.request_count());
  for (std::size_t r = 0; r + 1 < batch.offsets.size(); ++r) {
    HiddenStates states;
    for (std::uint32_t s = batch.offsets[r]; s < batch.offsets[r + 1]; ++s) {
      auto begin = batch.payload.begin() + static_cast<std::ptrdiff_t>(s * batch.hidden_dim);
      states.emplace_back(begin, begin + static_cast<std::ptrdiff_t>(batch.hidden_dim));
    }
    result.push_back(std::move(states));
  }
  return result;
}

Bytes encode_packed(const PackedBatch& batch) {
  Bytes out;
  write_u32_le(out, static_cast<std::uint32_t>(batch.offsets.size()));
  for (std::uint32_t offset : batch.offsets) write_u32_le(out, offset);
  for (float f : batch.payload) write_f32_le(out, f);
  return out;
}

PackedBatch decode_packed(const Bytes& data, std::size_t hidden_dim) {
  if (data.size() < 4) throw CorruptOffsets("packed batch: truncated offset count");
  std::uint32_t count = read_u32_le(data, 0);
  if (count < 1 || data.size() < 4 + static_cast<std::size_t>(count) * 4)
    throw CorruptOffsets("packed batch: truncated offsets");
  PackedBatch batch;
  batch.hidden_dim = hidden_dim;
  batch.offsets.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) batch.offsets[i] = read_u32_le(data, 4 + 4 * i);
  std::size_t payload_off = 4 + static_cast<std::size_t>(count) * 4;
  std::size_t payload_bytes = data.size() - payload_off;
  if (payload_bytes % 4 != 0 ||
      payload_bytes / 4 != static_cast<std::size_t>(batch.offsets.back()) * hidden_dim)
    throw CorruptOffsets("packed batch: payload length does not match offsets");
  batch.payload.resize(payload_bytes / 4);
  for (std::size_t i = 0; i < batch.payload.size(); ++i)
    batch.payload[i] = read_f32_le(data, payload_off + 4 * i);
  // Reuse the structural checks.
  (void)unpack(batch);
  return batch;
}

std::vector<std::uint64_t> KvCache::append(std::size_t n_tokens) {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<std::uint64_t> ids;
  ids.reserve(n_tokens);
  for (std::size_t i = 0; i < n_tokens; ++i) {
    ids.push_back(next_token_id_);
    slots_.push_back({next_token_id_, SlotState::New});
    ++next_token_id_;
  }
  return ids;
}

void KvCache::append(std::span<const std::uint64_t> payloads) {
  std::lock_guard<std::mutex> lock(mu_);
  for (std::uint64_t payload : payloads) slots_.push_back({payload, SlotState::New});
}

void KvCache::commit(const std::vector<std::size_t>& accepted) {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<std::size_t> new_slots;
  for (std::size_t i = 0; i < slots_.size(); ++i)
    if (slots_[i].state == SlotState::New) new_slots.push_back(i);
  std::vector<bool> keep(new_slots.size(), false);
  for (std::size_t idx : accepted) {
    if (idx >= new_slots.size())
      throw IndexOutOfRegion("commit: index " + std::to_string(idx) +
                             " outside the new region of " + std::to_string(new_slots.size()));
    keep[idx] = true;
  }
  for (std::size_t k = 0; k < new_slots.size(); ++k)
    slots_[new_slots[k]].state = keep[k] ? SlotState::Committed : SlotState::Hole;
}

void KvCache::compact_locked() {
  std::vector<Slot> compacted;
  compacted.reserve(slots_.size());
  for (const Slot& slot : slots_)
    if (slot.state != SlotState::Hole) compacted.push_back(slot);
  slots_ = std::move(compacted);
  prefix_len_ = 0;
  for (const Slot& slot : slots_) {
    if (slot.state != SlotState::Committed) break;
    ++prefix_len_;
  }
}

void KvCache::compact() {
  std::lock_guard<std::mutex> lock(mu_);
  compact_locked();
}

std::vector<std::uint64_t> KvCache::visible() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<std::uint64_t> out;
  out.reserve(slots_.size());
  for (const Slot& slot : slots_)
    if (slot.state != SlotState::Hole) out.push_back(slot.payload);
  return out;
}

std::size_t KvCache::prefix_len() const {
  std::lock_guard<std::mutex> lock(mu_);
  return prefix_len_;
}

std::vector<std::size_t> KvCache::holes() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < slots_.size(); ++i)
    if (slots_[i].state == SlotState::Hole) out.push_back(i);
  return out;
}

std::size_t KvCache::new_len() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::size_t count = 0;
  for (const Slot& slot : slots_)
    if (slot.state == SlotState::New) ++count;
  return count;
}

std::size_t KvCache::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return slots_.size();
}

} // namespace beeplan
