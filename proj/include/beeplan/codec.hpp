// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace beeplan {

using Bytes = std::vector<std::uint8_t>;

/// Splits a serialized FP16 stream into its per-element high bytes (sign,
/// exponent, top two mantissa bits) and low bytes (low eight mantissa bits).
/// Elements are little-endian, so high[k] = stream[2k+1], low[k] = stream[2k].
struct LanePair {
  Bytes high;
  Bytes low;
};
LanePair byte_split(const Bytes& stream); // throws OddLength
Bytes byte_merge(const Bytes& high, const Bytes& low); // throws LaneLengthMismatch

/// Shannon entropy of the byte-value histogram, in bits/byte; 0 for empty
/// input by convention.
double entropy_bits_per_byte(const Bytes& data);

/// A registered lossless transform pair; decode(encode(x), x.size()) == x.
struct CodecBackend {
  std::uint8_t id = 0;
  std::string name;
  std::function<Bytes(const Bytes&)> encode;
  // expected_size is the exact decoded length; mismatch means corruption.
  std::function<Bytes(const Bytes&, std::size_t expected_size)> decode;
};

inline constexpr std::uint8_t kBackendIdentity = 0;
inline constexpr std::uint8_t kBackendDeflate = 1; // zlib, default level

const CodecBackend& backend_by_id(std::uint8_t id);            // throws BackendUnknown
const CodecBackend& backend_by_name(const std::string& name);  // throws BackendUnknown

/// Compressed activation container. Serialized layout, little-endian:
///   magic "BBC1" | version u8 (=1) | backend_id u8 | flags u8 (bit0 split)
///   | element_count u64 | high_len u64 | low_len u64 | high blob | low blob
struct CodecContainer {
  std::uint8_t backend_id = 0;
  std::uint8_t flags = 0;
  std::uint64_t element_count = 0;
  Bytes high_blob;
  Bytes low_blob;

  bool split() const { return (flags & 0x01u) != 0; }
};

inline constexpr std::size_t kContainerHeaderSize = 31;
inline constexpr std::uint8_t kContainerVersion = 1;

Bytes serialize_container(const CodecContainer& container);
CodecContainer parse_container(const Bytes& data); // throws CorruptContainer

/// split on: each lane compressed independently; split off: the raw stream
/// goes through the backend into high_blob.
CodecContainer compress(const Bytes& stream, std::uint8_t backend_id, bool split);
Bytes decompress(const CodecContainer& container); // bit-exact original

struct EntropyReport {
  double raw_entropy = 0.0;
  double high_entropy = 0.0;
  double low_entropy = 0.0;
  std::size_t raw_size = 0;
  std::size_t lane_size = 0; // bytes per lane (= element count)
  std::size_t raw_mode_compressed = 0;
  std::size_t high_lane_compressed = 0;
  std::size_t low_lane_compressed = 0;
  std::size_t split_mode_compressed = 0; // the two lanes together
  double ratio = 0.0; // split-mode compressed size / raw size
};
EntropyReport analyze(const Bytes& stream, std::uint8_t backend_id);

std::string entropy_report_to_json(const EntropyReport& report);

} // namespace beeplan
