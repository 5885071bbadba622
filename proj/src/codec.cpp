// SPDX-License-Identifier: Apache-2.0
#include "beeplan/codec.hpp"

#include <array>
#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "beeplan/errors.hpp"

namespace beeplan {

namespace {

Bytes deflate_encode(const Bytes& input) {
  uLongf bound = compressBound(static_cast<uLong>(input.size()));
  Bytes out(bound);
  int rc = compress2(out.data(), &bound, input.data(), static_cast<uLong>(input.size()),
                     Z_DEFAULT_COMPRESSION);
  if (rc != Z_OK) throw Error("deflate: compress2 failed with code " + std::to_string(rc));
  out.resize(bound);
  return out;
}

Bytes deflate_decode(const Bytes& input, std::size_t expected_size) {
  // Deflate expands at most ~1032x, so a larger declared size cannot be
  // genuine; reject it before allocating the output buffer.
  if (expected_size > input.size() * 1040 + 1024)
    throw CorruptContainer("deflate: declared size implausible for the blob");
  Bytes out(expected_size);
  uLongf got = static_cast<uLongf>(expected_size);
  int rc = uncompress(out.data(), &got, input.data(), static_cast<uLong>(input.size()));
  if (rc != Z_OK || got != expected_size)
    throw CorruptContainer("deflate: blob does not inflate to the declared size");
  return out;
}

const std::array<CodecBackend, 2>& backends() {
  static const std::array<CodecBackend, 2> table = {
      CodecBackend{
          kBackendIdentity,
          "identity",
          [](const Bytes& in) { return in; },
          [](const Bytes& in, std::size_t expected) {
            if (in.size() != expected)
              throw CorruptContainer("identity: blob length does not match the declared size");
            return in;
          },
      },
      CodecBackend{
          kBackendDeflate,
          "deflate",
          deflate_encode,
          deflate_decode,
      },
  };
  return table;
}

void write_u64_le(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t read_u64_le(const Bytes& data, std::size_t offset) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data[offset + i]) << (8 * i);
  return v;
}

} // namespace

const CodecBackend& backend_by_id(std::uint8_t id) {
  for (const auto& backend : backends())
    if (backend.id == id) return backend;
  throw BackendUnknown("codec backend id " + std::to_string(id) + " is not registered");
}

const CodecBackend& backend_by_name(const std::string& name) {
  for (const auto& backend : backends())
    if (backend.name == name) return backend;
  throw BackendUnknown("codec backend '" + name + "' is not registered");
}

LanePair byte_split(const Bytes& stream) {
  if (stream.size() % 2 != 0)
    throw OddLength("byte_split: stream length must be even, got " +
                    std::to_string(stream.size()));
  std::size_t count = stream.size() / 2;
  LanePair lanes;
  lanes.high.resize(count);
  lanes.low.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    lanes.low[k] = stream[2 * k];
    lanes.high[k] = stream[2 * k + 1];
  }
  return lanes;
}

Bytes byte_merge(const Bytes& high, const Bytes& low) {
  if (high.size() != low.size())
    throw LaneLengthMismatch("byte_merge: lane lengths differ (" + std::to_string(high.size()) +
                             " vs " + std::to_string(low.size()) + ")");
  Bytes stream(high.size() * 2);
  for (std::size_t k = 0; k < high.size(); ++k) {
    stream[2 * k] = low[k];
    stream[2 * k + 1] = high[k];
  }
  return stream;
}

double entropy_bits_per_byte(const Bytes& data) {
  if (data.empty()) return 0.0;
  std::array<std::uint64_t, 256> counts{};
  for (std::uint8_t byte : data) ++counts[byte];
  double total = static_cast<double>(data.size());
  double entropy = 0.0;
  for (std::uint64_t count : counts) {
    if (count == 0) continue;
    double p = static_cast<double>(count) / total;
    entropy -= p * std::log2(p);
  }
  return entropy;
}

Bytes serialize_container(const CodecContainer& container) {
  Bytes out;
  out.reserve(kContainerHeaderSize + container.high_blob.size() + container.low_blob.size());
  for (char c : {'B', 'B', 'C', '1'}) out.push_back(static_cast<std::uint8_t>(c));
  out.push_back(kContainerVersion);
  out.push_back(container.backend_id);
  out.push_back(container.flags);
  write_u64_le(out, container.element_count);
  write_u64_le(out, container.high_blob.size());
  write_u64_le(out, container.low_blob.size());
  out.insert(out.end(), container.high_blob.begin(), container.high_blob.end());
  out.insert(out.end(), container.low_blob.begin(), container.low_blob.end());
  return out;
}

CodecContainer parse_container(const Bytes& data) {
  if (data.size() < kContainerHeaderSize) throw CorruptContainer("container: truncated header");
  if (std::memcmp(data.data(), "BBC1", 4) != 0) throw CorruptContainer("container: bad magic");
  if (data[4] != kContainerVersion)
    throw CorruptContainer("container: unsupported version " + std::to_string(data[4]));
  CodecContainer container;
  container.backend_id = data[5];
  container.flags = data[6];
  container.element_count = read_u64_le(data, 7);
  std::uint64_t high_len = read_u64_le(data, 15);
  std::uint64_t low_len = read_u64_le(data, 23);
  std::uint64_t available = data.size() - kContainerHeaderSize;
  if (high_len > available || low_len > available - high_len ||
      high_len + low_len != available)
    throw CorruptContainer("container: blob lengths do not match the payload");
  auto blobs = data.begin() + kContainerHeaderSize;
  container.high_blob.assign(blobs, blobs + high_len);
  container.low_blob.assign(blobs + high_len, blobs + high_len + low_len);
  return container;
}

CodecContainer compress(const Bytes& stream, std::uint8_t backend_id, bool split) {
  const CodecBackend& backend = backend_by_id(backend_id);
  if (stream.size() % 2 != 0)
    throw OddLength("compress: FP16 stream length must be even");
  CodecContainer container;
  container.backend_id = backend_id;
  container.element_count = stream.size() / 2;
  if (split) {
    container.flags = 0x01;
    LanePair lanes = byte_split(stream);
    container.high_blob = backend.encode(lanes.high);
    container.low_blob = backend.encode(lanes.low);
  } else {
    container.high_blob = backend.encode(stream);
  }
  return container;
}

Bytes decompress(const CodecContainer& container) {
  const CodecBackend& backend = backend_by_id(container.backend_id);
  std::size_t count = static_cast<std::size_t>(container.element_count);
  if (container.split()) {
    Bytes high = backend.decode(container.high_blob, count);
    Bytes low = backend.decode(container.low_blob, count);
    return byte_merge(high, low);
  }
  if (!container.low_blob.empty())
    throw CorruptContainer("container: raw mode must have an empty low blob");
  return backend.decode(container.high_blob, count * 2);
}

EntropyReport analyze(const Bytes& stream, std::uint8_t backend_id) {
  EntropyReport report;
  report.raw_size = stream.size();
  report.raw_entropy = entropy_bits_per_byte(stream);
  LanePair lanes = byte_split(stream);
  report.lane_size = lanes.high.size();
  report.high_entropy = entropy_bits_per_byte(lanes.high);
  report.low_entropy = entropy_bits_per_byte(lanes.low);
  CodecContainer raw_mode = compress(stream, backend_id, false);
  CodecContainer split_mode = compress(stream, backend_id, true);
  report.raw_mode_compressed = raw_mode.high_blob.size();
  report.high_lane_compressed = split_mode.high_blob.size();
  report.low_lane_compressed = split_mode.low_blob.size();
  report.split_mode_compressed = split_mode.high_blob.size() + split_mode.low_blob.size();
  report.ratio = stream.empty()
                     ? 0.0
                     : static_cast<double>(report.split_mode_compressed) /
                           static_cast<double>(report.raw_size);
  return report;
}

std::string entropy_report_to_json(const EntropyReport& report) {
  nlohmann::json doc;
  doc["raw_entropy"] = report.raw_entropy;
  doc["high_entropy"] = report.high_entropy;
  doc["low_entropy"] = report.low_entropy;
  doc["raw_size"] = report.raw_size;
  doc["lane_size"] = report.lane_size;
  doc["raw_mode_compressed"] = report.raw_mode_compressed;
  doc["high_lane_compressed"] = report.high_lane_compressed;
  doc["low_lane_compressed"] = report.low_lane_compressed;
  doc["split_mode_compressed"] = report.split_mode_compressed;
  doc["ratio"] = report.ratio;
  return doc.dump(2);
}

} // namespace beeplan
