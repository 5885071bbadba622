// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "beeplan/codec.hpp"
#include "beeplan/metrics.hpp"

namespace beeplan {

/// Framed transfer protocol. Serialized header, little-endian:
///   magic "BBF1" | msg_type u8 | batch_id u64 | micro_index u16 |
///   flags u8 (bit0 compressed, bit1 byte-split) | payload_len u32 | payload
struct WireFrame {
  enum class Type : std::uint8_t { Activations = 0, PackedSd = 1, Ack = 2, Shutdown = 3 };
  static constexpr std::uint8_t kFlagCompressed = 0x01;
  static constexpr std::uint8_t kFlagByteSplit = 0x02;

  Type msg_type = Type::Activations;
  std::uint64_t batch_id = 0;
  std::uint16_t micro_index = 0;
  std::uint8_t flags = 0;
  Bytes payload;
};

inline constexpr std::size_t kFrameHeaderSize = 20;

Bytes encode_frame(const WireFrame& frame);
WireFrame decode_frame(const Bytes& data); // throws FrameCorrupt

/// Emulated WAN link: bytes egress at most at `rate_bps` (token bucket over
/// the frame's chunks, so the rate is honored at frame granularity) and every
/// frame is delayed by at least `latency_ms`. rate_bps <= 0 means unshaped.
struct LinkShape {
  double rate_bps = 0.0;
  double latency_ms = 0.0;
};

/// Milliseconds on the shared monotonic clock (comparable across processes
/// on one machine, which is all the loopback harness needs).
double wire_now_ms();

struct FrameSendRecord {
  std::uint64_t batch_id = 0;
  std::uint16_t micro_index = 0;
  double t_offer_ms = 0.0; // frame offered to the shaped link (first byte)
  double t_sent_ms = 0.0;  // last byte admitted to the wire
  std::size_t bytes = 0;
};

struct FrameRecvRecord {
  std::uint64_t batch_id = 0;
  std::uint16_t micro_index = 0;
  double t_recv_ms = 0.0; // last byte received
  std::size_t bytes = 0;
};

/// What one role observed. Hop-level transfer times are computed by joining
/// a sender's records with the downstream receiver's (join_hop_metrics).
struct WireRoleReport {
  RunMetrics metrics;
  std::vector<FrameSendRecord> sent;
  std::vector<FrameRecvRecord> received;
  double codec_ms_total = 0.0; // compression + decompression spent in this role
  bool payload_ok = true;      // sink only: bit-exact reassembly
  std::uint64_t frames_seen = 0;
};

/// Per-frame transfer = receiver's last-byte time minus the sender's offer
/// time, i.e. the latency + payload/rate view of the hop.
HopMetrics join_hop_metrics(const WireRoleReport& sender, const WireRoleReport& receiver);

struct WireSourceConfig {
  std::string connect;            // host:port downstream
  int steps = 1;                  // token steps; one batch payload per step
  int micro_batches = 1;          // M frames per step
  std::size_t payload_bytes = 0;  // whole-batch activation bytes per step
  std::uint64_t seed = 1;         // synthetic activation stream seed
  bool compress = false;
  std::uint8_t backend = kBackendDeflate;
  LinkShape shape;                // outbound link
};

struct WireStageConfig {
  std::string listen;  // host:port upstream side
  std::string connect; // host:port downstream
  double compute_ms = 0.0; // synthetic per-micro-batch compute
  bool compress_out = false;
  std::uint8_t backend = kBackendDeflate;
  int queue_slots = 2; // bounded queues between recv/compute/send workers
  LinkShape shape;     // outbound link
  int listen_fd = -1;  // pre-bound listener (in-process harness); -1: bind listen
};

struct WireSinkConfig {
  std::string listen;
  std::size_t payload_bytes = 0; // expected per step
  int micro_batches = 1;
  std::uint64_t seed = 1; // to regenerate the expected stream
  bool verify = true;
  int listen_fd = -1;
};

WireRoleReport run_wire_source(const WireSourceConfig& cfg);
WireRoleReport run_wire_stage(const WireStageConfig& cfg);
WireRoleReport run_wire_sink(const WireSinkConfig& cfg);

/// Loopback harness: source -> N relay stages -> sink as in-process threads,
/// every hop shaped alike. Used by tests and `bench-wire --local`.
struct WireLocalConfig {
  int steps = 1;
  int micro_batches = 1;
  std::size_t payload_bytes = 0;
  std::uint64_t seed = 1;
  bool compress = false;
  std::uint8_t backend = kBackendDeflate;
  int stage_count = 1;      // relay stages between source and sink
  double compute_ms = 0.0;  // per relay stage, per micro-batch
  LinkShape shape;          // applied to every hop
};

struct WireLocalResult {
  WireRoleReport source;
  std::vector<WireRoleReport> stages;
  WireRoleReport sink;
  std::vector<HopMetrics> hops; // joined per hop, source->stage1, ..., stageN->sink
  double end_to_end_ms = 0.0;   // first offer at the source to last byte at the sink
  RunMetrics summary;
};

WireLocalResult run_wire_local(const WireLocalConfig& cfg);

std::string wire_report_to_json(const WireRoleReport& report);
std::string wire_local_result_to_json(const WireLocalResult& result);

} // namespace beeplan
