// SPDX-License-Identifier: Apache-2.0
#include "beeplan/wire.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "beeplan/errors.hpp"
#include "beeplan/log.hpp"
#include "beeplan/synth.hpp"

namespace beeplan {

namespace {

using Clock = std::chrono::steady_clock;
using FloatSeconds = std::chrono::duration<double>;

constexpr std::size_t kChunkBytes = 64 * 1024;
constexpr std::size_t kMaxPayload = 1u << 30;
constexpr int kIoTimeoutSec = 30;

double to_ms(Clock::time_point t) {
  return std::chrono::duration<double, std::milli>(t.time_since_epoch()).count();
}

void write_u16_le(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFFu));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void write_u32_le(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void write_u64_le(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t read_le(const std::uint8_t* data, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data[i]) << (8 * i);
  return v;
}

// ---------------------------------------------------------------------------
// Sockets

struct SockAddr {
  std::string host;
  std::uint16_t port = 0;
};

SockAddr parse_endpoint(const std::string& endpoint) {
  auto colon = endpoint.rfind(':');
  if (colon == std::string::npos)
    throw ValidationError("endpoint '" + endpoint + "': expected host:port");
  SockAddr addr;
  addr.host = endpoint.substr(0, colon);
  addr.port = static_cast<std::uint16_t>(std::stoi(endpoint.substr(colon + 1)));
  return addr;
}

class Socket {
public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }
  Socket& operator=(Socket&& other) noexcept {
    if (this != &other) {
      close_fd();
      fd_ = other.fd_;
      other.fd_ = -1;
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close_fd(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release() {
    int fd = fd_;
    fd_ = -1;
    return fd;
  }

private:
  void close_fd() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  int fd_ = -1;
};

void set_io_timeout(int fd) {
  timeval tv{kIoTimeoutSec, 0};
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
  ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

Socket bind_listener(const std::string& endpoint) {
  SockAddr addr = parse_endpoint(endpoint);
  Socket sock(::socket(AF_INET, SOCK_STREAM, 0));
  if (!sock.valid()) throw ConnectionLost("socket(): " + std::string(std::strerror(errno)));
  int one = 1;
  ::setsockopt(sock.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in sin{};
  sin.sin_family = AF_INET;
  sin.sin_port = htons(addr.port);
  if (::inet_pton(AF_INET, addr.host.c_str(), &sin.sin_addr) != 1)
    throw ValidationError("endpoint host '" + addr.host + "': expected an IPv4 address");
  if (::bind(sock.fd(), reinterpret_cast<sockaddr*>(&sin), sizeof(sin)) != 0)
    throw ConnectionLost("bind(" + endpoint + "): " + std::strerror(errno));
  if (::listen(sock.fd(), 4) != 0)
    throw ConnectionLost("listen(" + endpoint + "): " + std::strerror(errno));
  return sock;
}

std::uint16_t listener_port(int fd) {
  sockaddr_in sin{};
  socklen_t len = sizeof(sin);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&sin), &len);
  return ntohs(sin.sin_port);
}

Socket accept_one(int listen_fd) {
  timeval tv{kIoTimeoutSec, 0};
  ::setsockopt(listen_fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
  int fd = ::accept(listen_fd, nullptr, nullptr);
  if (fd < 0) throw ConnectionLost("accept(): " + std::string(std::strerror(errno)));
  set_io_timeout(fd);
  set_nodelay(fd);
  return Socket(fd);
}

Socket connect_with_retry(const std::string& endpoint) {
  SockAddr addr = parse_endpoint(endpoint);
  sockaddr_in sin{};
  sin.sin_family = AF_INET;
  sin.sin_port = htons(addr.port);
  if (::inet_pton(AF_INET, addr.host.c_str(), &sin.sin_addr) != 1)
    throw ValidationError("endpoint host '" + addr.host + "': expected an IPv4 address");

  auto deadline = Clock::now() + std::chrono::seconds(10);
  while (true) {
    Socket sock(::socket(AF_INET, SOCK_STREAM, 0));
    if (!sock.valid()) throw ConnectionLost("socket(): " + std::string(std::strerror(errno)));
    if (::connect(sock.fd(), reinterpret_cast<sockaddr*>(&sin), sizeof(sin)) == 0) {
      set_io_timeout(sock.fd());
      set_nodelay(sock.fd());
      return sock;
    }
    if (Clock::now() >= deadline)
      throw ConnectionLost("connect(" + endpoint + "): " + std::strerror(errno));
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
}

void write_all(int fd, const std::uint8_t* data, std::size_t size) {
  while (size > 0) {
    ssize_t n = ::send(fd, data, size, MSG_NOSIGNAL);
    if (n <= 0) throw ConnectionLost("send(): " + std::string(std::strerror(errno)));
    data += n;
    size -= static_cast<std::size_t>(n);
  }
}

// Returns false on clean EOF before the first byte.
bool read_exact(int fd, std::uint8_t* data, std::size_t size, bool eof_ok) {
  std::size_t got = 0;
  while (got < size) {
    ssize_t n = ::recv(fd, data + got, size - got, 0);
    if (n == 0) {
      if (got == 0 && eof_ok) return false;
      throw ConnectionLost("recv(): peer closed mid-frame");
    }
    if (n < 0) throw ConnectionLost("recv(): " + std::string(std::strerror(errno)));
    got += static_cast<std::size_t>(n);
  }
  return true;
}

// ---------------------------------------------------------------------------
// Link shaping. Rate is enforced by pacing chunk admissions against a virtual
// wire clock (token bucket with burst capped at one chunk <= one frame);
// propagation latency shifts every admission without affecting spacing, so
// frames pipeline through the latency like they would on a real link.

class ShapedWriter {
public:
  ShapedWriter(int fd, LinkShape shape) : fd_(fd), shape_(shape) {}

  FrameSendRecord send(const Bytes& bytes, std::uint64_t batch_id, std::uint16_t micro) {
    FrameSendRecord record;
    record.batch_id = batch_id;
    record.micro_index = micro;
    record.bytes = bytes.size();
    record.t_offer_ms = wire_now_ms();
    if (shape_.rate_bps <= 0.0) {
      if (shape_.latency_ms > 0.0) {
        auto target = Clock::now() + std::chrono::duration_cast<Clock::duration>(
                                         FloatSeconds(shape_.latency_ms / 1000.0));
        std::this_thread::sleep_until(target);
      }
      write_all(fd_, bytes.data(), bytes.size());
    } else {
      double rate_bytes_per_s = shape_.rate_bps / 8.0;
      std::size_t offset = 0;
      while (offset < bytes.size()) {
        std::size_t chunk = std::min(kChunkBytes, bytes.size() - offset);
        auto now = Clock::now();
        if (wire_free_ < now) wire_free_ = now;
        wire_free_ += std::chrono::duration_cast<Clock::duration>(
            FloatSeconds(static_cast<double>(chunk) / rate_bytes_per_s));
        auto target = wire_free_ + std::chrono::duration_cast<Clock::duration>(
                                       FloatSeconds(shape_.latency_ms / 1000.0));
        std::this_thread::sleep_until(target);
        write_all(fd_, bytes.data() + offset, chunk);
        offset += chunk;
      }
    }
    record.t_sent_ms = wire_now_ms();
    return record;
  }

private:
  int fd_;
  LinkShape shape_;
  Clock::time_point wire_free_{};
};

std::optional<WireFrame> read_frame(int fd, double* t_recv_ms) {
  std::uint8_t header[kFrameHeaderSize];
  if (!read_exact(fd, header, kFrameHeaderSize, true)) return std::nullopt;
  if (std::memcmp(header, "BBF1", 4) != 0) throw FrameCorrupt("frame: bad magic");
  WireFrame frame;
  std::uint8_t type = header[4];
  if (type > 3) throw FrameCorrupt("frame: unknown msg_type " + std::to_string(type));
  frame.msg_type = static_cast<WireFrame::Type>(type);
  frame.batch_id = read_le(header + 5, 8);
  frame.micro_index = static_cast<std::uint16_t>(read_le(header + 13, 2));
  frame.flags = header[15];
  std::uint64_t payload_len = read_le(header + 16, 4);
  if (payload_len > kMaxPayload) throw FrameCorrupt("frame: implausible payload length");
  frame.payload.resize(payload_len);
  if (payload_len > 0) read_exact(fd, frame.payload.data(), payload_len, false);
  if (t_recv_ms != nullptr) *t_recv_ms = wire_now_ms();
  return frame;
}

// ---------------------------------------------------------------------------
// Bounded FIFO connecting the stage workers; capacity gives backpressure.
// close() unblocks every waiter so a failing worker cannot wedge its peers:
// pushes after close are dropped and pops drain to a Shutdown frame.

class FrameQueue {
public:
  explicit FrameQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(WireFrame frame) {
    std::unique_lock<std::mutex> lock(mu_);
    not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return;
    items_.push_back(std::move(frame));
    not_empty_.notify_one();
  }

  WireFrame pop() {
    std::unique_lock<std::mutex> lock(mu_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) {
      WireFrame poison;
      poison.msg_type = WireFrame::Type::Shutdown;
      return poison;
    }
    WireFrame frame = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return frame;
  }

  void close() {
    std::lock_guard<std::mutex> lock(mu_);
    closed_ = true;
    not_full_.notify_all();
    not_empty_.notify_all();
  }

private:
  std::mutex mu_;
  std::condition_variable not_full_, not_empty_;
  std::deque<WireFrame> items_;
  std::size_t capacity_;
  bool closed_ = false;
};

// Per-step synthetic activation stream and its per-micro-batch slices.
struct StepSlices {
  Bytes stream;
  std::vector<std::pair<std::size_t, std::size_t>> spans; // offset, bytes
};

StepSlices make_step_slices(std::size_t payload_bytes, int micro_batches, std::uint64_t seed,
                            std::uint64_t step) {
  if (payload_bytes % 2 != 0) throw ValidationError("payload_bytes: must be even (FP16)");
  std::size_t elements = payload_bytes / 2;
  StepSlices slices;
  slices.stream = synth_gaussian_fp16(elements, seed + step);
  std::size_t base = elements / static_cast<std::size_t>(micro_batches);
  std::size_t rem = elements % static_cast<std::size_t>(micro_batches);
  std::size_t offset = 0;
  for (int k = 0; k < micro_batches; ++k) {
    std::size_t elems = base + (static_cast<std::size_t>(k) < rem ? 1 : 0);
    slices.spans.emplace_back(offset * 2, elems * 2);
    offset += elems;
  }
  return slices;
}

} // namespace

double wire_now_ms() { return to_ms(Clock::now()); }

Bytes encode_frame(const WireFrame& frame) {
  Bytes out;
  out.reserve(kFrameHeaderSize + frame.payload.size());
  for (char c : {'B', 'B', 'F', '1'}) out.push_back(static_cast<std::uint8_t>(c));
  out.push_back(static_cast<std::uint8_t>(frame.msg_type));
  write_u64_le(out, frame.batch_id);
  write_u16_le(out, frame.micro_index);
  out.push_back(frame.flags);
  write_u32_le(out, static_cast<std::uint32_t>(frame.payload.size()));
  out.insert(out.end(), frame.payload.begin(), frame.payload.end());
  return out;
}

WireFrame decode_frame(const Bytes& data) {
  if (data.size() < kFrameHeaderSize) throw FrameCorrupt("frame: truncated header");
  if (std::memcmp(data.data(), "BBF1", 4) != 0) throw FrameCorrupt("frame: bad magic");
  WireFrame frame;
  std::uint8_t type = data[4];
  if (type > 3) throw FrameCorrupt("frame: unknown msg_type " + std::to_string(type));
  frame.msg_type = static_cast<WireFrame::Type>(type);
  frame.batch_id = read_le(data.data() + 5, 8);
  frame.micro_index = static_cast<std::uint16_t>(read_le(data.data() + 13, 2));
  frame.flags = data[15];
  std::uint64_t payload_len = read_le(data.data() + 16, 4);
  if (data.size() != kFrameHeaderSize + payload_len)
    throw FrameCorrupt("frame: payload length does not match the header");
  frame.payload.assign(data.begin() + kFrameHeaderSize, data.end());
  return frame;
}

HopMetrics join_hop_metrics(const WireRoleReport& sender, const WireRoleReport& receiver) {
  HopMetrics hop;
  for (const FrameSendRecord& sent : sender.sent) {
    for (const FrameRecvRecord& recv : receiver.received) {
      if (recv.batch_id == sent.batch_id && recv.micro_index == sent.micro_index) {
        hop.transfer_ms_total += recv.t_recv_ms - sent.t_offer_ms;
        ++hop.frames;
        break;
      }
    }
  }
  hop.transfer_ms_mean = hop.frames > 0 ? hop.transfer_ms_total / hop.frames : 0.0;
  hop.compression_ms_total = sender.codec_ms_total;
  return hop;
}

WireRoleReport run_wire_source(const WireSourceConfig& cfg) {
  WireRoleReport report;
  Socket sock = connect_with_retry(cfg.connect);
  ShapedWriter writer(sock.fd(), cfg.shape);

  double first_offer = 0.0, last_sent = 0.0;
  for (int step = 0; step < cfg.steps; ++step) {
    StepSlices slices =
        make_step_slices(cfg.payload_bytes, cfg.micro_batches, cfg.seed,
                         static_cast<std::uint64_t>(step));
    for (int micro = 0; micro < cfg.micro_batches; ++micro) {
      auto [offset, bytes] = slices.spans[static_cast<std::size_t>(micro)];
      WireFrame frame;
      frame.msg_type = WireFrame::Type::Activations;
      frame.batch_id = static_cast<std::uint64_t>(step);
      frame.micro_index = static_cast<std::uint16_t>(micro);
      Bytes slice(slices.stream.begin() + static_cast<std::ptrdiff_t>(offset),
                  slices.stream.begin() + static_cast<std::ptrdiff_t>(offset + bytes));
      if (cfg.compress) {
        double t0 = wire_now_ms();
        frame.payload = serialize_container(compress(slice, cfg.backend, true));
        report.codec_ms_total += wire_now_ms() - t0;
        frame.flags = WireFrame::kFlagCompressed | WireFrame::kFlagByteSplit;
      } else {
        frame.payload = std::move(slice);
      }
      FrameSendRecord record =
          writer.send(encode_frame(frame), frame.batch_id, frame.micro_index);
      if (report.sent.empty()) first_offer = record.t_offer_ms;
      last_sent = record.t_sent_ms;
      report.sent.push_back(record);
      ++report.frames_seen;
    }
  }
  WireFrame shutdown;
  shutdown.msg_type = WireFrame::Type::Shutdown;
  writer.send(encode_frame(shutdown), 0, 0);

  report.metrics.completion_ms = last_sent - first_offer;
  report.metrics.step_ms = cfg.steps > 0 ? report.metrics.completion_ms / cfg.steps : 0.0;
  return report;
}

WireRoleReport run_wire_stage(const WireStageConfig& cfg) {
  WireRoleReport report;
  Socket listener =
      cfg.listen_fd >= 0 ? Socket() : bind_listener(cfg.listen);
  int listen_fd = cfg.listen_fd >= 0 ? cfg.listen_fd : listener.fd();
  Socket downstream = connect_with_retry(cfg.connect);
  Socket upstream = accept_one(listen_fd);

  FrameQueue inbound(static_cast<std::size_t>(cfg.queue_slots));
  FrameQueue outbound(static_cast<std::size_t>(cfg.queue_slots));
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto record_failure = [&] {
    {
      std::lock_guard<std::mutex> lock(failure_mu);
      if (!failure) failure = std::current_exception();
    }
    inbound.close();
    outbound.close();
  };

  std::vector<FrameRecvRecord> received;
  double recv_codec_ms = 0.0, send_codec_ms = 0.0, busy_ms = 0.0;

  std::thread recv_worker([&] {
    try {
      while (true) {
        double t_recv = 0.0;
        std::optional<WireFrame> frame = read_frame(upstream.fd(), &t_recv);
        if (!frame) throw ConnectionLost("stage: upstream closed before shutdown");
        bool is_shutdown = frame->msg_type == WireFrame::Type::Shutdown;
        if (!is_shutdown)
          received.push_back({frame->batch_id, frame->micro_index, t_recv,
                              kFrameHeaderSize + frame->payload.size()});
        inbound.push(std::move(*frame));
        if (is_shutdown) break;
      }
    } catch (...) {
      record_failure();
      WireFrame poison;
      poison.msg_type = WireFrame::Type::Shutdown;
      inbound.push(std::move(poison));
    }
  });

  std::thread compute_worker([&] {
    try {
      while (true) {
        WireFrame frame = inbound.pop();
        if (frame.msg_type == WireFrame::Type::Shutdown) {
          outbound.push(std::move(frame));
          break;
        }
        if (frame.flags & WireFrame::kFlagCompressed) {
          double t0 = wire_now_ms();
          Bytes raw = decompress(parse_container(frame.payload));
          recv_codec_ms += wire_now_ms() - t0;
          frame.payload = std::move(raw);
          frame.flags &= static_cast<std::uint8_t>(
              ~(WireFrame::kFlagCompressed | WireFrame::kFlagByteSplit));
        }
        if (cfg.compute_ms > 0.0) {
          std::this_thread::sleep_for(FloatSeconds(cfg.compute_ms / 1000.0));
          busy_ms += cfg.compute_ms;
        }
        if (cfg.compress_out) {
          double t0 = wire_now_ms();
          frame.payload = serialize_container(compress(frame.payload, cfg.backend, true));
          send_codec_ms += wire_now_ms() - t0;
          frame.flags |= WireFrame::kFlagCompressed | WireFrame::kFlagByteSplit;
        }
        outbound.push(std::move(frame));
      }
    } catch (...) {
      record_failure();
      WireFrame poison;
      poison.msg_type = WireFrame::Type::Shutdown;
      outbound.push(std::move(poison));
    }
  });

  std::thread send_worker([&] {
    try {
      ShapedWriter writer(downstream.fd(), cfg.shape);
      while (true) {
        WireFrame frame = outbound.pop();
        bool is_shutdown = frame.msg_type == WireFrame::Type::Shutdown;
        FrameSendRecord record =
            writer.send(encode_frame(frame), frame.batch_id, frame.micro_index);
        if (!is_shutdown) report.sent.push_back(record);
        if (is_shutdown) break;
      }
    } catch (...) {
      record_failure();
    }
  });

  recv_worker.join();
  compute_worker.join();
  send_worker.join();
  if (failure) std::rethrow_exception(failure);

  report.received = std::move(received);
  report.codec_ms_total = recv_codec_ms + send_codec_ms;
  report.frames_seen = report.received.size();
  if (!report.received.empty() && !report.sent.empty()) {
    report.metrics.completion_ms = report.sent.back().t_sent_ms - report.received.front().t_recv_ms;
  }
  report.metrics.stages.push_back({busy_ms, report.metrics.completion_ms - busy_ms});
  return report;
}

WireRoleReport run_wire_sink(const WireSinkConfig& cfg) {
  WireRoleReport report;
  Socket listener = cfg.listen_fd >= 0 ? Socket() : bind_listener(cfg.listen);
  int listen_fd = cfg.listen_fd >= 0 ? cfg.listen_fd : listener.fd();
  Socket upstream = accept_one(listen_fd);

  std::uint64_t current_step = ~0ull;
  StepSlices expected;
  Bytes assembled;
  std::size_t assembled_frames = 0;

  auto finish_step = [&] {
    if (current_step == ~0ull) return;
    if (cfg.verify && assembled != expected.stream) report.payload_ok = false;
    assembled.clear();
    assembled_frames = 0;
  };

  while (true) {
    double t_recv = 0.0;
    std::optional<WireFrame> frame = read_frame(upstream.fd(), &t_recv);
    if (!frame) throw ConnectionLost("sink: upstream closed before shutdown");
    if (frame->msg_type == WireFrame::Type::Shutdown) break;
    report.received.push_back(
        {frame->batch_id, frame->micro_index, t_recv, kFrameHeaderSize + frame->payload.size()});
    ++report.frames_seen;
    if (frame->msg_type != WireFrame::Type::Activations) continue;

    if (frame->batch_id != current_step) {
      finish_step();
      current_step = frame->batch_id;
      expected = make_step_slices(cfg.payload_bytes, cfg.micro_batches, cfg.seed, current_step);
      assembled.assign(expected.stream.size(), 0);
    }
    if (frame->micro_index >= expected.spans.size())
      throw FrameCorrupt("sink: micro_index " + std::to_string(frame->micro_index) +
                         " outside the configured micro-batch count");
    Bytes payload = frame->payload;
    if (frame->flags & WireFrame::kFlagCompressed) {
      double t0 = wire_now_ms();
      payload = decompress(parse_container(payload));
      report.codec_ms_total += wire_now_ms() - t0;
    }
    auto [offset, bytes] = expected.spans[frame->micro_index];
    if (payload.size() != bytes) {
      report.payload_ok = false;
    } else {
      std::copy(payload.begin(), payload.end(),
                assembled.begin() + static_cast<std::ptrdiff_t>(offset));
      ++assembled_frames;
    }
  }
  finish_step();

  if (!report.received.empty()) {
    report.metrics.completion_ms =
        report.received.back().t_recv_ms - report.received.front().t_recv_ms;
  }
  return report;
}

WireLocalResult run_wire_local(const WireLocalConfig& cfg) {
  if (cfg.stage_count < 0) throw ValidationError("stage_count: must be >= 0");
  WireLocalResult result;

  // Bind every listener up front so connects cannot race the accepts.
  std::vector<Socket> listeners;
  std::vector<std::string> endpoints;
  for (int i = 0; i < cfg.stage_count + 1; ++i) { // stages + sink
    Socket listener = bind_listener("127.0.0.1:0");
    endpoints.push_back("127.0.0.1:" + std::to_string(listener_port(listener.fd())));
    listeners.push_back(std::move(listener));
  }

  std::exception_ptr failure;
  std::mutex failure_mu;
  auto guard = [&](auto&& fn) {
    try {
      fn();
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mu);
      if (!failure) failure = std::current_exception();
    }
  };

  result.stages.resize(static_cast<std::size_t>(cfg.stage_count));
  std::vector<std::thread> threads;

  WireSinkConfig sink_cfg;
  sink_cfg.payload_bytes = cfg.payload_bytes;
  sink_cfg.micro_batches = cfg.micro_batches;
  sink_cfg.seed = cfg.seed;
  sink_cfg.listen_fd = listeners.back().fd();
  threads.emplace_back([&] { guard([&] { result.sink = run_wire_sink(sink_cfg); }); });

  for (int i = cfg.stage_count - 1; i >= 0; --i) {
    WireStageConfig stage_cfg;
    stage_cfg.listen_fd = listeners[static_cast<std::size_t>(i)].fd();
    stage_cfg.connect = endpoints[static_cast<std::size_t>(i) + 1];
    stage_cfg.compute_ms = cfg.compute_ms;
    stage_cfg.compress_out = cfg.compress;
    stage_cfg.backend = cfg.backend;
    stage_cfg.shape = cfg.shape;
    threads.emplace_back([&, i, stage_cfg] {
      guard([&] { result.stages[static_cast<std::size_t>(i)] = run_wire_stage(stage_cfg); });
    });
  }

  WireSourceConfig source_cfg;
  source_cfg.connect = endpoints.front();
  source_cfg.steps = cfg.steps;
  source_cfg.micro_batches = cfg.micro_batches;
  source_cfg.payload_bytes = cfg.payload_bytes;
  source_cfg.seed = cfg.seed;
  source_cfg.compress = cfg.compress;
  source_cfg.backend = cfg.backend;
  source_cfg.shape = cfg.shape;
  threads.emplace_back([&] { guard([&] { result.source = run_wire_source(source_cfg); }); });

  for (std::thread& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);

  const WireRoleReport* sender = &result.source;
  for (const WireRoleReport& stage : result.stages) {
    result.hops.push_back(join_hop_metrics(*sender, stage));
    sender = &stage;
  }
  result.hops.push_back(join_hop_metrics(*sender, result.sink));

  if (!result.source.sent.empty() && !result.sink.received.empty()) {
    result.end_to_end_ms =
        result.sink.received.back().t_recv_ms - result.source.sent.front().t_offer_ms;
  }
  result.summary.completion_ms = result.end_to_end_ms;
  result.summary.step_ms = cfg.steps > 0 ? result.end_to_end_ms / cfg.steps : 0.0;
  result.summary.throughput_tokens_per_s =
      result.end_to_end_ms > 0 ? cfg.steps * 1000.0 / result.end_to_end_ms : 0.0;
  for (const WireRoleReport& stage : result.stages)
    for (const StageMetrics& sm : stage.metrics.stages) result.summary.stages.push_back(sm);
  result.summary.hops = result.hops;
  return result;
}

std::string wire_report_to_json(const WireRoleReport& report) {
  nlohmann::json doc;
  doc["metrics"] = nlohmann::json::parse(run_metrics_to_json(report.metrics));
  doc["codec_ms_total"] = report.codec_ms_total;
  doc["payload_ok"] = report.payload_ok;
  doc["frames_seen"] = report.frames_seen;
  auto dump_sent = nlohmann::json::array();
  for (const FrameSendRecord& r : report.sent)
    dump_sent.push_back({{"batch_id", r.batch_id},
                         {"micro_index", r.micro_index},
                         {"t_offer_ms", r.t_offer_ms},
                         {"t_sent_ms", r.t_sent_ms},
                         {"bytes", r.bytes}});
  doc["sent"] = std::move(dump_sent);
  auto dump_recv = nlohmann::json::array();
  for (const FrameRecvRecord& r : report.received)
    dump_recv.push_back({{"batch_id", r.batch_id},
                         {"micro_index", r.micro_index},
                         {"t_recv_ms", r.t_recv_ms},
                         {"bytes", r.bytes}});
  doc["received"] = std::move(dump_recv);
  return doc.dump(2);
}

std::string wire_local_result_to_json(const WireLocalResult& result) {
  nlohmann::json doc;
  doc["end_to_end_ms"] = result.end_to_end_ms;
  doc["summary"] = nlohmann::json::parse(run_metrics_to_json(result.summary));
  doc["payload_ok"] = result.sink.payload_ok;
  doc["hops"] = nlohmann::json::array();
  for (const HopMetrics& hop : result.hops)
    doc["hops"].push_back({{"frames", hop.frames},
                           {"transfer_ms_total", hop.transfer_ms_total},
                           {"transfer_ms_mean", hop.transfer_ms_mean},
                           {"compression_ms_total", hop.compression_ms_total}});
  doc["source_codec_ms"] = result.source.codec_ms_total;
  doc["sink_codec_ms"] = result.sink.codec_ms_total;
  return doc.dump(2);
}

} // namespace beeplan
