// Byte transports used by the federation: an in-process channel for
// deterministic simulation and a TCP stream; both move the same frames.
#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <utility>

#include "fedsim/wire.hpp"

namespace fedsim {

enum class TransportKind { in_process, tcp };

const char* to_string(TransportKind kind);
TransportKind transport_kind_from_string(const std::string& name);

class ByteStream {
 public:
  virtual ~ByteStream() = default;
  virtual void write_all(std::span<const std::uint8_t> bytes) = 0;
  // Blocks until n bytes are read or the peer closes; returns bytes read.
  virtual std::size_t read_exact(std::uint8_t* dst, std::size_t n) = 0;
  virtual void close() = 0;
};

// One direction of an in-process connection.
class PipeBuffer {
 public:
  void write(std::span<const std::uint8_t> bytes);
  std::size_t read(std::uint8_t* dst, std::size_t n);
  void close();

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::uint8_t> data_;
  bool closed_ = false;
};

class InProcessStream : public ByteStream {
 public:
  InProcessStream(std::shared_ptr<PipeBuffer> in, std::shared_ptr<PipeBuffer> out)
      : in_(std::move(in)), out_(std::move(out)) {}
  void write_all(std::span<const std::uint8_t> bytes) override { out_->write(bytes); }
  std::size_t read_exact(std::uint8_t* dst, std::size_t n) override {
    return in_->read(dst, n);
  }
  void close() override {
    in_->close();
    out_->close();
  }

 private:
  std::shared_ptr<PipeBuffer> in_;
  std::shared_ptr<PipeBuffer> out_;
};

// Returns the two ends of a fresh duplex in-process connection.
std::pair<std::unique_ptr<ByteStream>, std::unique_ptr<ByteStream>> make_in_process_pair();

class TcpStream : public ByteStream {
 public:
  explicit TcpStream(int fd) : fd_(fd) {}
  ~TcpStream() override;
  TcpStream(const TcpStream&) = delete;
  TcpStream& operator=(const TcpStream&) = delete;
  void write_all(std::span<const std::uint8_t> bytes) override;
  std::size_t read_exact(std::uint8_t* dst, std::size_t n) override;
  void close() override;

 private:
  int fd_ = -1;
};

class TcpListener {
 public:
  // Binds 127.0.0.1:port; port 0 picks a free port.
  explicit TcpListener(std::uint16_t port);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const { return port_; }
  std::unique_ptr<ByteStream> accept();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

std::unique_ptr<ByteStream> tcp_connect(const std::string& host, std::uint16_t port);

// Framed envelope IO over a stream. send encodes and writes one frame;
// recv reads exactly one frame and decodes it. recv returns need_more if
// the peer closed mid-frame (or before one started).
void send_envelope(ByteStream& stream, const RoundEnvelope& envelope);
DecodeStatus recv_envelope(ByteStream& stream, RoundEnvelope& envelope);

}  // namespace fedsim
