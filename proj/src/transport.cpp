#include "fedsim/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <stdexcept>

namespace fedsim {

const char* to_string(TransportKind kind) {
  return kind == TransportKind::in_process ? "inproc" : "tcp";
}

TransportKind transport_kind_from_string(const std::string& name) {
  if (name == "inproc" || name == "in-process") return TransportKind::in_process;
  if (name == "tcp") return TransportKind::tcp;
  throw std::invalid_argument("unknown transport: " + name);
}

void PipeBuffer::write(std::span<const std::uint8_t> bytes) {
  std::lock_guard<std::mutex> lock(mu_);
  if (closed_) throw std::runtime_error("in-process stream: write after close");
  data_.insert(data_.end(), bytes.begin(), bytes.end());
  cv_.notify_all();
}

std::size_t PipeBuffer::read(std::uint8_t* dst, std::size_t n) {
  std::unique_lock<std::mutex> lock(mu_);
  std::size_t got = 0;
  while (got < n) {
    cv_.wait(lock, [this] { return !data_.empty() || closed_; });
    if (data_.empty() && closed_) break;
    while (got < n && !data_.empty()) {
      dst[got++] = data_.front();
      data_.pop_front();
    }
  }
  return got;
}

void PipeBuffer::close() {
  std::lock_guard<std::mutex> lock(mu_);
  closed_ = true;
  cv_.notify_all();
}

std::pair<std::unique_ptr<ByteStream>, std::unique_ptr<ByteStream>> make_in_process_pair() {
  auto a_to_b = std::make_shared<PipeBuffer>();
  auto b_to_a = std::make_shared<PipeBuffer>();
  auto a = std::make_unique<InProcessStream>(b_to_a, a_to_b);
  auto b = std::make_unique<InProcessStream>(a_to_b, b_to_a);
  return {std::move(a), std::move(b)};
}

TcpStream::~TcpStream() { close(); }

void TcpStream::write_all(std::span<const std::uint8_t> bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent,
                             MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error(std::string("tcp send failed: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }
}

std::size_t TcpStream::read_exact(std::uint8_t* dst, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd_, dst + got, n - got, 0);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error(std::string("tcp recv failed: ") + std::strerror(errno));
    }
    if (r == 0) break;  // peer closed
    got += static_cast<std::size_t>(r);
  }
  return got;
}

void TcpStream::close() {
  if (fd_ >= 0) {
    // shutdown first so a recv blocked in another thread wakes up
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    fd_ = -1;
  }
}

TcpListener::TcpListener(std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw std::runtime_error("tcp listener: socket failed");
  const int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd_);
    throw std::runtime_error(std::string("tcp listener: bind failed: ") +
                             std::strerror(errno));
  }
  if (::listen(fd_, 64) != 0) {
    ::close(fd_);
    throw std::runtime_error("tcp listener: listen failed");
  }
  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<ByteStream> TcpListener::accept() {
  const int conn = ::accept(fd_, nullptr, nullptr);
  if (conn < 0) throw std::runtime_error("tcp listener: accept failed");
  const int one = 1;
  ::setsockopt(conn, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return std::make_unique<TcpStream>(conn);
}

std::unique_ptr<ByteStream> tcp_connect(const std::string& host, std::uint16_t port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw std::runtime_error("tcp connect: socket failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw std::runtime_error("tcp connect: bad address " + host);
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd);
    throw std::runtime_error(std::string("tcp connect failed: ") + std::strerror(errno));
  }
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return std::make_unique<TcpStream>(fd);
}

void send_envelope(ByteStream& stream, const RoundEnvelope& envelope) {
  const std::vector<std::uint8_t> frame = encode(envelope);
  stream.write_all({frame.data(), frame.size()});
}

DecodeStatus recv_envelope(ByteStream& stream, RoundEnvelope& envelope) {
  std::vector<std::uint8_t> buf(kFrameHeaderSize);
  if (stream.read_exact(buf.data(), kFrameHeaderSize) != kFrameHeaderSize) {
    return DecodeStatus::need_more;
  }
  std::uint32_t payload_len = 0;
  for (int i = 0; i < 4; ++i) {
    payload_len |= static_cast<std::uint32_t>(buf[10 + i]) << (8 * i);
  }
  const std::size_t rest = static_cast<std::size_t>(payload_len) + 4;
  buf.resize(kFrameHeaderSize + rest);
  if (stream.read_exact(buf.data() + kFrameHeaderSize, rest) != rest) {
    return DecodeStatus::need_more;
  }
  std::size_t consumed = 0;
  return decode({buf.data(), buf.size()}, envelope, consumed);
}

}  // namespace fedsim
