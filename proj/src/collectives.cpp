#include "scalelab/collectives.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>

#include "scalelab/wire.hpp"

namespace scalelab {

// ---------------------------------------------------------------------------
// In-memory group

struct InMemoryGroup::Shared {
  explicit Shared(int n, std::chrono::milliseconds t) : size(n), timeout(t), arrived(n, false), slots(n, nullptr) {}

  const int size;
  const std::chrono::milliseconds timeout;
  std::mutex mu;
  std::condition_variable cv;
  std::uint64_t generation = 0;
  int count = 0;
  std::vector<bool> arrived;
  std::optional<std::string> broken;

  // allreduce exchange
  std::vector<const Tensor*> slots;
  Tensor result;
  std::optional<std::string> round_error;

  // Blocks until all ranks arrive. on_arrive runs under the lock for every
  // rank; complete runs once, under the lock, by the last rank to arrive.
  void arrive_and_wait(int rank, const std::function<void()>& on_arrive, const std::function<void()>& complete) {
    std::unique_lock lock(mu);
    if (broken) throw Error(*broken);
    if (on_arrive) on_arrive();
    arrived[rank] = true;
    if (++count == size) {
      if (complete) complete();
      count = 0;
      std::fill(arrived.begin(), arrived.end(), false);
      ++generation;
      cv.notify_all();
      return;
    }
    const auto gen = generation;
    const bool released = cv.wait_for(lock, timeout, [&] { return generation != gen || broken.has_value(); });
    if (generation != gen) return;
    if (!broken) {
      std::string absent;
      for (int r = 0; r < size; ++r)
        if (!arrived[r]) absent += (absent.empty() ? "" : ", ") + std::to_string(r);
      broken = "collective timed out after " + std::to_string(timeout.count()) + " ms waiting for rank(s) " + absent;
      cv.notify_all();
    }
    (void)released;
    throw Error(*broken);
  }
};

namespace {

class InMemoryMember final : public Communicator {
 public:
  InMemoryMember(int rank, std::shared_ptr<InMemoryGroup::Shared> shared) : rank_(rank), shared_(std::move(shared)) {}

  int rank() const override { return rank_; }
  int size() const override { return shared_->size; }
  Transport transport() const override { return Transport::InMemory; }

  Tensor allreduce_mean(const Tensor& contribution) override {
    auto& s = *shared_;
    s.arrive_and_wait(
        rank_, [&] { s.slots[rank_] = &contribution; },
        [&] {
          s.round_error.reset();
          std::vector<Tensor> ordered;
          ordered.reserve(s.size);
          for (int r = 0; r < s.size; ++r) {
            if (!s.slots[r]->same_shape(*s.slots[0])) {
              s.round_error = "allreduce_mean: rank " + std::to_string(r) + " contributed a tensor of different shape";
              return;
            }
            ordered.push_back(*s.slots[r]);
          }
          s.result = tree_sum(ordered);
          const double n = static_cast<double>(s.size);
          for (double& v : s.result.values()) v = v / n;
        });
    // The result stays untouched until this rank arrives at the next round.
    if (s.round_error) throw Error(*s.round_error);
    return s.result;
  }

  void barrier() override { shared_->arrive_and_wait(rank_, nullptr, nullptr); }

 private:
  int rank_;
  std::shared_ptr<InMemoryGroup::Shared> shared_;
};

}  // namespace

InMemoryGroup::InMemoryGroup(int size, std::chrono::milliseconds timeout) : size_(size) {
  if (size < 1) throw Error("worker group needs at least one rank");
  shared_ = std::make_shared<Shared>(size, timeout);
  for (int r = 0; r < size; ++r) members_.push_back(std::make_unique<InMemoryMember>(r, shared_));
}

InMemoryGroup::~InMemoryGroup() = default;

Communicator& InMemoryGroup::member(int rank) {
  if (rank < 0 || rank >= size_) throw Error("rank " + std::to_string(rank) + " outside the group");
  return *members_[rank];
}

std::vector<std::size_t> ring_chunk_sizes(std::size_t length, std::size_t parts) {
  if (parts == 0) throw Error("ring needs at least one part");
  std::vector<std::size_t> sizes(parts, length / parts);
  for (std::size_t i = 0; i < length % parts; ++i) ++sizes[i];
  return sizes;
}

// ---------------------------------------------------------------------------
// Socket ring

namespace {

std::string link_name(int from, int to) { return "link rank " + std::to_string(from) + " -> rank " + std::to_string(to); }

int wait_fd(int fd, short events, std::chrono::milliseconds timeout) {
  pollfd p{fd, events, 0};
  int rc;
  do {
    rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
  } while (rc < 0 && errno == EINTR);
  return rc;
}

void send_all(int fd, const std::uint8_t* data, std::size_t len, std::chrono::milliseconds timeout,
              const std::string& link) {
  while (len > 0) {
    if (wait_fd(fd, POLLOUT, timeout) <= 0) throw Error("send timed out on " + link);
    const ssize_t n = ::send(fd, data, len, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw Error("connection lost on " + link + ": " + std::strerror(errno));
    }
    data += n;
    len -= static_cast<std::size_t>(n);
  }
}

void recv_all(int fd, std::uint8_t* data, std::size_t len, std::chrono::milliseconds timeout,
              const std::string& link) {
  while (len > 0) {
    if (wait_fd(fd, POLLIN, timeout) <= 0) throw Error("receive timed out on " + link);
    const ssize_t n = ::recv(fd, data, len, 0);
    if (n == 0) throw Error("connection lost on " + link + ": peer closed");
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw Error("connection lost on " + link + ": " + std::strerror(errno));
    }
    data += n;
    len -= static_cast<std::size_t>(n);
  }
}

void send_frame(int fd, const wire::Frame& f, std::chrono::milliseconds timeout, const std::string& link) {
  const auto bytes = wire::encode(f);
  send_all(fd, bytes.data(), bytes.size(), timeout, link);
}

wire::Frame recv_frame(int fd, std::chrono::milliseconds timeout, const std::string& link) {
  std::vector<std::uint8_t> buf(wire::kHeaderSize);
  recv_all(fd, buf.data(), buf.size(), timeout, link);
  const auto h = wire::decode_header(buf);
  buf.resize(wire::kHeaderSize + h.payload_len);
  recv_all(fd, buf.data() + wire::kHeaderSize, h.payload_len, timeout, link);
  return wire::decode(buf);
}

sockaddr_in make_addr(const Endpoint& e) {
  sockaddr_in a{};
  a.sin_family = AF_INET;
  a.sin_port = htons(e.port);
  if (::inet_pton(AF_INET, e.host.c_str(), &a.sin_addr) != 1) throw Error("invalid IPv4 address: " + e.host);
  return a;
}

int bind_listener(const Endpoint& e) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw Error(std::string("socket: ") + std::strerror(errno));
  const int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  const auto addr = make_addr(e);
  if (::bind(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd, 4) != 0) {
    const std::string why = std::strerror(errno);
    ::close(fd);
    throw Error("cannot listen on " + e.host + ":" + std::to_string(e.port) + ": " + why);
  }
  return fd;
}

void set_nodelay(int fd) {
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

}  // namespace

SocketCommunicator::SocketCommunicator(const SocketOptions& o)
    : rank_(o.rank), size_(static_cast<int>(o.peers.size())), timeout_(o.timeout) {
  if (size_ < 2) throw Error("socket ring needs at least two ranks");
  if (rank_ < 0 || rank_ >= size_) throw Error("socket rank outside the peer list");
  const int listener = o.listen_fd >= 0 ? o.listen_fd : bind_listener(o.peers[rank_]);

  // Connect to the successor, retrying until its listener is up.
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  const auto target = make_addr(o.peers[next()]);
  while (true) {
    send_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (::connect(send_fd_, reinterpret_cast<const sockaddr*>(&target), sizeof target) == 0) break;
    ::close(send_fd_);
    send_fd_ = -1;
    if (std::chrono::steady_clock::now() > deadline) {
      ::close(listener);
      throw Error("could not connect " + link_name(rank_, next()));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  set_nodelay(send_fd_);

  if (wait_fd(listener, POLLIN, timeout_) <= 0) {
    ::close(listener);
    throw Error("timed out waiting for " + link_name(prev(), rank_));
  }
  recv_fd_ = ::accept(listener, nullptr, nullptr);
  ::close(listener);
  if (recv_fd_ < 0) throw Error("accept failed on " + link_name(prev(), rank_));
  set_nodelay(recv_fd_);
}

SocketCommunicator::~SocketCommunicator() {
  if (send_fd_ >= 0) ::close(send_fd_);
  if (recv_fd_ >= 0) ::close(recv_fd_);
}

Tensor SocketCommunicator::ring_allreduce(const Tensor& contribution) {
  const std::size_t N = static_cast<std::size_t>(size_);
  const auto sizes = ring_chunk_sizes(contribution.size(), N);
  std::vector<std::size_t> offsets(N, 0);
  for (std::size_t i = 1; i < N; ++i) offsets[i] = offsets[i - 1] + sizes[i - 1];

  std::vector<double> buf(contribution.values().begin(), contribution.values().end());
  const std::string out_link = link_name(rank_, next());
  const std::string in_link = link_name(prev(), rank_);

  auto exchange = [&](wire::MessageType type, std::size_t send_chunk, std::size_t recv_chunk) {
    wire::Frame out;
    out.type = type;
    out.rank = static_cast<std::uint16_t>(rank_);
    out.chunk_index = static_cast<std::uint32_t>(send_chunk);
    out.payload.assign(buf.begin() + offsets[send_chunk], buf.begin() + offsets[send_chunk] + sizes[send_chunk]);
    std::exception_ptr send_error;
    std::thread sender([&] {
      try {
        send_frame(send_fd_, out, timeout_, out_link);
      } catch (...) {
        send_error = std::current_exception();
      }
    });
    std::optional<wire::Frame> in;
    std::exception_ptr recv_error;
    try {
      in = recv_frame(recv_fd_, timeout_, in_link);
    } catch (...) {
      recv_error = std::current_exception();
    }
    sender.join();
    if (send_error) std::rethrow_exception(send_error);
    if (recv_error) std::rethrow_exception(recv_error);
    if (in->type != type || in->chunk_index != recv_chunk || in->payload.size() != sizes[recv_chunk] ||
        in->rank != static_cast<std::uint16_t>(prev()))
      throw Error("unexpected frame on " + in_link);
    return std::move(in->payload);
  };

  // Reduce-scatter: afterwards rank r owns the full sum of chunk r+1.
  for (std::size_t s = 0; s + 1 < N; ++s) {
    const std::size_t r = static_cast<std::size_t>(rank_);
    const std::size_t send_chunk = (r + N - s) % N;
    const std::size_t recv_chunk = (r + 2 * N - s - 1) % N;
    const auto incoming = exchange(wire::MessageType::ReduceChunk, send_chunk, recv_chunk);
    for (std::size_t i = 0; i < incoming.size(); ++i) buf[offsets[recv_chunk] + i] += incoming[i];
  }
  // All-gather the reduced chunks.
  for (std::size_t s = 0; s + 1 < N; ++s) {
    const std::size_t r = static_cast<std::size_t>(rank_);
    const std::size_t send_chunk = (r + 1 + N - s) % N;
    const std::size_t recv_chunk = (r + N - s) % N;
    const auto incoming = exchange(wire::MessageType::BroadcastChunk, send_chunk, recv_chunk);
    std::copy(incoming.begin(), incoming.end(), buf.begin() + offsets[recv_chunk]);
  }
  const double n = static_cast<double>(N);
  for (double& v : buf) v = v / n;
  return Tensor(contribution.shape(), std::move(buf));
}

void SocketCommunicator::barrier() {
  // Round 0 proves every rank has entered; round 1 releases them.
  const std::string in_link = link_name(prev(), rank_);
  const std::string out_link = link_name(rank_, next());
  for (std::uint32_t round = 0; round < 2; ++round) {
    wire::Frame token;
    token.type = wire::MessageType::Barrier;
    token.rank = static_cast<std::uint16_t>(rank_);
    token.chunk_index = round;
    if (rank_ == 0) send_frame(send_fd_, token, timeout_, out_link);
    wire::Frame got;
    try {
      got = recv_frame(recv_fd_, timeout_, in_link);
    } catch (const Error& e) {
      throw Error(std::string("barrier: ") + e.what() + " (rank " + std::to_string(prev()) + " absent?)");
    }
    if (got.type != wire::MessageType::Barrier || got.chunk_index != round)
      throw Error("unexpected frame during barrier on " + in_link);
    if (rank_ != 0) send_frame(send_fd_, token, timeout_, out_link);
  }
}

std::vector<std::unique_ptr<SocketCommunicator>> make_local_ring(int size, std::chrono::milliseconds timeout) {
  std::vector<int> listeners;
  std::vector<Endpoint> peers;
  try {
    for (int r = 0; r < size; ++r) {
      listeners.push_back(bind_listener(Endpoint{"127.0.0.1", 0}));
      sockaddr_in a{};
      socklen_t len = sizeof a;
      ::getsockname(listeners.back(), reinterpret_cast<sockaddr*>(&a), &len);
      peers.push_back(Endpoint{"127.0.0.1", ntohs(a.sin_port)});
    }
  } catch (...) {
    for (int fd : listeners) ::close(fd);
    throw;
  }
  std::vector<std::unique_ptr<SocketCommunicator>> comms(size);
  std::vector<std::exception_ptr> errors(size);
  std::vector<std::thread> threads;
  for (int r = 0; r < size; ++r)
    threads.emplace_back([&, r] {
      try {
        comms[r] = std::make_unique<SocketCommunicator>(SocketOptions{r, peers, timeout, listeners[r]});
      } catch (...) {
        errors[r] = std::current_exception();
      }
    });
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return comms;
}

}  // namespace scalelab
