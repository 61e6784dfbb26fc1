#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "scalelab/numerics.hpp"

namespace scalelab {

enum class Transport { InMemory, Socket };

inline constexpr std::chrono::milliseconds kDefaultCollectiveTimeout{30000};

/// One rank's handle onto a worker group. Collectives must be called exactly
/// once per rank per round, from one thread per rank.
class Communicator {
 public:
  virtual ~Communicator() = default;
  virtual int rank() const = 0;
  virtual int size() const = 0;
  virtual Transport transport() const = 0;
  /// Elementwise mean of every rank's contribution, delivered to all ranks.
  virtual Tensor allreduce_mean(const Tensor& contribution) = 0;
  virtual void barrier() = 0;
};

/// Threads in one process. The reduction is tree_sum over contributions in
/// rank order divided by N, so every rank receives bitwise the same tensor no
/// matter the arrival order.
class InMemoryGroup {
 public:
  explicit InMemoryGroup(int size, std::chrono::milliseconds timeout = kDefaultCollectiveTimeout);
  ~InMemoryGroup();
  InMemoryGroup(const InMemoryGroup&) = delete;
  InMemoryGroup& operator=(const InMemoryGroup&) = delete;

  int size() const noexcept { return size_; }
  Communicator& member(int rank);

  struct Shared;

 private:
  int size_;
  std::shared_ptr<Shared> shared_;
  std::vector<std::unique_ptr<Communicator>> members_;
};

/// Chunk lengths used by the ring: the first (len % N) chunks get one extra element.
std::vector<std::size_t> ring_chunk_sizes(std::size_t length, std::size_t parts);

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

struct SocketOptions {
  int rank = 0;
  std::vector<Endpoint> peers;  // index = rank; each rank listens on its own endpoint
  std::chrono::milliseconds timeout = kDefaultCollectiveTimeout;
  int listen_fd = -1;           // already-bound listening socket, or -1 to bind peers[rank]
};

/// Ring over TCP: rank r sends to r+1 and receives from r-1 (mod N). Nobody
/// announces themselves; the only inbound connection a rank accepts is from
/// its predecessor.
class SocketCommunicator final : public Communicator {
 public:
  explicit SocketCommunicator(const SocketOptions& options);
  ~SocketCommunicator() override;
  SocketCommunicator(const SocketCommunicator&) = delete;
  SocketCommunicator& operator=(const SocketCommunicator&) = delete;

  int rank() const override { return rank_; }
  int size() const override { return size_; }
  Transport transport() const override { return Transport::Socket; }

  /// Reduce-scatter then all-gather around the ring, divided by N. Matches
  /// the in-memory reduction to rounding, not bitwise.
  Tensor ring_allreduce(const Tensor& contribution);
  Tensor allreduce_mean(const Tensor& contribution) override { return ring_allreduce(contribution); }
  void barrier() override;

 private:
  int next() const { return (rank_ + 1) % size_; }
  int prev() const { return (rank_ + size_ - 1) % size_; }

  int rank_;
  int size_;
  std::chrono::milliseconds timeout_;
  int send_fd_ = -1;
  int recv_fd_ = -1;
};

/// Binds one loopback listener per rank on an ephemeral port and connects the
/// ring; returns the communicators indexed by rank.
std::vector<std::unique_ptr<SocketCommunicator>> make_local_ring(
    int size, std::chrono::milliseconds timeout = kDefaultCollectiveTimeout);

}  // namespace scalelab
