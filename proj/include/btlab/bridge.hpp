#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <thread>

#include "btlab/session.hpp"
#include "btlab/snoop.hpp"

namespace btlab::capture {

// Replicates the two localhost debug ports: the out port streams every
// HCI packet crossing the session as a snoop stream (16-byte header once,
// then records), the in port accepts the same framing and injects each
// contained command into the session.
class BridgeServer {
 public:
  // Port 0 binds an ephemeral port; the bound values are readable after
  // start(). Throws Error{BindFailure}.
  BridgeServer(core::Session& session, uint16_t out_port = 8872,
               uint16_t in_port = 8873);
  ~BridgeServer();

  void start();
  void stop();
  uint16_t out_port() const { return out_port_; }
  uint16_t in_port() const { return in_port_; }
  size_t client_count();

 private:
  void serve();
  void broadcast(ByteView bytes);

  struct OutClient {
    int fd = -1;
    Bytes backlog;
  };

  core::Session& session_;
  uint16_t out_port_;
  uint16_t in_port_;
  int out_listen_fd_ = -1;
  int in_listen_fd_ = -1;
  size_t sink_id_ = 0;

  std::mutex mutex_;
  std::vector<OutClient> out_clients_;
  struct InClient {
    int fd = -1;
    snoop::StreamReader reader;
  };
  std::vector<InClient> in_clients_;

  std::thread thread_;
  std::atomic<bool> running_{false};
};

// Client side of the bridge, usable as a session transport: commands go
// out through the in port, events come back on the out-port stream.
class BridgeClientTransport : public core::Transport {
 public:
  BridgeClientTransport(const std::string& host, uint16_t out_port,
                        uint16_t in_port);
  ~BridgeClientTransport() override;

  std::vector<hci::HciEvent> issue(const hci::HciCommand& cmd) override;
  std::vector<hci::HciEvent> drain_events() override;
  uint64_t now_us() override { return last_timestamp_us_; }
  bool echoes_traffic() const override { return true; }

 private:
  void pump(int timeout_ms);

  int out_fd_ = -1;
  int in_fd_ = -1;
  bool in_header_sent_ = false;
  snoop::StreamReader reader_;
  std::vector<hci::HciEvent> stash_;
  uint64_t last_timestamp_us_ = 0;
};

}  // namespace btlab::capture
