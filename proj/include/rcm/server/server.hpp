#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "rcm/server/control_core.hpp"

namespace rcm::server {

namespace asio = boost::asio;
namespace beast = boost::beast;
using tcp = asio::ip::tcp;

struct ServerOptions {
  std::string bind_address = "127.0.0.1";
  std::size_t max_queued_snapshots = 32;  // per connection; older ones are dropped
  std::size_t max_queued_messages = 4096;  // per connection; beyond this the peer is cut off
  std::size_t max_line_bytes = 1 << 20;
  int socket_send_buffer = 0;  // SO_SNDBUF for accepted sockets, 0 = system default
  bool record_from_start = false;
};

namespace detail {

struct Event {
  enum class Kind { connect, disconnect, message } kind;
  ConnectionId id;
  std::string text;
};

class Inbox {
 public:
  void push(Event e) {
    {
      std::lock_guard lock(mu_);
      events_.push_back(std::move(e));
    }
    cv_.notify_one();
  }

  std::vector<Event> drain() {
    std::lock_guard lock(mu_);
    std::vector<Event> out(std::make_move_iterator(events_.begin()), std::make_move_iterator(events_.end()));
    events_.clear();
    return out;
  }

  template <typename Clock, typename Dur>
  void wait_until(const std::chrono::time_point<Clock, Dur>& deadline, const std::atomic<bool>& stop) {
    std::unique_lock lock(mu_);
    cv_.wait_until(lock, deadline, [&] { return stop.load(); });
  }

  void wait_for_event(const std::atomic<bool>& stop) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return stop.load() || !events_.empty(); });
  }

  void wake() {
    { std::lock_guard lock(mu_); }
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Event> events_;
};

class Connection;

/// State shared between the server object, its connections and the control thread.
struct Hub {
  asio::io_context& io;
  ServerOptions opts;
  Inbox inbox;
  std::mutex mu;
  std::map<ConnectionId, std::weak_ptr<Connection>> conns;
  std::atomic<ConnectionId> next_id{1};
  std::atomic<std::uint64_t> dropped_snapshots{0};
  std::atomic<std::uint64_t> disconnected_slow{0};

  explicit Hub(asio::io_context& ctx, ServerOptions o) : io(ctx), opts(std::move(o)) {}
};

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(Hub& hub) : hub_(hub), id_(hub.next_id++) {}
  virtual ~Connection() = default;

  ConnectionId id() const { return id_; }

  /// Safe to call from any thread.
  void deliver(std::string text, bool droppable) {
    asio::post(hub_.io, [self = shared_from_this(), text = std::move(text), droppable]() mutable {
      self->enqueue(std::move(text), droppable);
    });
  }

  void close() {
    if (closed_) {
      return;
    }
    closed_ = true;
    close_transport();
    {
      std::lock_guard lock(hub_.mu);
      hub_.conns.erase(id_);
    }
    if (registered_) {
      hub_.inbox.push({Event::Kind::disconnect, id_, {}});
    }
  }

 protected:
  void registered() {
    {
      std::lock_guard lock(hub_.mu);
      hub_.conns[id_] = weak_from_this();
    }
    registered_ = true;
    hub_.inbox.push({Event::Kind::connect, id_, {}});
  }

  void received(std::string text) {
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) {
      text.pop_back();
    }
    if (!text.empty()) {
      hub_.inbox.push({Event::Kind::message, id_, std::move(text)});
    }
  }

  void written(const boost::system::error_code& ec) {
    writing_ = false;
    if (ec) {
      close();
      return;
    }
    queue_.pop_front();
    pump();
  }

  const std::string& front() const { return queue_.front().first; }

  virtual void write_front() = 0;
  virtual void close_transport() = 0;

  Hub& hub_;

 private:
  void enqueue(std::string text, bool droppable) {
    if (closed_ || !registered_) {
      return;
    }
    if (droppable) {
      std::size_t snapshots = 0;
      for (std::size_t i = writing_ ? 1 : 0; i < queue_.size(); ++i) {
        snapshots += queue_[i].second ? 1 : 0;
      }
      if (snapshots >= hub_.opts.max_queued_snapshots) {
        for (std::size_t i = writing_ ? 1 : 0; i < queue_.size(); ++i) {
          if (queue_[i].second) {
            queue_.erase(queue_.begin() + static_cast<std::ptrdiff_t>(i));
            ++hub_.dropped_snapshots;
            break;
          }
        }
      }
    } else if (queue_.size() >= hub_.opts.max_queued_messages) {
      ++hub_.disconnected_slow;
      close();
      return;
    }
    queue_.emplace_back(std::move(text), droppable);
    pump();
  }

  void pump() {
    if (writing_ || queue_.empty() || closed_) {
      return;
    }
    writing_ = true;
    write_front();
  }

  ConnectionId id_;
  std::deque<std::pair<std::string, bool>> queue_;
  bool writing_ = false;
  bool closed_ = false;
  bool registered_ = false;
};

inline void tune_socket(tcp::socket& s, const ServerOptions& opts) {
  boost::system::error_code ec;
  s.set_option(tcp::no_delay(true), ec);
  if (opts.socket_send_buffer > 0) {
    s.set_option(asio::socket_base::send_buffer_size(opts.socket_send_buffer), ec);
  }
}

/// Newline-delimited JSON over a plain TCP stream.
class TcpConnection final : public Connection {
 public:
  TcpConnection(Hub& hub, tcp::socket socket)
      : Connection(hub), socket_(std::move(socket)), buffer_(hub.opts.max_line_bytes) {}

  void start() {
    registered();
    read();
  }

 private:
  void read() {
    asio::async_read_until(socket_, buffer_, '\n',
                           [self = std::static_pointer_cast<TcpConnection>(shared_from_this())](
                               const boost::system::error_code& ec, std::size_t n) {
                             if (ec) {
                               self->close();
                               return;
                             }
                             std::string line(asio::buffers_begin(self->buffer_.data()),
                                              asio::buffers_begin(self->buffer_.data()) +
                                                  static_cast<std::ptrdiff_t>(n));
                             self->buffer_.consume(n);
                             self->received(std::move(line));
                             self->read();
                           });
  }

  void write_front() override {
    static const char kNewline = '\n';
    std::array<asio::const_buffer, 2> bufs{asio::buffer(front()), asio::buffer(&kNewline, 1)};
    asio::async_write(socket_, bufs,
                      [self = shared_from_this(), this](const boost::system::error_code& ec, std::size_t) {
                        written(ec);
                      });
  }

  void close_transport() override {
    boost::system::error_code ec;
    socket_.shutdown(tcp::socket::shutdown_both, ec);
    socket_.close(ec);
  }

  tcp::socket socket_;
  asio::streambuf buffer_;
};

/// The same JSON payloads, one per WebSocket text frame, served at /ws.
class WsConnection final : public Connection {
 public:
  WsConnection(Hub& hub, tcp::socket socket) : Connection(hub), stream_(std::move(socket)) {}

  void start() {
    beast::http::async_read(stream_, http_buffer_, request_,
                            [self = self()](const beast::error_code& ec, std::size_t) {
                              if (ec) {
                                self->close();
                                return;
                              }
                              self->on_request();
                            });
  }

 private:
  std::shared_ptr<WsConnection> self() { return std::static_pointer_cast<WsConnection>(shared_from_this()); }

  void on_request() {
    namespace http = beast::http;
    if (!beast::websocket::is_upgrade(request_) || request_.target() != "/ws") {
      auto res = std::make_shared<http::response<http::string_body>>(http::status::not_found, request_.version());
      res->set(http::field::content_type, "text/plain");
      res->body() = "websocket endpoint is /ws\n";
      res->prepare_payload();
      res->keep_alive(false);
      http::async_write(stream_, *res, [self = self(), res](const beast::error_code&, std::size_t) {
        self->close();
      });
      return;
    }
    ws_.emplace(std::move(stream_));
    ws_->set_option(beast::websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_->read_message_max(hub_.opts.max_line_bytes);
    ws_->async_accept(request_, [self = self()](const beast::error_code& ec) {
      if (ec) {
        self->close();
        return;
      }
      self->registered();
      self->read();
    });
  }

  void read() {
    ws_->async_read(ws_buffer_, [self = self()](const beast::error_code& ec, std::size_t) {
      if (ec) {
        self->close();
        return;
      }
      std::string text = beast::buffers_to_string(self->ws_buffer_.data());
      self->ws_buffer_.consume(self->ws_buffer_.size());
      self->received(std::move(text));
      self->read();
    });
  }

  void write_front() override {
    ws_->text(true);
    ws_->async_write(asio::buffer(front()),
                     [self = shared_from_this(), this](const beast::error_code& ec, std::size_t) { written(ec); });
  }

  void close_transport() override {
    beast::error_code ec;
    auto& sock = ws_ ? beast::get_lowest_layer(*ws_).socket() : stream_.socket();
    sock.shutdown(tcp::socket::shutdown_both, ec);
    sock.close(ec);
  }

  beast::tcp_stream stream_;
  std::optional<beast::websocket::stream<beast::tcp_stream>> ws_;
  beast::flat_buffer http_buffer_;
  beast::flat_buffer ws_buffer_;
  beast::http::request<beast::http::string_body> request_;
};

}  // namespace detail

/// Control server: one control-loop thread owning a ControlCore, one I/O
/// thread serving the TCP and WebSocket endpoints.
class ControlServer {
 public:
  ControlServer(Config cfg, ServerOptions opts = {})
      : hub_(io_, opts), core_(std::move(cfg), CoreOptions{opts.record_from_start}) {}

  ControlServer(const ControlServer&) = delete;
  ControlServer& operator=(const ControlServer&) = delete;
  ~ControlServer() { stop(); }

  /// Binds both ports (0 picks a free one) and starts serving.
  void start() {
    const auto address = asio::ip::make_address(hub_.opts.bind_address);
    tcp_acceptor_ = open(tcp::endpoint(address, static_cast<unsigned short>(core_.config().server.tcp_port)));
    ws_acceptor_ = open(tcp::endpoint(address, static_cast<unsigned short>(core_.config().server.ws_port)));
    accept_tcp();
    accept_ws();
    running_ = true;
    io_thread_ = std::thread([this] { io_.run(); });
    control_thread_ = std::thread([this] { control_loop(); });
  }

  void stop() {
    if (!running_) {
      return;
    }
    running_ = false;
    stop_ = true;
    hub_.inbox.wake();
    control_thread_.join();
    asio::post(io_, [this] {
      boost::system::error_code ec;
      tcp_acceptor_->close(ec);
      ws_acceptor_->close(ec);
      std::vector<std::shared_ptr<detail::Connection>> live;
      {
        std::lock_guard lock(hub_.mu);
        for (auto& [id, weak] : hub_.conns) {
          if (auto c = weak.lock()) live.push_back(std::move(c));
        }
      }
      for (auto& c : live) c->close();
      work_.reset();
    });
    io_thread_.join();
  }

  unsigned short tcp_port() const { return tcp_acceptor_->local_endpoint().port(); }
  unsigned short ws_port() const { return ws_acceptor_->local_endpoint().port(); }
  std::uint64_t ticks() const { return ticks_.load(); }
  std::uint64_t dropped_snapshots() const { return hub_.dropped_snapshots.load(); }
  std::uint64_t slow_disconnects() const { return hub_.disconnected_slow.load(); }
  bool running() const { return running_; }

  /// Only valid while the server is stopped.
  const ControlCore& core() const { return core_; }

 private:
  std::optional<tcp::acceptor> open(const tcp::endpoint& ep) {
    std::optional<tcp::acceptor> acc(std::in_place, io_);
    try {
      acc->open(ep.protocol());
      acc->set_option(asio::socket_base::reuse_address(true));
      acc->bind(ep);
      acc->listen();
    } catch (const boost::system::system_error& e) {
      throw Error(Errc::io_failure, "cannot listen on " + ep.address().to_string() + ":" +
                                        std::to_string(ep.port()) + ": " + e.what());
    }
    return acc;
  }

  void accept_tcp() {
    tcp_acceptor_->async_accept([this](const boost::system::error_code& ec, tcp::socket socket) {
      if (ec == asio::error::operation_aborted) {
        return;
      }
      if (!ec) {
        detail::tune_socket(socket, hub_.opts);
        std::make_shared<detail::TcpConnection>(hub_, std::move(socket))->start();
      }
      accept_tcp();
    });
  }

  void accept_ws() {
    ws_acceptor_->async_accept([this](const boost::system::error_code& ec, tcp::socket socket) {
      if (ec == asio::error::operation_aborted) {
        return;
      }
      if (!ec) {
        detail::tune_socket(socket, hub_.opts);
        std::make_shared<detail::WsConnection>(hub_, std::move(socket))->start();
      }
      accept_ws();
    });
  }

  void drain_inbox() {
    for (auto& e : hub_.inbox.drain()) {
      switch (e.kind) {
        case detail::Event::Kind::connect: core_.on_connect(e.id); break;
        case detail::Event::Kind::disconnect: core_.on_disconnect(e.id); break;
        case detail::Event::Kind::message: core_.on_message(e.id, e.text); break;
      }
    }
  }

  void flush_outbox() {
    std::vector<Outgoing> out = core_.take_outbox();
    if (out.empty()) {
      return;
    }
    std::map<ConnectionId, std::shared_ptr<detail::Connection>> targets;
    {
      std::lock_guard lock(hub_.mu);
      for (const Outgoing& m : out) {
        if (targets.count(m.to) == 0) {
          auto it = hub_.conns.find(m.to);
          targets[m.to] = it == hub_.conns.end() ? nullptr : it->second.lock();
        }
      }
    }
    for (Outgoing& m : out) {
      if (auto& c = targets[m.to]) {
        c->deliver(std::move(m.text), m.droppable);
      }
    }
  }

  void control_loop() {
    using clock = std::chrono::steady_clock;
    const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(core_.config().sim.dt));
    auto next = clock::now();
    while (!stop_) {
      if (core_.test_mode()) {
        hub_.inbox.wait_for_event(stop_);
        drain_inbox();
      } else {
        drain_inbox();
        core_.tick();
        next += period;
        const auto now = clock::now();
        if (now - next > 50 * period) {
          next = now;  // fell far behind; do not try to catch up in a burst
        }
      }
      ticks_ = core_.state().tick;
      flush_outbox();
      if (!core_.test_mode()) {
        hub_.inbox.wait_until(next, stop_);
      }
    }
  }

  asio::io_context io_;
  std::optional<asio::executor_work_guard<asio::io_context::executor_type>> work_{asio::make_work_guard(io_)};
  detail::Hub hub_;
  ControlCore core_;
  std::optional<tcp::acceptor> tcp_acceptor_;
  std::optional<tcp::acceptor> ws_acceptor_;
  std::thread io_thread_;
  std::thread control_thread_;
  std::atomic<bool> stop_{false};
  std::atomic<std::uint64_t> ticks_{0};
  bool running_ = false;
};

}  // namespace rcm::server
