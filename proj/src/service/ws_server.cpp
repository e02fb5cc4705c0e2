#include "livetalk/ws_server.hpp"

#include <atomic>
#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/post.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <deque>

namespace livetalk {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

// All socket work happens on the single io thread; send() and close() may be
// called from session lanes and only post to it.
class Connection final : public ClientLink, public std::enable_shared_from_this<Connection> {
 public:
  Connection(tcp::socket socket, Service& service, std::size_t limit)
      : ws_(std::move(socket)), service_(service), limit_(limit) {}

  void start() {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->read();
    });
  }

  bool send(std::string frame) override {
    if (closed_) return false;
    if (queued_.fetch_add(1) >= limit_) {
      --queued_;
      return false;
    }
    asio::post(ws_.get_executor(), [self = shared_from_this(), f = std::move(frame)]() mutable {
      self->outbox_.push_back(std::move(f));
      if (self->outbox_.size() == 1) self->write();
    });
    return true;
  }

  void close() override {
    if (closed_.exchange(true)) return;
    asio::post(ws_.get_executor(), [self = shared_from_this()] {
      beast::error_code ec;
      ws_next_layer_close(self->ws_, ec);
    });
  }

 private:
  static void ws_next_layer_close(websocket::stream<tcp::socket>& ws, beast::error_code& ec) {
    ws.next_layer().shutdown(tcp::socket::shutdown_both, ec);
    ws.next_layer().close(ec);
  }

  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        self->service_.disconnect(self);
        return;
      }
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->service_.handle(self, text);
      self->read();
    });
  }

  void write() {
    ws_.text(true);
    ws_.async_write(asio::buffer(outbox_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->outbox_.pop_front();
      --self->queued_;
      if (ec) {
        self->outbox_.clear();
        return;
      }
      if (!self->outbox_.empty()) self->write();
    });
  }

  websocket::stream<tcp::socket> ws_;
  Service& service_;
  std::size_t limit_;
  beast::flat_buffer buffer_;
  std::deque<std::string> outbox_;
  std::atomic<std::size_t> queued_{0};
  std::atomic<bool> closed_{false};
};

}  // namespace

struct WebSocketServer::Impl {
  Impl(Service& s, std::size_t limit) : service(s), acceptor(io), client_buffer(limit) {}

  void accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) {
        if (ec == asio::error::operation_aborted) return;
      } else {
        std::make_shared<Connection>(std::move(socket), service, client_buffer)->start();
      }
      accept();
    });
  }

  Service& service;
  asio::io_context io{1};
  tcp::acceptor acceptor;
  std::size_t client_buffer;
};

WebSocketServer::WebSocketServer(Service& service, const std::string& host, unsigned short port,
                                 std::size_t client_buffer)
    : impl_(std::make_unique<Impl>(service, client_buffer)) {
  beast::error_code ec;
  const auto address = asio::ip::make_address(host, ec);
  if (ec) throw Error("invalid bind address '" + host + "': " + ec.message());
  const tcp::endpoint endpoint(address, port);
  impl_->acceptor.open(endpoint.protocol(), ec);
  if (!ec) impl_->acceptor.set_option(asio::socket_base::reuse_address(true), ec);
  if (!ec) impl_->acceptor.bind(endpoint, ec);
  if (!ec) impl_->acceptor.listen(asio::socket_base::max_listen_connections, ec);
  if (ec) throw Error("cannot listen on " + host + ":" + std::to_string(port) + ": " + ec.message());
  impl_->accept();
}

WebSocketServer::~WebSocketServer() { stop(); }

unsigned short WebSocketServer::port() const { return impl_->acceptor.local_endpoint().port(); }

void WebSocketServer::run() { impl_->io.run(); }

void WebSocketServer::start() {
  thread_ = std::thread([this] { run(); });
}

void WebSocketServer::stop() {
  impl_->io.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace livetalk
