#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gazechair/calibration.hpp"
#include "gazechair/safety.hpp"

namespace gazechair::service {

class ServiceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr unsigned short kDefaultPort = 8765;

// GAZECHAIR_PORT when set and valid, else fallback.
unsigned short port_from_env(unsigned short fallback = kDefaultPort);

struct ServerOptions {
    std::string address = "127.0.0.1";
    unsigned short port = kDefaultPort;  // 0 picks a free port
    safety::World2D world;
};

// REST:
//   GET /world, PUT /world            World2D JSON
//   POST /session                     SimSessionConfig JSON -> {"id": ...}
//   DELETE /session/{id}
//   GET /synth/frame?class=&eye=&scenario=&seed=   generator frame as base64 PNG
// WebSocket /session/{id}/stream: each client event is applied at once and
// answered with one Telemetry record per tick it covers.
class Server {
public:
    explicit Server(ServerOptions options = {});
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    // Binds and serves on a background thread.
    void start();
    // Blocks until stop() is called from elsewhere.
    void wait();
    void stop();
    unsigned short port() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

struct HttpResponse {
    int status = 0;
    std::string body;
};

HttpResponse http_request(const std::string& host, unsigned short port, const std::string& method,
                          const std::string& target, const std::string& body = {});

// Blocking WebSocket client for one session stream.
class StreamClient {
public:
    StreamClient(const std::string& host, unsigned short port, const std::string& session_id);
    ~StreamClient();
    StreamClient(const StreamClient&) = delete;
    StreamClient& operator=(const StreamClient&) = delete;

    void send(const std::string& text);
    // Next text message, or empty once the server has closed the stream.
    std::optional<std::string> receive();
    // Close code and reason sent by the server, once closed.
    int close_code() const;
    std::string close_reason() const;
    void close();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Calibration frames fetched from a running service's generator endpoint.
class ServiceSource : public calibration::FrameSource {
public:
    ServiceSource(std::string host, unsigned short port, std::uint64_t user_seed);
    std::vector<calibration::SourcedFrame> capture(GazeClass requested, const corpus::ScenarioTag& scenario,
                                                   int attempt, int count) override;
    std::string describe() const override;

private:
    std::string host_;
    unsigned short port_;
    std::uint64_t user_seed_;
};

}  // namespace gazechair::service
