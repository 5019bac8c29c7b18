#include "gazechair/service.hpp"

#include <sys/socket.h>

#include <atomic>
#include <charconv>
#include <condition_variable>
#include <cstdlib>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <nlohmann/json.hpp>

#include "gazechair/app.hpp"
#include "gazechair/png_io.hpp"
#include "gazechair/rng.hpp"

namespace gazechair::service {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace asio = boost::asio;
using tcp = asio::ip::tcp;

unsigned short port_from_env(unsigned short fallback) {
    const char* v = std::getenv("GAZECHAIR_PORT");
    if (v == nullptr) return fallback;
    unsigned value = 0;
    const std::string_view s(v);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size() || value == 0 || value > 65535) return fallback;
    return static_cast<unsigned short>(value);
}

namespace {

struct Session {
    std::mutex mutex;
    app::Simulation sim;
    bool closed = false;
    explicit Session(app::Simulation s) : sim(std::move(s)) {}
};

std::vector<std::string> split_path(std::string_view target) {
    std::vector<std::string> parts;
    std::size_t i = 0;
    while (i < target.size()) {
        if (target[i] == '/') {
            ++i;
            continue;
        }
        const std::size_t j = target.find('/', i);
        parts.emplace_back(target.substr(i, j == std::string_view::npos ? std::string_view::npos : j - i));
        if (j == std::string_view::npos) break;
        i = j;
    }
    return parts;
}

// Plain key=value pairs; values here are identifiers and integers.
std::map<std::string, std::string> parse_query(std::string_view q) {
    std::map<std::string, std::string> out;
    while (!q.empty()) {
        const std::size_t amp = q.find('&');
        const std::string_view pair = q.substr(0, amp);
        const std::size_t eq = pair.find('=');
        if (!pair.empty()) {
            out[std::string(pair.substr(0, eq))] = eq == std::string_view::npos ? "" : std::string(pair.substr(eq + 1));
        }
        if (amp == std::string_view::npos) break;
        q.remove_prefix(amp + 1);
    }
    return out;
}

using Request = http::request<http::string_body>;
using Response = http::response<http::string_body>;

Response make_response(const Request& req, http::status status, std::string body,
                       std::string_view content_type = "application/json") {
    Response res{status, req.version()};
    res.set(http::field::server, "gazechair");
    res.set(http::field::access_control_allow_origin, "*");
    if (!body.empty()) res.set(http::field::content_type, std::string(content_type));
    res.keep_alive(req.keep_alive());
    res.body() = std::move(body);
    res.prepare_payload();
    return res;
}

Response error_response(const Request& req, http::status status, const std::string& message) {
    return make_response(req, status, nlohmann::json{{"error", message}}.dump());
}

}  // namespace

struct Server::Impl {
    ServerOptions options;
    asio::io_context ioc;
    std::unique_ptr<tcp::acceptor> acceptor;
    std::thread accept_thread;
    std::atomic<bool> stopping{false};
    unsigned short bound_port = 0;

    std::mutex conn_mutex;
    struct Connection {
        std::thread thread;
        std::shared_ptr<std::atomic<bool>> done;
    };
    std::vector<Connection> connections;
    std::set<int> open_fds;

    std::mutex state_mutex;
    safety::World2D world;
    std::map<std::string, std::shared_ptr<Session>> sessions;
    std::uint64_t next_id = 1;

    std::mutex wait_mutex;
    std::condition_variable wait_cv;
    bool stopped = false;

    void accept_loop() {
        for (;;) {
            tcp::socket socket(ioc);
            beast::error_code ec;
            acceptor->accept(socket, ec);
            if (stopping) return;
            if (ec) continue;
            std::lock_guard lock(conn_mutex);
            reap();
            open_fds.insert(socket.native_handle());
            auto done = std::make_shared<std::atomic<bool>>(false);
            connections.push_back({std::thread([this, done, s = std::move(socket)]() mutable {
                                       serve(std::move(s));
                                       *done = true;
                                   }),
                                   done});
        }
    }

    // Joins finished connection threads; conn_mutex held.
    void reap() {
        std::erase_if(connections, [](Connection& c) {
            if (!*c.done) return false;
            c.thread.join();
            return true;
        });
    }

    void serve(tcp::socket socket) {
        const int fd = socket.native_handle();
        beast::error_code ec;
        beast::flat_buffer buffer;
        for (;;) {
            Request req;
            http::read(socket, buffer, req, ec);
            if (ec) break;
            if (websocket::is_upgrade(req)) {
                stream(std::move(socket), std::move(req));
                break;
            }
            Response res = handle(req);
            http::write(socket, res, ec);
            if (ec || !res.keep_alive()) break;
        }
        socket.shutdown(tcp::socket::shutdown_both, ec);
        std::lock_guard lock(conn_mutex);
        open_fds.erase(fd);
    }

    std::shared_ptr<Session> find_session(const std::string& id) {
        std::lock_guard lock(state_mutex);
        const auto it = sessions.find(id);
        return it == sessions.end() ? nullptr : it->second;
    }

    void stream(tcp::socket socket, Request req) {
        const std::string_view target(req.target().data(), req.target().size());
        const auto parts = split_path(target.substr(0, target.find('?')));
        std::shared_ptr<Session> session;
        if (parts.size() == 3 && parts[0] == "session" && parts[2] == "stream") session = find_session(parts[1]);
        beast::error_code ec;
        if (!session) {
            Response res = error_response(req, http::status::not_found, "unknown session");
            res.keep_alive(false);
            http::write(socket, res, ec);
            return;
        }
        websocket::stream<tcp::socket> ws(std::move(socket));
        ws.accept(req, ec);
        if (ec) return;
        ws.text(true);
        for (;;) {
            beast::flat_buffer buf;
            ws.read(buf, ec);
            if (ec) return;
            const std::string text = beast::buffers_to_string(buf.data());
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(text);
            } catch (const nlohmann::json::parse_error& e) {
                ws.close(websocket::close_reason(websocket::close_code::bad_payload, "malformed JSON"), ec);
                drain(ws);
                return;
            }
            std::vector<std::string> replies;
            {
                std::lock_guard lock(session->mutex);
                if (session->closed) {
                    ws.close(websocket::close_reason(websocket::close_code::going_away, "session deleted"), ec);
                    drain(ws);
                    return;
                }
                try {
                    for (const auto& t : session->sim.apply(app::parse_event(j))) replies.push_back(app::telemetry_line(t));
                } catch (const app::AppError& e) {
                    replies.push_back(nlohmann::json{{"error", e.what()}}.dump());
                }
            }
            for (const auto& r : replies) {
                ws.write(asio::buffer(r), ec);
                if (ec) return;
            }
        }
    }

    // Waits for the peer's close frame after we initiated the close.
    static void drain(websocket::stream<tcp::socket>& ws) {
        beast::error_code ec;
        for (;;) {
            beast::flat_buffer b;
            ws.read(b, ec);
            if (ec) return;
        }
    }

    Response handle(const Request& req) {
        const std::string_view target(req.target().data(), req.target().size());
        const std::size_t qpos = target.find('?');
        const auto parts = split_path(target.substr(0, qpos));
        const auto query = parse_query(qpos == std::string_view::npos ? std::string_view{} : target.substr(qpos + 1));
        const auto method = req.method();

        if (method == http::verb::options) {
            Response res = make_response(req, http::status::no_content, "");
            res.set(http::field::access_control_allow_methods, "GET, PUT, POST, DELETE, OPTIONS");
            res.set(http::field::access_control_allow_headers, "Content-Type");
            return res;
        }
        try {
            if (parts.size() == 1 && parts[0] == "world") {
                if (method == http::verb::get) {
                    std::lock_guard lock(state_mutex);
                    return make_response(req, http::status::ok, safety::world_to_json(world).dump());
                }
                if (method == http::verb::put) return put_world(req);
                return error_response(req, http::status::method_not_allowed, "use GET or PUT");
            }
            if (parts.size() == 1 && parts[0] == "session") {
                if (method == http::verb::post) return post_session(req);
                return error_response(req, http::status::method_not_allowed, "use POST");
            }
            if (parts.size() == 2 && parts[0] == "session") {
                if (method != http::verb::delete_) return error_response(req, http::status::method_not_allowed, "use DELETE");
                std::shared_ptr<Session> s;
                {
                    std::lock_guard lock(state_mutex);
                    const auto it = sessions.find(parts[1]);
                    if (it == sessions.end()) return error_response(req, http::status::not_found, "unknown session");
                    s = it->second;
                    sessions.erase(it);
                }
                std::lock_guard lock(s->mutex);
                s->closed = true;
                return make_response(req, http::status::no_content, "");
            }
            if (parts.size() == 3 && parts[0] == "session" && parts[2] == "stream") {
                if (!find_session(parts[1])) return error_response(req, http::status::not_found, "unknown session");
                return error_response(req, http::status::upgrade_required, "WebSocket upgrade required");
            }
            if (parts.size() == 2 && parts[0] == "synth" && parts[1] == "frame") {
                if (method != http::verb::get) return error_response(req, http::status::method_not_allowed, "use GET");
                return synth(req, query);
            }
        } catch (const std::exception& e) {
            return error_response(req, http::status::bad_request, e.what());
        }
        return error_response(req, http::status::not_found, "no such resource");
    }

    Response put_world(const Request& req) {
        safety::World2D w;
        try {
            w = safety::world_from_json(nlohmann::json::parse(req.body()));
            w.validate();
        } catch (const std::exception& e) {
            return error_response(req, http::status::bad_request, e.what());
        }
        std::vector<std::shared_ptr<Session>> live;
        {
            std::lock_guard lock(state_mutex);
            world = w;
            for (auto& [id, s] : sessions) live.push_back(s);
        }
        for (auto& s : live) {
            std::lock_guard lock(s->mutex);
            s->sim.set_world(w);
        }
        return make_response(req, http::status::ok, safety::world_to_json(w).dump());
    }

    Response post_session(const Request& req) {
        app::SimSessionConfig config;
        try {
            const nlohmann::json j = req.body().empty() ? nlohmann::json::object() : nlohmann::json::parse(req.body());
            config = app::sim_config_from_json(j);
        } catch (const std::exception& e) {
            return error_response(req, http::status::bad_request, e.what());
        }
        safety::World2D w;
        {
            std::lock_guard lock(state_mutex);
            w = world;
        }
        std::shared_ptr<Session> session;
        try {
            app::Simulation sim = app::Simulation::from_config(config);
            if (config.world.empty()) sim.set_world(w);
            session = std::make_shared<Session>(std::move(sim));
        } catch (const std::exception& e) {
            return error_response(req, http::status::bad_request, e.what());
        }
        std::string id;
        {
            std::lock_guard lock(state_mutex);
            id = "s" + std::to_string(next_id++);
            sessions[id] = session;
        }
        return make_response(req, http::status::created,
                             nlohmann::json{{"id", id}, {"config", app::sim_config_to_json(config)}}.dump());
    }

    Response synth(const Request& req, const std::map<std::string, std::string>& q) {
        auto get = [&](const char* key, const char* fallback) {
            const auto it = q.find(key);
            return it == q.end() ? std::string(fallback) : it->second;
        };
        const auto c = parse_gaze_class(get("class", ""));
        if (!c) return error_response(req, http::status::bad_request, "query needs class=right|forward|left|closed");
        const std::string eye = get("eye", "left");
        if (eye != "left" && eye != "right") return error_response(req, http::status::bad_request, "eye must be left or right");
        const corpus::ScenarioTag scenario = corpus::parse_scenario_name(get("scenario", "indoor_nominal"));
        const std::string seed_text = get("seed", "0");
        std::uint64_t seed = 0;
        const auto [ptr, ec] = std::from_chars(seed_text.data(), seed_text.data() + seed_text.size(), seed);
        if (ec != std::errc() || ptr != seed_text.data() + seed_text.size()) {
            return error_response(req, http::status::bad_request, "seed must be an unsigned integer");
        }
        const EyeSide side = eye == "left" ? EyeSide::Left : EyeSide::Right;
        const EyeFrame f = app::synth_frame(*c, side, scenario, seed);
        nlohmann::json j{{"class", to_string(*c)},
                         {"eye", eye},
                         {"scenario", corpus::scenario_name(scenario)},
                         {"seed", seed},
                         {"png", base64_encode(encode_png(f.image))}};
        return make_response(req, http::status::ok, j.dump());
    }
};

Server::Server(ServerOptions options) : impl_(std::make_unique<Impl>()) {
    options.world.validate();
    impl_->world = options.world;
    impl_->options = std::move(options);
}

Server::~Server() { stop(); }

void Server::start() {
    auto& m = *impl_;
    if (m.acceptor) throw ServiceError("server already started");
    beast::error_code ec;
    const auto address = asio::ip::make_address(m.options.address, ec);
    if (ec) throw ServiceError("bad address " + m.options.address);
    m.acceptor = std::make_unique<tcp::acceptor>(m.ioc);
    const tcp::endpoint ep(address, m.options.port);
    m.acceptor->open(ep.protocol(), ec);
    if (!ec) m.acceptor->set_option(asio::socket_base::reuse_address(true), ec);
    if (!ec) m.acceptor->bind(ep, ec);
    if (!ec) m.acceptor->listen(asio::socket_base::max_listen_connections, ec);
    if (ec) throw ServiceError("cannot listen on " + m.options.address + ":" + std::to_string(m.options.port) + ": " + ec.message());
    m.bound_port = m.acceptor->local_endpoint().port();
    m.accept_thread = std::thread([&m] { m.accept_loop(); });
}

void Server::wait() {
    std::unique_lock lock(impl_->wait_mutex);
    impl_->wait_cv.wait(lock, [this] { return impl_->stopped; });
}

void Server::stop() {
    auto& m = *impl_;
    if (!m.acceptor || m.stopping.exchange(true)) return;
    ::shutdown(m.acceptor->native_handle(), SHUT_RDWR);
    if (m.accept_thread.joinable()) m.accept_thread.join();
    std::vector<Impl::Connection> threads;
    {
        std::lock_guard lock(m.conn_mutex);
        for (int fd : m.open_fds) ::shutdown(fd, SHUT_RDWR);
        threads.swap(m.connections);
    }
    for (auto& c : threads) c.thread.join();
    beast::error_code ec;
    m.acceptor->close(ec);
    {
        std::lock_guard lock(m.wait_mutex);
        m.stopped = true;
    }
    m.wait_cv.notify_all();
}

unsigned short Server::port() const { return impl_->bound_port; }

namespace {

tcp::socket connect_to(asio::io_context& ioc, const std::string& host, unsigned short port) {
    tcp::resolver resolver(ioc);
    tcp::socket socket(ioc);
    beast::error_code ec;
    const auto results = resolver.resolve(host, std::to_string(port), ec);
    if (!ec) asio::connect(socket, results, ec);
    if (ec) throw ServiceError("cannot connect to " + host + ":" + std::to_string(port) + ": " + ec.message());
    return socket;
}

HttpResponse request_on(tcp::socket& socket, beast::flat_buffer& buffer, const std::string& host,
                        const std::string& method, const std::string& target, const std::string& body,
                        bool keep_alive) {
    Request req{http::string_to_verb(method), target, 11};
    if (req.method() == http::verb::unknown) throw ServiceError("unknown HTTP method " + method);
    req.set(http::field::host, host);
    req.keep_alive(keep_alive);
    if (!body.empty()) {
        req.set(http::field::content_type, "application/json");
        req.body() = body;
    }
    req.prepare_payload();
    beast::error_code ec;
    http::write(socket, req, ec);
    Response res;
    if (!ec) http::read(socket, buffer, res, ec);
    if (ec) throw ServiceError("HTTP " + method + " " + target + ": " + ec.message());
    return {static_cast<int>(res.result_int()), res.body()};
}

}  // namespace

HttpResponse http_request(const std::string& host, unsigned short port, const std::string& method,
                          const std::string& target, const std::string& body) {
    asio::io_context ioc;
    tcp::socket socket = connect_to(ioc, host, port);
    beast::flat_buffer buffer;
    HttpResponse r = request_on(socket, buffer, host, method, target, body, false);
    beast::error_code ec;
    socket.shutdown(tcp::socket::shutdown_both, ec);
    return r;
}

struct StreamClient::Impl {
    asio::io_context ioc;
    websocket::stream<tcp::socket> ws{ioc};
    bool open = false;
};

StreamClient::StreamClient(const std::string& host, unsigned short port, const std::string& session_id)
    : impl_(std::make_unique<Impl>()) {
    impl_->ws.next_layer() = connect_to(impl_->ioc, host, port);
    beast::error_code ec;
    impl_->ws.handshake(host, "/session/" + session_id + "/stream", ec);
    if (ec) throw ServiceError("stream handshake for session " + session_id + ": " + ec.message());
    impl_->ws.text(true);
    impl_->open = true;
}

StreamClient::~StreamClient() {
    try {
        close();
    } catch (...) {
    }
}

void StreamClient::send(const std::string& text) {
    beast::error_code ec;
    impl_->ws.write(asio::buffer(text), ec);
    if (ec) throw ServiceError("stream write: " + ec.message());
}

std::optional<std::string> StreamClient::receive() {
    beast::flat_buffer buf;
    beast::error_code ec;
    impl_->ws.read(buf, ec);
    if (ec == websocket::error::closed) {
        impl_->open = false;
        return std::nullopt;
    }
    if (ec) throw ServiceError("stream read: " + ec.message());
    return beast::buffers_to_string(buf.data());
}

int StreamClient::close_code() const { return static_cast<int>(impl_->ws.reason().code); }
std::string StreamClient::close_reason() const { return std::string(impl_->ws.reason().reason.c_str()); }

void StreamClient::close() {
    if (!impl_->open) return;
    impl_->open = false;
    beast::error_code ec;
    impl_->ws.close(websocket::close_code::normal, ec);
}

ServiceSource::ServiceSource(std::string host, unsigned short port, std::uint64_t user_seed)
    : host_(std::move(host)), port_(port), user_seed_(user_seed) {}

std::vector<calibration::SourcedFrame> ServiceSource::capture(GazeClass requested, const corpus::ScenarioTag& scenario,
                                                              int attempt, int count) {
    asio::io_context ioc;
    tcp::socket socket = connect_to(ioc, host_, port_);
    beast::flat_buffer buffer;
    const std::string prefix = "/synth/frame?class=" + std::string(to_string(requested)) +
                               "&eye=left&scenario=" + corpus::scenario_name(scenario) + "&seed=";
    std::vector<calibration::SourcedFrame> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const std::uint64_t seed = mix_seed({user_seed_, index_of(requested), static_cast<std::uint64_t>(scenario.lighting),
                                             static_cast<std::uint64_t>(scenario.glasses),
                                             static_cast<std::uint64_t>(attempt), static_cast<std::uint64_t>(i)});
        const HttpResponse r = request_on(socket, buffer, host_, "GET", prefix + std::to_string(seed), "", true);
        if (r.status != 200) throw calibration::CalibrationError("service frame request failed: " + r.body);
        try {
            const auto j = nlohmann::json::parse(r.body);
            EyeFrame f{decode_png_rgb(base64_decode(j.at("png").get<std::string>())), EyeSide::Left,
                       static_cast<std::uint64_t>(i)};
            out.push_back({std::move(f), {requested, false, false}});
        } catch (const std::exception& e) {
            throw calibration::CalibrationError(std::string("bad frame from service: ") + e.what());
        }
    }
    beast::error_code ec;
    socket.shutdown(tcp::socket::shutdown_both, ec);
    return out;
}

std::string ServiceSource::describe() const {
    return "service http://" + host_ + ":" + std::to_string(port_) + " user seed " + std::to_string(user_seed_);
}

}  // namespace gazechair::service
