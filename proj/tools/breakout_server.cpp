// breakout-server: ingestion, analytics ticks, HTTP and websocket API.

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "breakout/http_server.hpp"
#include "breakout/service.hpp"

namespace {

std::string env_or(const char* name, std::string fallback) {
    const char* v = std::getenv(name);
    return v != nullptr && *v != '\0' ? std::string(v) : fallback;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"breakout-server: group conversation analytics service"};

    std::string listen = env_or("BREAKOUT_LISTEN_ADDR", "127.0.0.1:8080");
    std::string data_dir = env_or("BREAKOUT_DATA_DIR", "breakout-data");
    std::int64_t tick_ms = breakout::AnalyticsConfig{}.tick_ms;
    std::int64_t window_ms = breakout::AnalyticsConfig{}.window_ms;
    unsigned threads = 4;
    bool fsync = true;
    std::size_t queue_limit = 1024;
    std::vector<std::string> archive;

    app.add_option("--listen", listen, "host:port to listen on (env BREAKOUT_LISTEN_ADDR)");
    app.add_option("--data-dir", data_dir, "directory for session logs (env BREAKOUT_DATA_DIR)");
    app.add_option("--tick-ms", tick_ms, "default tick interval for new sessions")->check(CLI::PositiveNumber);
    app.add_option("--window-ms", window_ms, "default sliding window for new sessions")->check(CLI::PositiveNumber);
    app.add_option("--threads", threads, "I/O threads")->check(CLI::Range(1u, 256u));
    app.add_flag("--fsync,!--no-fsync", fsync, "fdatasync every append before acknowledging (default on)");
    app.add_option("--queue-limit", queue_limit, "websocket envelopes buffered per subscriber")
        ->check(CLI::PositiveNumber);
    app.add_option("--archive", archive,
                   "close the given sessions, move their files to <data-dir>/archive and exit "
                   "(run while the server is stopped)");
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    breakout::ServiceOptions sopts;
    sopts.data_dir = data_dir;
    sopts.sync_writes = fsync;
    sopts.defaults.analytics.tick_ms = tick_ms;
    sopts.defaults.analytics.window_ms = window_ms;
    if (auto errors = breakout::validate_config(sopts.defaults.segmenter, sopts.defaults.analytics); !errors.empty()) {
        for (const auto& e : errors) std::cerr << "invalid defaults: " << e << '\n';
        return 2;
    }

    try {
        breakout::Service service(sopts);
        for (const auto& [id, report] : service.recovery_reports())
            if (report.corruption) std::cerr << "session " << id << ": " << *report.corruption << '\n';

        if (!archive.empty()) {
            for (const auto& id : archive) {
                service.close_session(id);
                service.store().archive(id);
                std::cout << "archived " << id << '\n';
            }
            return 0;
        }

        const char* token = std::getenv("BREAKOUT_TOKEN");
        if (token == nullptr || *token == '\0') {
            std::cerr << "BREAKOUT_TOKEN must be set\n";
            return 2;
        }

        sigset_t signals;
        sigemptyset(&signals);
        sigaddset(&signals, SIGINT);
        sigaddset(&signals, SIGTERM);
        pthread_sigmask(SIG_BLOCK, &signals, nullptr);

        const auto [host, port] = breakout::parse_listen(listen);
        breakout::ServerOptions opts;
        opts.address = host;
        opts.port = port;
        opts.token = token;
        opts.threads = threads;
        opts.subscriber_queue_limit = queue_limit;

        breakout::HttpServer server(service, opts);
        server.start();
        breakout::TickScheduler scheduler(service);
        std::cerr << "listening on " << host << ':' << server.port() << ", data in " << data_dir << '\n';

        int sig = 0;
        sigwait(&signals, &sig);
        std::cerr << "shutting down\n";
        scheduler.stop();
        server.stop();
    } catch (const std::exception& e) {
        std::cerr << "fatal: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
