// breakout-sim: synthetic meetings with known ground truth, written to files or
// driven against a live server.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "breakout/sim_drive.hpp"
#include "breakout/simulator.hpp"

int main(int argc, char** argv) {
    namespace sim = breakout::sim;
    CLI::App app{"breakout-sim: deterministic synthetic meeting generator"};

    sim::ConversationModel model;
    double duration_min = 30.0;
    std::string matrix_file;
    std::string server;
    double speed = 1.0;
    std::string out_file;
    std::string truth_file;
    std::int64_t start_ms = 0;
    std::string session_config;

    app.add_option("--participants", model.n, "number of participants")->required()->check(CLI::Range(1, 16));
    app.add_option("--duration-min", duration_min, "simulated minutes")->required()->check(CLI::PositiveNumber);
    app.add_option("--seed", model.seed, "64-bit seed")->required();
    app.add_option("--matrix", matrix_file, "JSON file with the next-speaker matrix (array of rows)");
    app.add_option("--server", server, "server URL, e.g. http://127.0.0.1:8080 (token from BREAKOUT_TOKEN)");
    app.add_option("--speed", speed, "media time per wall time when driving a server")->check(CLI::PositiveNumber);
    app.add_option("--out", out_file, "write samples as JSONL");
    app.add_option("--truth", truth_file, "write truth turns as JSONL");
    app.add_option("--overlap-prob", model.overlap_prob, "probability the next turn starts early")
        ->check(CLI::Range(0.0, 1.0));
    app.add_option("--turn-ms", model.turn_length_ms, "mean turn length")->check(CLI::PositiveNumber);
    app.add_option("--pause-ms", model.pause_ms, "mean pause between turns")->check(CLI::NonNegativeNumber);
    app.add_option("--start-ms", start_ms, "first timestamp for file output")->check(CLI::NonNegativeNumber);
    app.add_option("--session-config", session_config, "JSON object of session config overrides (server mode)");
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    if (server.empty() && out_file.empty() && truth_file.empty()) {
        std::cerr << "nothing to do: give --server and/or --out/--truth\n";
        return 2;
    }

    try {
        if (!matrix_file.empty()) model.M = sim::load_matrix(matrix_file);
        const auto duration_ms = static_cast<std::int64_t>(duration_min * 60000.0);

        sim::Generated meeting;
        breakout::Timestamp base{start_ms};
        if (!server.empty()) {
            const char* token = std::getenv("BREAKOUT_TOKEN");
            sim::DriveOptions opts;
            opts.server_url = server;
            opts.token = token != nullptr ? token : "";
            opts.speed = speed;
            if (!session_config.empty()) opts.session_config = breakout::json::parse(session_config);
            sim::Driver driver(opts);
            auto result = driver.run(model, duration_ms);
            std::cerr << "session " << result.session << ": accepted " << result.accepted << ", dropped "
                      << result.dropped << '\n';
            std::cout << result.session << '\n';
            meeting = std::move(result.meeting);
            base = result.created_at;
        } else {
            meeting = sim::generate(model, duration_ms, breakout::SegmenterConfig{}, base);
        }

        if (!out_file.empty()) {
            std::ofstream out(out_file);
            sim::write_samples_jsonl(out, meeting, base, duration_ms);
            if (!out) throw std::runtime_error("cannot write " + out_file);
        }
        if (!truth_file.empty()) {
            std::ofstream out(truth_file);
            sim::write_truth_jsonl(out, meeting.truth);
            if (!out) throw std::runtime_error("cannot write " + truth_file);
        }
    } catch (const std::exception& e) {
        std::cerr << "breakout-sim: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
