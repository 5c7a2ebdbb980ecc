// soarctl: train policies, run scenarios, compare runs, serve the API,
// replay and report on audit logs.

#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "soar/audit.hpp"
#include "soar/mapper.hpp"
#include "soar/orchestrator.hpp"
#include "soar/service.hpp"
#include "soar/util.hpp"

namespace fs = std::filesystem;
using namespace soar;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitChain = 3;

ApiServer* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

int cmd_train(const fs::path& scenario, int episodes, std::uint64_t seed, const fs::path& out,
              const std::optional<fs::path>& config, const std::optional<fs::path>& from) {
    const auto doc = read_json_file(scenario);
    auto env = Environment::load_file(scenario);
    auto train_env = SimTrainingEnvironment::from_scenario(env, doc);
    if (train_env.situations().empty()) throw Error(ErrorCode::ConfigInvalid, "scenario has no training situations");
    RlConfig cfg = config ? RlConfig::from_json(read_json_file(*config)) : RlConfig{};
    if (episodes > 0) cfg.episodes = episodes;
    cfg.validate();
    PolicyTable start = from ? PolicyTable::load(*from) : PolicyTable{};
    auto pt = train(train_env, cfg, seed, std::move(start));
    pt.metadata()["scenario"] = doc.value("scenario_id", "");
    pt.save(out);
    nlohmann::json greedy = nlohmann::json::object();
    for (const auto& s : train_env.situations()) {
        const auto st = train_env.state_of(s);
        if (auto a = pt.greedy(st)) greedy[st.to_string()] = std::string(name_of(*a));
    }
    std::cout << nlohmann::json{{"policy", out.string()}, {"episodes", cfg.episodes}, {"seed", seed}, {"greedy", greedy}}.dump(2)
              << "\n";
    return 0;
}

int cmd_run(const fs::path& scenario, const std::optional<fs::path>& policy, const std::string& mode,
            std::optional<Tick> ticks, std::optional<std::uint64_t> seed, const fs::path& out, bool full_budget,
            const std::optional<fs::path>& approvals, int snapshot_every, bool fsync) {
    auto cfg = RunConfig::from_files(scenario, policy);
    cfg.mode = parse_enum<Mode>(mode);
    if (ticks) cfg.ticks = *ticks;
    cfg.seed = seed;
    cfg.stop_when_idle = !full_budget;
    if (approvals) cfg.approval_script = read_json_file(*approvals);
    cfg.snapshot_every = snapshot_every;
    cfg.fsync = fsync;
    Pipeline p(cfg, out);
    const auto summary = p.run();
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int cmd_compare(const fs::path& a, const fs::path& b, const std::optional<fs::path>& out) {
    auto ma = RunMetrics::from_json(read_json_file(a / "summary.json").at("metrics"));
    auto mb = RunMetrics::from_json(read_json_file(b / "summary.json").at("metrics"));
    if (ma.mode == "aisa" && mb.mode != "aisa") std::swap(ma, mb);
    const auto doc = compare_runs(ma, mb).to_json();
    if (out) write_json_file(*out, doc);
    std::cout << doc.dump(2) << "\n";
    return 0;
}

int cmd_serve(const std::optional<fs::path>& run, const std::string& bind, const std::optional<std::string>& token,
              int tick_ms, const fs::path& runs_root, const std::optional<fs::path>& policy,
              const std::optional<fs::path>& baseline) {
    ServiceOptions opts;
    if (!bind.empty()) {
        const auto colon = bind.rfind(':');
        opts.host = bind.substr(0, colon);
        if (colon != std::string::npos) opts.port = std::stoi(bind.substr(colon + 1));
    }
    apply_bind_override(opts);
    opts.token = token;
    opts.tick_ms = tick_ms;
    opts.runs_root = runs_root;
    if (policy) opts.default_policy = read_json_file(*policy);
    if (baseline) opts.baseline_metrics = RunMetrics::from_json(read_json_file(*baseline / "summary.json").at("metrics"));

    ApiServer server(opts);
    if (run) server.attach(Pipeline::resume(*run));
    const int port = server.start();
    std::cerr << "serving on " << opts.host << ":" << port << "\n";
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    server.wait();
    server.stop();
    g_server = nullptr;
    return 0;
}

int cmd_replay(const fs::path& log) {
    const auto r = replay(log);
    nlohmann::json doc = {{"chain_ok", r.chain_ok},
                          {"events", r.events},
                          {"findings", r.reduced.findings.size()},
                          {"plans", r.reduced.plans.size()},
                          {"rerun", r.rerun_done}};
    if (r.rerun_done) {
        doc["log_prefix_matches"] = r.log_prefix_matches;
        doc["state_hash"] = r.state_hash;
        doc["recorded_state_hash"] = opt_json(r.recorded_state_hash);
        doc["state_hash_matches"] = r.recorded_state_hash && *r.recorded_state_hash == r.state_hash;
        doc["reducer_matches_rerun"] = r.reducer_matches_rerun;
    }
    std::cout << doc.dump(2) << "\n";
    const bool ok = !r.rerun_done || (r.log_prefix_matches && r.reducer_matches_rerun &&
                                      (!r.recorded_state_hash || *r.recorded_state_hash == r.state_hash));
    return ok ? 0 : 1;
}

int cmd_report(const fs::path& run, const std::string& framework, const std::optional<fs::path>& out) {
    const auto events = load_events(run / "audit.log");
    std::string run_id = run.filename().string();
    if (fs::exists(run / "summary.json")) run_id = read_json_file(run / "summary.json").value("run_id", run_id);
    const auto fw = parse_enum<Framework>(framework);
    const auto doc = generate_report(events, fw, ControlTags::load_default(), run_id);
    write_json_file(out ? *out : run / ("compliance-" + framework + ".json"), doc);
    std::cout << doc.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Security orchestration pipeline over a simulated grid"};
    app.require_subcommand(1);

    fs::path scenario, out, run_a, run_b, log, run_dir, runs_root = "runs";
    std::optional<fs::path> policy, config, from, approvals, compare_out, serve_run, baseline_run, report_out;
    int episodes = 0, snapshot_every = 0, tick_ms = 100;
    std::uint64_t train_seed = 1;
    std::optional<std::uint64_t> seed;
    std::optional<Tick> ticks;
    std::string mode = "aisa", bind, framework = "iso27001";
    std::optional<std::string> token;
    bool full_budget = false, fsync = false;

    auto* train_cmd = app.add_subcommand("train", "Learn a policy table on a scenario's training situations");
    train_cmd->add_option("--scenario", scenario, "Scenario file")->required();
    train_cmd->add_option("--episodes", episodes, "Episodes (default from config)");
    train_cmd->add_option("--seed", train_seed, "Training seed");
    train_cmd->add_option("--out", out, "Policy output file")->required();
    train_cmd->add_option("--config", config, "RL hyperparameters (JSON)");
    train_cmd->add_option("--from", from, "Continue from an existing policy");

    auto* run_cmd = app.add_subcommand("run", "Run the pipeline on a scenario");
    run_cmd->add_option("--scenario", scenario, "Scenario file")->required();
    run_cmd->add_option("--policy", policy, "Policy table");
    run_cmd->add_option("--mode", mode, "aisa or baseline")->check(CLI::IsMember({"aisa", "baseline"}));
    run_cmd->add_option("--ticks", ticks, "Tick budget");
    run_cmd->add_option("--seed", seed, "Seed override");
    run_cmd->add_option("--out", out, "Run directory")->required();
    run_cmd->add_flag("--full-budget", full_budget, "Keep running after everything is resolved");
    run_cmd->add_option("--approvals", approvals, "Approval script (JSON)");
    run_cmd->add_option("--snapshot-every", snapshot_every, "Snapshot period in ticks");
    run_cmd->add_flag("--fsync", fsync, "fsync the audit log after every append");

    auto* compare_cmd = app.add_subcommand("compare", "Compare a baseline run with an automated run");
    compare_cmd->add_option("--run-a", run_a, "First run directory")->required();
    compare_cmd->add_option("--run-b", run_b, "Second run directory")->required();
    compare_cmd->add_option("--out", compare_out, "Write the comparison here");

    auto* serve_cmd = app.add_subcommand("serve", "Serve the HTTP API");
    serve_cmd->add_option("--run", serve_run, "Resume this run directory");
    serve_cmd->add_option("--bind", bind, "host:port (overridden by SOAR_BIND)");
    serve_cmd->add_option("--token", token, "Bearer token required on requests");
    serve_cmd->add_option("--tick-ms", tick_ms, "Milliseconds between ticks; negative pauses the driver");
    serve_cmd->add_option("--runs-root", runs_root, "Directory for runs started over the API");
    serve_cmd->add_option("--policy", policy, "Default policy for runs started over the API");
    serve_cmd->add_option("--baseline", baseline_run, "Baseline run directory for /api/metrics comparisons");

    auto* replay_cmd = app.add_subcommand("replay", "Verify and replay an audit log");
    replay_cmd->add_option("--log", log, "Audit log")->required();

    auto* report_cmd = app.add_subcommand("report", "Compliance report from a run's audit log");
    report_cmd->add_option("--run", run_dir, "Run directory")->required();
    report_cmd->add_option("--framework", framework, "iso27001, nist-csf or nerc-cip")
        ->check(CLI::IsMember({"iso27001", "nist-csf", "nerc-cip"}));
    report_cmd->add_option("--out", report_out, "Output file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (*train_cmd) return cmd_train(scenario, episodes, train_seed, out, config, from);
        if (*run_cmd)
            return cmd_run(scenario, policy, mode, ticks, seed, out, full_budget, approvals, snapshot_every, fsync);
        if (*compare_cmd) return cmd_compare(run_a, run_b, compare_out);
        if (*serve_cmd) return cmd_serve(serve_run, bind, token, tick_ms, runs_root, policy, baseline_run);
        if (*replay_cmd) return cmd_replay(log);
        if (*report_cmd) return cmd_report(run_dir, framework, report_out);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        switch (e.code()) {
            case ErrorCode::ChainCorrupt: return kExitChain;
            case ErrorCode::ConfigInvalid:
            case ErrorCode::Parse:
            case ErrorCode::Io:
            case ErrorCode::UnknownCatalogEntry:
            case ErrorCode::CycleInDependencies:
            case ErrorCode::InvariantViolation:
            case ErrorCode::ScenarioMismatch: return kExitConfig;
            default: return 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
