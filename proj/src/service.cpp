#include "soar/service.hpp"

#include <chrono>
#include <cstdlib>

#include <httplib.h>

#include "soar/util.hpp"

namespace soar {

namespace {

using nlohmann::json;

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e) {
    int status = 500;
    switch (e.code()) {
        case ErrorCode::UnknownPlan:
        case ErrorCode::UnknownFinding:
        case ErrorCode::UnknownAsset: status = 404; break;
        case ErrorCode::AlreadyDecided: status = 409; break;
        case ErrorCode::ConfigInvalid:
        case ErrorCode::Parse:
        case ErrorCode::UnknownCatalogEntry:
        case ErrorCode::InvariantViolation:
        case ErrorCode::CycleInDependencies: status = 400; break;
        default: break;
    }
    send_json(res, status, {{"error", std::string(to_string(e.code()))}, {"detail", e.detail()}});
}

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
        return json::parse(req.body);
    } catch (const json::exception& ex) {
        throw Error(ErrorCode::Parse, std::string("request body: ") + ex.what());
    }
}

std::string sse_frame(const AuditEvent& e) {
    return "id: " + std::to_string(e.seq) + "\nevent: " + std::string(name_of(e.kind)) + "\ndata: " +
           e.to_json().dump() + "\n\n";
}

json load_document(const json& v) {
    if (v.is_string()) return read_json_file(v.get<std::string>());
    return v;
}

}  // namespace

void apply_bind_override(ServiceOptions& opts) {
    const char* bind = std::getenv("SOAR_BIND");
    if (!bind || !*bind) return;
    std::string s = bind;
    auto colon = s.rfind(':');
    if (colon == std::string::npos) {
        opts.host = s;
        return;
    }
    opts.host = s.substr(0, colon);
    try {
        opts.port = std::stoi(s.substr(colon + 1));
    } catch (const std::exception&) {
        throw Error(ErrorCode::ConfigInvalid, "SOAR_BIND: bad port in '" + s + "'");
    }
}

ApiServer::ApiServer(ServiceOptions opts) : opts_(std::move(opts)), server_(std::make_unique<httplib::Server>()) { routes(); }

ApiServer::~ApiServer() { stop(); }

void ApiServer::attach(std::unique_ptr<Pipeline> p) {
    std::lock_guard lock(mu_);
    pipeline_ = std::move(p);
    if (pipeline_) pipeline_->log().on_append([this](const AuditEvent&) { appended_.notify_all(); });
    appended_.notify_all();
}

bool ApiServer::authorized(const std::string& header) const {
    if (!opts_.token) return true;
    return header == "Bearer " + *opts_.token;
}

void ApiServer::with_pipeline(const std::function<void(Pipeline&)>& fn) {
    std::lock_guard lock(mu_);
    if (!pipeline_) throw Error(ErrorCode::ConfigInvalid, "no run attached");
    fn(*pipeline_);
}

void ApiServer::step(int n) {
    std::lock_guard lock(mu_);
    if (!pipeline_) return;
    for (int i = 0; i < n && !pipeline_->finished(); ++i) pipeline_->step_tick();
    if (pipeline_->finished() && !pipeline_->closed()) pipeline_->finish();
}

int ApiServer::start() {
    if (opts_.port == 0) {
        port_ = server_->bind_to_any_port(opts_.host);
    } else {
        port_ = server_->bind_to_port(opts_.host, opts_.port) ? opts_.port : -1;
    }
    if (port_ < 0) throw Error(ErrorCode::Io, "cannot bind " + opts_.host + ":" + std::to_string(opts_.port));
    listener_ = std::thread([this] { server_->listen_after_bind(); });
    if (opts_.tick_ms >= 0) driver_ = std::thread([this] { drive(); });
    server_->wait_until_ready();
    return port_;
}

void ApiServer::stop() {
    stopping_ = true;
    appended_.notify_all();
    if (server_) server_->stop();
    if (listener_.joinable()) listener_.join();
    if (driver_.joinable()) driver_.join();
}

void ApiServer::wait() {
    if (listener_.joinable()) listener_.join();
}

void ApiServer::drive() {
    while (!stopping_) {
        {
            std::lock_guard lock(mu_);
            if (pipeline_ && !pipeline_->closed()) {
                if (pipeline_->finished()) pipeline_->finish();
                else pipeline_->step_tick();
            }
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(std::max(opts_.tick_ms, 1)));
    }
}

void ApiServer::routes() {
    auto& srv = *server_;

    srv.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
        if (authorized(req.get_header_value("Authorization"))) return httplib::Server::HandlerResponse::Unhandled;
        send_json(res, 401, {{"error", "Unauthorized"}, {"detail", "missing or wrong bearer token"}});
        return httplib::Server::HandlerResponse::Handled;
    });

    // Every handler runs under the pipeline lock and maps module errors.
    auto guarded = [this](auto fn) {
        return [this, fn](const httplib::Request& req, httplib::Response& res) {
            try {
                std::lock_guard lock(mu_);
                if (!pipeline_) {
                    send_json(res, 503, {{"error", "NoRun"}, {"detail", "no run attached"}});
                    return;
                }
                fn(*pipeline_, req, res);
            } catch (const Error& e) {
                send_error(res, e);
            } catch (const std::exception& e) {
                send_json(res, 500, {{"error", "Internal"}, {"detail", e.what()}});
            }
        };
    };

    srv.Get("/api/queue", guarded([](Pipeline& p, const httplib::Request&, httplib::Response& res) {
        json entries = json::array();
        json report_id = nullptr;
        if (const auto& r = p.latest_report()) {
            if (!p.reports().empty()) report_id = p.reports().rbegin()->first;
            for (const auto& e : r->entries) {
                const Finding* f = p.queue().find(e.finding_id);
                json row = {{"rank", e.rank},
                            {"finding_id", e.finding_id},
                            {"asset_id", e.asset_id},
                            {"cve_id", opt_json(e.cve_id)},
                            {"impact_score", e.impact_score},
                            {"risk_band", e.risk_band},
                            {"lifecycle", f ? json(f->lifecycle) : json(nullptr)}};
                entries.push_back(row);
            }
        }
        json findings = json::array();
        for (const auto& f : p.queue().all()) {
            findings.push_back({{"finding_id", f.finding_id},
                                {"asset_id", f.asset_id},
                                {"cve_id", opt_json(f.cve_id)},
                                {"lifecycle", f.lifecycle},
                                {"impact_score", opt_json(f.impact_score)}});
        }
        send_json(res, 200,
                  {{"tick", p.tick()}, {"report_id", report_id}, {"entries", entries}, {"findings", findings}});
    }));

    srv.Get(R"(/api/findings/([^/]+))", guarded([](Pipeline& p, const httplib::Request& req, httplib::Response& res) {
        const auto id = req.matches[1].str();
        const Finding* f = p.queue().find(id);
        if (!f) throw Error(ErrorCode::UnknownFinding, id);
        json body = {{"finding", to_json(*f)}, {"plan", nullptr}, {"script", nullptr}, {"decision", nullptr}};
        for (const auto& [pid, plan] : p.plans()) {
            if (plan.finding_id != id) continue;
            body["plan"] = to_json(plan);
            if (auto it = p.scripts().find(pid); it != p.scripts().end()) body["script"] = to_json(it->second);
            if (const auto* d = p.approvals().find(pid)) body["decision"] = to_json(*d);
        }
        send_json(res, 200, body);
    }));

    srv.Get("/api/approvals", guarded([](Pipeline& p, const httplib::Request& req, httplib::Response& res) {
        const auto status = req.has_param("status") ? req.get_param_value("status") : "pending";
        json out = json::array();
        for (const auto& [pid, plan] : p.plans()) {
            const bool pending = plan.status == PlanStatus::PendingApproval;
            if (status == "pending" && !pending) continue;
            if (status != "pending" && status != "all" && !plan.requires_approval) continue;
            const Finding* f = p.queue().find(plan.finding_id);
            json item = {{"plan", to_json(plan)},
                         {"finding_id", plan.finding_id},
                         {"asset_id", plan.asset_id},
                         {"impact_score", f ? opt_json(f->impact_score) : json(nullptr)},
                         {"script_text", nullptr},
                         {"script_hash", nullptr},
                         {"decision", nullptr}};
            if (auto it = p.scripts().find(pid); it != p.scripts().end()) {
                item["script_text"] = it->second.text();
                item["script_hash"] = it->second.content_hash();
                item["script"] = to_json(it->second);
            }
            if (const auto* d = p.approvals().find(pid)) item["decision"] = to_json(*d);
            out.push_back(item);
        }
        send_json(res, 200, out);
    }));

    srv.Post(R"(/api/approvals/([^/]+)/decision)",
             guarded([](Pipeline& p, const httplib::Request& req, httplib::Response& res) {
                 auto body = parse_body(req);
                 body["plan_id"] = req.matches[1].str();
                 ApprovalDecision d;
                 try {
                     d = parse_decision(body);
                 } catch (const json::exception& ex) {
                     throw Error(ErrorCode::Parse, ex.what());
                 }
                 p.submit_decision(d);
                 send_json(res, 202, {{"queued", true}, {"plan_id", d.plan_id}, {"apply_at_tick", p.tick()}});
             }));

    srv.Post(R"(/api/findings/([^/]+)/contain)",
             guarded([](Pipeline& p, const httplib::Request& req, httplib::Response& res) {
                 const auto body = parse_body(req);
                 const auto id = req.matches[1].str();
                 p.submit_contain(id, body.value("actor", "portal"));
                 send_json(res, 202, {{"queued", true}, {"finding_id", id}});
             }));

    srv.Get("/api/metrics", guarded([this](Pipeline& p, const httplib::Request&, httplib::Response& res) {
        const auto m = p.metrics();
        json body = {{"run_id", p.run_id()}, {"tick", p.tick()}, {"metrics", m.to_json()}, {"comparison", nullptr}};
        if (opts_.baseline_metrics) {
            try {
                body["comparison"] = compare_runs(*opts_.baseline_metrics, m).to_json();
            } catch (const Error& e) {
                body["comparison_error"] = e.what();
            }
        }
        send_json(res, 200, body);
    }));

    srv.Get(R"(/api/reports/([^/]+))", guarded([](Pipeline& p, const httplib::Request& req, httplib::Response& res) {
        const auto id = req.matches[1].str();
        if (id == "latest") {
            if (p.reports().empty()) {
                send_json(res, 404, {{"error", "UnknownReport"}, {"detail", id}});
                return;
            }
            send_json(res, 200, p.reports().rbegin()->second);
            return;
        }
        auto it = p.reports().find(id);
        if (it == p.reports().end()) {
            send_json(res, 404, {{"error", "UnknownReport"}, {"detail", id}});
            return;
        }
        send_json(res, 200, it->second);
    }));

    srv.Post("/api/runs", [this](const httplib::Request& req, httplib::Response& res) {
        try {
            const auto body = parse_body(req);
            RunConfig cfg;
            cfg.scenario = load_document(body.at("scenario"));
            if (body.at("scenario").is_string()) cfg.scenario_path = body["scenario"].get<std::string>();
            cfg.ticks = body.value("ticks", cfg.scenario.value("tick_budget", cfg.ticks));
            if (body.contains("policy") && !body["policy"].is_null()) cfg.policy = load_document(body["policy"]);
            else cfg.policy = opts_.default_policy;
            cfg.mode = body.value("mode", Mode::Aisa);
            if (body.contains("seed")) cfg.seed = body["seed"].get<std::uint64_t>();
            if (body.contains("approval_script")) cfg.approval_script = body["approval_script"];
            cfg.stop_when_idle = body.value("stop_when_idle", true);

            std::lock_guard lock(mu_);
            if (pipeline_ && !pipeline_->closed() && !pipeline_->finished()) {
                send_json(res, 409, {{"error", "RunActive"}, {"detail", pipeline_->run_id()}});
                return;
            }
            const auto dir = opts_.runs_root / ("run-" + std::to_string(++run_counter_) + "-" +
                                                std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
            pipeline_ = std::make_unique<Pipeline>(cfg, dir);
            pipeline_->log().on_append([this](const AuditEvent&) { appended_.notify_all(); });
            send_json(res, 201, {{"run_id", pipeline_->run_id()}, {"dir", dir.string()}});
        } catch (const Error& e) {
            send_error(res, e);
        } catch (const json::exception& e) {
            send_json(res, 400, {{"error", "Parse"}, {"detail", e.what()}});
        }
    });

    srv.Get("/api/events", [this](const httplib::Request& req, httplib::Response& res) {
        std::uint64_t from = 0;
        try {
            if (req.has_param("from_seq")) from = std::stoull(req.get_param_value("from_seq"));
            if (req.has_header("Last-Event-ID")) from = std::stoull(req.get_header_value("Last-Event-ID")) + 1;
        } catch (const std::exception&) {
            send_json(res, 400, {{"error", "Parse"}, {"detail", "from_seq"}});
            return;
        }
        const bool follow = !req.has_param("follow") || req.get_param_value("follow") != "0";
        if (!follow) {
            std::string out;
            std::lock_guard lock(mu_);
            if (pipeline_) {
                const auto& ev = pipeline_->log().events();
                for (std::size_t i = from; i < ev.size(); ++i) out += sse_frame(ev[i]);
            }
            res.set_content(out, "text/event-stream");
            return;
        }
        auto next = std::make_shared<std::uint64_t>(from);
        res.set_header("Cache-Control", "no-cache");
        res.set_chunked_content_provider("text/event-stream", [this, next](std::size_t, httplib::DataSink& sink) {
            std::unique_lock lock(mu_);
            if (stopping_) return false;
            std::string out;
            if (pipeline_) {
                const auto& ev = pipeline_->log().events();
                for (; *next < ev.size(); ++*next) out += sse_frame(ev[*next]);
            }
            if (out.empty()) {
                appended_.wait_for(lock, std::chrono::milliseconds(200));
                out = ": keepalive\n\n";
            }
            lock.unlock();
            return sink.write(out.data(), out.size());
        });
    });
}

}  // namespace soar
