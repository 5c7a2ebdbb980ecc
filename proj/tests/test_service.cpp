#include <httplib.h>

#include <regex>

#include <gtest/gtest.h>

#include "soar/service.hpp"
#include "test_support.hpp"

using namespace soar;
using nlohmann::json;

namespace {

RunConfig canonical_cfg(bool scripted_approvals) {
    RunConfig cfg;
    cfg.scenario = test::scenario_json("canonical_grid");
    cfg.ticks = 1440;
    if (!scripted_approvals) cfg.approval_script = json{{"rules", json::array()}};
    return cfg;
}

struct Served {
    std::unique_ptr<ApiServer> server;
    std::unique_ptr<httplib::Client> client;
};

Served serve(std::optional<RunConfig> cfg, ServiceOptions opts = {}) {
    opts.port = 0;
    if (opts.tick_ms == 100) opts.tick_ms = -1;
    Served s;
    s.server = std::make_unique<ApiServer>(opts);
    if (cfg) s.server->attach(std::make_unique<Pipeline>(*cfg));
    const int port = s.server->start();
    s.client = std::make_unique<httplib::Client>("127.0.0.1", port);
    s.client->set_read_timeout(5, 0);
    return s;
}

json body_of(const httplib::Result& r) { return json::parse(r->body); }

// Ids of the SSE frames in `text`.
std::vector<std::uint64_t> frame_ids(const std::string& text) {
    static const std::regex id_re(R"(^id: (\d+)$)", std::regex::multiline);
    std::vector<std::uint64_t> ids;
    for (std::sregex_iterator it(text.begin(), text.end(), id_re), end; it != end; ++it) {
        ids.push_back(std::stoull((*it)[1].str()));
    }
    return ids;
}

std::string pending_plan(httplib::Client& c, const std::string& asset) {
    for (const auto& it : body_of(c.Get("/api/approvals"))) {
        if (it["asset_id"] == asset) return it["plan"]["plan_id"].get<std::string>();
    }
    return "";
}

}  // namespace

TEST(Service, QueueShowsRankedReport) {
    auto s = serve(canonical_cfg(false));
    s.server->step(62);
    const auto r = s.client->Get("/api/queue");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    const auto b = body_of(r);
    EXPECT_EQ(b["tick"], 62);
    ASSERT_FALSE(b["entries"].empty());
    EXPECT_EQ(b["entries"][0]["rank"], 1);
    EXPECT_EQ(b["entries"][0]["cve_id"], "CVE-2024-21302");
    EXPECT_EQ(b["entries"][0]["impact_score"], 0.97);
    EXPECT_FALSE(b["report_id"].is_null());

    const auto rep = s.client->Get("/api/reports/" + b["report_id"].get<std::string>());
    EXPECT_EQ(rep->status, 200);
    EXPECT_EQ(s.client->Get("/api/reports/latest")->status, 200);
    EXPECT_EQ(s.client->Get("/api/reports/R-none")->status, 404);
}

TEST(Service, FindingDetail) {
    auto s = serve(canonical_cfg(false));
    s.server->step(62);
    const auto q = body_of(s.client->Get("/api/queue"));
    const auto id = q["entries"][0]["finding_id"].get<std::string>();
    const auto r = s.client->Get("/api/findings/" + id);
    ASSERT_EQ(r->status, 200);
    const auto b = body_of(r);
    EXPECT_EQ(b["finding"]["finding_id"], id);
    EXPECT_EQ(b["plan"]["finding_id"], id);
    EXPECT_FALSE(b["script"].is_null());
    EXPECT_TRUE(b["decision"].is_null());
    const auto missing = s.client->Get("/api/findings/F-9999");
    EXPECT_EQ(missing->status, 404);
    EXPECT_EQ(body_of(missing)["error"], "UnknownFinding");
}

TEST(Service, ApprovalRoundTrip) {
    auto s = serve(canonical_cfg(false));
    s.server->step(62);
    const auto list = body_of(s.client->Get("/api/approvals"));
    const json* found = nullptr;
    for (const auto& it : list) {
        if (it["asset_id"] == "scada-1") found = &it;
    }
    ASSERT_NE(found, nullptr);
    const auto& item = *found;
    EXPECT_EQ(item["plan"]["steps"].size(), 3u);
    EXPECT_TRUE(item["script_text"].is_string());
    EXPECT_EQ(item["script_hash"].get<std::string>().size(), 64u);
    const auto plan_id = item["plan"]["plan_id"].get<std::string>();

    const json decision = {{"verdict", "Approve"}, {"actor", "operator"}, {"comment", "go"}};
    const auto ok = s.client->Post("/api/approvals/" + plan_id + "/decision", decision.dump(), "application/json");
    EXPECT_EQ(ok->status, 202);
    const auto again = s.client->Post("/api/approvals/" + plan_id + "/decision", decision.dump(), "application/json");
    EXPECT_EQ(again->status, 409);
    EXPECT_EQ(body_of(again)["error"], "AlreadyDecided");
    EXPECT_EQ(s.client->Post("/api/approvals/P-9999/decision", decision.dump(), "application/json")->status, 404);
    EXPECT_EQ(s.client->Post("/api/approvals/" + plan_id + "/decision", "{nope", "application/json")->status, 400);

    s.server->step(1);
    for (const auto& it : body_of(s.client->Get("/api/approvals"))) EXPECT_NE(it["plan"]["plan_id"], plan_id);
    bool decided = false;
    for (const auto& it : body_of(s.client->Get("/api/approvals?status=all"))) {
        if (it["plan"]["plan_id"] == plan_id) decided = it["decision"]["actor"] == "operator";
    }
    EXPECT_TRUE(decided);
    s.server->with_pipeline([&](Pipeline& p) { EXPECT_EQ(p.plans().at(plan_id).status, PlanStatus::Executed); });
}

TEST(Service, RejectLeavesEnvironmentAlone) {
    auto s = serve(canonical_cfg(false));
    s.server->step(62);
    const auto plan_id = pending_plan(*s.client, "scada-1");
    ASSERT_FALSE(plan_id.empty());
    std::string before;
    s.server->with_pipeline([&](Pipeline& p) { before = p.env().asset("scada-1").firmware_version; });
    const json reject = {{"verdict", "Reject"}, {"actor", "operator"}, {"ban_action", "FirmwareUpgrade"}};
    EXPECT_EQ(s.client->Post("/api/approvals/" + plan_id + "/decision", reject.dump(), "application/json")->status,
              202);
    s.server->step(1);
    s.server->with_pipeline([&](Pipeline& p) {
        EXPECT_EQ(p.plans().at(plan_id).status, PlanStatus::Rejected);
        EXPECT_EQ(p.env().asset("scada-1").firmware_version, before);
    });
}

TEST(Service, ManualContainment) {
    auto s = serve(canonical_cfg(false));
    s.server->step(62);
    const auto id = body_of(s.client->Get("/api/queue"))["entries"][0]["finding_id"].get<std::string>();
    EXPECT_EQ(s.client->Post("/api/findings/F-9999/contain", "{}", "application/json")->status, 404);
    const auto r = s.client->Post("/api/findings/" + id + "/contain", R"({"actor":"operator"})", "application/json");
    EXPECT_EQ(r->status, 202);
}

TEST(Service, MetricsWithComparison) {
    ServiceOptions opts;
    Pipeline base(RunConfig{canonical_cfg(true)});
    base.run();
    opts.baseline_metrics = base.metrics();
    auto s = serve(canonical_cfg(true), opts);
    s.server->step(300);
    const auto b = body_of(s.client->Get("/api/metrics"));
    EXPECT_EQ(b["tick"].get<int>(), 204);
    ASSERT_TRUE(b["comparison"].is_object());
    EXPECT_EQ(b["comparison"]["rows"].size(), comparison_row_names().size());
    EXPECT_EQ(b["metrics"]["scenario_id"], base.metrics().scenario_id);
}

TEST(Service, BearerToken) {
    ServiceOptions opts;
    opts.token = "s3cret";
    auto s = serve(canonical_cfg(false), opts);
    const auto denied = s.client->Get("/api/queue");
    EXPECT_EQ(denied->status, 401);
    EXPECT_EQ(s.client->Get("/api/queue", {{"Authorization", "Bearer wrong"}})->status, 401);
    EXPECT_EQ(s.client->Get("/api/queue", {{"Authorization", "Bearer s3cret"}})->status, 200);
}

TEST(Service, NoRunAttached) {
    auto s = serve(std::nullopt);
    EXPECT_EQ(s.client->Get("/api/queue")->status, 503);
    EXPECT_EQ(s.client->Get("/api/metrics")->status, 503);
    const auto ev = s.client->Get("/api/events?follow=0");
    EXPECT_EQ(ev->status, 200);
    EXPECT_TRUE(ev->body.empty());
}

TEST(Service, CreateRunThenConflict) {
    ServiceOptions opts;
    opts.runs_root = test::scratch_dir("service-runs");
    auto s = serve(std::nullopt, opts);
    const json req = {{"scenario", test::scenario_path("canonical_grid").string()}, {"ticks", 100}};
    const auto created = s.client->Post("/api/runs", req.dump(), "application/json");
    ASSERT_EQ(created->status, 201);
    const auto dir = body_of(created)["dir"].get<std::string>();
    EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(dir) / "run.json"));
    EXPECT_EQ(s.client->Post("/api/runs", req.dump(), "application/json")->status, 409);
    EXPECT_EQ(s.client->Get("/api/queue")->status, 200);

    s.server->step(100);
    const auto second = s.client->Post("/api/runs", req.dump(), "application/json");
    EXPECT_EQ(second->status, 201);
    EXPECT_NE(body_of(second)["dir"], body_of(created)["dir"]);

    auto t = serve(std::nullopt, opts);
    EXPECT_EQ(t.client->Post("/api/runs", R"({"scenario":{"assets":[]}})", "application/json")->status, 400);
    EXPECT_EQ(t.client->Post("/api/runs", "{}", "application/json")->status, 400);
}

TEST(Service, EventReplayResumesWithoutGaps) {
    auto s = serve(canonical_cfg(true));
    s.server->step(300);
    std::size_t total = 0;
    s.server->with_pipeline([&](Pipeline& p) { total = p.log().size(); });
    ASSERT_GT(total, 20u);

    const auto first = s.client->Get("/api/events?follow=0&from_seq=0");
    EXPECT_EQ(first->get_header_value("Content-Type"), "text/event-stream");
    const auto all = frame_ids(first->body);
    ASSERT_EQ(all.size(), total);
    for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);

    const auto tail = s.client->Get("/api/events?follow=0", {{"Last-Event-ID", "9"}});
    const auto ids = frame_ids(tail->body);
    ASSERT_FALSE(ids.empty());
    EXPECT_EQ(ids.front(), 10u);
    EXPECT_EQ(ids.back(), total - 1);
    EXPECT_EQ(ids.size(), total - 10);
    EXPECT_EQ(s.client->Get("/api/events?follow=0&from_seq=x")->status, 400);
}

TEST(Service, LiveStreamReconnectsWithoutGaps) {
    ServiceOptions opts;
    opts.tick_ms = 1;
    auto s = serve(canonical_cfg(true), opts);

    std::vector<std::uint64_t> seen;
    auto read_until = [&](httplib::Headers headers, std::size_t want) {
        std::string buf;
        s.client->Get("/api/events", headers, [&](const char* data, std::size_t n) {
            buf.append(data, n);
            return frame_ids(buf).size() < want;
        });
        return frame_ids(buf);
    };
    auto part1 = read_until({}, 15);
    ASSERT_GE(part1.size(), 15u);
    seen = part1;
    auto part2 = read_until({{"Last-Event-ID", std::to_string(seen.back())}}, 10);
    ASSERT_GE(part2.size(), 10u);
    seen.insert(seen.end(), part2.begin(), part2.end());
    for (std::size_t i = 0; i < seen.size(); ++i) EXPECT_EQ(seen[i], i);
    s.server->stop();
}

TEST(Service, BindOverride) {
    ServiceOptions opts;
    ::setenv("SOAR_BIND", "0.0.0.0:9123", 1);
    apply_bind_override(opts);
    EXPECT_EQ(opts.host, "0.0.0.0");
    EXPECT_EQ(opts.port, 9123);
    ::setenv("SOAR_BIND", "host:notaport", 1);
    EXPECT_THROW(apply_bind_override(opts), Error);
    ::unsetenv("SOAR_BIND");
}
